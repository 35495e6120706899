from fractions import Fraction

import numpy as np
import pytest

from elemdiff.autodiff import reverse_ad
from elemdiff.evaluator import Evaluator
from elemdiff.exceptions import NonDifferentiableOp
from elemdiff.expr import (AdjointElement, AffineForm, ArgElement, Condition, Const, DeltaIf, IndexSymbol, RangeBound,
                           Sum, cos, cosh, exp, iter_nodes, log, node_count, sin, sinh, sqrt)
from elemdiff.syntax import parse

x0 = ArgElement("x", [0])
x1 = ArgElement("x", [1])
POINT = np.array([0.3, 0.7])


def value(expr, x):
    return Evaluator({"x": x}).value(expr, {})


def central_difference(body, x, h=1e-6):
    grad = np.zeros_like(x)
    for n in range(len(x)):
        plus, minus = x.copy(), x.copy()
        plus[n] += h
        minus[n] -= h
        grad[n] = (value(body, plus) - value(body, minus)) / (2 * h)
    return grad


BODIES = [
    x0 * x1 + sin(x0),
    x0 / x1 - cos(x1),
    exp(x0) * log(x1),
    sqrt(x0) + sinh(x1) * cosh(x0),
    (x0 + x1) ** Const(3) - x0 ** Const(Fraction(1, 2)),
    -(x0 - x1) * x0,
    sin(x0) * sin(x0),
    x0 ** (Const(5) - Const(3)) / (x1 * x1),
]


@pytest.mark.parametrize("body", BODIES, ids=str)
def test_rules_match_central_differences(body):
    adjoints = reverse_ad(body, Const(1), [x0, x1])
    got = np.array([value(adjoints[(x0, ())], POINT), value(adjoints[(x1, ())], POINT)])
    np.testing.assert_allclose(got, central_difference(body, POINT), rtol=1e-6, atol=1e-9)


def test_seed_scales_adjoints():
    body = exp(x0) * x1
    once = reverse_ad(body, Const(1), [x0])[(x0, ())]
    twice = reverse_ad(body, Const(2), [x0])[(x0, ())]
    assert value(twice, POINT) == pytest.approx(2 * value(once, POINT))


def test_elementwise_seed_structure():
    i = IndexSymbol("i")
    x = ArgElement("x", [i])
    dg = AdjointElement("dg", [i])
    adjoints = reverse_ad(sin(x), dg)
    assert list(adjoints) == [(x, ())]
    assert adjoints[(x, ())] is dg * cos(x)


def test_delta_if_splits_adjoint():
    i, j = IndexSymbol("i"), IndexSymbol("j")
    x, y = ArgElement("x", [i]), ArgElement("y", [j])
    c = Condition.equal(AffineForm.of(i) - AffineForm.of(j))
    adjoints = reverse_ad(DeltaIf([c], x, y), Const(1), [x, y])
    assert adjoints[(x, ())] is DeltaIf([c], Const(1), Const(0))
    assert adjoints[(y, ())] is DeltaIf([c], Const(0), Const(1))


def test_sum_passes_adjoint_to_each_scope():
    i = IndexSymbol("i")
    k = IndexSymbol("k")
    x, y = ArgElement("x", [i]), ArgElement("y", [k])
    s = Sum(k, RangeBound.lower(0), RangeBound.upper(2), x * y)
    seed = AdjointElement("df", [i])
    adjoints = reverse_ad(x + s, seed, [(x, ()), (x, (s,)), (y, (s,))])
    assert adjoints[(x, ())] is seed
    assert adjoints[(x, (s,))] is seed * y
    assert adjoints[(y, (s,))] is x * seed


def test_unreachable_target_is_zero():
    y = ArgElement("y", [0])
    adjoints = reverse_ad(sin(x0), Const(1), [y, (x0, (object(),))])
    assert all(adj is Const(0) for adj in adjoints.values())


def test_non_constant_exponent_is_rejected():
    with pytest.raises(NonDifferentiableOp):
        reverse_ad(x0 ** x1, Const(1))


def test_adjoint_graph_stays_small():
    spec = parse("""
a : 3 x 5
b : 4 x 5
c : 3 x 3
d : 8
f : 3 x 4
f[i; j] = exp (-sum{k}_0^4 ((a[i; k] + b[j; k]) ** 2 * c[i; i] + d[i + k] ** 3))
""")
    seed = AdjointElement(spec.adjoint_name, spec.output_indices)
    adjoints = reverse_ad(spec.body, seed)
    assert len(adjoints) == 4
    nodes = set()
    for adj in adjoints.values():
        nodes.update(id(n) for n in iter_nodes(adj))
    assert len(nodes) <= 4 * node_count(spec.body)
