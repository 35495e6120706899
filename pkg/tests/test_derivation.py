import os
import random

import numpy as np
import pytest

from elemdiff.derivation import derive, derive_jacobian, sum_liberate
from elemdiff.evaluator import brute_force_adjoint, eval_derivative, eval_spec, finite_diff_jacobian
from elemdiff.exceptions import NameClash
from elemdiff.expr import DeltaIf, Sum, iter_nodes
from elemdiff.syntax import format_derivative, format_expr, parse, parse_file
from elemdiff.tools.intlinalg import int_matrix

SAMPLES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "samples")

# hand-written adjoints of exp_sum.tad, compared by value
REFERENCE = {
    "a": ("3 x 5", "da[da_0; da_1] = sum{da_z0}_0^3 (((-(df[da_0; da_z0] * exp (-sum{k}_0^4 (((a[da_0; k] + "
                   "b[da_z0; k]) ** 2 * c[da_0; da_0] + d[da_0 + k] ** 3))))) * c[da_0; da_0] * 2 * (a[da_0; da_1] "
                   "+ b[da_z0; da_1]) ** (2 - 1)))"),
    "b": ("4 x 5", "db[db_0; db_1] = sum{db_z0}_0^2 (((-(df[db_z0; db_0] * exp (-sum{k}_0^4 (((a[db_z0; k] + "
                   "b[db_0; k]) ** 2 * c[db_z0; db_z0] + d[db_z0 + k] ** 3))))) * c[db_z0; db_z0] * 2 * "
                   "(a[db_z0; db_1] + b[db_0; db_1]) ** (2 - 1)))"),
    "c": ("3 x 3", "dc[dc_0; dc_1] = if {dc_0 + -dc_1 = 0} then (sum{dc_z1}_0^4 (sum{dc_z0}_0^3 (((a[dc_1; dc_z1] "
                   "+ b[dc_z0; dc_z1]) ** 2 * (-(df[dc_1; dc_z0] * exp (-sum{k}_0^4 (((a[dc_1; k] + b[dc_z0; k]) "
                   "** 2 * c[dc_1; dc_1] + d[dc_1 + k] ** 3))))))))) else (0)"),
    "d": ("8", "dd[dd_0] = sum{dd_z1}_(max [0; -2 + dd_0])^(min [4; dd_0]) (sum{dd_z0}_0^3 (((-(df[dd_0 + -dd_z1; "
               "dd_z0] * exp (-sum{k}_0^4 (((a[dd_0 + -dd_z1; k] + b[dd_z0; k]) ** 2 * c[dd_0 + -dd_z1; dd_0 + "
               "-dd_z1] + d[dd_0 + -dd_z1 + k] ** 3))))) * 3 * d[dd_0] ** (3 - 1))))"),
}


def sample(name):
    return parse_file(os.path.join(SAMPLES, name))


def random_env(spec, seed=0):
    rng = np.random.default_rng(seed)
    env = {a.name: rng.uniform(0.1, 1.0, a.shape) for a in spec.arguments}
    return env, rng.uniform(0.1, 1.0, spec.output_shape)


def assert_matches_brute_force(spec, seed=0):
    deriv = derive(spec)
    env, adjoint = random_env(spec, seed)
    for arg in spec.arguments:
        got = eval_derivative(deriv, arg.name, env, adjoint)
        ref = brute_force_adjoint(spec, env, adjoint, arg.name)
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12, err_msg=format_derivative(deriv, arg.name))


def sums(expr):
    return [n for n in iter_nodes(expr) if isinstance(n, Sum)]


###############################################################################
# sum liberation
###############################################################################


def test_sum_liberation_appends_sum_index():
    lib = sum_liberate(sample("exp_sum.tad"))
    assert [s.name for s in lib.indices] == ["i", "j", "k"]
    assert not sums(lib.body)
    rows = [str(c) for c in lib.constraints]
    assert "k >= 0" in rows and "4 + -k >= 0" in rows
    assert "i >= 0" in rows and "3 + -j >= 0" in rows


def test_sum_liberation_without_sums_is_identity():
    spec = sample("sine.tad")
    lib = sum_liberate(spec)
    assert lib.body is spec.body
    assert [s.name for s in lib.indices] == ["i"]
    assert list(lib.scopes) == [()]


def test_nested_sums_extend_index_list():
    spec = parse("x : 3 x 4\ny : 4\nf : 3\nf[i] = sum{k}_0^3 (sum{m}_0^(k) (x[i; k] * y[m]))")
    lib = sum_liberate(spec)
    assert [s.name for s in lib.indices] == ["i", "k", "m"]
    assert "k + -m >= 0" in [str(c) for c in lib.constraints]
    assert_matches_brute_force(spec)


###############################################################################
# worked example
###############################################################################


def test_worked_example_structure():
    spec = sample("exp_sum.tad")
    deriv = derive(spec)
    assert [d.name for d in deriv.derivatives] == ["a", "b", "c", "d"]
    for d in deriv.derivatives:
        assert {s.name for s in d.expr.free_symbols} == {f"d{d.name}_{n}" for n in range(len(d.shape))}
    assert "if {dc_0 + -dc_1 = 0} then (" in format_derivative(deriv, "c")
    text = format_derivative(deriv, "d")
    assert text.startswith("Derivative of f wrt. d: dd[dd_0] = sum{dd_z1}_")
    assert "sum{dd_z0}_" in text


@pytest.mark.parametrize("arg", ["a", "b", "c", "d"])
def test_worked_example_matches_reference_forms(arg):
    spec = sample("exp_sum.tad")
    shape, definition = REFERENCE[arg]
    declarations = [f"{a.name} : {' x '.join(str(n) for n in a.shape)}" for a in spec.arguments]
    reference = parse("\n".join(declarations + ["df : 3 x 4", f"d{arg} : {shape}", definition]))

    env, adjoint = random_env(spec, seed=11)
    expected = eval_spec(reference, {**env, "df": adjoint})
    got = eval_derivative(derive(spec), arg, env, adjoint)
    np.testing.assert_allclose(got, expected, rtol=1e-10)


def test_worked_example_keeps_index_geometry():
    deriv = derive(sample("exp_sum.tad"))
    (part,) = deriv["c"].occurrences
    A = int_matrix(part.occurrence.index_map.coeffs)
    assert part.solve.rank == 1
    assert part.solve.kernel.shape == (3, 2)
    assert part.solve.cokernel.shape == (1, 2)
    assert not np.any(A.dot(part.solve.kernel))
    assert not np.any(part.solve.cokernel.dot(A))
    assert part.system.num_vars == 2
    assert [str(c) for c in part.conditions] == ["dc_0 + -dc_1 = 0"]
    assert part.term is deriv["c"].expr


def test_worked_example_matches_brute_force():
    assert_matches_brute_force(sample("exp_sum.tad"), seed=5)


###############################################################################
# small cases
###############################################################################


def test_identity_map_needs_no_sum_or_delta():
    deriv = derive(sample("sine.tad"))
    assert format_expr(deriv["x"].expr) == "df[dx_0] * cos (x[dx_0])"


def test_missing_index_becomes_a_sum():
    spec = sample("outer_scale.tad")
    deriv = derive(spec)
    assert len(sums(deriv["x"].expr)) == 1
    assert format_expr(deriv["y"].expr) == "x[dy_0] * df[dy_0; dy_1]"
    assert_matches_brute_force(spec)


def test_repeated_index_keeps_delta():
    spec = sample("diag_cube.tad")
    deriv = derive(spec)
    expr = deriv["x"].expr
    assert isinstance(expr, DeltaIf)
    assert [str(c) for c in expr.conditions] == ["dx_0 + -dx_1 = 0"]
    assert not sums(expr)
    env, adjoint = random_env(spec)
    got = eval_derivative(deriv, "x", env, adjoint)
    assert np.all(got[~np.eye(4, dtype=bool)] == 0.0)
    np.testing.assert_allclose(np.diag(got), adjoint * 3 * np.diag(env["x"]) ** 2, rtol=1e-12)


def test_matrix_product_swaps_summation_index():
    spec = sample("matmul.tad")
    deriv = derive(spec)
    assert len(sums(deriv["x"].expr)) == 1
    env, adjoint = random_env(spec)
    np.testing.assert_allclose(eval_derivative(deriv, "x", env, adjoint), adjoint @ env["y"].T, rtol=1e-12)
    np.testing.assert_allclose(eval_derivative(deriv, "y", env, adjoint), env["x"].T @ adjoint, rtol=1e-12)


def test_flattened_index_gets_bounded_sum():
    spec = sample("flatten_exp.tad")
    deriv = derive(spec)
    assert len(sums(deriv["x"].expr)) == 1
    env, adjoint = random_env(spec)
    expected = adjoint.reshape(-1) * np.exp(env["x"])
    np.testing.assert_allclose(eval_derivative(deriv, "x", env, adjoint), expected, rtol=1e-12)


def test_strided_index_emits_divisibility_condition():
    spec = parse("x : 6\nf : 3\nf[i] = x[2 * i]")
    deriv = derive(spec)
    text = format_expr(deriv["x"].expr)
    assert "dx_0 = 0 mod 2" in text
    assert "dx_q0" in text
    env, adjoint = random_env(spec)
    expected = np.zeros(6)
    expected[::2] = adjoint
    np.testing.assert_array_equal(eval_derivative(deriv, "x", env, adjoint), expected)


def test_entries_outside_the_image_are_zero():
    spec = parse("x : 4\nf : 3\nf[i] = x[i + 1] ** 2")
    deriv = derive(spec)
    env, adjoint = random_env(spec)
    got = eval_derivative(deriv, "x", env, adjoint)
    assert got[0] == 0.0
    np.testing.assert_allclose(got[1:], adjoint * 2 * env["x"][1:], rtol=1e-12)


def test_occurrences_of_one_argument_are_added():
    spec = parse("x : 4\nf : 3\nf[i] = x[i] * x[i + 1] + sum{k}_0^1 (x[i + k])")
    deriv = derive(spec)
    assert len(deriv["x"].occurrences) == 3
    assert_matches_brute_force(spec)


def test_constant_occurrence_uses_cokernel_conditions():
    spec = parse("x : 2 x 3\nf : 2\nf[i] = x[i; 1] * x[1; 2]")
    assert_matches_brute_force(spec)


def test_derive_subset_of_arguments():
    deriv = derive(sample("exp_sum.tad"), arguments=["b"])
    assert [d.name for d in deriv.derivatives] == ["b"]


###############################################################################
# jacobian and closure
###############################################################################


def test_jacobian_of_sine_is_diagonal():
    spec = sample("sine.tad")
    jacobian = derive_jacobian(spec, "x")
    assert jacobian.name == "df_dx"
    assert jacobian.output_shape == (5, 5)
    assert [s.name for s in jacobian.output_indices] == ["f_0", "dx_0"]
    env, _ = random_env(spec)
    values = eval_spec(jacobian, env)
    np.testing.assert_allclose(values, np.diag(np.cos(env["x"])), rtol=1e-14, atol=0)


def test_jacobian_of_constant_is_zero():
    spec = parse("x : 2\nf : 2\nf[i] = 3")
    jacobian = derive_jacobian(spec, "x")
    env, _ = random_env(spec)
    np.testing.assert_array_equal(eval_spec(jacobian, env), np.zeros((2, 2)))


def test_jacobian_of_worked_example_matches_finite_differences():
    spec = sample("exp_sum.tad")
    jacobian = derive_jacobian(spec, "c")
    env, _ = random_env(spec, seed=2)
    np.testing.assert_allclose(eval_spec(jacobian, env), finite_diff_jacobian(spec, env, "c"), rtol=1e-5,
                               atol=1e-10)


def test_derivative_is_itself_differentiable():
    spec = parse("x : 3\nf : 3\nf[i] = x[i] ** 3")
    first = derive(spec).as_spec("x")
    assert first.name == "dx"
    assert [a.name for a in first.arguments] == ["x", "df"]
    second = derive(first)
    env, adjoint = random_env(first, seed=4)
    got = eval_derivative(second, "x", env, adjoint)
    fd = np.tensordot(adjoint, finite_diff_jacobian(first, env, "x", h=1e-5), axes=1)
    np.testing.assert_allclose(got, fd, rtol=1e-4)
    np.testing.assert_allclose(got, adjoint * env["df"] * 6 * env["x"], rtol=1e-12)


###############################################################################
# random specs against the explicit delta sum
###############################################################################


def _random_source(rng: random.Random) -> str:
    out = ["i", "j", "l"][:rng.randint(1, 3)]
    extents = {s: rng.randint(2, 3) for s in out}
    ranges = dict(extents, k=3, m=3)
    ranks = {"x": rng.randint(1, 2), "y": rng.randint(1, 2)}
    shapes = {"x": [1] * ranks["x"], "y": [1] * ranks["y"]}

    def ref(name, symbols):
        forms = []
        for d in range(ranks[name]):
            terms = [(s, c) for s in symbols for c in [rng.choice([-2, -1, 0, 0, 1, 1, 2])] if c]
            low = sum(c * (ranges[s] - 1) for s, c in terms if c < 0)
            high = sum(c * (ranges[s] - 1) for s, c in terms if c > 0)
            offset = -low + rng.randint(0, 1)
            shapes[name][d] = max(shapes[name][d], high + offset + 1)
            forms.append(" + ".join([f"{c} * {s}" for s, c in terms] + [str(offset)]))
        return f"{name}[{'; '.join(forms)}]"

    inner = out + ["k"]
    templates = [
        lambda: f"sin ({ref('x', out)}) * {ref('y', out)}",
        lambda: f"{ref('x', out)} ** 2 + exp ({ref('y', out)}) * {ref('x', out)}",
        lambda: f"sum{{k}}_0^2 ({ref('x', inner)} * {ref('y', inner)})",
        lambda: f"{ref('x', out)} * sum{{k}}_0^2 ({ref('y', inner)} ** 3 + {ref('x', inner)})",
        lambda: f"sum{{k}}_0^2 (sum{{m}}_0^2 ({ref('x', inner + ['m'])} * cos ({ref('y', inner + ['m'])})))",
    ]
    body = rng.choice(templates)()
    lines = [f"{name} : {' x '.join(str(n) for n in shape)}" for name, shape in shapes.items()]
    lines.append(f"f : {' x '.join(str(extents[s]) for s in out)}")
    lines.append(f"f[{'; '.join(out)}] = {body}")
    return "\n".join(lines)


@pytest.mark.slow
def test_random_specs_match_brute_force():
    rng = random.Random(2024)
    for trial in range(100):
        source = _random_source(rng)
        try:
            assert_matches_brute_force(parse(source), seed=trial)
        except AssertionError as e:
            raise AssertionError(f"{source}\n{e}") from None


def test_adjoint_name_taken_by_an_argument():
    spec = parse("df : 3\nx : 3\nf : 3\nf[i] = x[i] * df[i]")
    deriv = derive(spec)
    with pytest.raises(NameClash) as err:
        deriv.as_spec("x")
    assert err.value.name == "df"
