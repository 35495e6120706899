"""
Dense float64 evaluation of element-wise specs and derived adjoints, plus the
two independent oracles (explicit delta sum and central finite differences)
and the verification report built from them.
"""
import math
from itertools import product
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .autodiff import reverse_ad
from .config import config
from .exceptions import NumericDomain, OutOfRangeIndexMap, ShapeMismatch, UnknownSymbol
from .expr import (AdjointElement, ArgElement, Binary, Const, DeltaIf, Expr, IndexSymbol, Sum, Unary)
from .models import ArgumentReport, DenseTensor, DerivSpec, ElemFuncSpec, Occurrence, VerifyReport
from .utils import logger


class Evaluator:
    """Evaluates expression nodes for one set of input tensors, memoized on (node, index values)."""

    def __init__(self, env: Mapping[str, DenseTensor]):
        self.env = env
        self._cache: Dict[tuple, float] = {}
        self._names: Dict[Expr, Tuple[str, ...]] = {}

    def value(self, node: Expr, values: Mapping[str, int]) -> float:
        names = self._names.get(node)
        if names is None:
            names = self._names[node] = tuple(sorted(s.name for s in node.free_symbols))
        key = (node, tuple(values[n] for n in names))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        result = self._compute(node, values)
        self._cache[key] = result
        return result

    def _element(self, node, values) -> float:
        tensor = self.env.get(node.name)
        if tensor is None:
            raise UnknownSymbol(node.name, "evaluation environment")
        idx = tuple(int(f.evaluate(values)) for f in node.indices)
        if len(idx) != tensor.ndim or any(not 0 <= i < n for i, n in zip(idx, tensor.shape)):
            index_map = "[" + "; ".join(str(f) for f in node.indices) + "]"
            raise OutOfRangeIndexMap(node.name, index_map, tensor.shape, dict(values), idx)
        return float(tensor[idx])

    def _compute(self, node: Expr, values: Mapping[str, int]) -> float:
        if isinstance(node, Const):
            return float(node.value)
        if isinstance(node, (ArgElement, AdjointElement)):
            return self._element(node, values)
        if isinstance(node, Binary):
            lhs = self.value(node.lhs, values)
            rhs = self.value(node.rhs, values)
            if node.op == "+":
                return lhs + rhs
            if node.op == "-":
                return lhs - rhs
            if node.op == "*":
                return lhs * rhs
            if node.op == "/":
                if rhs == 0:
                    raise NumericDomain("division by zero")
                return lhs / rhs
            try:
                return math.pow(lhs, rhs)
            except (ValueError, OverflowError) as e:
                raise NumericDomain(f"{lhs} ** {rhs}: {e}")
        if isinstance(node, Unary):
            x = self.value(node.operand, values)
            if node.op == "neg":
                return -x
            if node.op == "log" and x <= 0:
                raise NumericDomain(f"log of non-positive value {x}")
            if node.op == "sqrt" and x < 0:
                raise NumericDomain(f"sqrt of negative value {x}")
            try:
                return getattr(math, node.op)(x)
            except OverflowError as e:
                raise NumericDomain(f"{node.op}({x}): {e}")
        if isinstance(node, Sum):
            lo, hi = node.lower.evaluate(values), node.upper.evaluate(values)
            total = 0.0
            inner = dict(values)
            for v in range(lo, hi + 1):
                inner[node.index.name] = v
                total += self.value(node.body, inner)
            return total
        if isinstance(node, DeltaIf):
            if all(c.holds(values) for c in node.conditions):
                return self.value(node.then, values)
            return self.value(node.orelse, values)
        raise TypeError(f"Cannot evaluate {type(node).__name__}")


def _check_env(spec: ElemFuncSpec, env: Mapping[str, DenseTensor]) -> Dict[str, DenseTensor]:
    checked = dict(env)
    for arg in spec.arguments:
        if arg.name not in env:
            raise UnknownSymbol(arg.name, "evaluation environment")
        tensor = np.asarray(env[arg.name], dtype=np.float64)
        if tensor.shape != arg.shape:
            raise ShapeMismatch(arg.name, arg.shape, tensor.shape)
        checked[arg.name] = tensor
    return checked


def eval_expr(expr: Expr, indices: Sequence[IndexSymbol], shape: Sequence[int],
              env: Mapping[str, DenseTensor], evaluator: Optional[Evaluator] = None) -> DenseTensor:
    """Evaluate expr at every point of the index box; elements are independent of each other."""
    evaluator = evaluator or Evaluator(env)
    out = np.zeros(tuple(shape), dtype=np.float64)
    for idx in np.ndindex(*shape):
        values = {s.name: v for s, v in zip(indices, idx)}
        try:
            out[idx] = evaluator.value(expr, values)
        except NumericDomain as e:
            raise NumericDomain(str(e), idx) from e
    return out


def eval_spec(spec: ElemFuncSpec, env: Mapping[str, DenseTensor]) -> DenseTensor:
    return eval_expr(spec.body, spec.output_indices, spec.output_shape, _check_env(spec, env))


def eval_element(spec: ElemFuncSpec, env: Mapping[str, DenseTensor], index: Sequence[int]) -> float:
    """One output element, without evaluating any other."""
    if len(index) != len(spec.output_shape) or any(not 0 <= i < n for i, n in zip(index, spec.output_shape)):
        raise ShapeMismatch(spec.name, spec.output_shape, list(index))
    env = _check_env(spec, env)
    values = {s.name: int(v) for s, v in zip(spec.output_indices, index)}
    try:
        return Evaluator(env).value(spec.body, values)
    except NumericDomain as e:
        raise NumericDomain(str(e), index) from e


def eval_derivative(deriv: DerivSpec, arg: str, env: Mapping[str, DenseTensor], adjoint: DenseTensor) -> DenseTensor:
    """Evaluate the derived adjoint of arg for given inputs and incoming adjoint."""
    d = deriv[arg]
    full = _check_env(deriv.source, env)
    full[deriv.adjoint_name] = np.asarray(adjoint, dtype=np.float64)
    if full[deriv.adjoint_name].shape != deriv.source.output_shape:
        raise ShapeMismatch(deriv.adjoint_name, deriv.source.output_shape, full[deriv.adjoint_name].shape)
    return eval_expr(d.expr, d.indices, d.shape, full)


###############################################################################
# Oracles
###############################################################################


def finite_diff_jacobian(spec: ElemFuncSpec, env: Mapping[str, DenseTensor], arg: str,
                         h: Optional[float] = None) -> DenseTensor:
    """Central differences; result shape is output shape followed by the argument shape."""
    h = h if h is not None else config.get("fd_step", 1e-6)
    if h <= 0:
        raise ValueError(f"Finite difference step must be positive, got {h}")
    env = _check_env(spec, env)
    x = env[arg]
    jac = np.zeros(spec.output_shape + x.shape, dtype=np.float64)
    for idx in np.ndindex(*x.shape):
        plus = np.copy(x)
        plus[idx] += h
        minus = np.copy(x)
        minus[idx] -= h
        f_plus = eval_spec(spec, {**env, arg: plus})
        f_minus = eval_spec(spec, {**env, arg: minus})
        jac[(Ellipsis,) + idx] = (f_plus - f_minus) / (2 * h)
    return jac


def _scope_points(occ: Occurrence, values: Dict[str, int], depth: int = 0):
    if depth == len(occ.scope):
        yield values
        return
    node = occ.scope[depth]
    lo, hi = node.lower.evaluate(values), node.upper.evaluate(values)
    for v in range(lo, hi + 1):
        yield from _scope_points(occ, {**values, node.index.name: v}, depth + 1)


def brute_force_adjoint(spec: ElemFuncSpec, env: Mapping[str, DenseTensor], adjoint: DenseTensor,
                        arg: str) -> DenseTensor:
    """
    The explicit delta sum: visit every function index and every sum index, and add
    the local adjoint into the argument element the occurrence reads there.
    """
    argument = spec.argument(arg)
    full = _check_env(spec, env)
    full[spec.adjoint_name] = np.asarray(adjoint, dtype=np.float64)
    seed = AdjointElement(spec.adjoint_name, spec.output_indices)
    deltas = reverse_ad(spec.body, seed, [occ.key for occ in argument.occurrences])
    evaluator = Evaluator(full)
    result = np.zeros(argument.shape, dtype=np.float64)
    for occ in argument.occurrences:
        delta = deltas[occ.key]
        for alpha in product(*(range(n) for n in spec.output_shape)):
            start = {s.name: v for s, v in zip(spec.output_indices, alpha)}
            for values in _scope_points(occ, start):
                target = occ.index_map.apply([values[s.name] for s in occ.symbols])
                if any(not 0 <= t < n for t, n in zip(target, argument.shape)):
                    continue
                try:
                    result[target] += evaluator.value(delta, values)
                except NumericDomain as e:
                    raise NumericDomain(str(e), alpha) from e
    return result


###############################################################################
# Verification
###############################################################################


def _compare(got: DenseTensor, ref: DenseTensor, tol: float, floor: float) -> Tuple[float, float, Tuple[int, ...], bool]:
    err = np.abs(got - ref)
    scale = np.abs(ref)
    relative = scale > floor
    rel = np.where(relative, err / np.where(relative, scale, 1.0), 0.0)
    score = np.where(relative, rel, err)
    worst = np.unravel_index(int(np.argmax(score)), score.shape) if score.size else ()
    passed = bool(np.all(score <= tol))
    max_abs = float(err.max()) if err.size else 0.0
    max_rel = float(rel.max()) if rel.size else 0.0
    return max_abs, max_rel, tuple(int(i) for i in worst), passed


def verify(spec: ElemFuncSpec, trials: Optional[int] = None, tol: Optional[float] = None,
           rng_seed: Optional[int] = None, derivative: Optional[DerivSpec] = None,
           h: Optional[float] = None) -> VerifyReport:
    """
    Check derived adjoints on random inputs against the explicit delta sum and
    against finite differences.

    Args:
        spec: function to check
        trials: number of random input draws
        tol: tolerance on relative error (absolute where the reference is tiny)
        rng_seed: seed for numpy's default_rng; equal seeds give equal reports
        derivative: adjoints to check, derived from spec when omitted
        h: finite difference step

    Returns:
        VerifyReport with one entry per argument and reference
    """
    trials = trials if trials is not None else config.get("verify_trials", 5)
    tol = tol if tol is not None else config.get("verify_tolerance", 1e-5)
    rng_seed = rng_seed if rng_seed is not None else config.get("verify_seed", 42)
    floor = config.get("relative_error_floor", 1e-8)
    low, high = config.get("sample_low", 0.1), config.get("sample_high", 1.0)
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    if derivative is None:
        from .derivation import derive
        derivative = derive(spec)

    rng = np.random.default_rng(rng_seed)
    worst: Dict[Tuple[str, str], Tuple[float, float, Tuple[int, ...], bool]] = {}
    for trial in range(trials):
        env = {a.name: np.asarray(rng.uniform(low, high, size=a.shape), dtype=np.float64) for a in spec.arguments}
        adjoint = np.asarray(rng.uniform(low, high, size=spec.output_shape), dtype=np.float64)
        for arg in spec.arguments:
            got = eval_derivative(derivative, arg.name, env, adjoint)
            references = {
                "brute_force": brute_force_adjoint(spec, env, adjoint, arg.name),
                "finite_difference": np.tensordot(adjoint, finite_diff_jacobian(spec, env, arg.name, h),
                                                  axes=len(spec.output_shape)),
            }
            for name, ref in references.items():
                result = _compare(got, ref, tol, floor)
                previous = worst.get((arg.name, name))
                if previous is None:
                    worst[(arg.name, name)] = result
                else:
                    worst[(arg.name, name)] = (
                        max(previous[0], result[0]),
                        max(previous[1], result[1]),
                        previous[2] if previous[0] >= result[0] else result[2],
                        previous[3] and result[3],
                    )

    reports = []
    for (arg_name, reference), (max_abs, max_rel, index, passed) in worst.items():
        reports.append(ArgumentReport(arg=arg_name, reference=reference, max_abs_err=max_abs, max_rel_err=max_rel,
                                      worst_index=list(index), passed=passed))
        if passed:
            logger.info(f"d{arg_name} agrees with {reference}: max rel err {max_rel:.3e}")
        else:
            logger.warning(f"d{arg_name} disagrees with {reference}: max abs err {max_abs:.3e} at {list(index)}")
    return VerifyReport(spec=spec.name, trials=trials, tolerance=tol, seed=rng_seed,
                        passed=all(r.passed for r in reports), arguments=reports)
