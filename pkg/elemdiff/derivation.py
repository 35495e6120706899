"""
Element-wise derivation.

For every argument occurrence x[A alpha + c] the adjoint contribution at an
argument index beta is the local adjoint summed over all function indices
alpha with A alpha + c = beta. Those alpha are parametrized as
    alpha = I (beta - c) + K z
from the Smith decomposition of A; the range constraints on alpha become
constraints on z, which Fourier-Motzkin elimination turns into nested sums
with closed-form bounds. Conditions on beta alone (cokernel, divisibility,
box feasibility) become a DeltaIf around the sums.
"""
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .autodiff import reverse_ad
from .exceptions import InfiniteRange
from .expr import (AdjointElement, AffineForm, Binary, Condition, Const, DeltaIf, Expr, IndexKind, IndexSymbol,
                   RangeBound, Scope, Sum, Unary, scoped_postorder, substitute_indices, symbol_names)
from .models import (ArgumentDerivative, DerivSpec, ElemFuncSpec, Occurrence, OccurrenceDerivation, box_constraints,
                     build_spec, sum_constraints)
from .tools.fourier_motzkin import fm_eliminate
from .tools.intlinalg import int_matrix, solve_structure
from .utils import logger

###############################################################################
# Sum liberation
###############################################################################


@dataclass(frozen=True, eq=False)
class ScopeConstraints:
    """Extended index list of one chain of sums and the ranges it must satisfy (each form >= 0)."""

    scope: Scope
    symbols: Tuple[IndexSymbol, ...]
    constraints: Tuple[Condition, ...]


@dataclass(frozen=True, eq=False)
class SumLiberation:
    body: Expr
    indices: Tuple[IndexSymbol, ...]
    constraints: Tuple[Condition, ...]
    scopes: Dict[Scope, ScopeConstraints]


def _liberated_body(expr: Expr, cache: Dict[Expr, Expr]) -> Expr:
    hit = cache.get(expr)
    if hit is not None:
        return hit
    if isinstance(expr, Sum):
        result = _liberated_body(expr.body, cache)
    elif isinstance(expr, Binary):
        result = Binary(_liberated_body(expr.lhs, cache), expr.op, _liberated_body(expr.rhs, cache))
    elif isinstance(expr, Unary):
        result = Unary(expr.op, _liberated_body(expr.operand, cache))
    elif isinstance(expr, DeltaIf):
        result = DeltaIf(expr.conditions, _liberated_body(expr.then, cache), _liberated_body(expr.orelse, cache))
    else:
        result = expr
    cache[expr] = result
    return result


def sum_liberate(spec: ElemFuncSpec) -> SumLiberation:
    """
    Drop every sum from the body and turn its index into an extra function index.

    Each chain of enclosing sums gets its own extended index list
    (output indices, then the sum indices outermost first) and constraint set
    (output box plus the sum ranges). The flat view lists every sum index once.
    """
    box = box_constraints(spec.output_indices, spec.output_shape)
    scopes: Dict[Scope, ScopeConstraints] = {(): ScopeConstraints((), spec.output_indices, tuple(box))}
    for node, scope in scoped_postorder(spec.body):
        if not isinstance(node, Sum):
            continue
        _scope_constraints(spec, scope + (node,), scopes)

    flat_indices = list(spec.output_indices)
    flat_rows = list(box)
    for chain in scopes.values():
        for s in chain.symbols:
            if s not in flat_indices:
                flat_indices.append(s)
        for c in chain.constraints:
            if c not in flat_rows:
                flat_rows.append(c)
    return SumLiberation(_liberated_body(spec.body, {}), tuple(flat_indices), tuple(flat_rows), scopes)


def _scope_constraints(spec: ElemFuncSpec, scope: Scope, scopes: Dict[Scope, ScopeConstraints]) -> ScopeConstraints:
    if scope in scopes:
        return scopes[scope]
    outer = _scope_constraints(spec, scope[:-1], scopes)
    node = scope[-1]
    rows = sum_constraints(node, frozenset(outer.symbols))
    result = ScopeConstraints(scope, outer.symbols + (node.index,), outer.constraints + tuple(rows))
    scopes[scope] = result
    return result


###############################################################################
# Derivation
###############################################################################


def _fresh_prefix(base: str, used: FrozenSet[str]) -> str:
    prefix = base
    while any(n.startswith(prefix + "_") or n == prefix for n in used):
        prefix = "d" + prefix
    return prefix


def _implied_by_box(form: AffineForm, beta: Sequence[IndexSymbol], shape: Sequence[int]) -> bool:
    """form >= 0 holds for every beta in its box."""
    extent = dict(zip(beta, shape))
    if not form.symbols <= set(extent):
        return False
    low = form.constant + sum((c * (extent[s] - 1) for s, c in form.terms if c < 0), Fraction(0))
    return low >= 0


def _zero_term(occ: Occurrence, delta: Expr, solve, reason: str) -> OccurrenceDerivation:
    logger.debug(f"Occurrence {occ.element} contributes nothing: {reason}")
    return OccurrenceDerivation(occ, delta, solve, None, (), Const(0))


def derive_occurrence(occ: Occurrence, delta: Expr, scope: ScopeConstraints, beta: Sequence[IndexSymbol],
                      shape: Sequence[int], prefix: str) -> OccurrenceDerivation:
    """Closed-form adjoint contribution of one occurrence at argument index beta."""
    symbols = occ.symbols
    A = int_matrix(occ.index_map.coeffs, len(symbols))
    solve = solve_structure(A)
    smith = solve.smith
    U, V, rank = smith.U, smith.V, smith.rank
    n_rows, n_cols = A.shape
    b = [AffineForm.of(s) - c for s, c in zip(beta, occ.index_map.offset)]
    Ub = [sum((b[j] * U[i, j] for j in range(n_rows)), AffineForm.const(0)) for i in range(n_rows)]

    logger.debug(f"Occurrence {occ.element}: rank {rank}, kernel dim {n_cols - rank}, "
                 f"cokernel rows {n_rows - rank}, diagonal {list(smith.diagonal)}")
    if isinstance(delta, Const) and delta.value == 0:
        return _zero_term(occ, delta, solve, "zero local adjoint")

    conditions: List[Condition] = []
    for form in Ub[rank:]:
        if form.is_constant:
            if form.constant != 0:
                return _zero_term(occ, delta, solve, "index map misses the argument entirely")
            continue
        conditions.append(Condition.equal(form))

    # exact particular solution (rational in beta) and the integer one used inside the sums
    exact_y: List[AffineForm] = []
    integer_y: List[AffineForm] = []
    quotients: List[Tuple[IndexSymbol, AffineForm]] = []
    for i in range(rank):
        s = smith.S[i, i]
        y = Ub[i] / s
        exact_y.append(y)
        if y.is_integral:
            integer_y.append(y)
        elif y.is_constant:
            return _zero_term(occ, delta, solve, "no integer preimage")
        else:
            conditions.append(Condition.divisible(Ub[i], s))
            q = IndexSymbol(f"{prefix}_q{len(quotients)}", IndexKind.KERNEL)
            quotients.append((q, y))
            integer_y.append(AffineForm.of(q))

    kappa = n_cols - rank
    z = [IndexSymbol(f"{prefix}_z{n}", IndexKind.KERNEL) for n in range(kappa)]

    def parametrize(y: List[AffineForm]) -> Dict[IndexSymbol, AffineForm]:
        mapping = {}
        for r, sym in enumerate(symbols):
            form = sum((y[i] * V[r, i] for i in range(rank)), AffineForm.const(0))
            form = sum((AffineForm.of(z[n], V[r, rank + n]) for n in range(kappa)), form)
            mapping[sym] = form
        return mapping

    exact_alpha = parametrize(exact_y)

    # constraints over alpha become  sum_n coeff_n z_n >= rhs(beta)
    fm_rows: List[List[Fraction]] = []
    fm_rhs: List[AffineForm] = []
    for constraint in scope.constraints:
        g = constraint.form.substitute(exact_alpha)
        coeffs = [g.coefficient(zn) for zn in z]
        rest = g - AffineForm.build([(zn, c) for zn, c in zip(z, coeffs)])
        if any(c != 0 for c in coeffs):
            fm_rows.append(coeffs)
            fm_rhs.append(-rest)
        elif rest.is_constant:
            if rest.constant < 0:
                return _zero_term(occ, delta, solve, "empty range")
        elif not _implied_by_box(rest, beta, shape):
            conditions.append(Condition.at_least(rest))

    system = None
    body = substitute_indices(delta, parametrize(integer_y))
    if kappa:
        system = fm_eliminate(fm_rows)
        bounds = []
        for n in range(kappa):
            lows, highs = system.bound_values(fm_rhs, [AffineForm.of(t) for t in z[n + 1:]], n)
            if not lows:
                raise InfiniteRange(n, "lower")
            if not highs:
                raise InfiniteRange(n, "upper")
            bounds.append((RangeBound.lower(*lows), RangeBound.upper(*highs)))
        for n in range(kappa):
            body = Sum(z[n], bounds[n][0], bounds[n][1], body)

    term = DeltaIf(conditions, body, Const(0))
    for q, y in reversed(quotients):
        term = Sum(q, RangeBound.lower(y), RangeBound.upper(y), term)
    return OccurrenceDerivation(occ, delta, solve, system, tuple(conditions), term)


def derive(spec: ElemFuncSpec, seed: Optional[Expr] = None, arguments: Optional[Sequence[str]] = None) -> DerivSpec:
    """
    Per-element adjoint expressions of every argument.

    Args:
        spec: validated element-wise function
        seed: adjoint of one output element; defaults to the incoming adjoint tensor d<name>
        arguments: restrict the derivation to these argument names

    Returns:
        DerivSpec whose entries are expressions over the derivative indices d<arg>_0, d<arg>_1, ...
    """
    if seed is None:
        seed = AdjointElement(spec.adjoint_name, spec.output_indices)
    selected = [a for a in spec.arguments if arguments is None or a.name in arguments]
    liberation = sum_liberate(spec)
    targets = [occ.key for arg in selected for occ in arg.occurrences]
    deltas = reverse_ad(spec.body, seed, targets)
    used = symbol_names(spec.body) | symbol_names(seed) | {s.name for s in spec.output_indices}

    derivatives = []
    for arg in selected:
        logger.info(f"Deriving {spec.name} wrt. {arg.name} ({len(arg.occurrences)} occurrences)")
        prefix = _fresh_prefix(f"d{arg.name}", used)
        beta = tuple(IndexSymbol(f"{prefix}_{d}", IndexKind.DERIVATIVE) for d in range(arg.rank))
        parts = [derive_occurrence(occ, deltas[occ.key], liberation.scopes[occ.scope], beta, arg.shape, prefix)
                 for occ in arg.occurrences]
        total: Expr = Const(0)
        for part in parts:
            total = total + part.term
        derivatives.append(ArgumentDerivative(arg.name, arg.shape, beta, total, tuple(parts)))
        logger.info(f"Derived d{arg.name}")
    return DerivSpec(spec, spec.adjoint_name, tuple(derivatives))


def derive_jacobian(spec: ElemFuncSpec, arg: str) -> ElemFuncSpec:
    """
    Jacobian of spec with respect to one argument, as an element-wise function over
    (function index, argument index).
    """
    argument = spec.argument(arg)
    used = symbol_names(spec.body) | {s.name for s in spec.output_indices}
    base = spec.name
    while any(n.startswith(base + "_") for n in used):
        base = "j" + base
    alpha_prime = tuple(IndexSymbol(f"{base}_{d}", IndexKind.OUTPUT) for d in range(len(spec.output_shape)))
    seed = DeltaIf([Condition.equal(AffineForm.of(a) - AffineForm.of(ap))
                    for a, ap in zip(spec.output_indices, alpha_prime)], Const(1), Const(0))
    derivative = derive(spec, seed=seed, arguments=[arg])[arg]
    return build_spec(f"d{spec.name}_d{arg}", spec.output_shape + argument.shape, spec.shapes.items(),
                      derivative.expr, indices=alpha_prime + derivative.indices)
