import itertools
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .exceptions import (DuplicateIndex, NameClash, NonAffineSumBound, NonDifferentiableOp, NonIntegerComposition,
                         OutOfRangeIndexMap, ShapeMismatch, UnknownSymbol)
from .expr import (AdjointElement, AffineForm, ArgElement, Binary, Condition, ConditionKind, DeltaIf, Expr,
                   IndexAffineMap, IndexKind, IndexSymbol, Scope, Sum, is_constant_expr, map_elements,
                   scoped_postorder)
from .tools.fourier_motzkin import fm_eliminate
from .utils import logger

# Row-major float64 tensor
DenseTensor = np.ndarray

###############################################################################
# Element-wise function specifications
###############################################################################


@dataclass(frozen=True, eq=False)
class Occurrence:
    """One reference to an argument, identified by the element node and the sums around it."""

    element: ArgElement
    scope: Scope
    symbols: Tuple[IndexSymbol, ...]  # output indices followed by the enclosing sum indices
    index_map: IndexAffineMap

    @property
    def key(self) -> Tuple[ArgElement, Scope]:
        return (self.element, self.scope)


@dataclass(frozen=True, eq=False)
class ArgumentSpec:
    name: str
    shape: Tuple[int, ...]
    occurrences: Tuple[Occurrence, ...] = ()

    @property
    def rank(self) -> int:
        return len(self.shape)


@dataclass(frozen=True, eq=False)
class ElemFuncSpec:
    name: str
    output_shape: Tuple[int, ...]
    output_indices: Tuple[IndexSymbol, ...]
    arguments: Tuple[ArgumentSpec, ...]
    body: Expr

    @property
    def adjoint_name(self) -> str:
        return f"d{self.name}"

    def argument(self, name: str) -> ArgumentSpec:
        for arg in self.arguments:
            if arg.name == name:
                return arg
        raise UnknownSymbol(name, f"arguments of {self.name}")

    @property
    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {a.name: a.shape for a in self.arguments}


ArgsLike = Union[Mapping[str, Sequence[int]], Sequence[Tuple[str, Sequence[int]]]]


def _shape(name: str, shape: Sequence[int]) -> Tuple[int, ...]:
    shape = tuple(int(n) for n in shape)
    if any(n < 1 for n in shape):
        raise ShapeMismatch(name, "positive extents", list(shape))
    return shape


def build_spec(name: str, output_shape: Sequence[int], args: ArgsLike, body: Expr,
               indices: Optional[Sequence[Union[IndexSymbol, str]]] = None) -> ElemFuncSpec:
    """
    Validate an element-wise definition and record its argument occurrences.

    Args:
        name: function name
        output_shape: extent of every output index
        args: argument names with their shapes, in declaration order
        body: scalar expression for one output element
        indices: output index symbols; defaults to the body's free symbols by name

    Returns:
        The validated ElemFuncSpec
    """
    output_shape = _shape(name, output_shape)
    items = list(args.items()) if isinstance(args, Mapping) else list(args)
    shapes = {arg_name: _shape(arg_name, shape) for arg_name, shape in items}

    if indices is None:
        indices = sorted(body.free_symbols, key=lambda s: s.name)
    indices = tuple(IndexSymbol(s, IndexKind.OUTPUT) if isinstance(s, str) else s for s in indices)
    if len(indices) != len(output_shape):
        raise ShapeMismatch(name, len(output_shape), len(indices))
    if len({s.name for s in indices}) != len(indices):
        raise DuplicateIndex(next(s.name for s in indices if [t.name for t in indices].count(s.name) > 1))
    stray = body.free_symbols - set(indices)
    if stray:
        raise UnknownSymbol(sorted(s.name for s in stray)[0], f"body of {name}")

    occurrences: Dict[str, List[Occurrence]] = {n: [] for n in shapes}
    seen = set()
    for node, scope in scoped_postorder(body):
        if isinstance(node, Sum):
            enclosing = {s.name for s in indices} | {s.index.name for s in scope}
            if node.index.name in enclosing:
                raise DuplicateIndex(node.index.name)
            if node.lower.is_constant and node.upper.is_constant:
                lo, hi = node.lower.evaluate({}), node.upper.evaluate({})
                if lo > hi:
                    logger.warning(f"Sum over {node.index.name} in {name} has empty range {lo}..{hi}; it evaluates to 0")
        elif isinstance(node, Binary) and node.op == "**" and not is_constant_expr(node.rhs):
            raise NonDifferentiableOp(node, "exponent is not constant")
        elif isinstance(node, AdjointElement):
            raise UnknownSymbol(node.name, f"body of {name} (adjoint references are not inputs)")
        elif isinstance(node, ArgElement):
            if node.name not in shapes:
                raise UnknownSymbol(node.name, f"body of {name}")
            if len(node.indices) != len(shapes[node.name]):
                raise ShapeMismatch(node.name, len(shapes[node.name]), len(node.indices))
            for form in node.indices:
                if not form.is_integral:
                    raise NonIntegerComposition(form)
            if (node, scope) not in seen:
                seen.add((node, scope))
                symbols = indices + tuple(s.index for s in scope)
                occurrences[node.name].append(
                    Occurrence(node, scope, symbols, IndexAffineMap.from_forms(node.indices, symbols)))

    spec = ElemFuncSpec(
        name=name,
        output_shape=output_shape,
        output_indices=indices,
        arguments=tuple(ArgumentSpec(n, shapes[n], tuple(occurrences[n])) for n in shapes),
        body=body,
    )
    _check_ranges(spec)
    logger.info(f"Built spec {name}: {len(shapes)} arguments, {sum(len(o) for o in occurrences.values())} occurrences")
    return spec


def box_constraints(indices: Sequence[IndexSymbol], shape: Sequence[int]) -> List[Condition]:
    rows = []
    for s, n in zip(indices, shape):
        rows.append(Condition.at_least(AffineForm.of(s)))
        rows.append(Condition.at_least(AffineForm.const(n - 1) - AffineForm.of(s)))
    return rows


def sum_constraints(node: Sum, enclosing: FrozenSet[IndexSymbol]) -> List[Condition]:
    rows = []
    k = AffineForm.of(node.index)
    for form in node.lower.forms:
        if not form.symbols <= enclosing:
            raise NonAffineSumBound(node.index.name, form)
        rows.append(Condition.at_least(k - form))
    for form in node.upper.forms:
        if not form.symbols <= enclosing:
            raise NonAffineSumBound(node.index.name, form)
        rows.append(Condition.at_least(form - k))
    return rows


def _integral_multiple(form: AffineForm) -> Tuple[AffineForm, int]:
    """(d * form, d) with d the smallest positive integer making every coefficient integral."""
    d = math.lcm(form.constant.denominator, *(c.denominator for _, c in form.terms))
    return form * d, d


class _GuardRows:
    """Integer constraint rows (form >= 0) for a delta condition holding or failing."""

    def __init__(self):
        self._aux = itertools.count()
        self._cache: Dict[Tuple[Condition, bool], Tuple[Tuple[AffineForm, ...], ...]] = {}

    def _fresh(self) -> AffineForm:
        return AffineForm.of(IndexSymbol(f"#{next(self._aux)}", IndexKind.KERNEL))

    def holding(self, cond: Condition) -> Tuple[AffineForm, ...]:
        key = (cond, True)
        if key not in self._cache:
            if cond.kind == ConditionKind.AT_LEAST:
                rows = (cond.form,)
            elif cond.kind == ConditionKind.EQUAL:
                rows = (cond.form, -cond.form)
            else:
                multiple = cond.form - self._fresh() * cond.modulus
                rows = (multiple, -multiple)
            self._cache[key] = (rows,)
        return self._cache[key][0]

    def failing(self, cond: Condition) -> Tuple[Tuple[AffineForm, ...], ...]:
        """One row set per way the condition can fail on integer points."""
        key = (cond, False)
        if key not in self._cache:
            g, d = _integral_multiple(cond.form)
            if cond.kind == ConditionKind.AT_LEAST:
                alternatives = ((-g - 1,),)
            elif cond.kind == ConditionKind.EQUAL:
                alternatives = ((-g - 1,), (g - 1,))
            elif d * cond.modulus == 1:
                alternatives = ()
            else:
                # g = m*q + r with 1 <= r < m
                m = d * cond.modulus
                r = self._fresh()
                rest = g - self._fresh() * m - r
                alternatives = ((rest, -rest, r - 1, m - 1 - r),)
            self._cache[key] = alternatives
        return self._cache[key]


def _integer_point(rows: Sequence[AffineForm], order: Sequence[IndexSymbol]) -> Optional[Dict[str, int]]:
    """Some integer point with every row >= 0, or None; order lists the index symbols outermost first."""
    named = set(order)
    aux = sorted(set().union(*(f.symbols for f in rows)) - named, key=lambda s: s.name)
    variables = aux + list(reversed(order))
    A = [[f.coefficient(v) for v in variables] for f in rows]
    b = [-f.constant for f in rows]
    point = next(fm_eliminate(A).enumerate(b), None)
    if point is None:
        return None
    return {v.name: x for v, x in zip(variables, point) if v in named}


def _check_ranges(spec: ElemFuncSpec) -> None:
    """Every element reference reachable for in-range indices must stay inside its tensor."""
    shapes = spec.shapes
    guards = _GuardRows()
    checked = set()

    def visit(node: Expr, rows: Tuple[AffineForm, ...], order: Tuple[IndexSymbol, ...]) -> None:
        key = (node, rows)
        if key in checked:
            return
        checked.add(key)

        if isinstance(node, ArgElement):
            shape = shapes[node.name]
            for form, n in zip(node.indices, shape):
                for outside in (form - n, -form - 1):
                    at = _integer_point(rows + (outside,), order)
                    if at is not None:
                        index_map = "[" + "; ".join(str(f) for f in node.indices) + "]"
                        value = [int(f.evaluate(at)) for f in node.indices]
                        raise OutOfRangeIndexMap(node.name, index_map, shape, at, value)
        elif isinstance(node, Sum):
            extra = tuple(c.form for c in sum_constraints(node, frozenset(order)))
            visit(node.body, rows + extra, order + (node.index,))
        elif isinstance(node, DeltaIf):
            holding = tuple(row for c in node.conditions for row in guards.holding(c))
            visit(node.then, rows + holding, order)
            for c in node.conditions:
                for alternative in guards.failing(c):
                    visit(node.orelse, rows + alternative, order)
        else:
            for child in node.children():
                visit(child, rows, order)

    box = tuple(c.form for c in box_constraints(spec.output_indices, spec.output_shape))
    visit(spec.body, box, spec.output_indices)


###############################################################################
# Derivation results
###############################################################################


@dataclass(frozen=True, eq=False)
class OccurrenceDerivation:
    """Artifacts of deriving one occurrence: the local adjoint and the index geometry."""

    occurrence: Occurrence
    delta: Expr
    solve: object  # tools.intlinalg.LinearSolveResult
    system: object  # tools.fourier_motzkin.FMSystem, None without kernel
    conditions: tuple
    term: Expr


@dataclass(frozen=True, eq=False)
class ArgumentDerivative:
    name: str
    shape: Tuple[int, ...]
    indices: Tuple[IndexSymbol, ...]
    expr: Expr
    occurrences: Tuple[OccurrenceDerivation, ...] = ()


@dataclass(frozen=True, eq=False)
class DerivSpec:
    source: ElemFuncSpec
    adjoint_name: str
    derivatives: Tuple[ArgumentDerivative, ...]

    def __getitem__(self, arg: str) -> ArgumentDerivative:
        for d in self.derivatives:
            if d.name == arg:
                return d
        raise UnknownSymbol(arg, f"derivatives of {self.source.name}")

    def as_spec(self, arg: str) -> ElemFuncSpec:
        """The adjoint of arg as an element-wise function of the arguments and the incoming adjoint."""
        derivative = self[arg]
        if self.adjoint_name in self.source.shapes:
            raise NameClash(self.adjoint_name, f"arguments of {self.source.name}")
        body = map_elements(
            derivative.expr,
            lambda e: ArgElement(e.name, e.indices) if isinstance(e, AdjointElement) else e,
        )
        args = list(self.source.shapes.items()) + [(self.adjoint_name, self.source.output_shape)]
        return build_spec(f"d{arg}", derivative.shape, args, body, indices=derivative.indices)


###############################################################################
# Verification report (JSON API schema)
###############################################################################


class ArgumentReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    arg: str
    reference: str
    max_abs_err: float
    max_rel_err: float
    worst_index: List[int]
    passed: bool = Field(alias="pass")


class VerifyReport(BaseModel):
    spec: str
    trials: int
    tolerance: float
    seed: int
    passed: bool
    arguments: List[ArgumentReport]

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)

    def to_text(self) -> str:
        lines = [f"Verification of {self.spec}: {self.trials} trials, tolerance {self.tolerance:g}, seed {self.seed}"]
        for r in self.arguments:
            status = "PASS" if r.passed else "FAIL"
            lines.append(f"  {status} d{r.arg} vs {r.reference}: max abs err {r.max_abs_err:.3e}, "
                         f"max rel err {r.max_rel_err:.3e}, worst at {r.worst_index}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)
