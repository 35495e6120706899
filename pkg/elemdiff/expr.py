"""
Immutable scalar expression DAG and the index algebra it is built on.

Nodes are hash-consed: constructing a structurally identical node returns the
existing instance, so node identity is structural equality and shared
subexpressions exist exactly once.
"""
import threading
import weakref
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Sequence, Tuple, Union

from .exceptions import DuplicateIndex, NonIntegerComposition
from .utils import ceil_fraction, floor_fraction, format_fraction

Number = Union[int, Fraction]

###############################################################################
# Index algebra
###############################################################################


class IndexKind(str, Enum):
    OUTPUT = "output"
    SUM = "sum"
    DERIVATIVE = "derivative"
    KERNEL = "kernel"


@dataclass(frozen=True)
class IndexSymbol:
    name: str
    kind: IndexKind = field(default=IndexKind.OUTPUT, compare=False)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class AffineForm:
    """constant + sum of coefficient * symbol, with exact rational coefficients."""

    terms: Tuple[Tuple[IndexSymbol, Fraction], ...] = ()
    constant: Fraction = Fraction(0)

    @staticmethod
    def build(terms: Union[Mapping[IndexSymbol, Number], Iterable[Tuple[IndexSymbol, Number]]] = (),
              constant: Number = 0) -> "AffineForm":
        merged: Dict[IndexSymbol, Fraction] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for sym, coeff in items:
            merged[sym] = merged.get(sym, Fraction(0)) + Fraction(coeff)
        ordered = tuple(sorted(((s, c) for s, c in merged.items() if c != 0), key=lambda t: t[0].name))
        return AffineForm(ordered, Fraction(constant))

    @staticmethod
    def of(symbol: IndexSymbol, coeff: Number = 1) -> "AffineForm":
        return AffineForm.build({symbol: coeff})

    @staticmethod
    def const(value: Number) -> "AffineForm":
        return AffineForm((), Fraction(value))

    @property
    def symbols(self) -> FrozenSet[IndexSymbol]:
        return frozenset(s for s, _ in self.terms)

    @property
    def is_constant(self) -> bool:
        return not self.terms

    @property
    def is_integral(self) -> bool:
        return self.constant.denominator == 1 and all(c.denominator == 1 for _, c in self.terms)

    def coefficient(self, symbol: IndexSymbol) -> Fraction:
        for s, c in self.terms:
            if s == symbol:
                return c
        return Fraction(0)

    def evaluate(self, values: Mapping[str, Number]) -> Fraction:
        total = self.constant
        for s, c in self.terms:
            total += c * values[s.name]
        return total

    def substitute(self, mapping: Mapping[IndexSymbol, "AffineForm"]) -> "AffineForm":
        result = AffineForm.const(self.constant)
        rest = []
        for s, c in self.terms:
            if s in mapping:
                result = result + mapping[s] * c
            else:
                rest.append((s, c))
        return result + AffineForm.build(rest)

    def __add__(self, other: Union["AffineForm", Number]) -> "AffineForm":
        other = as_form(other)
        return AffineForm.build(list(self.terms) + list(other.terms), self.constant + other.constant)

    __radd__ = __add__

    def __neg__(self) -> "AffineForm":
        return self * -1

    def __sub__(self, other: Union["AffineForm", Number]) -> "AffineForm":
        return self + (-as_form(other))

    def __rsub__(self, other: Number) -> "AffineForm":
        return as_form(other) - self

    def __mul__(self, k: Number) -> "AffineForm":
        k = Fraction(k)
        return AffineForm.build([(s, c * k) for s, c in self.terms], self.constant * k)

    __rmul__ = __mul__

    def __truediv__(self, k: Number) -> "AffineForm":
        return self * (1 / Fraction(k))

    def __str__(self) -> str:
        parts = []
        if self.constant != 0 or not self.terms:
            parts.append(format_fraction(self.constant))
        for s, c in self.terms:
            if c == 1:
                parts.append(s.name)
            elif c == -1:
                parts.append(f"-{s.name}")
            else:
                parts.append(f"{format_fraction(c)} * {s.name}")
        return " + ".join(parts)


def as_form(value: Union[AffineForm, IndexSymbol, Number]) -> AffineForm:
    if isinstance(value, AffineForm):
        return value
    if isinstance(value, IndexSymbol):
        return AffineForm.of(value)
    return AffineForm.const(value)


@dataclass(frozen=True)
class IndexAffineMap:
    """Integer matrix plus offset: sends a source multi-index alpha to coeffs*alpha + offset."""

    coeffs: Tuple[Tuple[int, ...], ...]
    offset: Tuple[int, ...]

    def __post_init__(self):
        if len(self.coeffs) != len(self.offset):
            raise ValueError(f"{len(self.coeffs)} coefficient rows but offset of length {len(self.offset)}")
        widths = {len(row) for row in self.coeffs}
        if len(widths) > 1:
            raise ValueError("Coefficient rows have different lengths")
        for v in [x for row in self.coeffs for x in row] + list(self.offset):
            if Fraction(v).denominator != 1:
                raise NonIntegerComposition(v)

    @staticmethod
    def from_forms(forms: Sequence[AffineForm], symbols: Sequence[IndexSymbol]) -> "IndexAffineMap":
        known = set(symbols)
        for form in forms:
            if not form.is_integral:
                raise NonIntegerComposition(form)
            stray = form.symbols - known
            if stray:
                raise ValueError(f"Form {form} uses {sorted(s.name for s in stray)} outside {[s.name for s in symbols]}")
        coeffs = tuple(tuple(int(f.coefficient(s)) for s in symbols) for f in forms)
        return IndexAffineMap(coeffs, tuple(int(f.constant) for f in forms))

    @property
    def rows(self) -> int:
        return len(self.coeffs)

    @property
    def cols(self) -> int:
        return len(self.coeffs[0]) if self.coeffs else 0

    def apply(self, alpha: Sequence[int]) -> Tuple[int, ...]:
        return tuple(sum(a * x for a, x in zip(row, alpha)) + c for row, c in zip(self.coeffs, self.offset))

    def __str__(self) -> str:
        return f"{[list(r) for r in self.coeffs]}*alpha + {list(self.offset)}"


class BoundDirection(str, Enum):
    LOWER = "lower"
    UPPER = "upper"


@dataclass(frozen=True)
class RangeBound:
    """A lower bound is ceil(max(forms)), an upper bound floor(min(forms))."""

    direction: BoundDirection
    forms: Tuple[AffineForm, ...]

    @staticmethod
    def make(direction: BoundDirection, forms: Iterable[Union[AffineForm, Number]]) -> "RangeBound":
        forms = [as_form(f) for f in forms]
        if not forms:
            raise ValueError(f"A {direction.value} bound needs at least one form")
        constants = [f.constant for f in forms if f.is_constant]
        rest = {str(f): f for f in forms if not f.is_constant}
        ordered = [rest[k] for k in sorted(rest)]
        if constants:
            tightest = max(constants) if direction == BoundDirection.LOWER else min(constants)
            ordered.insert(0, AffineForm.const(tightest))
        return RangeBound(direction, tuple(ordered))

    @staticmethod
    def lower(*forms) -> "RangeBound":
        return RangeBound.make(BoundDirection.LOWER, forms)

    @staticmethod
    def upper(*forms) -> "RangeBound":
        return RangeBound.make(BoundDirection.UPPER, forms)

    @property
    def rounding(self) -> str:
        return "ceil" if self.direction == BoundDirection.LOWER else "floor"

    @property
    def symbols(self) -> FrozenSet[IndexSymbol]:
        return frozenset().union(*(f.symbols for f in self.forms))

    @property
    def is_constant(self) -> bool:
        return all(f.is_constant for f in self.forms)

    def evaluate(self, values: Mapping[str, Number]) -> int:
        vals = [f.evaluate(values) for f in self.forms]
        if self.direction == BoundDirection.LOWER:
            return ceil_fraction(max(vals))
        return floor_fraction(min(vals))

    def substitute(self, mapping: Mapping[IndexSymbol, AffineForm]) -> "RangeBound":
        return RangeBound.make(self.direction, [f.substitute(mapping) for f in self.forms])

    def __str__(self) -> str:
        if len(self.forms) == 1:
            return str(self.forms[0])
        word = "max" if self.direction == BoundDirection.LOWER else "min"
        return f"{word} [{'; '.join(str(f) for f in self.forms)}]"


class ConditionKind(str, Enum):
    EQUAL = "eq"
    AT_LEAST = "ge"
    DIVISIBLE = "mod"


@dataclass(frozen=True)
class Condition:
    form: AffineForm
    kind: ConditionKind = ConditionKind.EQUAL
    modulus: int = 0

    @staticmethod
    def _oriented(form: AffineForm) -> AffineForm:
        # first coefficient positive
        if form.terms and form.terms[0][1] < 0:
            return -form
        return form

    @staticmethod
    def equal(form: Union[AffineForm, Number]) -> "Condition":
        return Condition(Condition._oriented(as_form(form)), ConditionKind.EQUAL)

    @staticmethod
    def at_least(form: Union[AffineForm, Number]) -> "Condition":
        return Condition(as_form(form), ConditionKind.AT_LEAST)

    @staticmethod
    def divisible(form: Union[AffineForm, Number], modulus: int) -> "Condition":
        if modulus < 1:
            raise ValueError(f"Modulus must be positive, got {modulus}")
        return Condition(Condition._oriented(as_form(form)), ConditionKind.DIVISIBLE, int(modulus))

    @property
    def symbols(self) -> FrozenSet[IndexSymbol]:
        return self.form.symbols

    def holds(self, values: Mapping[str, Number]) -> bool:
        v = self.form.evaluate(values)
        if self.kind == ConditionKind.EQUAL:
            return v == 0
        if self.kind == ConditionKind.AT_LEAST:
            return v >= 0
        return v.denominator == 1 and v.numerator % self.modulus == 0

    def substitute(self, mapping: Mapping[IndexSymbol, AffineForm]) -> "Condition":
        form = self.form.substitute(mapping)
        if self.kind == ConditionKind.EQUAL:
            return Condition.equal(form)
        if self.kind == ConditionKind.AT_LEAST:
            return Condition.at_least(form)
        return Condition.divisible(form, self.modulus)

    def __str__(self) -> str:
        if self.kind == ConditionKind.EQUAL:
            return f"{self.form} = 0"
        if self.kind == ConditionKind.AT_LEAST:
            return f"{self.form} >= 0"
        return f"{self.form} = 0 mod {self.modulus}"


###############################################################################
# Expression nodes
###############################################################################

_TABLE: "weakref.WeakValueDictionary" = weakref.WeakValueDictionary()
_LOCK = threading.Lock()

BINARY_OPS = ("+", "-", "*", "/", "**")
UNARY_OPS = ("neg", "exp", "log", "sin", "cos", "sinh", "cosh", "sqrt")


class Expr:
    """Base class of all scalar expression nodes. Equality is identity."""

    __slots__ = ("_free", "__weakref__")

    @classmethod
    def _intern(cls, key: tuple) -> "Expr":
        with _LOCK:
            node = _TABLE.get((cls, key))
            if node is None:
                node = object.__new__(cls)
                node._setup(*key)
                _TABLE[(cls, key)] = node
        return node

    def _setup(self, *key):
        raise NotImplementedError

    @property
    def free_symbols(self) -> FrozenSet[IndexSymbol]:
        return self._free

    def children(self) -> Tuple["Expr", ...]:
        return ()

    def __add__(self, other):
        return Binary(self, "+", as_expr(other))

    def __radd__(self, other):
        return Binary(as_expr(other), "+", self)

    def __sub__(self, other):
        return Binary(self, "-", as_expr(other))

    def __rsub__(self, other):
        return Binary(as_expr(other), "-", self)

    def __mul__(self, other):
        return Binary(self, "*", as_expr(other))

    def __rmul__(self, other):
        return Binary(as_expr(other), "*", self)

    def __truediv__(self, other):
        return Binary(self, "/", as_expr(other))

    def __rtruediv__(self, other):
        return Binary(as_expr(other), "/", self)

    def __pow__(self, other):
        return Binary(self, "**", as_expr(other))

    def __rpow__(self, other):
        return Binary(as_expr(other), "**", self)

    def __neg__(self):
        return Unary("neg", self)

    def __str__(self) -> str:
        from .syntax import format_expr
        return format_expr(self)

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self}>"


class Const(Expr):
    __slots__ = ("value",)

    def __new__(cls, value: Number):
        return cls._intern((Fraction(value),))

    def _setup(self, value):
        self.value = value
        self._free = frozenset()


class _Element(Expr):
    __slots__ = ("name", "indices")

    def __new__(cls, name: str, indices: Sequence[Union[AffineForm, IndexSymbol, Number]]):
        return cls._intern((name, tuple(as_form(f) for f in indices)))

    def _setup(self, name, indices):
        self.name = name
        self.indices = indices
        self._free = frozenset().union(*(f.symbols for f in indices))


class ArgElement(_Element):
    """Element of an input tensor at affine index positions."""
    __slots__ = ()


class AdjointElement(_Element):
    """Element of the incoming adjoint tensor (d f) of the function being differentiated."""
    __slots__ = ()


class Binary(Expr):
    __slots__ = ("lhs", "op", "rhs")

    def __new__(cls, lhs: Expr, op: str, rhs: Expr):
        if op not in BINARY_OPS:
            raise ValueError(f"Unknown binary operator {op!r}")
        # constant-identity collapse, plus exact division of two constants
        if op == "/" and isinstance(lhs, Const) and isinstance(rhs, Const) and rhs.value != 0:
            return Const(lhs.value / rhs.value)
        if op == "+":
            if _is_const(rhs, 0):
                return lhs
            if _is_const(lhs, 0):
                return rhs
        elif op == "*":
            if _is_const(lhs, 0) or _is_const(rhs, 0):
                return Const(0)
            if _is_const(rhs, 1):
                return lhs
            if _is_const(lhs, 1):
                return rhs
        return cls._intern((lhs, op, rhs))

    def _setup(self, lhs, op, rhs):
        self.lhs = lhs
        self.op = op
        self.rhs = rhs
        self._free = lhs.free_symbols | rhs.free_symbols

    def children(self):
        return (self.lhs, self.rhs)


class Unary(Expr):
    __slots__ = ("op", "operand")

    def __new__(cls, op: str, operand: Expr):
        if op not in UNARY_OPS:
            raise ValueError(f"Unknown function {op!r}")
        if op == "neg" and isinstance(operand, Const):
            return Const(-operand.value)
        return cls._intern((op, operand))

    def _setup(self, op, operand):
        self.op = op
        self.operand = operand
        self._free = operand.free_symbols

    def children(self):
        return (self.operand,)


class Sum(Expr):
    __slots__ = ("index", "lower", "upper", "body")

    def __new__(cls, index: IndexSymbol, lower: RangeBound, upper: RangeBound, body: Expr):
        if lower.direction != BoundDirection.LOWER or upper.direction != BoundDirection.UPPER:
            raise ValueError("Sum bounds must be a lower and an upper RangeBound")
        return cls._intern((index, lower, upper, body))

    def _setup(self, index, lower, upper, body):
        self.index = index
        self.lower = lower
        self.upper = upper
        self.body = body
        self._free = (body.free_symbols - {index}) | lower.symbols | upper.symbols

    def children(self):
        return (self.body,)


class DeltaIf(Expr):
    """then-expr where every condition holds, else-expr otherwise."""

    __slots__ = ("conditions", "then", "orelse")

    def __new__(cls, conditions: Sequence[Condition], then: Expr, orelse: Expr):
        conditions = tuple(dict.fromkeys(conditions))
        if not conditions:
            return then
        return cls._intern((conditions, then, orelse))

    def _setup(self, conditions, then, orelse):
        self.conditions = conditions
        self.then = then
        self.orelse = orelse
        cond_syms = frozenset().union(*(c.symbols for c in conditions))
        self._free = cond_syms | then.free_symbols | orelse.free_symbols

    def children(self):
        return (self.then, self.orelse)


def _is_const(node: Expr, value: Number) -> bool:
    return isinstance(node, Const) and node.value == value


def as_expr(value: Union[Expr, Number, float]) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, float):
        return Const(Fraction(str(value)))
    return Const(value)


# Function-call constructors used by the parser and the differentiation rules
def neg(x: Expr) -> Expr:
    return Unary("neg", x)


def exp(x: Expr) -> Expr:
    return Unary("exp", x)


def log(x: Expr) -> Expr:
    return Unary("log", x)


def sin(x: Expr) -> Expr:
    return Unary("sin", x)


def cos(x: Expr) -> Expr:
    return Unary("cos", x)


def sinh(x: Expr) -> Expr:
    return Unary("sinh", x)


def cosh(x: Expr) -> Expr:
    return Unary("cosh", x)


def sqrt(x: Expr) -> Expr:
    return Unary("sqrt", x)


###############################################################################
# Traversal and rewriting
###############################################################################


def free_symbols(expr: Expr) -> FrozenSet[IndexSymbol]:
    return expr.free_symbols


def iter_nodes(expr: Expr) -> Iterator[Expr]:
    """Every distinct node reachable from expr, each exactly once."""
    seen = set()
    stack = [expr]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        yield node
        stack.extend(node.children())


def node_count(expr: Expr) -> int:
    return sum(1 for _ in iter_nodes(expr))


def is_constant_expr(expr: Expr) -> bool:
    """True if expr involves no tensor element and no index-dependent construct."""
    return all(isinstance(n, (Const, Binary, Unary)) for n in iter_nodes(expr))


Scope = Tuple[Sum, ...]


def scoped_postorder(root: Expr) -> List[Tuple[Expr, Scope]]:
    """
    Children-first order of (node, enclosing sums) pairs.

    A node reached under two different chains of enclosing sums appears once per
    chain; within one chain it appears once however many paths lead to it.
    """
    order: List[Tuple[Expr, Scope]] = []
    seen = set()
    stack: List[Tuple[Expr, Scope, bool]] = [(root, (), False)]
    while stack:
        node, scope, expanded = stack.pop()
        key = (node, scope)
        if expanded:
            order.append(key)
            continue
        if key in seen:
            continue
        seen.add(key)
        stack.append((node, scope, True))
        inner = scope + (node,) if isinstance(node, Sum) else scope
        for child in reversed(node.children()):
            if (child, inner) not in seen:
                stack.append((child, inner, False))
    return order


def substitute_indices(expr: Expr, mapping: Mapping[IndexSymbol, Union[AffineForm, IndexSymbol, Number]]) -> Expr:
    """
    Replace free index symbols by affine forms, composing every element's index map
    with the substitution. Symbols bound by a Sum are left alone inside it.
    """
    mapping = {s: as_form(f) for s, f in mapping.items()}
    cache: Dict[tuple, Expr] = {}

    def visit(node: Expr, active: Dict[IndexSymbol, AffineForm]) -> Expr:
        relevant = {s: f for s, f in active.items() if s in node.free_symbols}
        if not relevant:
            return node
        key = (node, frozenset(relevant.items()))
        hit = cache.get(key)
        if hit is not None:
            return hit

        if isinstance(node, _Element):
            forms = []
            for f in node.indices:
                g = f.substitute(relevant)
                if not g.is_integral:
                    raise NonIntegerComposition(g)
                forms.append(g)
            result = type(node)(node.name, forms)
        elif isinstance(node, Binary):
            result = Binary(visit(node.lhs, relevant), node.op, visit(node.rhs, relevant))
        elif isinstance(node, Unary):
            result = Unary(node.op, visit(node.operand, relevant))
        elif isinstance(node, Sum):
            inner = {s: f for s, f in relevant.items() if s != node.index}
            if any(node.index in f.symbols for f in inner.values()):
                raise DuplicateIndex(node.index.name)
            result = Sum(node.index, node.lower.substitute(relevant), node.upper.substitute(relevant),
                         visit(node.body, inner))
        elif isinstance(node, DeltaIf):
            result = DeltaIf([c.substitute(relevant) for c in node.conditions],
                             visit(node.then, relevant), visit(node.orelse, relevant))
        else:
            result = node
        cache[key] = result
        return result

    return visit(expr, mapping)


def map_elements(expr: Expr, fn) -> Expr:
    """Rebuild expr with every tensor element node replaced by fn(node)."""
    cache: Dict[Expr, Expr] = {}

    def visit(node: Expr) -> Expr:
        hit = cache.get(node)
        if hit is not None:
            return hit
        if isinstance(node, _Element):
            result = fn(node)
        elif isinstance(node, Binary):
            result = Binary(visit(node.lhs), node.op, visit(node.rhs))
        elif isinstance(node, Unary):
            result = Unary(node.op, visit(node.operand))
        elif isinstance(node, Sum):
            result = Sum(node.index, node.lower, node.upper, visit(node.body))
        elif isinstance(node, DeltaIf):
            result = DeltaIf(node.conditions, visit(node.then), visit(node.orelse))
        else:
            result = node
        cache[node] = result
        return result

    return visit(expr)


def symbol_names(expr: Expr) -> FrozenSet[str]:
    """Names of every index symbol in expr, free or bound."""
    names = set()
    for node in iter_nodes(expr):
        names.update(s.name for s in node.free_symbols)
        if isinstance(node, Sum):
            names.add(node.index.name)
    return frozenset(names)
