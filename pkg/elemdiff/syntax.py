"""
Text format for element-wise functions.

    # comment
    a : 3 x 5
    s : scalar
    f : 3 x 4
    f[i; j] = exp (-sum{k}_0^4 ((a[i; k] + b[j; k]) ** 2 * c[i; i] + d[i + k] ** 3))

Index positions, sum bounds and conditions are affine in the index symbols in
scope. Sum bounds are an integer, or a parenthesized affine form, `max [..; ..]`
(lower) or `min [..; ..]` (upper). Deltas read
`if {form = 0 and form >= 0 and form = 0 mod m} then (e) else (e)`.
`**` binds tighter than unary minus.
"""
import os
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple, Union

from lark import Lark, Token, Tree
from lark.exceptions import UnexpectedCharacters, UnexpectedInput, UnexpectedToken

from .exceptions import NonAffineIndex, ParseError
from .expr import (AdjointElement, AffineForm, ArgElement, Binary, BoundDirection, Condition, Const, DeltaIf, Expr,
                   IndexKind, IndexSymbol, RangeBound, Sum, Unary, is_constant_expr)
from .models import DerivSpec, ElemFuncSpec, build_spec
from .utils import format_fraction

###############################################################################
# Printing
###############################################################################

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "**": 4}
_NEG, _ATOM = 3, 5


def _shape_text(shape: Sequence[int]) -> str:
    return " x ".join(str(n) for n in shape) if shape else "scalar"


def _bound_text(bound: RangeBound) -> str:
    if len(bound.forms) == 1:
        form = bound.forms[0]
        if form.is_constant and form.constant.denominator == 1 and form.constant >= 0:
            return str(form.constant.numerator)
    return f"({bound})"


def _element_text(node) -> str:
    return f"{node.name}[{'; '.join(str(f) for f in node.indices)}]"


def format_expr(expr: Expr) -> str:
    memo: Dict[Expr, Tuple[str, int]] = {}

    def fmt(node: Expr) -> Tuple[str, int]:
        hit = memo.get(node)
        if hit is not None:
            return hit
        if isinstance(node, Const):
            text = format_fraction(node.value)
            result = (text, 2 if "/" in text else _NEG if node.value < 0 else _ATOM)
        elif isinstance(node, (ArgElement, AdjointElement)):
            result = (_element_text(node), _ATOM)
        elif isinstance(node, Binary):
            (lt, lp), (rt, rp) = fmt(node.lhs), fmt(node.rhs)
            p = _PREC[node.op]
            if node.op == "**":
                lt = lt if lp > p else f"({lt})"
                rt = rt if rp >= _NEG else f"({rt})"
            else:
                lt = lt if lp >= p else f"({lt})"
                rt = rt if rp > p else f"({rt})"
            result = (f"{lt} {node.op} {rt}", p)
        elif isinstance(node, Unary):
            inner, ip = fmt(node.operand)
            if node.op == "neg":
                result = (f"-{inner}" if ip > _NEG else f"-({inner})", _NEG)
            else:
                result = (f"{node.op} ({inner})", _ATOM)
        elif isinstance(node, Sum):
            body, _ = fmt(node.body)
            result = (f"sum{{{node.index.name}}}_{_bound_text(node.lower)}^{_bound_text(node.upper)} ({body})", _ATOM)
        elif isinstance(node, DeltaIf):
            conds = " and ".join(str(c) for c in node.conditions)
            then, _ = fmt(node.then)
            orelse, _ = fmt(node.orelse)
            result = (f"if {{{conds}}} then ({then}) else ({orelse})", _ATOM)
        else:
            raise TypeError(f"Cannot print {type(node).__name__}")
        memo[node] = result
        return result

    return fmt(expr)[0]


def format_definition(name: str, indices: Sequence[IndexSymbol], body: Expr) -> str:
    return f"{name}[{'; '.join(s.name for s in indices)}] = {format_expr(body)}"


def format_spec(spec: ElemFuncSpec) -> str:
    lines = [f"{a.name} : {_shape_text(a.shape)}" for a in spec.arguments]
    lines.append(f"{spec.name} : {_shape_text(spec.output_shape)}")
    lines.append(format_definition(spec.name, spec.output_indices, spec.body))
    return "\n".join(lines)


def format_derivative(deriv: DerivSpec, arg: str) -> str:
    d = deriv[arg]
    return f"Derivative of {deriv.source.name} wrt. {arg}: {format_definition(f'd{arg}', d.indices, d.expr)}"


def format_deriv_spec(deriv: DerivSpec) -> str:
    spec = deriv.source
    lines = [f"Input: {format_definition(spec.name, spec.output_indices, spec.body)}"]
    lines.extend(format_derivative(deriv, d.name) for d in deriv.derivatives)
    return "\n".join(lines)


def to_text(obj: Union[ElemFuncSpec, DerivSpec]) -> str:
    if isinstance(obj, DerivSpec):
        return format_deriv_spec(obj)
    return format_spec(obj)


###############################################################################
# Parsing
###############################################################################


def read_grammar() -> str:
    grammar_dir = os.path.join(os.path.dirname(os.path.realpath(__file__)), "grammar")
    with open(os.path.join(grammar_dir, "tad.lark"), "r") as grammar_file:
        return grammar_file.read()


@lru_cache(maxsize=None)
def get_parser() -> Lark:
    return Lark(read_grammar(), parser="lalr", propagate_positions=True, maybe_placeholders=False)


_BINARY = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def _at(node: Union[Tree, Token]) -> Tuple[int, int]:
    if isinstance(node, Token):
        return node.line, node.column
    return getattr(node.meta, "line", 0), getattr(node.meta, "column", 0)


class _SpecBuilder:
    """Turns a parse tree into index symbols and expression nodes, resolving index scopes."""

    def __init__(self):
        self.references: Dict[str, Tuple[int, Token]] = {}  # tensor name -> (rank, first use)

    def error(self, message: str, node: Union[Tree, Token]) -> ParseError:
        return ParseError(message, *_at(node))

    def integer(self, tok: Token) -> int:
        if "." in tok:
            raise self.error(f"expected an integer, found '{tok}'", tok)
        return int(tok)

    def statements(self, tree: Tree):
        shapes: Dict[str, Tuple[int, ...]] = {}
        definition = None
        for stmt in tree.children:
            name_tok = stmt.children[0]
            if stmt.data == "decl":
                if name_tok in shapes:
                    raise self.error(f"shape of '{name_tok}' declared twice", name_tok)
                shape = stmt.children[1]
                shapes[str(name_tok)] = tuple(self.integer(t) for t in shape.children) if shape.data == "dims" else ()
                continue
            if definition is not None:
                raise self.error("only one function definition is allowed per source", name_tok)
            indices: List[IndexSymbol] = []
            if len(stmt.children) == 3:
                for tok in stmt.children[1].children:
                    if any(s.name == tok for s in indices):
                        raise self.error(f"output index '{tok}' repeated", tok)
                    indices.append(IndexSymbol(str(tok), IndexKind.OUTPUT))
            body = self.expr(stmt.children[-1], tuple(indices))
            definition = (str(name_tok), indices, body, name_tok)
        if definition is None:
            raise ParseError("no function definition found", 1, 1)
        return shapes, definition

    # --- values ---
    def expr(self, tree: Tree, scope: Tuple[IndexSymbol, ...]) -> Expr:
        kind = tree.data
        ch = tree.children
        if kind in _BINARY:
            return Binary(self.expr(ch[0], scope), _BINARY[kind], self.expr(ch[1], scope))
        if kind == "neg":
            return -self.expr(ch[0], scope)
        if kind == "pow":
            exponent = self.expr(ch[1], scope)
            if not is_constant_expr(exponent):
                raise self.error("exponent of ** must be a constant expression", ch[1])
            return Binary(self.expr(ch[0], scope), "**", exponent)
        if kind == "number":
            return Const(Fraction(str(ch[0])))
        if kind == "call":
            return Unary(str(ch[0].children[0]), self.expr(ch[1], scope))
        if kind == "sum":
            return self.sum(ch, scope)
        if kind == "delta":
            conditions = [self.condition(c, scope) for c in ch[:-2]]
            return DeltaIf(conditions, self.expr(ch[-2], scope), self.expr(ch[-1], scope))
        if kind == "element":
            return self.element(ch, scope)
        raise self.error(f"unexpected '{kind}'", tree)

    def element(self, ch, scope) -> Expr:
        name_tok = ch[0]
        if any(s.name == name_tok for s in scope):
            raise self.error(f"index '{name_tok}' used as a value", name_tok)
        forms = [self.affine(t, scope) for t in ch[1].children] if len(ch) > 1 else []
        known = self.references.get(str(name_tok))
        if known is None:
            self.references[str(name_tok)] = (len(forms), name_tok)
        elif known[0] != len(forms):
            raise self.error(f"'{name_tok}' used with {len(forms)} indices, earlier with {known[0]}", name_tok)
        return ArgElement(str(name_tok), forms)

    def sum(self, ch, scope) -> Expr:
        name_tok, lower, upper, body = ch
        index = IndexSymbol(str(name_tok), IndexKind.SUM)
        if index in scope:
            raise self.error(f"sum index '{name_tok}' shadows an index in scope", name_tok)
        return Sum(index, self.bound(lower, scope, BoundDirection.LOWER), self.bound(upper, scope, BoundDirection.UPPER),
                   self.expr(body, scope + (index,)))

    def bound(self, tree: Tree, scope, direction: BoundDirection) -> RangeBound:
        kind = tree.data
        if kind == "bound_number":
            return RangeBound.make(direction, [Fraction(str(tree.children[0]))])
        if kind == "bound_name":
            return RangeBound.make(direction, [self.symbol(tree.children[0], scope)])
        if kind in ("bound_max", "bound_min"):
            word = "max" if direction == BoundDirection.LOWER else "min"
            if kind != f"bound_{word}":
                raise self.error(f"a {direction.value} bound takes '{word}'", tree)
        return RangeBound.make(direction, [self.affine(t, scope) for t in tree.children])

    def condition(self, tree: Tree, scope) -> Condition:
        lhs, rhs = self.affine(tree.children[0], scope), self.affine(tree.children[1], scope)
        if tree.data == "ge":
            return Condition.at_least(lhs - rhs)
        if tree.data == "le":
            return Condition.at_least(rhs - lhs)
        if len(tree.children) == 3:
            modulus = self.integer(tree.children[2])
            if modulus < 1:
                raise self.error("modulus must be positive", tree.children[2])
            return Condition.divisible(lhs - rhs, modulus)
        return Condition.equal(lhs - rhs)

    # --- affine index expressions ---
    def symbol(self, tok: Token, scope) -> AffineForm:
        for s in scope:
            if s.name == tok:
                return AffineForm.of(s)
        raise self.error(f"unknown index '{tok}'", tok)

    def affine(self, tree: Tree, scope) -> AffineForm:
        kind = tree.data
        ch = tree.children
        if kind == "a_number":
            return AffineForm.const(Fraction(str(ch[0])))
        if kind == "a_symbol":
            return self.symbol(ch[0], scope)
        if kind == "a_neg":
            return -self.affine(ch[0], scope)
        lhs, rhs = self.affine(ch[0], scope), self.affine(ch[1], scope)
        if kind == "a_add":
            return lhs + rhs
        if kind == "a_sub":
            return lhs - rhs
        if kind == "a_mul":
            if lhs.is_constant:
                return rhs * lhs.constant
            if rhs.is_constant:
                return lhs * rhs.constant
            raise NonAffineIndex("product of two index expressions is not affine", *_at(tree))
        if not rhs.is_constant:
            raise NonAffineIndex("division by an index expression is not affine", *_at(tree))
        if rhs.constant == 0:
            raise self.error("division by zero in index expression", tree)
        return lhs / rhs.constant


def _syntax_error(e: UnexpectedInput, text: str) -> ParseError:
    if isinstance(e, UnexpectedToken):
        if e.token.type == "$END":
            found = "end of input"
        elif e.token.type == "_NL":
            found = "end of line"
        else:
            found = f"'{e.token}'"
        if e.token.type == "LSQB" and {"RSQB", "SEMICOLON"} & set(e.expected or ()):
            return NonAffineIndex(f"unexpected {found}: tensor elements are not allowed in index expressions",
                                  e.line, e.column)
        message = f"unexpected {found}"
    elif isinstance(e, UnexpectedCharacters):
        message = f"unexpected character {e.char!r}"
    else:
        message = "unexpected end of input"
    line = e.line if e.line > 0 else text.count("\n") + 1
    return ParseError(message, line, max(e.column, 1))


def parse(text: str) -> ElemFuncSpec:
    """Parse shape declarations and one definition into a validated ElemFuncSpec."""
    try:
        tree = get_parser().parse(text if text.endswith("\n") else text + "\n")
    except UnexpectedInput as e:
        raise _syntax_error(e, text) from None
    builder = _SpecBuilder()
    shapes, (name, indices, body, name_tok) = builder.statements(tree)
    if name not in shapes:
        raise builder.error(f"no shape declared for '{name}'", name_tok)
    for ref, (rank, tok) in builder.references.items():
        if ref == name:
            raise builder.error(f"'{name}' refers to itself", tok)
        if ref not in shapes:
            raise builder.error(f"undeclared tensor '{ref}'", tok)
        if rank != len(shapes[ref]):
            raise builder.error(f"'{ref}' has rank {len(shapes[ref])} but is indexed with {rank} indices", tok)
    args = [(n, s) for n, s in shapes.items() if n != name]
    return build_spec(name, shapes[name], args, body, indices=indices)


def parse_file(path: str) -> ElemFuncSpec:
    with open(path, "r", encoding="utf-8") as source:
        return parse(source.read())
