"""Error types raised by the elemdiff package.

Library code raises these; only the command line and the Gradio handlers turn
them into exit codes or status messages.
"""
from typing import Optional, Sequence


class ElemDiffError(Exception):
    """Base class for every domain error."""


###############################################################################
# Expression and spec construction
###############################################################################

class UnknownSymbol(ElemDiffError):
    def __init__(self, name: str, context: str = ""):
        self.name = name
        self.context = context
        where = f" in {context}" if context else ""
        super().__init__(f"Unknown symbol '{name}'{where}")


class DuplicateIndex(ElemDiffError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Index '{name}' is bound twice in the same scope")


class NameClash(ElemDiffError):
    def __init__(self, name: str, context: str = ""):
        self.name = name
        self.context = context
        where = f" in {context}" if context else ""
        super().__init__(f"Tensor name '{name}' is already taken{where}")


class ShapeMismatch(ElemDiffError):
    def __init__(self, name: str, expected, actual):
        self.name = name
        self.expected = expected
        self.actual = actual
        super().__init__(f"Shape mismatch for '{name}': expected {expected}, got {actual}")


class OutOfRangeIndexMap(ElemDiffError):
    """An argument index leaves the argument's shape for some in-range source index."""

    def __init__(self, arg: str, index_map, shape: Sequence[int], at: dict, value: Sequence[int]):
        self.arg = arg
        self.index_map = index_map
        self.shape = tuple(shape)
        self.at = dict(at)
        self.value = tuple(value)
        where = ", ".join(f"{k}={v}" for k, v in sorted(self.at.items()))
        super().__init__(
            f"Index map {index_map} of '{arg}' evaluates to {list(self.value)} "
            f"outside shape {list(self.shape)} at {where or 'the empty index'}"
        )


class NonIntegerComposition(ElemDiffError):
    def __init__(self, form):
        self.form = form
        super().__init__(f"Index position {form} has non-integer coefficients")


class NonAffineSumBound(ElemDiffError):
    def __init__(self, index: str, bound):
        self.index = index
        self.bound = bound
        super().__init__(f"Bound {bound} of sum over '{index}' is not affine in the enclosing indices")


class NonDifferentiableOp(ElemDiffError):
    def __init__(self, node, reason: str = ""):
        self.node = node
        super().__init__(f"Cannot differentiate {type(node).__name__} node{': ' + reason if reason else ''}")


###############################################################################
# Integer linear algebra and inequality solving
###############################################################################

class BothZero(ElemDiffError):
    def __init__(self):
        super().__init__("gcd(0, 0) is undefined")


class DimensionMismatch(ElemDiffError):
    def __init__(self, what: str, expected: int, actual: int):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected length {expected}, got {actual}")


class InfiniteRange(ElemDiffError):
    def __init__(self, variable: int, side: str):
        self.variable = variable
        self.side = side
        super().__init__(f"Variable x{variable} has no {side} bound")


###############################################################################
# Evaluation and parsing
###############################################################################

class NumericDomain(ElemDiffError):
    def __init__(self, message: str, index: Optional[Sequence[int]] = None):
        self.index = tuple(index) if index is not None else None
        at = f" at index {list(self.index)}" if self.index is not None else ""
        super().__init__(f"{message}{at}")


class ParseError(ElemDiffError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class NonAffineIndex(ParseError):
    pass
