"""
Parametric Fourier-Motzkin elimination.

fm_eliminate looks only at the coefficient matrix of A x >= b. The resulting
FMSystem gives, for every variable, lower and upper bounds of the form
    x_i >= L b + Lhat (x_{i+1}, ..., x_{M-1})
    x_i <= H b + Hhat (x_{i+1}, ..., x_{M-1})
plus a feasibility matrix F (F b <= 0 iff the real system is solvable), so the
right-hand side can be supplied later, numerically or as symbolic affine forms.
Variable 0 is eliminated first and is therefore the innermost loop.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np

from ..exceptions import DimensionMismatch, InfiniteRange
from ..utils import ceil_fraction, floor_fraction

logger = logging.getLogger(__name__)

Row = Tuple[Tuple[Fraction, ...], Tuple[Fraction, ...]]  # (coefficients on x, coefficients on b)
Bound = Union[int, float]


def _normalize(row: Row) -> Row:
    a, beta = row
    lead = next((abs(v) for v in a + beta if v != 0), None)
    if lead is None or lead == 1:
        return row
    return tuple(v / lead for v in a), tuple(v / lead for v in beta)


def _as_array(rows: List[Tuple[Fraction, ...]], width: int) -> np.ndarray:
    out = np.zeros((len(rows), width), dtype=object)
    for r, row in enumerate(rows):
        out[r, :] = list(row) if width else []
    return out


@dataclass(frozen=True, eq=False)
class FMSystem:
    num_vars: int
    num_rows: int
    lower_b: Tuple[np.ndarray, ...]
    lower_tail: Tuple[np.ndarray, ...]
    upper_b: Tuple[np.ndarray, ...]
    upper_tail: Tuple[np.ndarray, ...]
    feasibility: np.ndarray

    # names of the bound matrices as they usually appear in the literature
    def L(self, i: int) -> np.ndarray:
        return self.lower_b[i]

    def Lhat(self, i: int) -> np.ndarray:
        return self.lower_tail[i]

    def H(self, i: int) -> np.ndarray:
        return self.upper_b[i]

    def Hhat(self, i: int) -> np.ndarray:
        return self.upper_tail[i]

    @property
    def F(self) -> np.ndarray:
        return self.feasibility

    def _check(self, b: Sequence, tail: Sequence, i: int) -> None:
        if len(b) != self.num_rows:
            raise DimensionMismatch("right-hand side", self.num_rows, len(b))
        if not 0 <= i < self.num_vars:
            raise DimensionMismatch(f"variable index {i}", self.num_vars, i)
        if len(tail) != self.num_vars - i - 1:
            raise DimensionMismatch(f"tail for x{i}", self.num_vars - i - 1, len(tail))

    def bound_values(self, b: Sequence, tail: Sequence, i: int) -> Tuple[list, list]:
        """
        Un-rounded candidate bounds for x_i.

        Works for any b and tail whose entries support addition and scaling by a
        Fraction, so numbers and symbolic affine forms both go through here.
        """
        self._check(b, tail, i)

        def combine(mb: np.ndarray, mt: np.ndarray) -> list:
            values = []
            for r in range(mb.shape[0]):
                total = sum((mb[r, j] * b[j] for j in range(len(b)) if mb[r, j] != 0), Fraction(0))
                total = sum((mt[r, k] * tail[k] for k in range(len(tail)) if mt[r, k] != 0), total)
                values.append(total)
            return values

        return (combine(self.lower_b[i], self.lower_tail[i]),
                combine(self.upper_b[i], self.upper_tail[i]))

    def instantiate(self, b: Sequence, tail: Sequence[int], i: int) -> Tuple[Bound, Bound]:
        """Integer interval for x_i; missing sides are returned as -inf / +inf."""
        lows, highs = self.bound_values(b, tail, i)
        lo = ceil_fraction(max(lows)) if lows else -math.inf
        hi = floor_fraction(min(highs)) if highs else math.inf
        return lo, hi

    def is_feasible(self, b: Sequence) -> bool:
        """Real feasibility of A x >= b. Integer points may still be absent."""
        if len(b) != self.num_rows:
            raise DimensionMismatch("right-hand side", self.num_rows, len(b))
        return all(sum((f * Fraction(v) for f, v in zip(row, b)), Fraction(0)) <= 0
                   for row in self.feasibility)

    def enumerate(self, b: Sequence) -> Iterator[Tuple[int, ...]]:
        """All integer x with A x >= b; the last variable varies slowest."""
        for i in range(self.num_vars):
            if self.lower_b[i].shape[0] == 0:
                raise InfiniteRange(i, "lower")
            if self.upper_b[i].shape[0] == 0:
                raise InfiniteRange(i, "upper")
        if not self.is_feasible(b):
            return
        yield from self._points(list(b), [], self.num_vars - 1)

    def _points(self, b: list, tail: List[int], i: int) -> Iterator[Tuple[int, ...]]:
        if i < 0:
            yield tuple(tail)
            return
        lo, hi = self.instantiate(b, tail, i)
        for x in range(lo, hi + 1):
            yield from self._points(b, [x] + tail, i - 1)

    def count_points(self, b: Sequence) -> int:
        return sum(1 for _ in self.enumerate(b))


def fm_eliminate(A) -> FMSystem:
    A = [[Fraction(v) for v in row] for row in (A.tolist() if isinstance(A, np.ndarray) else A)]
    n = len(A)
    m = len(A[0]) if A else 0
    rows: List[Row] = []
    seen = set()
    for j, a in enumerate(A):
        row = _normalize((tuple(a), tuple(Fraction(int(j == k)) for k in range(n))))
        if row not in seen:
            seen.add(row)
            rows.append(row)

    lower_b, lower_tail, upper_b, upper_tail = [], [], [], []
    for i in range(m):
        pos = [r for r in rows if r[0][i] > 0]
        neg = [r for r in rows if r[0][i] < 0]
        keep = [r for r in rows if r[0][i] == 0]

        def bounds(selected):
            bs = [tuple(v / a[i] for v in beta) for a, beta in selected]
            ts = [tuple(-v / a[i] for v in a[i + 1:]) for a, beta in selected]
            return _as_array(bs, n), _as_array(ts, m - i - 1)

        lb, lt = bounds(pos)
        ub, ut = bounds(neg)
        lower_b.append(lb)
        lower_tail.append(lt)
        upper_b.append(ub)
        upper_tail.append(ut)

        # one-sided rows vanish; opposite-sign pairs combine
        seen = set(keep)
        for p_a, p_beta in pos:
            for q_a, q_beta in neg:
                sp, sq = p_a[i], -q_a[i]
                a = tuple(x / sp + y / sq for x, y in zip(p_a, q_a))
                beta = tuple(x / sp + y / sq for x, y in zip(p_beta, q_beta))
                row = _normalize((a, beta))
                if row not in seen:
                    seen.add(row)
                    keep.append(row)
        rows = keep
        logger.debug(f"Eliminated x{i}: {len(pos)} lower, {len(neg)} upper, {len(rows)} rows remain")

    feasibility = [beta for a, beta in rows if any(v != 0 for v in beta)]
    return FMSystem(
        num_vars=m,
        num_rows=n,
        lower_b=tuple(lower_b),
        lower_tail=tuple(lower_tail),
        upper_b=tuple(upper_b),
        upper_tail=tuple(upper_tail),
        feasibility=_as_array(feasibility, n),
    )
