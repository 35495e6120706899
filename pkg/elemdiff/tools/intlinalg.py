"""
Exact integer linear algebra: extended Euclid, Smith normal form and the
pseudo-inverse / kernel / cokernel description of all integer solutions of
A x = b.

Matrices are numpy arrays of dtype=object holding Python ints (or Fractions
for the pseudo-inverse), so entries never overflow.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import BothZero, DimensionMismatch

logger = logging.getLogger(__name__)

IntMatrix = np.ndarray


def int_matrix(rows, cols: Optional[int] = None) -> IntMatrix:
    """Object-dtype copy of a rectangular integer matrix; cols is needed when there are no rows."""
    rows = [list(r) for r in rows]
    if not rows:
        return np.zeros((0, cols or 0), dtype=object)
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("Matrix rows have different lengths")
    out = np.zeros((len(rows), width), dtype=object)
    for i, r in enumerate(rows):
        for j, v in enumerate(r):
            out[i, j] = int(v)
    return out


def _as_int_matrix(A) -> IntMatrix:
    if isinstance(A, np.ndarray):
        return int_matrix(A.tolist(), A.shape[1] if A.ndim == 2 else 0)
    return int_matrix(A)


def identity(n: int) -> IntMatrix:
    out = np.zeros((n, n), dtype=object)
    for i in range(n):
        out[i, i] = 1
    return out


def extended_gcd(a: int, b: int) -> Tuple[int, int, int]:
    """
    Bezout coefficients for arbitrary signs.

    Returns:
        (g, x, y) with g = gcd(|a|, |b|) > 0 and a*x + b*y = g
    """
    if a == 0 and b == 0:
        raise BothZero()
    old_r, r = abs(a), abs(b)
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r != 0:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    sign_a = -1 if a < 0 else 1
    sign_b = -1 if b < 0 else 1
    return old_r, old_s * sign_a, old_t * sign_b


@dataclass(frozen=True, eq=False)
class SmithDecomposition:
    S: IntMatrix
    U: IntMatrix
    V: IntMatrix
    rank: int

    @property
    def diagonal(self) -> Tuple[int, ...]:
        return tuple(self.S[i, i] for i in range(self.rank))


def _row_combine(M: IntMatrix, i: int, j: int, x: int, y: int, p: int, q: int) -> None:
    """rows (i, j) <- (x*row_i + y*row_j, p*row_i + q*row_j)"""
    ri, rj = M[i].copy(), M[j].copy()
    M[i] = x * ri + y * rj
    M[j] = p * ri + q * rj


def _col_combine(M: IntMatrix, i: int, j: int, x: int, y: int, p: int, q: int) -> None:
    ci, cj = M[:, i].copy(), M[:, j].copy()
    M[:, i] = x * ci + y * cj
    M[:, j] = p * ci + q * cj


def _pick_pivot(S: IntMatrix, t: int) -> Optional[Tuple[int, int]]:
    # smallest non-zero magnitude, row-major on ties
    best = None
    n, m = S.shape
    for i in range(t, n):
        for j in range(t, m):
            v = S[i, j]
            if v != 0 and (best is None or abs(v) < abs(S[best])):
                best = (i, j)
    return best


def smith_normal_form(A) -> SmithDecomposition:
    """
    Diagonalize A as S = U*A*V with unimodular U, V.

    The diagonal of S is positive on the first rank entries, zero elsewhere, and
    each entry divides the next. A zero matrix gives rank 0 with identity U and V.
    """
    S = _as_int_matrix(A)
    n, m = S.shape
    U, V = identity(n), identity(m)
    rank = 0
    for t in range(min(n, m)):
        pivot = _pick_pivot(S, t)
        if pivot is None:
            break
        i, j = pivot
        if i != t:
            _row_combine(S, t, i, 0, 1, 1, 0)
            _row_combine(U, t, i, 0, 1, 1, 0)
        if j != t:
            _col_combine(S, t, j, 0, 1, 1, 0)
            _col_combine(V, t, j, 0, 1, 1, 0)

        while True:
            for i in range(t + 1, n):
                a, b = S[t, t], S[i, t]
                if b == 0:
                    continue
                if b % a == 0:
                    q = b // a
                    _row_combine(S, t, i, 1, 0, -q, 1)
                    _row_combine(U, t, i, 1, 0, -q, 1)
                else:
                    g, x, y = extended_gcd(a, b)
                    _row_combine(S, t, i, x, y, -b // g, a // g)
                    _row_combine(U, t, i, x, y, -b // g, a // g)
            for j in range(t + 1, m):
                a, b = S[t, t], S[t, j]
                if b == 0:
                    continue
                if b % a == 0:
                    q = b // a
                    _col_combine(S, t, j, 1, 0, -q, 1)
                    _col_combine(V, t, j, 1, 0, -q, 1)
                else:
                    g, x, y = extended_gcd(a, b)
                    _col_combine(S, t, j, x, y, -b // g, a // g)
                    _col_combine(V, t, j, x, y, -b // g, a // g)
            if any(S[i, t] != 0 for i in range(t + 1, n)):
                continue
            # pivot must divide the rest of the submatrix
            offender = next(((i, j) for i in range(t + 1, n) for j in range(t + 1, m)
                             if S[i, j] % S[t, t] != 0), None)
            if offender is None:
                break
            _row_combine(S, t, offender[0], 1, 1, 0, 1)
            _row_combine(U, t, offender[0], 1, 1, 0, 1)

        if S[t, t] < 0:
            S[t] = -S[t]
            U[t] = -U[t]
        rank += 1

    logger.debug(f"Smith form of {n}x{m} matrix: rank {rank}, diagonal {[S[k, k] for k in range(rank)]}")
    return SmithDecomposition(S, U, V, rank)


@dataclass(frozen=True, eq=False)
class LinearSolveResult:
    """All integer solutions of A x = b are pinv*b + kernel*z, when cokernel*b = 0 and pinv*b is integral."""

    pinv: np.ndarray
    kernel: IntMatrix
    cokernel: IntMatrix
    rank: int
    smith: SmithDecomposition

    @property
    def rows(self) -> int:
        return self.pinv.shape[1]

    @property
    def cols(self) -> int:
        return self.pinv.shape[0]


def solve_structure(A) -> LinearSolveResult:
    A = _as_int_matrix(A)
    smith = smith_normal_form(A)
    n, m = A.shape
    r = smith.rank
    pinv = np.zeros((m, n), dtype=object)
    for i in range(m):
        for j in range(n):
            pinv[i, j] = sum((Fraction(smith.V[i, k] * smith.U[k, j], smith.S[k, k]) for k in range(r)),
                             Fraction(0))
    return LinearSolveResult(pinv=pinv, kernel=smith.V[:, r:].copy(), cokernel=smith.U[r:, :].copy(),
                             rank=r, smith=smith)


###############################################################################
# Right-hand side classification
###############################################################################

@dataclass(frozen=True)
class NoSolution:
    pass


@dataclass(frozen=True)
class Unique:
    alpha: Tuple[int, ...]


@dataclass(frozen=True)
class Parametric:
    base: Tuple[int, ...]
    kernel: Tuple[Tuple[int, ...], ...]

    def point(self, z: Sequence[int]) -> Tuple[int, ...]:
        return tuple(b + sum(k * zi for k, zi in zip(row, z)) for b, row in zip(self.base, self.kernel))


RhsClass = Union[NoSolution, Unique, Parametric]


def classify_rhs(res: LinearSolveResult, b: Sequence[int]) -> RhsClass:
    if len(b) != res.rows:
        raise DimensionMismatch("right-hand side", res.rows, len(b))
    b = [Fraction(v) for v in b]
    for row in res.cokernel:
        if sum(c * v for c, v in zip(row, b)) != 0:
            return NoSolution()
    alpha = [sum((p * v for p, v in zip(row, b)), Fraction(0)) for row in res.pinv]
    if any(a.denominator != 1 for a in alpha):
        return NoSolution()
    alpha = tuple(int(a) for a in alpha)
    if res.rank == res.rows == res.cols:
        return Unique(alpha)
    return Parametric(alpha, tuple(tuple(int(v) for v in row) for row in res.kernel))
