import itertools
import random
from fractions import Fraction

import numpy as np
import pytest
import sympy

from elemdiff.exceptions import BothZero, DimensionMismatch
from elemdiff.tools.intlinalg import (NoSolution, Parametric, Unique, classify_rhs, extended_gcd, int_matrix,
                                      smith_normal_form, solve_structure)


def as_sympy(M) -> sympy.Matrix:
    return sympy.Matrix(M.shape[0], M.shape[1], lambda i, j: sympy.Rational(str(Fraction(M[i, j]))))


def in_lattice(basis: sympy.Matrix, v) -> bool:
    """v is an integer combination of the columns of a full column rank basis."""
    sol, params = basis.gauss_jordan_solve(sympy.Matrix(v))
    return params.shape[0] == 0 and all(x.is_integer for x in sol)


def same_lattice(K1: sympy.Matrix, K2: sympy.Matrix) -> bool:
    return (all(in_lattice(K1, K2[:, j]) for j in range(K2.shape[1]))
            and all(in_lattice(K2, K1[:, j]) for j in range(K1.shape[1])))


@pytest.mark.parametrize("a,b", [(12, 8), (1, 1), (-6, 4), (0, 5), (7, 0), (-9, -12), (17, 5)])
def test_extended_gcd_bezout(a, b):
    g, x, y = extended_gcd(a, b)
    assert g > 0
    assert a * x + b * y == g
    assert a % g == 0 and b % g == 0
    assert g == sympy.gcd(a, b)


def test_extended_gcd_both_zero():
    with pytest.raises(BothZero):
        extended_gcd(0, 0)


def check_smith(A):
    Am = int_matrix(A)
    smith = smith_normal_form(Am)
    S, U, V = as_sympy(smith.S), as_sympy(smith.U), as_sympy(smith.V)
    Asym = as_sympy(Am)
    assert S == U * Asym * V
    n, m = S.shape
    for i in range(n):
        for j in range(m):
            if i != j:
                assert S[i, j] == 0
    diag = [S[i, i] for i in range(min(n, m))]
    r = smith.rank
    assert r == Asym.rank()
    assert all(d > 0 for d in diag[:r])
    assert all(d == 0 for d in diag[r:])
    for i in range(r - 1):
        assert diag[i + 1] % diag[i] == 0
    assert abs(U.det()) == 1
    assert abs(V.det()) == 1
    return smith


def check_structure(A):
    res = solve_structure(int_matrix(A))
    Asym = as_sympy(int_matrix(A))
    I = as_sympy(res.pinv)
    assert Asym * I * Asym == Asym
    n, m = Asym.shape
    assert res.kernel.shape == (m, m - res.rank)
    assert res.cokernel.shape == (n - res.rank, n)
    if res.kernel.shape[1]:
        K = as_sympy(res.kernel)
        assert Asym * K == sympy.zeros(n, K.shape[1])
        assert K.rank() == m - res.rank
    if res.cokernel.shape[0]:
        C = as_sympy(res.cokernel)
        assert C * Asym == sympy.zeros(C.shape[0], m)
        assert C.rank() == n - res.rank
    return res


def test_smith_simple_matrices():
    smith = check_smith([[2, 4, 4], [-6, 6, 12], [10, -4, -16]])
    assert smith.diagonal == (2, 6, 12)
    smith = check_smith([[1, -2]])
    assert smith.diagonal == (1,)


def test_smith_zero_matrix_gives_rank_zero():
    smith = check_smith([[0, 0], [0, 0]])
    assert smith.rank == 0
    res = check_structure([[0, 0], [0, 0]])
    assert res.kernel.shape == (2, 2)
    assert res.cokernel.shape == (2, 2)


def test_smith_matches_sympy_invariant_factors():
    from sympy.matrices.normalforms import invariant_factors
    A = [[4, 6, 2], [2, 8, 10], [6, 2, 0]]
    smith = check_smith(A)
    expected = [int(abs(f)) for f in invariant_factors(sympy.Matrix(A)) if f != 0]
    assert list(smith.diagonal) == expected


@pytest.mark.slow
def test_smith_random_property_suite():
    rng = random.Random(1234)
    for _ in range(500):
        n, m = rng.randint(1, 6), rng.randint(1, 6)
        A = [[rng.randint(-9, 9) for _ in range(m)] for _ in range(n)]
        check_smith(A)
        check_structure(A)


def test_line_kernel():
    res = check_structure([[1, -2]])
    assert [res.pinv[i, 0] for i in range(2)] == [1, 0]
    assert same_lattice(as_sympy(res.kernel), sympy.Matrix([[2], [1]]))


def test_plane_kernel():
    res = check_structure([[1, -2, -2]])
    assert [res.pinv[i, 0] for i in range(3)] == [1, 0, 0]
    assert res.kernel.shape == (3, 2)
    # every integer solution of alpha_0 - 2 alpha_1 - 2 alpha_2 = 0
    assert same_lattice(as_sympy(res.kernel), sympy.Matrix([[2, 0], [1, 1], [0, -1]]))
    assert same_lattice(as_sympy(res.kernel), sympy.Matrix([[2, 2], [1, 0], [0, 1]]))


def test_identity_is_unique():
    res = check_structure([[1, 0], [0, 1]])
    assert res.rank == 2
    assert classify_rhs(res, [3, 4]) == Unique((3, 4))


def test_classify_rhs_cokernel_and_divisibility():
    # beta = alpha_0 repeated: beta_0 must equal beta_1
    res = check_structure([[1], [1]])
    assert classify_rhs(res, [2, 3]) == NoSolution()
    sol = classify_rhs(res, [2, 2])
    assert isinstance(sol, Parametric)
    assert sol.base == (2,)

    res = check_structure([[2]])
    assert classify_rhs(res, [3]) == NoSolution()
    assert classify_rhs(res, [4]) == Unique((2,))

    res = check_structure([[1, -2]])
    sol = classify_rhs(res, [-1])
    assert isinstance(sol, Parametric)
    for z in range(-3, 4):
        alpha = sol.point([z])
        assert alpha[0] - 2 * alpha[1] == -1


@pytest.mark.slow
def test_classify_rhs_recovers_constructed_solution():
    rng = random.Random(31)
    for _ in range(300):
        n, m = rng.randint(1, 4), rng.randint(1, 4)
        A = [[rng.randint(-6, 6) for _ in range(m)] for _ in range(n)]
        x = [rng.randint(-5, 5) for _ in range(m)]
        b = [sum(a * v for a, v in zip(row, x)) for row in A]
        sol = classify_rhs(solve_structure(int_matrix(A)), b)
        assert not isinstance(sol, NoSolution), A
        if isinstance(sol, Unique):
            assert sol.alpha == tuple(x)
            continue
        offset = [v - w for v, w in zip(x, sol.base)]
        if sol.kernel[0]:
            assert in_lattice(sympy.Matrix(sol.kernel), offset), A
        else:
            assert not any(offset)


@pytest.mark.slow
def test_classify_rhs_matches_exhaustive_solution_set():
    rng = random.Random(77)
    grids = {m: np.array(list(itertools.product(range(-20, 21), repeat=m)), dtype=np.int64) for m in (1, 2, 3)}
    for trial in range(60):
        n, m = rng.randint(1, 3), rng.randint(1, 3)
        A = [[rng.randint(-3, 3) for _ in range(m)] for _ in range(n)]
        if trial % 2:
            x = [rng.randint(-5, 5) for _ in range(m)]
            b = [sum(a * v for a, v in zip(row, x)) for row in A]
        else:
            b = [rng.randint(-6, 6) for _ in range(n)]
        grid = grids[m]
        hits = grid[np.all(grid @ np.array(A, dtype=np.int64).T == np.array(b, dtype=np.int64), axis=1)]
        expected = {tuple(p) for p in hits.tolist()}

        res = solve_structure(int_matrix(A))
        sol = classify_rhs(res, b)
        if isinstance(sol, NoSolution):
            assert not expected, A
            continue
        if isinstance(sol, Unique):
            base, generated = sol.alpha, {sol.alpha}
        else:
            base = sol.base
            kappa = len(sol.kernel[0])
            generated = {sol.point(z) for z in itertools.product(range(-10, 11), repeat=kappa)}
        generated = {p for p in generated if all(-20 <= v <= 20 for v in p)}
        assert generated <= expected, A

        # the rest of the box solutions need larger kernel coordinates
        Vinv = as_sympy(res.smith.V).inv()
        for p in expected - generated:
            z = Vinv * sympy.Matrix([v - w for v, w in zip(p, base)])
            assert all(c.is_integer for c in z)
            assert not any(z[:res.rank])


def test_classify_rhs_wrong_length():
    res = solve_structure([[1, 2]])
    with pytest.raises(DimensionMismatch):
        classify_rhs(res, [1, 2])


def test_numpy_input_is_accepted():
    A = np.array([[3, 6], [1, 2]])
    smith = check_smith(A.tolist())
    assert smith_normal_form(A).rank == smith.rank == 1
