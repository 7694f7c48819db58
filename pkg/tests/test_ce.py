import math
from fractions import Fraction

import numpy as np
import pytest

from polymom import exactla
from polymom.ce import (basis_size, build_ce_matrix, ce_matrix_float, enumerate_basis,
                        generic_condition_check, pvector)

from oracles import ce_entry


@pytest.mark.parametrize("r, p, size", [(2, 3, 6), (1, 3, 2), (3, 3, 13), (1, 1, 1), (2, 5, 12)])
def test_basis_size(r, p, size):
    assert len(enumerate_basis(r, p)) == size == basis_size(r, p)


def test_basis_size_closed_form():
    for r in range(1, 7):
        for p in (1, 3, 5):
            count = sum(1 for deg in range(1, p + 1, 2) for _ in _monomials(r, deg))
            assert basis_size(r, p) == count
        # cubic count r (r^2 + 3r + 8) / 6
        assert basis_size(r, 3) == r * (r * r + 3 * r + 8) // 6


def _monomials(r, deg):
    from itertools import combinations_with_replacement
    return combinations_with_replacement(range(r), deg)


def test_basis_order_r2():
    assert enumerate_basis(2, 3).exponents == ((3, 0), (0, 3), (2, 1), (1, 2), (1, 0), (0, 1))
    assert enumerate_basis(1, 3).exponents == ((3,), (1,))


def test_basis_order_r3_blocks():
    b = enumerate_basis(3, 3)
    ex = b.exponents
    assert ex[:3] == ((3, 0, 0), (0, 3, 0), (0, 0, 3))
    assert ex[9] == (1, 1, 1)
    assert ex[10:] == ((1, 0, 0), (0, 1, 0), (0, 0, 1))
    assert all(sorted(e) == [0, 1, 2] for e in ex[3:9])
    assert b.degree_slices() == {3: (0, 10), 1: (10, 13)}


def test_r1_matrix_formula():
    lam = Fraction(3, 5)
    ce = build_ce_matrix([lam], 3)
    assert ce.exact == [[15 * lam, 10395 * lam**3], [3 * lam, 945 * lam**3]]


def test_trivial_matrices():
    assert build_ce_matrix([1], 1).exact == [[1]]
    zero = build_ce_matrix([0], 3)
    assert all(x == 0 for row in zero.exact for x in row)


def test_entries_against_sympy_oracle():
    lam = [Fraction(1), Fraction(2)]
    ce = build_ce_matrix(lam, 3)
    rng = np.random.default_rng(0)
    for _ in range(8):
        i, j = (int(x) for x in rng.integers(0, 6, size=2))
        assert ce.exact[i][j] == ce_entry(lam, 3, ce.basis.exponents[i], j + 1)


def test_sign_flip_negates_every_entry():
    lam = [Fraction(2, 3), Fraction(-5, 4)]
    a = build_ce_matrix(lam, 3).exact
    b = build_ce_matrix([-x for x in lam], 3).exact
    assert all(x == -y for ra, rb in zip(a, b) for x, y in zip(ra, rb))


def test_float_builder_matches_exact():
    rng = np.random.default_rng(1)
    for r, p in [(1, 3), (2, 3), (3, 3), (2, 5)]:
        a = rng.uniform(0.5, 3, r)
        exact = build_ce_matrix(a, p).values
        fast = ce_matrix_float(a, p)
        nz = exact != 0
        assert np.array_equal(nz, fast != 0)
        assert np.max(np.abs(fast[nz] / exact[nz] - 1)) < 1e-13


def test_export_formats():
    ce = build_ce_matrix([1, 2], 3)
    obj = ce.to_json()
    assert obj["basis"][0] == [3, 0]
    assert Fraction(obj["entries"][0][0]) == ce.exact[0][0]
    assert len(ce.to_csv().splitlines()) == 6


def test_generic_condition_r1():
    chk = generic_condition_check(1, 3)
    assert chk.holds and chk.witness == (1,) and chk.determinant == -17010
    assert "-17010" in chk.certificate()
    chk = generic_condition_check(1, 1)
    assert chk.holds and chk.determinant == 1


def test_ce_matrix_is_singular_for_r2():
    # Stein's identity: with lam = (l1, l2), the vector with -l1/l2 on w1^2 w2
    # and 1 on w1 w2^2 annihilates T from the left, so det(T) = 0 identically.
    chk = generic_condition_check(2, 3, trials=4)
    assert not chk.holds and chk.status == "unknown"
    assert (chk.rank, chk.size) == (5, 6)
    lam = [Fraction(2), Fraction(7)]
    T = build_ce_matrix(lam, 3).exact
    n = [0, 0, -lam[0] / lam[1], 1, 0, 0]
    assert all(sum(n[i] * T[i][j] for i in range(6)) == 0 for j in range(6))


def test_ce_rank_deficit_r3():
    T = build_ce_matrix([1, 2, 3], 3).exact
    assert exactla.rank(T) == 10


def test_float_determinant_is_negligible_at_smoothed_weights():
    # float evaluation agrees: |det| of the equilibrated matrix is at rounding level
    rng = np.random.default_rng(5)
    for _ in range(10):
        a = rng.normal(3, 1, size=2)
        T = ce_matrix_float(a, 3)
        T = T / np.abs(T).max(axis=0, keepdims=True)
        assert np.linalg.svd(T, compute_uv=False)[-1] < 1e-12


def test_pvector_layout_p3():
    # coefficients 1 on cubes, 3 on x^2 y, 6 on xyz, 3 * sum beta P Q^2 on linears
    beta = [Fraction(2), Fraction(5)]
    P = [[Fraction(1, 2), Fraction(1, 3)], [Fraction(1, 4), Fraction(-1, 5)]]
    pv = pvector(beta, P, enumerate_basis(2, 3))
    q2 = [1 - P[0][j] ** 2 - P[1][j] ** 2 for j in range(2)]
    assert pv[0] == sum(beta[j] * P[0][j] ** 3 for j in range(2))
    assert pv[2] == 3 * sum(beta[j] * P[0][j] ** 2 * P[1][j] for j in range(2))
    assert pv[3] == 3 * sum(beta[j] * P[0][j] * P[1][j] ** 2 for j in range(2))
    assert pv[4] == 3 * sum(beta[j] * P[0][j] * q2[j] for j in range(2))
    triple = pvector([1], [[Fraction(1, 2)], [Fraction(1, 3)], [Fraction(1, 5)]],
                     enumerate_basis(3, 3))
    assert triple[9] == 6 * Fraction(1, 30)


def test_pvector_reproduces_joint_moment_r1():
    # same direction: E[(w^3) (w^3)] = 15 = p . T[:, 0]
    ce = build_ce_matrix([1], 3)
    pv = pvector([1], [[1]], ce.basis)
    assert sum(pv[a] * ce.exact[a][0] for a in range(2)) == 15
    pv = pvector([1], [[0]], ce.basis)
    assert all(x == 0 for x in pv)


def test_generic_check_is_deterministic():
    a = generic_condition_check(2, 3, trials=3, seed=4)
    b = generic_condition_check(2, 3, trials=3, seed=4)
    assert a == b


def test_bareiss_matches_float_det():
    rng = np.random.default_rng(2)
    for _ in range(5):
        m = rng.integers(-9, 10, size=(5, 5))
        assert math.isclose(float(exactla.bareiss_det(m.tolist())), np.linalg.det(m),
                            rel_tol=1e-9, abs_tol=1e-6)
