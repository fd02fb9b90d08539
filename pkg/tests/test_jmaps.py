import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from carnotlab.algebra import bracket_vec, heisenberg
from carnotlab.deformation import gk_member
from carnotlab.errors import DomainError, SpecError
from carnotlab.jmaps import (
    MetivierStatus,
    j_basis,
    j_matrix,
    j_operator,
    metivier_check,
    sigma_min,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def brute_force_j(c, u):
    """Entry (j, i) = <u, [e_i, e_j]> straight from the bracket."""
    m = c.shape[0]
    E = np.eye(m)
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            out[j, i] = u @ bracket_vec(c, E[i], E[j])
    return out


def test_heisenberg_j_is_rotation_generator():
    op = j_operator(heisenberg(), [2.0])
    assert np.array_equal(op.mat, [[0.0, -2.0], [2.0, 0.0]])


@pytest.mark.parametrize("k", [1, 2, 7, math.inf])
def test_gk_j_matrix_matches_display(k):
    u1, u2, u3 = 0.3, -1.1, 2.0
    t = 0.0 if k == math.inf else 1.0 / k
    expected = np.array(
        [
            [0, -u1, -u2, -u3],
            [u1, 0, -t * u3, t * u2],
            [u2, t * u3, 0, -t * u1],
            [u3, -t * u2, t * u1, 0],
        ]
    )
    assert np.allclose(j_operator(gk_member(k), [u1, u2, u3]).mat, expected, atol=1e-15)


@pytest.mark.parametrize("k", [1, 2, 3, 10, 1000])
def test_gk_square_spectrum(k):
    # J_u^2 has eigenvalues -|u|^2 (once) and -|u|^2/k^2 (three times,
    # one of which coincides with the first when k = 1); hence sigma_min = |u|/k.
    rng = np.random.default_rng(k)
    sc = gk_member(k)
    for _ in range(50):
        u = rng.standard_normal(3)
        J = j_matrix(sc, u)
        r2 = u @ u
        ev = np.sort(np.linalg.eigvalsh(J @ J))
        expected = np.sort([-r2, -r2 / k**2, -r2 / k**2, -r2])
        # sum and product of J^2 eigenvalues pin down the spectrum
        assert np.all(ev < 0)
        assert np.trace(J @ J) == pytest.approx(-2 * r2 - 2 * r2 / k**2, rel=1e-12)
        assert np.allclose(ev, expected, rtol=1e-10, atol=1e-12)
        assert sigma_min(J) == pytest.approx(math.sqrt(r2) / k, rel=1e-10)


def test_defining_identity_on_many_samples():
    rng = np.random.default_rng(1)
    for sc in (heisenberg(), gk_member(2), gk_member(math.inf)):
        m, d2 = sc.m, sc.d2
        u = rng.standard_normal((10_000, d2))
        v = rng.standard_normal((10_000, m))
        w = rng.standard_normal((10_000, m))
        J = j_matrix(sc, u)
        lhs = np.einsum("sl,sl->s", u, bracket_vec(sc.c, v, w))
        rhs = np.einsum("sj,sj->s", np.einsum("sji,si->sj", J, v), w)
        assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_brute_force_oracle_agrees():
    rng = np.random.default_rng(2)
    for sc in (heisenberg(), gk_member(3), gk_member(math.inf)):
        u = rng.standard_normal(sc.d2)
        assert np.allclose(j_operator(sc, u).mat, brute_force_j(sc.c, u), atol=1e-14)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite), finite)
def test_linear_and_skew(u, v, a):
    sc = gk_member(2)
    Ju, Jv = j_matrix(sc, u), j_matrix(sc, v)
    assert np.allclose(j_matrix(sc, u + a * v), Ju + a * Jv, atol=1e-12)
    assert np.array_equal(Ju, -Ju.T)


def test_limit_member_degenerates_to_rank_two():
    sc = gk_member(math.inf)
    rng = np.random.default_rng(3)
    for _ in range(20):
        J = j_matrix(sc, rng.standard_normal(3))
        assert np.linalg.matrix_rank(J) == 2


def test_j_basis_stacks_coordinate_maps():
    sc = gk_member(5)
    jb = j_basis(sc)
    for ell in range(3):
        assert np.allclose(jb[ell], j_matrix(sc, np.eye(3)[ell]))


def test_j_operator_rejects_wrong_length():
    with pytest.raises(SpecError):
        j_operator(heisenberg(), [1.0, 2.0])


@pytest.mark.parametrize("k", [1, 2, 10, 1000])
def test_finite_members_are_metivier(k):
    v = metivier_check(gk_member(k), budget=32, seed=0)
    assert v.status is MetivierStatus.METIVIER
    assert v.min_sigma == pytest.approx(1.0 / k, rel=1e-6)


def test_limit_member_is_not_metivier():
    v = metivier_check(gk_member(math.inf), budget=32, seed=0)
    assert v.status is MetivierStatus.NOT_METIVIER
    assert np.linalg.norm(v.witness) == pytest.approx(1.0)
    assert sigma_min(j_matrix(gk_member(math.inf), v.witness)) <= 1e-12


def test_heisenberg_and_odd_first_layer():
    assert metivier_check(heisenberg(), 8, 0).status is MetivierStatus.METIVIER
    c = np.zeros((3, 3, 1))
    c[0, 1, 0] = 1.0
    from carnotlab.algebra import StructureConstants

    v = metivier_check(StructureConstants(c), 8, 0)
    assert v.status is MetivierStatus.NOT_METIVIER


def test_verdict_is_seed_stable_and_budget_checked():
    a = metivier_check(gk_member(4), 16, 5)
    b = metivier_check(gk_member(4), 16, 5)
    assert a.min_sigma == b.min_sigma
    with pytest.raises((DomainError, ValueError)):
        metivier_check(gk_member(4), 0, 0)
