import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from carnotlab.algebra import (
    GroupPoint,
    StructureConstants,
    bracket,
    bracket_vec,
    dilation,
    dims,
    euclidean,
    format_spec_text,
    group_inv,
    group_mul,
    heisenberg,
    homogeneous_norm,
    load_spec,
    mul_vec,
    parse_spec_text,
    validate_spec,
)
from carnotlab.deformation import gk_member
from carnotlab.errors import DomainError, SpecError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def vec7(n=7):
    return arrays(np.float64, n, elements=finite)


def test_heisenberg_product_by_hand():
    sc = heisenberg()
    a = GroupPoint(np.array([1.0, 0.0]), np.array([0.0]))
    b = GroupPoint(np.array([0.0, 1.0]), np.array([0.0]))
    ab = group_mul(sc, a, b)
    assert np.allclose(ab.xi, [1.0, 1.0])
    assert ab.u[0] == pytest.approx(0.5)
    assert group_mul(sc, b, a).u[0] == pytest.approx(-0.5)


def test_dims_of_builtins():
    assert dims(heisenberg()) == (3, 4)
    assert dims(gk_member(3)) == (7, 10)
    assert dims(gk_member(math.inf)) == (7, 10)


def test_gk_bracket_table():
    sc = gk_member(4)
    X = np.eye(4)
    assert np.allclose(bracket_vec(sc.c, X[0], X[1]), [1, 0, 0])
    assert np.allclose(bracket_vec(sc.c, X[1], X[2]), [0, 0, 0.25])
    assert np.allclose(bracket_vec(sc.c, X[1], X[3]), [0, -0.25, 0])
    assert np.allclose(bracket_vec(sc.c, X[2], X[3]), [0.25, 0, 0])
    assert np.allclose(bracket_vec(gk_member(math.inf).c, X[2], X[3]), 0)


def test_lower_triangle_is_ignored():
    c = np.zeros((2, 2, 1))
    c[0, 1, 0] = 2.0
    c[1, 0, 0] = 99.0
    sc = StructureConstants(c)
    assert sc.c[1, 0, 0] == -2.0
    with pytest.raises(ValueError):
        sc.c[0, 1, 0] = 1.0


@settings(max_examples=200, deadline=None)
@given(vec7(), vec7(), vec7())
def test_associativity(a, b, c):
    sc = gk_member(3)
    left = mul_vec(sc, mul_vec(sc, a, b), c)
    right = mul_vec(sc, a, mul_vec(sc, b, c))
    assert np.allclose(left, right, atol=1e-9 * (1 + np.abs(left).max()))


@settings(max_examples=200, deadline=None)
@given(vec7())
def test_inverse_and_identity(a):
    sc = gk_member(2)
    p = GroupPoint.from_vec(a, sc.m)
    e = GroupPoint.zero(sc)
    assert group_mul(sc, p, group_inv(p)).allclose(e)
    assert group_mul(sc, group_inv(p), p).allclose(e)
    assert group_mul(sc, p, e) == p


@settings(max_examples=200, deadline=None)
@given(vec7(4), vec7(4), vec7(4), finite)
def test_bracket_bilinear_antisymmetric(a, b, c, t):
    cc = gk_member(5).c
    assert np.allclose(bracket_vec(cc, a, b), -bracket_vec(cc, b, a))
    lhs = bracket_vec(cc, a + t * c, b)
    rhs = bracket_vec(cc, a, b) + t * bracket_vec(cc, c, b)
    assert np.allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(lhs).max()))


@settings(max_examples=100, deadline=None)
@given(vec7(), vec7(), st.floats(0.1, 10))
def test_dilation_is_automorphism(a, b, lam):
    sc = gk_member(2)
    p, q = GroupPoint.from_vec(a, 4), GroupPoint.from_vec(b, 4)
    lhs = dilation(sc, lam, group_mul(sc, p, q))
    rhs = group_mul(sc, dilation(sc, lam, p), dilation(sc, lam, q))
    assert lhs.allclose(rhs, atol=1e-8 * (1 + np.abs(lhs.vec).max()))
    assert homogeneous_norm(sc, dilation(sc, lam, p).vec) == pytest.approx(
        lam * homogeneous_norm(sc, p.vec), rel=1e-12, abs=1e-12
    )


def test_dilation_rejects_nonpositive():
    sc = heisenberg()
    with pytest.raises(DomainError):
        dilation(sc, 0.0, GroupPoint.zero(sc))


def test_bracket_point_is_vertical():
    sc = heisenberg()
    out = bracket(sc, GroupPoint(np.array([1.0, 2.0]), np.array([5.0])),
                  GroupPoint(np.array([3.0, 1.0]), np.array([-1.0])))
    assert np.allclose(out.xi, 0) and out.u[0] == pytest.approx(-5.0)


def test_validation_reports():
    assert validate_spec(heisenberg()).ok
    assert validate_spec(gk_member(math.inf)).ok
    rep = validate_spec(euclidean(3))
    assert not rep.ok and not rep.bracket_generating
    # two second-layer directions but only one independent bracket
    c = np.zeros((3, 3, 2))
    c[0, 1, 0] = c[1, 0, 1] = 1.0
    c[1, 0, 0] = c[0, 1, 1] = -1.0
    rep = validate_spec(c)
    assert rep.antisymmetric and rep.rank == 1 and not rep.ok


def test_parser_fractions_comments_and_roundtrip(tmp_path):
    text = "# G_k with k = 3\nm 4\nd2 3\n" + "\n".join(
        [
            "c 1 2 1 1", "c 1 3 2 1", "c 1 4 3 1",
            "c 2 3 3 1/3  # fraction", "c 2 4 2 -1/3", "c 3 4 1 1/3",
        ]
    )
    raw = parse_spec_text(text)
    assert raw[1, 2, 2] == float(Fraction(1, 3))
    assert raw[2, 1, 2] == -float(Fraction(1, 3))
    assert StructureConstants(raw) == gk_member(3)
    path = tmp_path / "g.spec"
    path.write_text(format_spec_text(gk_member(3)))
    assert load_spec(path) == gk_member(3)


def test_parser_keeps_lower_entries_for_validation():
    raw = parse_spec_text("m 2\nd2 1\nc 1 2 1 1\nc 2 1 1 1\n")
    rep = validate_spec(raw)
    assert not rep.antisymmetric and not rep.ok


@pytest.mark.parametrize(
    "text",
    ["d2 1\nm 2\n", "m 2\nd2 1\nc 1 3 1 1\n", "m 2\nd2 1\nc 1 2 1 x\n", "m 2\nd2 1\nq 1 2 1 1\n"],
)
def test_parser_errors(text):
    with pytest.raises(SpecError):
        parse_spec_text(text)


def test_digest_and_equality():
    assert gk_member(2) == gk_member(2)
    assert gk_member(2) != gk_member(3)
    assert gk_member(2).digest() == gk_member(2).digest()
    assert hash(gk_member(2)) == hash(gk_member(2))
