import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wittenlat.errors import InvalidInput, ShapeMismatch, TooLarge, UnderflowWarning
from wittenlat.landscape import builtin, polynomial_potential
from wittenlat.lattice import (
    LatticeVector,
    QuadraticPartition,
    assemble_neg_generator,
    assemble_witten,
    build_box,
    ground_state_transform,
    gst_weight,
    ims_bound,
    ims_defect,
    matvec,
    potential_term,
    quadratic_form,
    rates,
    symmetrize,
    weighted_gradient_form,
)

ZERO1 = polynomial_potential({"0": 0.0}, 1, "zero")
ZERO2 = polynomial_potential({"0,0": 0.0}, 2, "zero2")
DW = builtin("double_well_1d")
DW2 = builtin("double_well_aniso_2d")


def test_build_box_enumeration():
    b = build_box(1, 0.5, 0.0, 1.0)
    assert b.n == 5 and np.allclose(b.points[:, 0], [-1, -0.5, 0, 0.5, 1])
    assert build_box(2, 1.0, [0, 0], [1, 1]).n == 9
    assert build_box(1, 0.05, 0.0, 2.5).n == 101
    with pytest.raises(TooLarge):
        build_box(2, 0.001, [0, 0], [2.5, 2.5])
    with pytest.raises(InvalidInput):
        build_box(1, -0.1, 0.0, 1.0)


def test_box_indexing_roundtrip():
    b = build_box(2, 0.25, [0.1, -0.2], [1.0, 0.75])
    for i in (0, 7, b.n - 1):
        k = np.array(np.unravel_index(i, b.shape)) + b.k_min
        assert b.index_of(k) == i
        assert b.nearest_index(b.points[i]) == i
    assert b.index_of(b.k_min - 1) == -1
    assert len(b.neighbor_set) == 4


def test_potential_term_examples():
    x = np.array([[0.3], [-1.2]])
    assert np.allclose(potential_term(polynomial_potential({"0": 3.0}, 1), x, 0.1), 0.0)
    lin = polynomial_potential({"1": 2.0}, 1)
    for eps in (0.1, 0.5):
        assert np.allclose(potential_term(lin, x, eps), 2 * (math.cosh(1) - 1))
    quad = polynomial_potential({"2": 0.5}, 1)
    v = potential_term(quad, np.array([[0.0]]), 0.1)[0]
    assert v == pytest.approx(2 * (math.exp(-0.025) - 1), rel=1e-12)
    assert v == pytest.approx(-0.04938018, abs=1e-8)


def test_free_operator_is_path_laplacian():
    b = build_box(1, 1.0, 0.0, 4.9)
    n = b.n
    A = assemble_witten(ZERO1, b).to_dense()
    assert np.allclose(np.diag(A), 2) and np.allclose(np.diag(A, 1), -1)
    ev = np.linalg.eigvalsh(A)
    k = np.arange(1, n + 1)
    assert np.allclose(ev, np.sort(2 - 2 * np.cos(k * np.pi / (n + 1))), atol=1e-12)
    G = assemble_neg_generator(ZERO1, b).to_dense()
    assert np.array_equal(A, G)


def test_matvec_example_and_shape_check():
    b = build_box(1, 1.0, 0.0, 1.0)
    op = assemble_witten(ZERO1, b)
    out = matvec(op, LatticeVector(b, np.array([0.0, 1.0, 0.0])))
    assert np.allclose(out.values, [-1, 2, -1])
    with pytest.raises(ShapeMismatch):
        matvec(op, build_box(1, 0.5, 0.0, 1.0).zeros())


def test_witten_structural_symmetry():
    b = build_box(2, 0.2, [0, 0], [2.0, 1.4])
    op = assemble_witten(DW2, b)
    assert np.array_equal(op.w_ij, op.w_ji)
    A = op.to_scipy()
    assert abs(A - A.T).max() == 0.0


def test_detailed_balance_of_generator():
    eps = 0.2
    b = build_box(1, eps, 0.0, 2.0)
    op = assemble_neg_generator(DW, b)
    x = b.points
    f = DW.eval(x)
    rho = np.exp(-f / eps)
    # rho(x) r(x, y) = rho(y) r(y, x)
    lhs = rho[op.edge_i] * -op.w_ij
    rhs = rho[op.edge_j] * -op.w_ji
    assert np.allclose(lhs, rhs, rtol=1e-12)
    r = rates(DW, x[op.edge_i], x[op.edge_j], eps)
    assert np.allclose(eps * r, -op.w_ij, rtol=1e-14)


@pytest.mark.parametrize("p,dim,hw", [(DW, 1, 2.0), (DW2, 2, [1.4, 1.0])])
def test_gst_conjugates_generator_to_witten(p, dim, hw):
    eps = 0.2
    b = build_box(dim, eps, np.zeros(dim), hw)
    H = assemble_witten(p, b).to_dense()
    G = assemble_neg_generator(p, b).to_dense()
    w = gst_weight(p, b)
    # H = D^{-1} (-eps L) D with D = diag(exp(f/2eps)) = diag(1/w)
    conj = G * w[:, None] / w[None, :]
    assert np.max(np.abs(H - conj)) < 1e-9
    S = symmetrize(assemble_neg_generator(p, b)).to_dense()
    assert np.max(np.abs(S - H)) < 1e-12


def test_ground_state_transform_roundtrip():
    b = build_box(1, 0.1, 0.0, 2.0)
    one = LatticeVector(b, np.ones(b.n))
    fwd = ground_state_transform(one, DW, "forward")
    assert np.allclose(fwd.values, np.exp(-DW.eval(b.points) / 0.2))
    back = ground_state_transform(fwd, DW, "inverse")
    assert np.allclose(back.values, 1.0)
    with pytest.raises(InvalidInput):
        ground_state_transform(one, DW, "sideways")


def test_gst_underflow_warns():
    b = build_box(1, 0.01, 0.0, 2.5)
    with pytest.warns(UnderflowWarning):
        gst_weight(DW, b)


def test_weighted_gradient_form_kills_ground_state():
    b = build_box(1, 0.1, 0.0, 2.5)
    psi = LatticeVector(b, np.exp(-DW.eval(b.points) / 0.2))
    # only the boundary edges contribute: exp(-f/eps) there is ~e^{-275}
    assert weighted_gradient_form(psi, DW) <= 1e-12


@pytest.mark.parametrize("p,dim,hw,eps", [(DW, 1, 2.5, 0.1), (DW, 1, 2.5, 0.05),
                                          (DW2, 2, [2.0, 1.5], 0.1)])
def test_quadratic_form_identity(p, dim, hw, eps):
    b = build_box(dim, eps, np.zeros(dim), hw)
    op = assemble_witten(p, b)
    rng = np.random.default_rng(7)
    interior = ~b.boundary_mask(1)
    for _ in range(20):
        u = rng.standard_normal(b.n) * interior
        psi = LatticeVector(b, u)
        q = quadratic_form(op, psi)
        g = weighted_gradient_form(psi, p)
        assert q >= 0
        assert abs(q - g) <= 1e-10 * q + 1e-14


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.5))
def test_form_nonnegative_property(seed, eps):
    b = build_box(1, eps, 0.0, 2.0)
    op = assemble_witten(DW, b)
    u = np.random.default_rng(seed).standard_normal(b.n)
    assert quadratic_form(op, LatticeVector(b, u)) >= -1e-12 * np.dot(u, u) * b.weight


def test_ims_trivial_and_zero():
    b = build_box(1, 0.1, 0.0, 2.0)
    psi = LatticeVector(b, np.random.default_rng(0).standard_normal(b.n))
    assert ims_defect(QuadraticPartition.trivial(), psi) == 0.0
    part = QuadraticPartition.two_piece_1d(-0.5, 0.5)
    assert ims_defect(part, b.zeros()) == 0.0


@pytest.mark.parametrize("eps", [0.1, 0.05, 0.02])
def test_ims_defect_bound(eps):
    b = build_box(1, eps, 0.0, 2.0)
    part = QuadraticPartition.two_piece_1d(-0.8, 0.8)
    part.check(b.points)
    rng = np.random.default_rng(3)
    for _ in range(5):
        psi = LatticeVector(b, rng.standard_normal(b.n))
        assert ims_defect(part, psi) <= ims_bound(part, psi)


def test_partition_check_rejects_bad():
    bad = QuadraticPartition([lambda x: 0.9 * np.ones(x.shape[:-1])], [0.0])
    with pytest.raises(InvalidInput):
        bad.check(np.zeros((3, 1)))


def test_dump_is_sorted_and_stable():
    b = build_box(1, 0.5, 0.0, 1.0)
    d1 = assemble_witten(DW, b).dump()
    d2 = assemble_witten(DW, b).dump()
    assert d1 == d2
    rows = [tuple(map(int, line.split()[:2])) for line in d1.strip().splitlines()]
    assert rows == sorted(rows)


def test_no_warning_on_moderate_box():
    b = build_box(1, 0.1, 0.0, 2.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assemble_witten(DW, b)
