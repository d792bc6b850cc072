import numpy as np
import numpy.testing as npt
import pytest
from numpy.polynomial.legendre import leggauss

from cutiga.bspline import (
    DomainError,
    GeometryError,
    GeometryMap,
    KnotVector,
    SplineSpace2D,
    basis_matrix,
    eval_basis_derivs,
    eval_geometry,
    identity_map,
    make_open_knot_vector,
    nurbs_annulus_map,
    polar_annulus_map,
    tau_points,
    unit_square_space,
)


def test_single_element_knots():
    kv = make_open_knot_vector(0, 1, 1, 2)
    npt.assert_allclose(kv.knots, [0, 0, 0, 1, 1, 1])
    assert kv.num_basis == 3


def test_uniform_knots_count_and_spacing():
    kv = make_open_knot_vector(0, 1, 5, 2)
    assert kv.num_basis == 7
    npt.assert_allclose(np.diff(kv.breakpoints), 0.2)


def test_clamped_ends():
    kv = make_open_knot_vector(1, 2, 20, 2)
    npt.assert_allclose(kv.knots[:3], 1.0)
    npt.assert_allclose(kv.knots[-3:], 2.0)
    npt.assert_allclose(np.diff(kv.breakpoints), 0.05)


def test_reject_zero_elements():
    with pytest.raises(ValueError):
        make_open_knot_vector(0, 1, 0, 2)
    with pytest.raises(ValueError):
        make_open_knot_vector(1, 1, 4, 2)


def test_knot_vector_validation():
    with pytest.raises(ValueError):
        KnotVector(2, np.array([0, 0, 0, 1, 0.5, 1, 1, 1]))
    with pytest.raises(ValueError):
        KnotVector(2, np.array([0, 0, 1, 2, 3, 3, 3]))  # not clamped left


def test_endpoint_interpolation():
    kv = KnotVector(2, np.array([0, 0, 0, 1, 2, 3, 3, 3], float))
    first, ders = eval_basis_derivs(kv, 0.0)
    assert first == 0
    npt.assert_allclose(ders[0], [1, 0, 0], atol=1e-15)
    first, ders = eval_basis_derivs(kv, 3.0)
    npt.assert_allclose(ders[0], [0, 0, 1], atol=1e-15)


def test_interior_midpoint_values():
    # hand Cox-de Boor on a uniform quadratic at a span midpoint
    kv = KnotVector(2, np.array([0, 0, 0, 1, 2, 3, 3, 3], float))
    first, ders = eval_basis_derivs(kv, 1.5)
    npt.assert_allclose(ders[0], [0.125, 0.75, 0.125], atol=1e-15)


def test_partition_of_unity_random():
    rng = np.random.default_rng(42)
    for _ in range(10):
        n = int(rng.integers(1, 30))
        a, b = sorted(rng.normal(size=2) * 3)
        if b - a < 1e-3:
            b = a + 1.0
        kv = make_open_knot_vector(a, b, n, 2)
        s = a + (b - a) * rng.random(1000)
        _, ders = eval_basis_derivs(kv, s, 1)
        assert np.abs(ders[:, 0, :].sum(axis=1) - 1).max() <= 1e-12
        assert np.abs(ders[:, 1, :].sum(axis=1)).max() <= 1e-12 / (b - a)


def test_derivative_matches_finite_differences():
    # central differences are exact on quadratic pieces, so with stencils kept
    # inside single spans the mismatch must sit at rounding level for both
    # step sizes (comfortably below the O(step^2) budget)
    kv = make_open_knot_vector(0, 1, 9, 2)
    rng = np.random.default_rng(7)
    h = 1.0 / 9
    s = (np.arange(9)[:, None] + 0.25 + 0.5 * rng.random((9, 5)))[:, :].ravel() * h
    B1 = basis_matrix(kv, s, deriv=1)
    for step in (1e-4, 5e-5):
        fd = (basis_matrix(kv, s + step) - basis_matrix(kv, s - step)) / (2 * step)
        err = np.abs(fd - B1).max()
        assert err <= 100 * step**2
        assert err <= 1e-9


def test_local_support_exact_zero():
    kv = make_open_knot_vector(0, 1, 10, 2)
    B = basis_matrix(kv, np.linspace(0, 1, 201))
    t = kv.knots
    for j in range(kv.num_basis):
        outside = (np.linspace(0, 1, 201) < t[j]) | (np.linspace(0, 1, 201) > t[j + 3])
        assert np.all(B[outside, j] == 0.0)


def test_domain_error():
    kv = make_open_knot_vector(0, 1, 4, 2)
    with pytest.raises(DomainError):
        eval_basis_derivs(kv, 1.5)


def test_tau_points_end_spans_collapse():
    kv = KnotVector(2, np.array([0, 0, 0, 1, 2, 3, 3, 3], float))
    npt.assert_allclose(tau_points(kv, 0), (0, 0, 0.5))
    npt.assert_allclose(tau_points(kv, 2), (0.5, 1.5, 2.5))


def test_tau_points_uniform_unit():
    kv = make_open_knot_vector(0, 1, 10, 2)
    npt.assert_allclose(tau_points(kv, 5), (0.35, 0.45, 0.55))
    with pytest.raises(IndexError):
        tau_points(kv, 12)


def test_space_rejects_other_degrees():
    kv3 = make_open_knot_vector(0, 1, 4, 3)
    kv2 = make_open_knot_vector(0, 1, 4, 2)
    with pytest.raises(ValueError):
        SplineSpace2D(kv3, kv2)


def test_space_element_grid():
    sp = unit_square_space(5)
    assert sp.n_elements == (5, 5)
    assert sp.shape == (7, 7)
    npt.assert_allclose(sp.element_box(0, 0), (0, 0.2, 0, 0.2))
    npt.assert_allclose(sp.element_box(4, 4), (0.8, 1.0, 0.8, 1.0))


def test_anchor_map_interior_and_boundary():
    sp = unit_square_space(6)
    # interior basis j anchors element j-1, boundary bases clamp inward
    assert sp.basis_anchor(0, 0) == (0, 0)
    assert sp.basis_anchor(1, 3) == (0, 2)
    assert sp.basis_anchor(7, 7) == (5, 5)
    anchored = sp.bases_anchored_at(0, 0)
    assert set(anchored) == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_identity_map_point():
    pt, J, det = eval_geometry(identity_map(), 0.3, 0.7)
    npt.assert_allclose(pt, (0.3, 0.7))
    npt.assert_allclose(J, np.eye(2))
    assert det == 1.0


def test_polar_map_point_and_jacobian():
    pt, J, det = eval_geometry(polar_annulus_map(), 1.5, 0.0)
    npt.assert_allclose(pt, (1.5, 0.0), atol=1e-15)
    npt.assert_allclose(det, 1.5)


def test_nurbs_annulus_matches_polar_at_quadrant_corners():
    gm = nurbs_annulus_map()
    for t in (0.0, np.pi / 2, np.pi, 2 * np.pi):
        pt, _, _ = eval_geometry(gm, 1.5, t)
        npt.assert_allclose(pt, (1.5 * np.cos(t), 1.5 * np.sin(t)), atol=1e-13)


@pytest.mark.parametrize("make_map", [polar_annulus_map, nurbs_annulus_map])
def test_annulus_area_from_jacobian(make_map):
    # int |det J| over the parameter domain is the ring area pi (2^2 - 1^2)
    gm = make_map()
    x, w = leggauss(10)
    if gm.space is not None:
        boxes = [gm.space.element_box(i, j)
                 for i in range(gm.space.n_elements[0])
                 for j in range(gm.space.n_elements[1])]
    else:
        boxes = [(1.0, 2.0, 0.0, 2 * np.pi)]
    total = 0.0
    for s0, s1, t0, t1 in boxes:
        ss = 0.5 * (s0 + s1) + 0.5 * (s1 - s0) * x
        tt = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * x
        S, T = np.meshgrid(ss, tt, indexing="ij")
        _, _, _, det = gm.map_points(S.ravel(), T.ravel())
        W = np.outer(0.5 * (s1 - s0) * w, 0.5 * (t1 - t0) * w).ravel()
        total += (W * np.abs(det)).sum()
    npt.assert_allclose(total, 3 * np.pi, rtol=1e-9)


def test_nurbs_zero_weights_rejected():
    gm = nurbs_annulus_map()
    with pytest.raises(GeometryError):
        GeometryMap(kind="nurbs", space=gm.space, control=gm.control,
                    weights=-gm.weights)
