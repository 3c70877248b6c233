import math

import numpy as np
import pytest
from helpers import flat, line_metric, punctured_plane, sphere_chart, sphere_times_line, three_sphere_chart

from finslerlab.errors import DomainError, NumericalError, ValidationError
from finslerlab.finsler import MinkowskiNorm, product_finsler, riemannian_field
from finslerlab.transport import (
    TERM_DOMAIN_EXIT,
    TERM_HORIZON,
    CompositePath,
    CurvePath,
    LoopSpec,
    PathSampleSpec,
    PolylinePath,
    berwald_check,
    decomposition_principal_angles,
    geodesic_between,
    holonomy_generators,
    integrate_geodesic,
    invariant_decomposition,
    parallel_transport,
    transport_matrix,
    transport_profile,
)


# -- geodesics ---------------------------------------------------------------

def test_flat_geodesic_is_straight_line():
    g = flat()
    path = integrate_geodesic(g, [0.0, 0.0], [0.6, 0.8], horizon=2.0)
    assert path.termination == TERM_HORIZON
    t = path.t_end
    assert np.allclose(path.end, [0.6 * t, 0.8 * t], atol=1e-12)
    assert path.arclength == pytest.approx(2.0)


def test_punctured_plane_escape_length():
    g = punctured_plane()
    path = integrate_geodesic(g, [1.0, 0.0], [-1.0, 0.0], horizon=5.0)
    assert path.termination == TERM_DOMAIN_EXIT
    assert path.arclength == pytest.approx(1.0 - 1e-8, abs=1e-9)


def test_sphere_great_circle_returns_after_two_pi():
    g = sphere_chart()
    x = np.array([math.pi / 2, 0.0])
    path = integrate_geodesic(g, x, [0.0, 1.0], horizon=2 * math.pi)
    assert path.termination == TERM_HORIZON
    end = path.end
    assert end[0] == pytest.approx(math.pi / 2, abs=1e-6)
    assert end[1] == pytest.approx(2 * math.pi, abs=1e-6)
    assert np.allclose(path.end_velocity, [0.0, 1.0], atol=1e-6)


def test_geodesic_speed_constant_along_path():
    g = sphere_chart()
    path = integrate_geodesic(g, [1.0, 0.3], [0.4, -0.2], horizon=1.5)
    ts, xs, vs = path.samples(17)
    speeds = [g.norm(x, v) for x, v in zip(xs, vs)]
    assert np.allclose(speeds, speeds[0], rtol=1e-9)


def test_geodesic_requires_domain_start():
    with pytest.raises(DomainError):
        integrate_geodesic(punctured_plane(), [0.0, 0.0], [1.0, 0.0], horizon=1.0)
    with pytest.raises(ValidationError):
        integrate_geodesic(flat(), [0.0, 0.0], [0.0, 0.0], horizon=1.0)


# -- parallel transport --------------------------------------------------------

def test_transport_flat_identity():
    g = flat()
    path = PolylinePath(np.array([[0.0, 0.0], [1.0, 0.5], [0.3, 2.0]]))
    v = np.array([0.7, -0.2])
    assert np.allclose(parallel_transport(g, path, v), v, atol=1e-12)


def test_latitude_circle_holonomy_reverses_vector():
    g = sphere_chart()
    theta0 = math.pi / 3
    circle = CurvePath(lambda t: np.array([theta0, t]), lambda t: np.array([0.0, 1.0]), 0.0, 2 * math.pi)
    pmat = transport_matrix(g, circle)
    frame = g.orthonormal_frame(np.array([theta0, 0.0]))
    m = np.linalg.inv(frame) @ pmat @ frame
    # rotation by 2*pi*cos(theta0) = pi: the vector comes back reversed
    assert np.allclose(m, -np.eye(2), atol=1e-8)


def test_product_transport_no_cross_block_leakage():
    ps = sphere_times_line()
    g = ps.assembled()
    x = np.array([math.pi / 4, 0.2, 0.5])
    path = integrate_geodesic(g, x, [0.3, 0.4, 0.8], horizon=1.2)
    out = parallel_transport(g, path, np.array([0.1, -0.4, 0.0]))
    assert abs(out[2]) <= 1e-9
    out2 = parallel_transport(g, path, np.array([0.0, 0.0, 1.0]))
    assert np.allclose(out2, [0.0, 0.0, 1.0], atol=1e-9)


def test_transport_preserves_inner_products_along_geodesic():
    g = sphere_chart()
    x = np.array([1.1, -0.4])
    path = integrate_geodesic(g, x, [0.5, 0.3], horizon=1.0)
    v = np.array([0.9, 0.1])
    w = np.array([-0.2, 0.8])
    ts = np.linspace(0, path.t_end, 9)
    vs, _ = transport_profile(g, path, v, ts)
    ws, _ = transport_profile(g, path, w, ts)
    vals = [float(a @ g.matrix(path.point(t)) @ b) for t, a, b in zip(ts, vs, ws)]
    assert np.allclose(vals, vals[0], atol=1e-9)


def test_transport_refuses_truncated_path():
    g = punctured_plane()
    path = integrate_geodesic(g, [1.0, 0.0], [-1.0, 0.0], horizon=5.0)
    with pytest.raises(DomainError):
        parallel_transport(g, path, np.array([0.0, 1.0]))


# -- two-point shooting ---------------------------------------------------------

def test_geodesic_between_flat_exact():
    g = flat()
    path = geodesic_between(g, [0.0, 0.0], [1.0, 2.0])
    assert np.allclose(path.end, [1.0, 2.0], atol=1e-10)
    assert path.arclength == pytest.approx(math.sqrt(5), rel=1e-10)


def test_geodesic_between_sphere_small_arc():
    g = sphere_chart()
    a = np.array([1.0, 0.2])
    b = np.array([1.15, 0.35])
    path = geodesic_between(g, a, b)
    assert np.allclose(path.end, b, atol=1e-9)
    # arclength is at least the chordal lower bound and small
    assert 0 < path.arclength < 0.5


# -- berwald check ----------------------------------------------------------------

def make_spec(**kw):
    base = dict(n_paths=12, vectors_per_path=3, scale=0.5, seed=7,
                sample_lo=(0.6, -1.0, -1.0), sample_hi=(2.4, 1.0, 1.0))
    base.update(kw)
    return PathSampleSpec(**base)


def test_berwald_riemannian_field_passes():
    ps = sphere_times_line()
    g = ps.assembled()
    field = riemannian_field(g)
    rep = berwald_check(field, g, make_spec(), tol=1e-8)
    assert rep.passed, rep.to_dict()


def test_berwald_product_ell4_field_passes():
    ps = sphere_times_line()
    g = ps.assembled()
    field = product_finsler(ps, MinkowskiNorm.lp(4, 2))
    rep = berwald_check(field, g, make_spec(), tol=1e-6)
    assert rep.passed, rep.to_dict()
    assert rep.n_paths >= 8


def test_berwald_defect_invariant_under_constant_scaling():
    ps = sphere_times_line()
    g = ps.assembled()
    field = product_finsler(ps, MinkowskiNorm.lp(4, 2))
    from finslerlab.finsler import conformal_scale
    from finslerlab.geometry import ConformalFactor

    scaled = conformal_scale(field, ConformalFactor.constant(3.0, 3))
    r1 = berwald_check(field, g, make_spec(), tol=1e-6)
    r2 = berwald_check(scaled, g, make_spec(), tol=1e-6)
    assert r1.max_defect == pytest.approx(r2.max_defect, abs=1e-12)


def test_berwald_defect_decreases_with_integrator_tolerance():
    ps = sphere_times_line()
    g = ps.assembled()
    field = product_finsler(ps, MinkowskiNorm.lp(4, 2))
    spec = make_spec(n_paths=6, scale=1.2)
    defects = [
        berwald_check(field, g, spec, tol=1.0, rtol=rt, atol=rt * 1e-2, method="RK45").max_defect
        for rt in (1e-3, 1e-5, 1e-7)
    ]
    # strictly decreasing with solid improvement at each of the two steps
    assert defects[0] > defects[1] > defects[2]
    assert defects[1] <= defects[0] / 4
    assert defects[2] <= defects[1] / 4


# -- holonomy --------------------------------------------------------------------

def test_holonomy_flat_identity():
    g = flat(3)
    hs = holonomy_generators(g, [0.1, 0.2, 0.3], LoopSpec(n_triangles=4, seed=1))
    for loop in hs.loops:
        assert np.allclose(loop.matrix, np.eye(3), atol=1e-10)
        assert loop.ortho_defect <= 1e-10


def test_holonomy_orthogonality_and_loop_inverse():
    g = sphere_chart()
    x = np.array([math.pi / 4, 0.0])
    hs = holonomy_generators(g, x, LoopSpec(n_triangles=5, seed=3))
    assert len(hs.loops) >= 5
    for loop in hs.loops:
        assert loop.ortho_defect <= 1e-8
    # explicit loop inversion: rectangle followed by its reverse
    s = 0.05
    verts = np.array([x, x + [s, 0], x + [s, s], x + [0, s], x])
    fwd = PolylinePath(verts)
    rev = PolylinePath(verts[::-1])
    p1 = transport_matrix(g, fwd)
    p2 = transport_matrix(g, rev)
    assert np.allclose(p2 @ p1, np.eye(2), atol=1e-9)


def test_holonomy_small_loop_matches_curvature_area():
    # unit sphere: loop holonomy is rotation by the enclosed metric area, and
    # the linearized model Id + area*J is accurate to O(area^2)
    g = sphere_chart()
    x = np.array([math.pi / 4, 0.0])
    for s in (0.02, 0.05):
        verts = np.array([x, x + [s, 0], x + [s, s], x + [0, s], x])
        pmat = transport_matrix(g, PolylinePath(verts))
        frame = g.orthonormal_frame(x)
        m = np.linalg.inv(frame) @ pmat @ frame
        angle = math.atan2(m[1, 0], m[0, 0])
        area = s * (math.cos(x[0]) - math.cos(x[0] + s))
        assert abs(angle) == pytest.approx(area, abs=1e-9)
        jgen = np.array([[0.0, -1.0], [1.0, 0.0]]) * np.sign(angle)
        lin_defect = np.max(np.abs(m - (np.eye(2) + area * jgen)))
        assert lin_defect <= area**2


def test_holonomy_product_fixes_line_direction():
    ps = sphere_times_line()
    g = ps.assembled()
    hs = holonomy_generators(g, [math.pi / 4, 0.0, 0.5], LoopSpec(n_triangles=6, seed=5))
    for loop in hs.loops:
        assert np.allclose(loop.matrix[:, 2], [0.0, 0.0, 1.0], atol=1e-9)
        assert np.allclose(loop.matrix[2, :], [0.0, 0.0, 1.0], atol=1e-9)


# -- invariant decomposition ------------------------------------------------------

def test_decomposition_flat_3d_all_trivial():
    g = flat(3)
    hs = holonomy_generators(g, [0.0, 0.0, 0.0], LoopSpec(n_triangles=4, seed=2))
    dec = invariant_decomposition(hs)
    assert dec.dims == (3,)
    assert dec.subspaces[0].trivial


def test_decomposition_sphere_times_line():
    ps = sphere_times_line()
    g = ps.assembled()
    hs = holonomy_generators(g, [math.pi / 4, 0.0, 0.5], LoopSpec(seed=11))
    dec = invariant_decomposition(hs)
    assert dec.dims == (1, 2)
    # trivial factor is the line direction
    v0 = dec.subspaces[0].basis
    assert abs(v0[2, 0]) == pytest.approx(np.linalg.norm(v0), rel=1e-8)


def test_decomposition_three_sphere_irreducible():
    g = three_sphere_chart()
    hs = holonomy_generators(g, [math.pi / 2, math.pi / 2, 0.0], LoopSpec(seed=4))
    dec = invariant_decomposition(hs)
    assert dec.dims == (0, 3)


def test_decomposition_reproducible_across_seeds():
    ps = sphere_times_line()
    g = ps.assembled()
    x = [math.pi / 4, 0.0, 0.5]
    d1 = invariant_decomposition(holonomy_generators(g, x, LoopSpec(seed=21)))
    d2 = invariant_decomposition(holonomy_generators(g, x, LoopSpec(seed=22)))
    assert d1.dims == d2.dims
    assert decomposition_principal_angles(d1, d2) <= 1e-6


def test_decomposition_merges_near_ties():
    # synthetic: rotations in two planes driven by the same angle produce a
    # commutant whose generic element may have close eigenvalues; merged
    # blocks are acceptable, split ones must still block-diagonalize
    from finslerlab.transport import HolonomySample, LoopTransport

    def rot4(a):
        c, s = math.cos(a), math.sin(a)
        m = np.eye(4)
        m[0, 0] = m[1, 1] = c
        m[0, 1], m[1, 0] = -s, s
        m[2, 2] = m[3, 3] = c
        m[2, 3], m[3, 2] = -s, s
        return m

    hs = HolonomySample(np.zeros(4), np.eye(4), tuple(
        LoopTransport(f"r{k}", rot4(0.1 * (k + 1)), 0.0) for k in range(4)
    ))
    dec = invariant_decomposition(hs)
    assert sum(dec.dims) == 4
    assert dec.dims[0] == 0


def test_decomposition_requires_loops():
    from finslerlab.transport import HolonomySample

    with pytest.raises(ValidationError):
        invariant_decomposition(HolonomySample(np.zeros(2), np.eye(2), ()))
