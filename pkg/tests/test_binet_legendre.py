import math

import numpy as np
import pytest
from helpers import sphere_times_line

from finslerlab.binet_legendre import (
    BLIntegrator,
    bl_dual_form,
    bl_field,
    bl_metric,
    bl_norm_metric,
)
from finslerlab.errors import BoundsError, DegenerateNormError
from finslerlab.finsler import (
    MinkowskiNorm,
    conformal_scale,
    hopf_scene,
    minkowski_field,
    product_finsler,
    riemannian_field,
)
from finslerlab.geometry import ConformalFactor, MetricField, christoffel

LAT = BLIntegrator(seed=1)
MC = BLIntegrator(mode="mc", samples=2_000_000, seed=2)


def norm_from_matrix(a):
    a = np.asarray(a, dtype=float)

    def fn(comps):
        acc = None
        n = len(comps)
        for i in range(n):
            for j in range(n):
                t = comps[i] * comps[j] * a[i, j]
                acc = t if acc is None else acc + t
        return np.sqrt(acc) if not hasattr(acc, "sqrt") else acc.sqrt()

    return MinkowskiNorm(a.shape[0], fn, reversible=True, label="quadratic")


# -- closed forms ---------------------------------------------------------------

@pytest.mark.parametrize(
    "norm,expected",
    [
        (MinkowskiNorm.euclidean(2), np.eye(2)),
        (MinkowskiNorm.linf(2), 0.75 * np.eye(2)),
        (MinkowskiNorm.lp(1, 2), 1.5 * np.eye(2)),
    ],
    ids=["euclidean", "linf", "l1"],
)
def test_closed_forms_lattice(norm, expected):
    res = bl_norm_metric(norm, LAT)
    assert np.max(np.abs(res.g_bl - expected)) / np.max(expected) <= 1e-3


@pytest.mark.parametrize(
    "norm,expected",
    [
        (MinkowskiNorm.euclidean(2), np.eye(2)),
        (MinkowskiNorm.linf(2), 0.75 * np.eye(2)),
        (MinkowskiNorm.lp(1, 2), 1.5 * np.eye(2)),
    ],
    ids=["euclidean", "linf", "l1"],
)
def test_closed_forms_monte_carlo(norm, expected):
    res = bl_norm_metric(norm, MC)
    assert np.all(np.abs(res.g_bl - expected) <= 3 * res.error_estimate + 1e-12)


def test_dual_form_values():
    # square: (n+2)/vol * integral v1^2 = 1 * 4/3; diamond: 2 * 1/3
    gs = bl_dual_form(minkowski_field(MinkowskiNorm.linf(2)), [0.0, 0.0], LAT)
    assert np.allclose(gs, (4.0 / 3.0) * np.eye(2), atol=2e-3)
    gs = bl_dual_form(minkowski_field(MinkowskiNorm.lp(1, 2)), [0.0, 0.0], LAT)
    assert np.allclose(gs, (2.0 / 3.0) * np.eye(2), atol=2e-3)


def test_riemannian_reproduction_diag():
    a = np.diag([4.0, 1.0])
    res = bl_norm_metric(norm_from_matrix(a), LAT)
    assert np.max(np.abs(res.g_bl - a)) / np.max(a) <= 1e-3


def test_riemannian_reproduction_random_spd():
    rng = np.random.default_rng(9)
    m = rng.standard_normal((2, 2))
    a = m @ m.T + 0.5 * np.eye(2)
    res = bl_norm_metric(norm_from_matrix(a), LAT)
    assert np.max(np.abs(res.g_bl - a)) / np.max(np.abs(a)) <= 1e-3


def test_randers_golden_value():
    # the unit ball of |v| + 0.5 v1 <= 1 is an off-center ellipse; integrating
    # as written (no centering) gives exactly g_bl = diag(9/32, 3/4)
    golden = np.diag([9.0 / 32.0, 0.75])
    res = bl_norm_metric(MinkowskiNorm.randers(2, [0.5, 0.0]), LAT)
    assert np.max(np.abs(res.g_bl - golden)) / np.max(golden) <= 1e-3
    hi = bl_norm_metric(MinkowskiNorm.randers(2, [0.5, 0.0]), BLIntegrator(resolution=401, seed=1))
    assert np.max(np.abs(hi.g_bl - golden)) / np.max(golden) <= 3e-4
    mc = bl_norm_metric(MinkowskiNorm.randers(2, [0.5, 0.0]), MC)
    assert np.all(np.abs(mc.g_bl - res.g_bl) <= 3 * mc.error_estimate + res.error_estimate)


def test_result_invariants():
    res = bl_norm_metric(MinkowskiNorm.lp(4, 2), LAT)
    assert np.allclose(res.g_bl @ res.g_star, np.eye(2), atol=1e-10)
    assert np.all(np.linalg.eigvalsh(res.g_bl) > 0)
    d = res.to_dict()
    assert {"g_star", "g_bl", "vol", "error_estimate", "backend", "seed"} <= set(d)


# -- scaling / equivariance -------------------------------------------------------

def test_scaling_law_constant_factor():
    norm = MinkowskiNorm.lp(4, 2)
    base = bl_norm_metric(norm, LAT)
    doubled = MinkowskiNorm(2, lambda c: norm.fn(c) * 2.0)
    res = bl_norm_metric(doubled, LAT)
    assert np.all(np.abs(res.g_bl - 4.0 * base.g_bl) <= 3 * (res.error_estimate + 4 * base.error_estimate) + 1e-9)


def random_well_conditioned(rng):
    a = rng.uniform(0, 2 * math.pi)
    b = rng.uniform(0, 2 * math.pi)
    rot = lambda t: np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    return rot(a) @ np.diag(rng.uniform(0.7, 1.4, size=2)) @ rot(b)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_scaling_and_linear_equivariance(seed):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.5, 2.0)
    l_mat = random_well_conditioned(rng)
    norm = MinkowskiNorm.lp(4, 2)
    base = bl_norm_metric(norm, LAT)

    scaled = MinkowskiNorm(2, lambda c: norm.fn(c) * lam)
    res_s = bl_norm_metric(scaled, LAT)
    tol_s = 3 * (res_s.error_estimate + lam**2 * base.error_estimate) + 1e-9
    assert np.all(np.abs(res_s.g_bl - lam**2 * base.g_bl) <= tol_s)

    composed = MinkowskiNorm(2, lambda c: norm.fn([
        l_mat[0, 0] * c[0] + l_mat[0, 1] * c[1],
        l_mat[1, 0] * c[0] + l_mat[1, 1] * c[1],
    ]))
    res_c = bl_norm_metric(composed, LAT)
    expect = l_mat.T @ base.g_bl @ l_mat
    tol_c = 3 * (res_c.error_estimate + np.abs(l_mat.T) @ base.error_estimate @ np.abs(l_mat)) + 1e-9
    assert np.all(np.abs(res_c.g_bl - expect) <= tol_c)


def test_volume_form_independence():
    # integrating in coordinates skewed by a unimodular map must not move g_bl
    rng = np.random.default_rng(17)
    norm = MinkowskiNorm.lp(4, 2)
    base = bl_norm_metric(norm, LAT)
    shear = np.array([[1.0, 0.7], [0.0, 1.0]])  # det 1
    composed = MinkowskiNorm(2, lambda c: norm.fn([
        shear[0, 0] * c[0] + shear[0, 1] * c[1],
        shear[1, 0] * c[0] + shear[1, 1] * c[1],
    ]))
    res = bl_norm_metric(composed, LAT)
    back = np.linalg.inv(shear).T @ res.g_bl @ np.linalg.inv(shear)
    assert np.all(np.abs(back - base.g_bl) <= 3 * (base.error_estimate + np.max(res.error_estimate)) + 1e-9)


@pytest.mark.parametrize(
    "norm",
    [
        MinkowskiNorm.euclidean(2),
        MinkowskiNorm.lp(4, 2),
        MinkowskiNorm.lp(1, 2),
        MinkowskiNorm.linf(2),
        MinkowskiNorm.randers(2, [0.5, 0.0]),
    ],
    ids=["euclidean", "l4", "l1", "linf", "randers"],
)
def test_backend_agreement(norm):
    lat = bl_norm_metric(norm, LAT)
    mc = bl_norm_metric(norm, MC)
    assert np.all(np.abs(lat.g_bl - mc.g_bl) <= 3 * mc.error_estimate + lat.error_estimate + 1e-9)


# -- error paths -------------------------------------------------------------------

def test_bounding_box_too_small():
    with pytest.raises(BoundsError):
        bl_norm_metric(MinkowskiNorm.euclidean(2), BLIntegrator(box_factor=0.5, seed=1))


def test_empty_acceptance():
    with pytest.raises(DegenerateNormError):
        bl_norm_metric(MinkowskiNorm.euclidean(2), BLIntegrator(resolution=21, box_factor=1e5, seed=1))


# -- fields -----------------------------------------------------------------------

def test_bl_field_minkowski_constant_with_flat_connection():
    field = minkowski_field(MinkowskiNorm.lp(4, 2))
    g = bl_field(field, LAT)
    assert np.allclose(g.matrix([0.3, -0.8]), g.matrix([1.5, 2.0]), atol=1e-14)
    assert np.allclose(christoffel(g, [0.5, 0.5]), 0.0, atol=1e-12)


def test_bl_field_hopf_scaling_law():
    field, _, _ = hopf_scene(MinkowskiNorm.lp(4, 2), 2.0)
    g = bl_field(field, LAT)
    base = bl_norm_metric(MinkowskiNorm.lp(4, 2), LAT).g_bl
    for x in ([1.0, 0.0], [0.5, 0.5], [-2.0, 1.0]):
        r2 = float(np.dot(x, x))
        assert np.allclose(g.matrix(x), base / r2, rtol=1e-10)


def test_bl_field_product_block_structure_and_pointwise_agreement():
    ps = sphere_times_line()
    field = product_finsler(ps, MinkowskiNorm.lp(4, 2))
    integ = BLIntegrator(resolution=101, seed=4)
    g = bl_field(field, integ)
    x = np.array([math.pi / 3, 0.4, -0.2])
    gm = g.matrix(x)
    # block diagonal with blocks proportional to the factor metrics
    assert abs(gm[0, 2]) < 1e-12 and abs(gm[1, 2]) < 1e-12
    sph = ps.factors[0].matrix(x[:2])
    c = gm[0, 0] / sph[0, 0]
    assert np.allclose(gm[:2, :2], c * sph, rtol=1e-9, atol=1e-12)
    # pointwise quadrature agrees within its error estimate
    res = bl_metric(field, x, integ)
    assert np.all(np.abs(res.g_bl - gm) <= 5 * res.error_estimate + 5e-3 * np.max(np.abs(gm)))


def test_bl_field_riemannian_is_exact():
    ps = sphere_times_line()
    g = ps.assembled()
    field = riemannian_field(g)
    gb = bl_field(field, LAT)
    x = np.array([1.1, 0.2, 0.4])
    assert np.allclose(gb.matrix(x), g.matrix(x), atol=1e-14)


def test_bl_field_pointwise_path_caches():
    field = minkowski_field(MinkowskiNorm.lp(4, 2))
    g = bl_field(field, BLIntegrator(resolution=51, seed=3), structured=False)
    m1 = g.matrix([0.1, 0.2])
    m2 = g.matrix([0.1, 0.2])
    assert np.array_equal(m1, m2)
    base = bl_norm_metric(MinkowskiNorm.lp(4, 2), BLIntegrator(resolution=51, seed=3))
    assert np.allclose(m1, base.g_bl, rtol=1e-12)


# -- canonical connection ------------------------------------------------------------

def make_spec(**kw):
    from finslerlab.transport import PathSampleSpec

    base = dict(n_paths=10, vectors_per_path=3, scale=0.5, seed=5,
                sample_lo=(0.7, -1.0, -1.0), sample_hi=(2.3, 1.0, 1.0))
    base.update(kw)
    return PathSampleSpec(**base)


def test_canonical_connection_minkowski_exact():
    from finslerlab.transport import PathSampleSpec, canonical_connection_check

    field = minkowski_field(MinkowskiNorm.lp(4, 2))
    spec = PathSampleSpec(n_paths=6, vectors_per_path=3, scale=0.8, seed=3,
                          sample_lo=(-1.0, -1.0), sample_hi=(1.0, 1.0))
    rep = canonical_connection_check(field, LAT, spec, tol=1e-10)
    assert rep.passed, rep.to_dict()


def test_canonical_connection_product_field():
    from finslerlab.transport import canonical_connection_check

    ps = sphere_times_line()
    field = product_finsler(ps, MinkowskiNorm.lp(4, 2))
    rep = canonical_connection_check(field, BLIntegrator(resolution=101, seed=4), make_spec(), tol=1e-5)
    assert rep.passed, rep.to_dict()


def test_proportional_fields_share_connection():
    ps = sphere_times_line()
    field = product_finsler(ps, MinkowskiNorm.lp(4, 2))
    tripled = conformal_scale(field, ConformalFactor.constant(3.0, 3))
    integ = BLIntegrator(resolution=101, seed=4)
    g1 = bl_field(field, integ)
    g2 = bl_field(tripled, integ)
    x = np.array([1.0, 0.3, 0.6])
    assert np.allclose(g2.matrix(x), 9.0 * g1.matrix(x), rtol=1e-12)
    assert np.allclose(christoffel(g1, x), christoffel(g2, x), atol=1e-11)
