import math

import numpy as np
import pytest

from projlab.manifold import frame_at, make_cap_chart
from projlab.projmap import (
    CinematicMap,
    c2_distance,
    cinematic_infimum,
    eval_map,
    pair_intersection_volume,
    projected_intersection_diameter,
    survey_family,
    vertical_neighborhood_volume,
    vertical_slab_volume,
)
from projlab.util import rng_stream, sample_ball


@pytest.fixture(scope="module")
def cap3():
    return make_cap_chart(3, 0.6)


def grid1(count=256):
    return np.linspace(0.0, 1.0, count)[:, None]


def test_zero_displacement_gives_zero_map(cap3):
    f = eval_map(cap3, np.zeros(3), grid1())
    assert np.abs(f).max() == 0.0


def test_radial_displacement_vanishes_at_its_base_point(cap3):
    x0 = np.array([[0.375]])
    z = 0.3 * cap3.point(x0)[0]
    assert np.linalg.norm(eval_map(cap3, z, x0)) < 1e-12
    # and generically does not vanish elsewhere
    vals = np.linalg.norm(eval_map(cap3, z, grid1()), axis=-1)
    assert vals.max() > 1e-3


def test_matches_gram_schmidt_projection(cap3):
    x = grid1(256)
    z = np.array([0.2, 0.0, 0.0])
    h = 1e-4
    u1 = cap3.point(x)
    v2 = cap3.point(x + h) - cap3.point(x - h)
    u2 = v2 - (v2 * u1).sum(axis=-1, keepdims=True) * u1
    u2 /= np.linalg.norm(u2, axis=-1, keepdims=True)
    u3 = np.cross(u1, u2)
    oracle = np.stack([u2 @ z, u3 @ z], axis=-1)
    assert np.abs(eval_map(cap3, z, x) - oracle).max() <= 1e-10


def test_map_is_linear_in_displacement(cap3):
    r = rng_stream(21, 0)
    x = r.random((100, 1))
    z, w = sample_ball(r, 3, 2, 0.5)
    a, b = 0.7, -1.3
    lhs = eval_map(cap3, a * z + b * w, x)
    rhs = a * eval_map(cap3, z, x) + b * eval_map(cap3, w, x)
    assert np.abs(lhs - rhs).max() <= 1e-12


def test_gradient_matches_finite_differences(cap3):
    f = CinematicMap(cap3, np.array([0.1, -0.2, 0.15]))
    x = grid1(33)
    g = f.gradient(x)
    assert g.shape == (33, 2, 1)
    h = 1e-5
    fd = (f.value(x + h) - f.value(x - h)) / (2 * h)
    assert np.abs(g[..., 0] - fd).max() < 1e-6


def test_c2_distance_of_identical_maps_is_zero(cap3):
    f = CinematicMap(cap3, np.array([0.2, 0.1, 0.0]))
    assert c2_distance(f, f).value == 0.0


def test_c2_distance_scales_linearly(cap3):
    w = np.array([0.11, -0.07, 0.05])
    zero = CinematicMap(cap3, np.zeros(3))
    one = c2_distance(CinematicMap(cap3, w), zero).value
    two = c2_distance(CinematicMap(cap3, 2.0 * w), zero).value
    assert two == pytest.approx(2.0 * one, rel=1e-12)


def test_c2_distance_grid_convergence(cap3):
    f = CinematicMap(cap3, np.array([0.1, 0.0, 0.0]))
    g = CinematicMap(cap3, np.array([0.15, 0.0, 0.0]))
    coarse = c2_distance(f, g)
    fine = c2_distance(f, g, per_axis=(coarse.grid_per_axis - 1) * 4 + 1)
    assert abs(coarse.value - fine.value) <= 0.02 * fine.value
    assert coarse.upper >= coarse.value


def test_displacement_to_norm_ratios_stay_in_fixed_bands(cap3):
    r = rng_stream(9, 3)
    za = sample_ball(r, 3, 1000, 0.5)
    zb = sample_ball(r, 3, 1000, 0.5)
    keep = np.linalg.norm(za - zb, axis=1) > 1e-6
    c1_ratio = []
    c2_ratio = []
    for a, b in zip(za[keep], zb[keep]):
        c = c2_distance(CinematicMap(cap3, a), CinematicMap(cap3, b))
        disp = np.linalg.norm(a - b)
        c1_ratio.append(max(c.sup_value, c.sup_gradient) / disp)
        c2_ratio.append(c.value / disp)
    c1_ratio = np.array(c1_ratio)
    c2_ratio = np.array(c2_ratio)
    assert len(c1_ratio) >= 990
    assert 0.8 <= c1_ratio.min() and c1_ratio.max() <= 6.4
    # full second-order norms sit in a wider but still fixed band
    assert 1.5 <= c2_ratio.min() and c2_ratio.max() <= 40.0
    assert np.all(c2_ratio >= c1_ratio - 1e-12)


def test_infimum_rejects_identical_displacements(cap3):
    f = CinematicMap(cap3, np.array([0.1, 0.2, 0.0]))
    g = CinematicMap(cap3, np.array([0.1, 0.2, 0.0]))
    with pytest.raises(ValueError):
        cinematic_infimum(f, g)


def test_infimum_rejects_mismatched_charts(cap3):
    other = make_cap_chart(3, 0.6)
    f = CinematicMap(cap3, np.array([0.1, 0.0, 0.0]))
    g = CinematicMap(other, np.array([0.2, 0.0, 0.0]))
    with pytest.raises(ValueError):
        cinematic_infimum(f, g)


def test_radial_difference_has_certified_gradient_floor(cap3):
    # displacement along the base point: the value vanishes at x0 but the
    # derivative stays above the curvature-controlled floor
    x0 = np.array([0.375])
    w = 0.1 * cap3.point(x0[None, :])[0]
    f = CinematicMap(cap3, w)
    assert np.linalg.norm(f.value(x0[None, :])) < 1e-12
    gnorm = np.linalg.norm(f.gradient(x0[None, :])[0][:, 0])
    floor = 0.1 / (4.0 * cap3.constants.kappa_max)
    assert gnorm >= floor


def test_tangent_difference_has_value_floor(cap3):
    x0 = np.array([0.375])
    fr = frame_at(cap3, x0)
    f = CinematicMap(cap3, 0.1 * fr.e[0])
    value = np.linalg.norm(f.value(x0[None, :]))
    assert value >= cap3.constants.coeff_margin * 0.1 * (1.0 - 1e-9)


def test_certified_infimum_positive_and_grid_stable(cap3):
    x0 = np.array([[0.375]])
    w = 0.12 * cap3.point(x0)[0]
    f = CinematicMap(cap3, np.zeros(3))
    g = CinematicMap(cap3, w)
    certs = [cinematic_infimum(f, g, per_axis=p) for p in (65, 129, 257)]
    for c in certs:
        assert c.positive
        assert c.raw >= c.certified
        assert c.margin > 0.0
        assert c.norm_upper >= c.norm_c2 > 0.0
        assert c.argmin_x.shape == (1,)
    ks = [c.norm_upper / c.certified for c in certs]
    assert abs(ks[1] - ks[2]) <= 0.2 * ks[2]


def test_family_survey_certifies_every_pair(cap3):
    zs = sample_ball(rng_stream(9, 1), 3, 200, 0.5)
    r1 = survey_family(cap3, zs, 300, rng_stream(9, 2), per_axis=65)
    r2 = survey_family(cap3, zs, 300, rng_stream(9, 2), per_axis=129)
    assert r1.all_certified and r2.all_certified
    assert r1.min_ratio > 0.0
    assert 0.0 < r1.bilipschitz_lo <= r1.bilipschitz_hi < math.inf
    assert r1.bilipschitz_hi / r1.bilipschitz_lo < 50.0
    assert math.isfinite(r1.K_est)
    assert abs(r1.K_est - r2.K_est) <= 0.2 * r2.K_est
    assert r1.D_est >= 1.0


def test_constant_map_tube_volume(cap3):
    f = CinematicMap(cap3, np.zeros(3))
    delta = 1.0 / 16.0
    mv = vertical_neighborhood_volume(f, delta, 200_000, np.random.default_rng(11))
    exact = math.pi * delta**2
    assert abs(mv.value - exact) <= 0.02 * exact
    assert mv.stderr < exact
    assert not mv.low_hits


def test_tube_volume_halving_ratio(cap3):
    f = CinematicMap(cap3, np.array([0.2, 0.0, 0.0]))
    v1 = vertical_neighborhood_volume(f, 2.0**-6, 400_000, np.random.default_rng(5))
    v2 = vertical_neighborhood_volume(f, 2.0**-7, 400_000, np.random.default_rng(6))
    ratio = v1.value / v2.value
    assert 4.0 / 1.3 <= ratio <= 4.0 * 1.3


def test_tube_volume_against_dyadic_cell_count(cap3):
    from projlab.manifold import frame_matrices

    z = np.array([0.2, 0.0, 0.0])
    f = CinematicMap(cap3, z)
    delta = 2.0**-8
    mv = vertical_neighborhood_volume(f, delta, 2_000_000, np.random.default_rng(7))
    kx, ky = 8, 13
    xc = (np.arange(2**kx) + 0.5) / 2**kx
    fx = frame_matrices(cap3, xc[:, None]) @ z
    side = 2.0**-ky
    total = 0
    for v in fx:
        i0 = np.floor((v - delta) / side).astype(int) - 1
        i1 = np.floor((v + delta) / side).astype(int) + 2
        gy = (np.arange(i0[0], i1[0]) + 0.5) * side
        gz = (np.arange(i0[1], i1[1]) + 0.5) * side
        yy, zz = np.meshgrid(gy, gz, indexing="ij")
        total += int(np.count_nonzero((yy - v[0]) ** 2 + (zz - v[1]) ** 2 < delta**2))
    cell_estimate = total * side**2 * 2.0**-kx
    assert abs(mv.value - cell_estimate) <= 0.05 * cell_estimate


def test_pair_volume_of_identical_maps_is_the_slab(cap3):
    f = CinematicMap(cap3, np.array([0.2, 0.0, 0.0]))
    mv = pair_intersection_volume(f, f, 2.0**-5, 100_000, np.random.default_rng(8))
    assert mv.value == pytest.approx(vertical_slab_volume(3, 2.0**-5), rel=1e-12)
    assert mv.hits == mv.samples


def _aligned_pair(chart, distance):
    """Pair whose difference map crosses zero: displacement radial at x=0.4."""
    u = chart.point(np.array([[0.4]]))[0]
    zero = CinematicMap(chart, np.zeros(3))
    unit = c2_distance(CinematicMap(chart, u), zero).value
    return zero, CinematicMap(chart, (distance / unit) * u)


def test_pair_volume_distance_sweep_slope(cap3):
    delta = 2.0**-10
    vols = []
    for j in range(1, 7):
        f, g = _aligned_pair(cap3, 2.0**-j)
        mv = pair_intersection_volume(f, g, delta, 300_000, np.random.default_rng(40 + j))
        assert not mv.low_hits
        vols.append(mv.value)
    js = -np.arange(1, 7, dtype=float)
    design = np.vstack([js, np.ones(6)]).T
    slope = np.linalg.lstsq(design, np.log2(vols), rcond=None)[0][0]
    assert -1.25 <= slope <= -0.75


def test_pair_volume_delta_sweep_slope(cap3):
    f, g = _aligned_pair(cap3, 0.25)
    vols = []
    for j in range(7, 12):
        mv = pair_intersection_volume(f, g, 2.0**-j, 300_000, np.random.default_rng(60 + j))
        assert not mv.low_hits
        vols.append(mv.value)
    js = -np.arange(7, 12, dtype=float)
    design = np.vstack([js, np.ones(5)]).T
    slope = np.linalg.lstsq(design, np.log2(vols), rcond=None)[0][0]
    assert 2.75 <= slope <= 3.25


def test_pair_volume_warns_on_starved_estimate(cap3):
    # separated pair whose difference never vanishes: almost no hits
    f = CinematicMap(cap3, np.zeros(3))
    g = CinematicMap(cap3, np.array([0.4, 0.0, 0.0]))
    with pytest.warns(UserWarning):
        mv = pair_intersection_volume(f, g, 2.0**-10, 10_000, np.random.default_rng(3))
    assert mv.low_hits


def test_projected_diameter_empty_intersection(cap3):
    f = CinematicMap(cap3, np.array([0.3, 0.0, 0.0]))
    g = CinematicMap(cap3, np.array([-0.3, 0.05, 0.0]))
    cert = cinematic_infimum(f, g)
    k_est = cert.norm_upper / cert.certified
    pd = projected_intersection_diameter(f, g, 1e-5, k_est)
    assert pd.pieces == []
    assert pd.max_diameter is None
    assert pd.bound_ok


def test_projected_diameter_scales_with_delta_over_distance(cap3):
    delta = 2.0**-12
    _, gk = _aligned_pair(cap3, 0.25)
    cert = cinematic_infimum(CinematicMap(cap3, np.zeros(3)), gk)
    k_est = cert.norm_upper / cert.certified
    scaled = []
    for j in (2, 3, 4):
        d = 2.0**-j
        f, g = _aligned_pair(cap3, d)
        pd = projected_intersection_diameter(f, g, delta, k_est)
        assert not pd.vacuous
        assert pd.bound_ok
        assert pd.pieces
        los = np.array([p[0] for p in pd.pieces])
        his = np.array([p[1] for p in pd.pieces])
        extent = float(his.max() - los.min())
        scaled.append(extent * d / delta)
    scaled = np.array(scaled)
    assert scaled.max() / scaled.min() <= 4.0


def test_projected_diameter_flags_vacuous_regime(cap3):
    f, g = _aligned_pair(cap3, 0.25)
    cert = cinematic_infimum(f, g)
    k_est = cert.norm_upper / cert.certified
    pd = projected_intersection_diameter(f, g, 2.0**-5, k_est)
    assert pd.vacuous
    assert pd.d_c2 <= 4.0 * k_est * 2.0**-5
    assert pd.bound_ok


def test_small_piece_dichotomy_and_growth_bound(cap3):
    # on pieces below the certified size, either the value or the directional
    # derivative stays above norm/(2K) on the whole piece
    x0 = np.array([[0.375]])
    w = 0.12 * cap3.point(x0)[0]
    f = CinematicMap(cap3, np.zeros(3))
    g = CinematicMap(cap3, w)
    cert = cinematic_infimum(f, g, per_axis=257)
    k_est = max(cert.norm_upper / cert.certified, cert.norm_c2)
    side_exp = math.ceil(math.log2(4.0 * k_est * k_est))
    side = 2.0**-side_exp
    assert side * math.sqrt(1.0) < 1.0 / (4.0 * k_est * k_est)
    norm = cert.norm_c2
    thresh = norm / (2.0 * k_est)
    xs = np.linspace(0.0, 1.0, 2**side_exp * 4 + 1)[:, None]
    vals = np.linalg.norm(f.value(xs) - g.value(xs), axis=-1)
    grads = np.linalg.norm((f.gradient(xs) - g.gradient(xs))[..., 0], axis=-1)
    piece = np.minimum((xs[:, 0] / side).astype(int), 2**side_exp - 1)
    triggered = 0
    for p in range(2**side_exp):
        m = piece == p
        if vals[m].min() >= thresh:
            continue
        triggered += 1
        # sampled points witness the true sublevel, so no slack is needed
        assert grads[m].min() >= thresh
        xv = xs[m][:, 0]
        hv = vals[m]
        gap = np.abs(xv[:, None] - xv[None, :])
        tot = hv[:, None] + hv[None, :]
        need = norm * gap / (4.0 * k_est)
        assert np.all(tot + 1e-12 >= need)
    assert triggered > 0
