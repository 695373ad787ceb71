import json
import warnings

import numpy as np
import pytest

from projlab.experiments import (
    Configuration,
    ConfigurationError,
    ExperimentReport,
    _refuse_low_r2,
    build_configuration,
    make_collapsing_fractal,
    run_cinematic_check,
    run_cone_membership_check,
    run_configuration_lower_bound,
    run_exceptional_set_survey,
    run_incidence_count,
    run_manifold_info,
    run_pair_volume_sweep,
    run_projection_dimension_sweep,
)
from projlab.manifold import make_cap_chart
from projlab.sets import build_cantor_dust, product_fractal


@pytest.fixture(scope="module")
def cap3():
    return make_cap_chart(3, 0.6)


@pytest.fixture(scope="module")
def dust7():
    return build_cantor_dust(3, 4, 2.0**-2.5, 7, placement="planar")


@pytest.fixture(scope="module")
def collapsing(cap3):
    fractal, y = make_collapsing_fractal(
        cap3, [0.5], [("cantor", 2, 0.25, 6), ("point",), ("uniform", 8192)]
    )
    return fractal, y


def test_report_json_is_deterministic(cap3):
    a = run_manifold_info(cap3, seed=0, samples=400)
    b = run_manifold_info(cap3, seed=0, samples=400)
    assert a.to_json() == b.to_json()
    assert a.verdict == "pass"
    # wall clock varies between runs and must stay out of the canonical form
    assert a.wall_clock_seconds is not None
    assert "wall_clock_seconds" not in a.to_dict()
    parsed = json.loads(a.to_json())
    assert parsed["experiment"] == "manifold-info"
    assert parsed["status"] == "complete"


def test_report_write_names_and_sidecar(tmp_path, cap3):
    rep = run_manifold_info(cap3, seed=1, samples=200)
    paths = rep.write(tmp_path, timestamp="20260101T000000Z")
    assert paths["report"].endswith("report_manifold-info_20260101T000000Z.json")
    assert paths["csv"].endswith("raw_manifold-info.csv")
    assert paths["meta"].endswith("report_manifold-info_20260101T000000Z.meta.json")
    text = (tmp_path / "raw_manifold-info.csv").read_text()
    assert text.splitlines()[0] == "delta,quantity,value,stderr,samples"
    assert len(text.splitlines()) == 1 + len(rep.measurements)
    meta = json.loads((tmp_path / "report_manifold-info_20260101T000000Z.meta.json").read_text())
    assert meta["timestamp"] == "20260101T000000Z"
    assert meta["wall_clock_seconds"] > 0.0
    on_disk = (tmp_path / "report_manifold-info_20260101T000000Z.json").read_text()
    assert on_disk == rep.to_json()


def test_low_r2_refusal_branches():
    rep = ExperimentReport("t", {}, 0)
    assert _refuse_low_r2(rep, False, 0.99) == "fail"
    assert _refuse_low_r2(rep, True, 0.5) == "insufficient"
    assert any("below 0.9" in n for n in rep.notes)
    assert _refuse_low_r2(rep, True, 0.95) == "pass"


def test_manifold_info_checks(cap3):
    rep = run_manifold_info(cap3, seed=0, samples=500)
    assert rep.verdict == "pass"
    assert rep.checks["kappa_product_ok"]
    assert rep.checks["tangent_duality_ok"]
    assert rep.checks["dual_height_ok"]
    names = {m["quantity"] for m in rep.measurements}
    assert "kappa_product_error" in names
    assert any(q.startswith("constant_") for q in names)


def test_cinematic_check_small(cap3):
    rep = run_cinematic_check(cap3, 5, pairs=200, radius=0.5, grid=33)
    assert rep.verdict == "pass"
    assert rep.checks["all_certified"]
    assert rep.checks["hi_lo_ratio"] < 50.0
    assert rep.checks["K_drift"] <= 0.2
    assert 1.0 < rep.fits["K_est"] < 100.0
    tags = {m["quantity"] for m in rep.measurements}
    assert "K_est_base" in tags and "K_est_doubled" in tags


def test_pair_volume_all_pairs_below_separation(cap3):
    rep = run_pair_volume_sweep(
        cap3, 3, u_ladder=(0.0005,), pairs_per_u=2, deltas=(2.0**-5,), samples=1000
    )
    assert rep.verdict == "insufficient"
    assert rep.fits["d_exponent"] is None
    assert rep.fits["delta_exponent"] is None
    skip_notes = [n for n in rep.notes if "skipped" in n]
    assert len(skip_notes) == 2


def test_pair_volume_single_delta_has_no_delta_fit(cap3):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = run_pair_volume_sweep(
            cap3, 3, u_ladder=(0.5,), pairs_per_u=4, deltas=(2.0**-8,), samples=250_000
        )
    assert rep.fits["delta_exponent"] is None
    assert rep.fits["d_exponent"] is not None
    # identical u means the distance regressor has almost no spread, so the
    # marginal fit cannot certify anything
    assert rep.verdict != "pass"


def test_configuration_build_and_validate(cap3):
    cfg = build_configuration(cap3, 2.0**-8, 0.5, 0.5, 1.0)
    assert cfg.validate() == []
    assert cfg.M >= 2.0 ** (8 * 0.5) / 4.0
    assert cfg.centers.shape[1] == 3
    assert np.linalg.norm(cfg.centers, axis=1).max() <= 0.5
    union = cfg.union_points()
    assert union.shape == (cfg.centers.shape[0] * cfg.base_points.shape[0], 3)


def test_configuration_rejects_tampered_centers(cap3):
    cfg = build_configuration(cap3, 2.0**-8, 0.5, 0.5, 1.0)
    bad = Configuration(cap3, 2.0**-8, 0.5, 0.5, 1.0, cfg.centers * 2.2, cfg.base_points)
    problems = bad.validate()
    assert any("leave" in p for p in problems)


def test_configuration_starved_budget_raises(cap3):
    with pytest.raises(ConfigurationError):
        build_configuration(cap3, 2.0**-8, 0.5, 0.5, C=0.25)


def test_configuration_bound_degenerate_base(cap3):
    rep = run_configuration_lower_bound(cap3, 17, 0.5, 0.0)
    assert rep.verdict == "pass"
    assert rep.fits["r2"] >= 0.9
    # with a single-point base the union covering tracks the center family
    assert abs(rep.fits["exponent"] - 0.5) <= 0.15
    assert rep.fits["exponent"] >= rep.fits["target"]


def test_projection_sweep_planar_dust(cap3, dust7):
    rep = run_projection_dimension_sweep(
        cap3, dust7, 31, x_samples=12, k_window=(4, 10), band=(0.7, 0.9)
    )
    assert rep.status == "complete"
    assert rep.verdict == "pass"
    assert rep.fits["in_band_fraction"] == 1.0
    assert 0.7 < rep.fits["dim_min"] <= rep.fits["dim_max"] < 0.9
    assert len(rep.measurements) == 12


def test_projection_sweep_aborts_on_shallow_fractal(cap3):
    shallow = build_cantor_dust(3, 4, 2.0**-2.5, 2, placement="planar")
    rep = run_projection_dimension_sweep(cap3, shallow, 31, x_samples=4, k_window=(4, 10))
    assert rep.status == "aborted"
    assert rep.verdict == "fail"
    assert "under-resolves" in rep.error
    assert rep.measurements == []


def test_exceptional_survey_no_marked_cells(cap3, dust7):
    rep = run_exceptional_set_survey(
        cap3, dust7, 33, s_grid=(0.3, 0.5), x_resolution_exp=5, k_window=(4, 10)
    )
    assert rep.verdict == "pass"
    assert rep.fits["profile_slope_s0.3"] == 0.0
    assert rep.fits["profile_slope_s0.5"] == 0.0
    assert rep.fits["weaker_bound_s0.5"] == pytest.approx(0.5 + 1.0 - 0.8)


def test_incidence_aborts_when_projection_too_big(cap3):
    flat = product_fractal([("uniform", 128), ("uniform", 128), ("point",)])
    rep = run_incidence_count(cap3, flat, 35, [0.5], k_window=(3, 6))
    assert rep.status == "aborted"
    assert rep.verdict == "fail"
    assert rep.fits["projected_dim"] > 1.1
    assert "hypothesis" in rep.error


def test_membership_no_violations_on_collapsing_set(cap3, collapsing):
    fractal, _ = collapsing
    rep = run_cone_membership_check(cap3, fractal, 37, delta=2.0**-7, pairs=300)
    assert rep.verdict == "pass"
    assert rep.checks["pairs_found"] == 300
    assert rep.checks["violations"] == 0
    assert rep.checks["constructed_pair_distance"] <= 1e-10


def test_membership_insufficient_when_no_pairs_qualify(cap3):
    sparse = build_cantor_dust(3, 4, 2.0**-2.5, 2, placement="planar")
    rep = run_cone_membership_check(cap3, sparse, 41, delta=2.0**-9, pairs=50)
    assert rep.verdict == "insufficient"
    assert rep.checks["pairs_found"] == 0
    assert any("no near-intersecting pairs" in n for n in rep.notes)


def test_incidence_count_on_collapsing_set(cap3, collapsing):
    fractal, _ = collapsing
    rep = run_incidence_count(cap3, fractal, 39, [0.5], z_samples=16)
    assert rep.status == "complete"
    assert rep.verdict == "pass"
    assert 0.40 < rep.fits["projected_dim"] < 0.50
    assert rep.fits["ring_exponent"] <= rep.fits["target"]
    assert rep.fits["r2"] >= 0.9
    # the tangency excision is doing real work: without the angle gate the
    # cumulative counts grow faster
    assert rep.fits["ring_exponent_unfiltered"] > rep.fits["ring_exponent"]
