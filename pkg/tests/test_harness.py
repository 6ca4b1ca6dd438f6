import json
import math

import numpy as np
import pytest

from besselpoisson import (
    BesselParam,
    DiscreteMeasure1D,
    DiscreteMeasure2D,
    DyadicInterval,
    ExperimentConfig,
    GridTooCoarseError,
    Interval,
    TwoWeightInstance,
    check_box_comparability,
    decompose_energy,
    default_level_shift,
    gen_instance,
    mp_constant,
    run_equivalence_suite,
    sample_kernel_comparability,
)


def test_mp_constant_values():
    assert mp_constant(1.0) == pytest.approx(33.0 ** 2)
    assert mp_constant(2.0, "triple") == pytest.approx(33.0 ** 3)
    assert mp_constant(2.0, "quintuple") == pytest.approx(19.0 ** 3)
    with pytest.raises(ValueError):
        mp_constant(1.0, "nope")


def test_default_level_shift():
    # smallest m with 2^m > 33^(lam+1) + 1, plus one headroom level
    assert default_level_shift(1.0) == 12
    assert default_level_shift(2.0) == 17
    assert default_level_shift(1.0, "quintuple") == 10


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(delta=0.0)
    with pytest.raises(ValueError):
        ExperimentConfig(lambda_set=())
    with pytest.raises(ValueError):
        ExperimentConfig(m=5)            # 2^5 < 33^(lam+1) for every lam here
    cfg = ExperimentConfig(m=20)
    assert cfg.level_shift(2.0) == 20
    assert ExperimentConfig().level_shift(1.0) == 12
    assert ExperimentConfig().member_test == "triple"
    assert ExperimentConfig(member_test="quintuple").level_shift(1.0) == 10
    with pytest.raises(ValueError):
        ExperimentConfig(member_test="nope")


def test_gen_instance_deterministic():
    cfg = ExperimentConfig()
    a = gen_instance(cfg, 5)
    b = gen_instance(cfg, 5)
    assert np.array_equal(a.sigma.ys, b.sigma.ys)
    assert np.array_equal(a.sigma.ws, b.sigma.ws)
    assert np.array_equal(a.mu.xs, b.mu.xs)
    assert np.array_equal(a.mu.ts, b.mu.ts)
    assert np.array_equal(a.phi, b.phi)
    c = gen_instance(cfg, 6)
    assert not np.array_equal(a.sigma.ys, c.sigma.ys)
    assert a.sigma.n == cfg.n_sigma and a.mu.n == cfg.n_mu
    assert np.all(a.phi >= 0.0)


def test_kernel_comparability_sampler():
    rng = np.random.default_rng(0)
    for lam in (0.5, 1.0, 2.0):
        r1 = sample_kernel_comparability(BesselParam(lam), 1, 300, rng)
        assert r1["ok"] and r1["bound"] == pytest.approx(16.0 ** (lam + 1.0))
        assert 0.0 < r1["max_ratio"] <= r1["bound"]
        r2 = sample_kernel_comparability(BesselParam(lam), 2, 300, rng)
        assert r2["ok"] and r2["bound"] == pytest.approx(19.0 ** (lam + 1.0))
    with pytest.raises(ValueError):
        sample_kernel_comparability(BesselParam(1.0), 3, 10, rng)


def test_box_comparability_bracket_and_skips():
    sigma = DiscreteMeasure1D([(20.0, 2.0), (21.5, 1.0)])
    mu = DiscreteMeasure2D([((1.0, 0.5), 1.0)])
    inst = TwoWeightInstance(BesselParam(1.0), sigma, mu)
    j = DyadicInterval(0, 2)                      # (2, 3)
    rep = check_box_comparability(inst, Interval(1.0, 4.0), Interval(19.0, 22.0), j,
                                  samples=24, rng=np.random.default_rng(1))
    assert rep["ok"] and rep["samples"] == 24
    assert rep["j_inside_3i"]
    assert rep["min_ratio"] >= rep["c_lo"] and rep["max_ratio"] <= rep["c_hi"]
    assert rep["min_ratio"] <= 1.0 <= rep["max_ratio"]

    rep = check_box_comparability(inst, Interval(1.0, 4.0), Interval(30.0, 31.0), j)
    assert rep["ok"] and rep["skipped"] == "no contributing atoms"
    near = TwoWeightInstance(BesselParam(1.0),
                             DiscreteMeasure1D([(2.5, 1.0)]), mu)
    rep = check_box_comparability(near, Interval(1.0, 4.0), Interval(2.0, 3.0), j)
    assert rep["ok"] and rep["skipped"] == "atom too close to J"


def single_atom_setup():
    sigma = DiscreteMeasure1D([(3.0, 2.0)])
    mu = DiscreteMeasure2D([((1.5, 0.75), 4.0)])
    inst = TwoWeightInstance(BesselParam(1.0), sigma, mu)
    return inst, ExperimentConfig()


def test_decompose_single_atom_identities():
    inst, cfg = single_atom_setup()
    rep = decompose_energy(inst, [2.0], cfg)
    assert rep["m"] == 12 and rep["c_mp"] == pytest.approx(33.0 ** 2)
    # one band, one atom: everything is dense, nothing is left out
    assert rep["part_a"] == 0.0
    assert rep["uncovered_band_mass"] == 0.0
    assert rep["ab_total"] == rep["banded_total"]
    assert rep["band_bracket_ok"]
    assert 0.25 * rep["total_energy"] <= rep["unshifted_band_sum"] <= rep["total_energy"]
    assert len(rep["k_set"]) == 1
    assert rep["qualify"] == {"max_count": 1, "bound": 4, "ok": True}
    assert rep["lacey"]["max_count"] == 0 and rep["lacey"]["ok"]
    assert rep["max_principle"]["violations"] == []
    assert rep["nesting_ok"]
    bt = rep["b_terms"]
    assert bt["split_failures"] == 0 and bt["unassigned_mass"] == 0.0
    assert bt["b21"] >= 0.0 and bt["b22"] >= 0.0
    assert bt["phi_norm_sq"] == pytest.approx(4.0 * 4.0)
    for row in rep["whitney"]:
        assert row["disjoint"] and row["members_inside"] and row["defect_ok"]


def test_decompose_zero_phi():
    inst, cfg = single_atom_setup()
    rep = decompose_energy(inst, [0.0], cfg)
    assert rep["total_energy"] == 0.0
    assert rep["k_set"] == [] and rep["whitney"] == []
    assert rep["part_a"] == 0.0 and rep["part_b"] == 0.0
    assert rep["qualify"]["ok"] and rep["lacey"]["ok"]


def test_decompose_input_validation():
    inst, cfg = single_atom_setup()
    with pytest.raises(ValueError):
        decompose_energy(inst, [1.0, 2.0], cfg)
    with pytest.raises(ValueError):
        decompose_energy(inst, [-1.0], cfg)


def test_decompose_generated_instance_checks():
    cfg = ExperimentConfig()
    gen = gen_instance(cfg, 0)
    inst = gen.instance(1.0)
    rep = decompose_energy(inst, gen.phi, cfg)
    assert rep["max_principle"]["violations"] == []
    assert rep["max_principle"]["max_ratio"] < 1.0
    assert rep["nesting_ok"] and rep["band_bracket_ok"]
    assert rep["a_le_delta_total"]
    total_banded = rep["ab_total"] + rep["uncovered_band_mass"]
    assert total_banded == pytest.approx(rep["banded_total"], rel=1e-12)
    assert rep["qualify"]["max_count"] <= 4
    assert rep["lacey"]["max_count"] <= cfg.lacey_bound
    assert rep["b_terms"]["split_failures"] == 0
    assert rep["grid"]["cells"] >= 1
    for row in rep["whitney"]:
        assert row["disjoint"] and row["members_inside"]
        assert row["tail_matches"] and row["defect_ok"] and row["witness_ok"]
        assert row["max_overlap"] <= cfg.whitney_overlap_bound


def test_grid_too_coarse_error():
    sigma = DiscreteMeasure1D([(1.0, 1.0)])
    mu = DiscreteMeasure2D([((1.0, 0.125), 1.0)])
    inst = TwoWeightInstance(BesselParam(1.0), sigma, mu)
    with pytest.raises(GridTooCoarseError):
        decompose_energy(inst, [10.0], ExperimentConfig(grid_level=6))


def small_cfg():
    return ExperimentConfig(instance_count=2, n_sigma=5, n_mu=5,
                            lambda_set=(1.0,), comparability_samples=10)


def test_suite_report_and_formats():
    report = run_equivalence_suite(small_cfg())
    assert report.passed and report.failures == []
    assert len(report.records) == 2
    agg = report.aggregates
    assert agg["n_records"] == 2
    assert agg["max_necessity_excess"] <= 1e-8
    assert agg["weak11_all_ok"] and agg["mp_all_ok"]
    assert agg["max_carleson"] <= 8.0
    assert agg["max_whitney_overlap"] <= 12

    csv_text = report.to_csv()
    lines = csv_text.strip().splitlines()
    assert lines[0] == ("instance,lambda,N,F,B,ratio,max_principle_ok,"
                        "weak11_ok,carleson_C,whitney_overlap")
    assert len(lines) == 3
    doc = json.loads(report.to_json())
    assert doc["passed"] is True
    assert doc["config"]["instance_count"] == 2
    assert len(doc["records"]) == 2


def test_suite_is_deterministic_modulo_timing():
    docs = []
    for _ in range(2):
        doc = json.loads(run_equivalence_suite(small_cfg()).to_json())
        doc.pop("generated_at")
        doc["aggregates"].pop("runtime_s")
        docs.append(doc)
    assert docs[0] == docs[1]
