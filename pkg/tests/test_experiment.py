import json

import jsonschema
import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import gaussian_kde

from conftest import tiny_config
from mfpof.experiment import (REPORT_SCHEMA, ExperimentConfig, ExperimentError, aggregate, dumps_report, fit_variant,
                              kde_density, make_dataset, make_design, read_dataset_csv, reference_pof,
                              run_experiment, run_replication, silverman_bandwidth, variant_data,
                              variant_prior, write_dataset_csv)


def test_config_roundtrip_and_validation(tmp_path):
    cfg = ExperimentConfig()
    assert cfg.design_sizes == (168, 56, 28, 14, 7)
    assert cfg.amh.p == 1000 and cfg.pof.m_inputs == 500
    back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    (tmp_path / "c.json").write_text(json.dumps({"variant": "sl-map", "replications": 3}))
    loaded = ExperimentConfig.load(tmp_path / "c.json")
    assert loaded.variant == "sl-map" and not loaded.multi_fidelity and not loaded.fully_bayesian
    for bad in ({"variant": "mf-xx"}, {"t_ref": 0.02}, {"levels": [0.5, 1.0, 0.1, 0.05, 0.01]},
                {"design_sizes": [10, 5]}, {"unknown": 1}, {"amh": {"q": 1}}, {"interval_levels": [0.9]}):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict(bad)


def test_dataset_layout(tiny):
    data = make_dataset(tiny, 0)
    assert data.n == 21 and data.counts() == (12, 6, 3)
    assert np.all(data.x[:, 0] <= 30) and np.all(data.x[:, 1] <= 1)
    sl = variant_data(tiny.replace(variant="sl-fb"), data)
    assert sl.n == 3 and sl.levels == (0.1,)
    # same replication, same data
    np.testing.assert_array_equal(make_dataset(tiny, 0).z, data.z)
    assert not np.array_equal(make_design(tiny, 1).points, make_design(tiny, 0).points)


def test_dataset_csv_roundtrip(tiny, tmp_path):
    data = make_dataset(tiny, 0)
    write_dataset_csv(tmp_path / "d.csv", data)
    back = read_dataset_csv(tmp_path / "d.csv", tiny.levels, tiny.bounds)
    np.testing.assert_array_equal(back.z, data.z)
    np.testing.assert_array_equal(back.x, data.x)


def test_variant_priors(tiny):
    assert variant_prior(tiny).D == 2 * 2 + 3 + 3
    assert variant_prior(tiny.replace(variant="sl-map")).D == 4


def test_map_variant_repeats_point(tiny):
    cfg = tiny.replace(variant="mf-map")
    thetas, info = fit_variant(cfg, make_dataset(cfg, 0), 0)
    assert len(thetas) == cfg.amh.p
    assert all(t is thetas[0] for t in thetas)


def test_replication_record(tiny, tmp_path):
    rec = run_replication(tiny, 0, tmp_path)
    assert rec["n_observations"] == 21
    assert rec["lower"][-1] <= rec["median"] <= rec["upper"][-1]
    assert (tmp_path / rec["theta_file"]).exists()
    assert 0 <= rec["acceptance_rate"] <= 1


@pytest.mark.parametrize("variant", ["sl-fb", "sl-map"])
def test_single_level_variants_run(variant):
    cfg = tiny_config(variant=variant, design_sizes=(16, 8, 4))
    rec = run_replication(cfg, 0)
    assert rec["n_observations"] == 4


def test_experiment_report(tiny, tmp_path):
    rep = run_experiment(tiny, tmp_path)
    assert rep["schema"] == "mfpof.experiment.v1"
    assert len(rep["replications"]) == 2 and rep["failures"] == []
    agg = rep["aggregate"]
    assert 0 <= agg["success_95"] <= 2
    assert agg["coverage"]["levels"] == [0.5, 0.9, 0.95]
    assert sum(agg["median_histogram"]["counts"]) == 2
    json.loads(dumps_report(rep))


def test_too_many_failures_abort(tiny, monkeypatch):
    import mfpof.experiment as ex

    def boom(*a, **k):
        raise RuntimeError("simulated failure")
    monkeypatch.setattr(ex, "run_replication", boom)
    with pytest.raises(ExperimentError):
        run_experiment(tiny)


def test_aggregate_with_known_records(tiny):
    recs = [{"replication": i, "median": m, "levels": [0.5, 0.9, 0.95], "lower": [lo] * 3,
             "upper": [hi] * 3} for i, (m, lo, hi) in enumerate([(0.05, 0.04, 0.06), (0.2, 0.1, 0.3),
                                                                 (0.06, 0.01, 0.09)])]
    agg = aggregate(tiny, recs, {"value": 0.05})
    assert agg["success_95"] == 2
    assert agg["coverage"]["coverage"] == pytest.approx([2 / 3] * 3)
    assert agg["length_density_95"]["missing"] is None


def test_reference_pof_small():
    cfg = ExperimentConfig(levels=(1.0, 0.5), design_sizes=(4, 2), t_ref=0.5)
    p, se = reference_pof(cfg, 2000, seed=1)
    assert 0 <= p <= 1 and se == pytest.approx(np.sqrt(p * (1 - p) / 2000))
    assert reference_pof(cfg, 2000, seed=1) == (p, se)
    with pytest.raises(ValueError):
        reference_pof(cfg, 10)


def test_kde_matches_scipy_with_same_bandwidth():
    x = np.random.default_rng(0).normal(size=5000)
    grid = np.linspace(-6, 6, 1201)
    dens = kde_density(x, grid)
    assert trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)
    ref = gaussian_kde(x, bw_method=silverman_bandwidth(x) / np.std(x, ddof=1))(grid)
    np.testing.assert_allclose(dens, ref, rtol=1e-9, atol=1e-15)
    with pytest.raises(ValueError):
        kde_density([1.0, 1.0], grid)


def test_silverman_bandwidth_formula():
    x = np.array([0.0, 1.0, 2.0, 3.0, 10.0])
    sd = np.std(x, ddof=1)
    iqr = 3.0 - 1.0
    assert silverman_bandwidth(x) == pytest.approx(1.06 * min(sd, iqr / 1.34) * 5 ** -0.2)


def test_smoke_report_is_schema_valid_and_round_trips():
    cfg = tiny_config(replications=1, design_sizes=(8, 4, 2), amh={"p": 10, "burn_in": 40, "thin": 2,
                                                                    "adaptation_start": 20},
                      pof={"m_inputs": 50, "q_paths": 5})
    text = dumps_report(run_experiment(cfg))
    obj = json.loads(text)
    jsonschema.validate(obj, REPORT_SCHEMA)
    assert dumps_report(obj) == text
    assert dumps_report(run_experiment(cfg)) == text


def test_default_single_level_dataset_is_reference_level_only():
    cfg = ExperimentConfig()
    mf = make_dataset(cfg, 0)
    assert mf.n == 273
    sl = variant_data(cfg.replace(variant="sl-fb"), mf)
    assert sl.n == 7 and sl.levels == (cfg.t_ref,)


def test_kde_of_standard_normals_peaks_at_normal_density():
    x = np.random.default_rng(0).standard_normal(100_000)
    assert kde_density(x, [0.0])[0] == pytest.approx(1 / np.sqrt(2 * np.pi), abs=0.01)


def test_kde_of_symmetric_samples_is_symmetric():
    x = np.random.default_rng(1).standard_normal(500)
    x = np.concatenate([x, -x])
    g = np.linspace(-3, 3, 61)
    np.testing.assert_allclose(kde_density(x, g), kde_density(x, -g), rtol=1e-12)


def test_kde_of_two_points():
    x = np.array([-1.0, 1.0])
    h = silverman_bandwidth(x)
    # sd = sqrt(2), IQR = 1 so the IQR branch wins
    assert h == pytest.approx(1.06 * min(np.sqrt(2), 1 / 1.34) * 2 ** -0.2)
    expected = np.exp(-0.5 / h ** 2) / (h * np.sqrt(2 * np.pi))
    assert kde_density(x, [0.0])[0] == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        kde_density([1.0, 1.0], [0.0])
