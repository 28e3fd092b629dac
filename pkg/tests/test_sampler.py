import json

import numpy as np
import pytest
from scipy.stats import norm

from extremepdf import density as dens
from extremepdf.bench import SYNTHETIC, exact_pdf_oracle
from extremepdf.errors import CorruptCheckpoint, InvalidConfig, MapEvaluationFailure
from extremepdf.gp import DUPLICATE_TOL
from extremepdf.inputs import GaussianDiagonal
from extremepdf.optimize import PsoConfig
from extremepdf.sampler import SamplerConfig, load_checkpoint, resume, run, write_records

INPUT = GaussianDiagonal([1.0])
CUBIC = SYNTHETIC["cubic1d"]


def small_cfg(**kw):
    base = dict(nstart=4, ncore=3, max_iterations=8, epsilon=1e-12, resolution=(400,), seed=0,
                pso=PsoConfig(10, 10, seed=0))
    base.update(kw)
    return SamplerConfig(**base)


def strip(records):
    return [r.__dict__ | {"wall_time": 0.0} for r in records]


@pytest.mark.parametrize("kw", [{"nstart": 1}, {"ncore": -1}, {"epsilon": 0.0}, {"alpha": -1.0}, {"bins": 3}])
def test_config_validation(kw):
    with pytest.raises(InvalidConfig):
        small_cfg(**kw)


def test_config_dict_roundtrip_rejects_unknown_keys():
    cfg = small_cfg()
    assert SamplerConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidConfig):
        SamplerConfig.from_dict(cfg.to_dict() | {"bogus": 1})
    with pytest.raises(InvalidConfig):
        SamplerConfig.from_dict(cfg.to_dict() | {"pso": {"seed": 0, "speed": 2}})


def test_schedule():
    cfg = small_cfg(ncore=3, recalibrate_every=4)
    assert [cfg.metric_at(k).value for k in range(5)] == ["l2"] * 3 + ["log_l1"] * 2
    assert [cfg.calibrates_at(k) for k in range(9)] == [True, True, True, False, True, False, False, False, True]


def test_dataset_grows_by_one_without_duplicates():
    res = run(CUBIC, INPUT, small_cfg())
    assert res.status == "max_iterations"
    assert len(res.dataset) == 4 + 8 == len(res.records) + 4
    assert [r.index for r in res.records] == list(range(8))
    assert [r.n_points for r in res.records] == list(range(5, 13))
    x = res.dataset.thetas
    d = np.abs(x - x.T)
    d[np.diag_indices_from(d)] = np.inf
    assert d.min() >= DUPLICATE_TOL
    assert all(r.distance_fpm >= 0 for r in res.records)
    assert np.all(np.abs(x) <= 4)


def test_constant_map_ends_in_point_mass():
    res = run(lambda t: 1.25, INPUT, small_cfg(max_iterations=3))
    assert res.density.bins == 1
    assert res.density.bin_edges[0] < 1.25 < res.density.bin_edges[1]


def test_reproducible_and_thread_independent():
    a = run(CUBIC, INPUT, small_cfg())
    b = run(CUBIC, INPUT, small_cfg(), threads=3)
    assert strip(a.records) == strip(b.records)
    c = run(CUBIC, INPUT, small_cfg(seed=1))
    assert strip(a.records) != strip(c.records)


def test_stops_when_bounds_agree():
    res = run(CUBIC, INPUT, small_cfg(epsilon=1e-2, max_iterations=40, ncore=2))
    assert res.status == "converged" and res.distance_fpm < 1e-2
    assert len(res.records) < 40


def test_cubic_error_drops_fivefold():
    edges = dens.padded_edges(-64, 64, 100)
    # closed form: P(a < theta^3 < b) = Phi(cbrt b) - Phi(cbrt a), truncated to the box
    ref = dens.from_masses(np.diff(norm.cdf(np.cbrt(edges))), edges, INPUT.mass)
    cfg = small_cfg(ncore=5, max_iterations=25, resolution=(4000,), pso=PsoConfig(20, 20, seed=0))
    res = run(CUBIC, INPUT, cfg, reference=ref)
    assert res.error_vs_oracle * 5 <= res.records[0].error_vs_oracle


def test_resume_reproduces_uninterrupted_run(tmp_path):
    cfg = small_cfg(max_iterations=7)
    full = run(CUBIC, INPUT, cfg)

    calls = {"n": 0}

    def failing(theta):
        calls["n"] += 1
        if calls["n"] > cfg.nstart + 4:
            raise RuntimeError("simulated crash")
        return CUBIC(theta)

    ckpt = tmp_path / "ck.json"
    with pytest.raises(MapEvaluationFailure):
        run(failing, INPUT, cfg, checkpoint=ckpt)
    state, _ = load_checkpoint(ckpt)
    assert state.k == 4 and len(state.records) == 4
    resumed = resume(ckpt, CUBIC, INPUT)
    assert strip(resumed.records) == strip(full.records)
    assert np.array_equal(resumed.dataset.thetas, full.dataset.thetas)
    assert np.array_equal(resumed.density.pdf, full.density.pdf)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CorruptCheckpoint):
        resume(tmp_path / "missing.json", CUBIC, INPUT)
    ckpt = tmp_path / "ck.json"
    run(CUBIC, INPUT, small_cfg(max_iterations=1), checkpoint=ckpt)
    doc = json.loads(ckpt.read_text())
    doc["version"] = 99
    ckpt.write_text(json.dumps(doc))
    with pytest.raises(CorruptCheckpoint, match="version"):
        resume(ckpt, CUBIC, INPUT)
    ckpt.write_text("{not json")
    with pytest.raises(CorruptCheckpoint):
        resume(ckpt, CUBIC, INPUT)


def test_map_failure_aborts():
    def bad(theta):
        return np.nan if theta[0] > 0 else 1.0

    with pytest.raises(MapEvaluationFailure):
        run(bad, INPUT, small_cfg(nstart=6))


def test_log_observable():
    pos = lambda t: float(np.exp(0.5 * t[0]))  # noqa: E731
    ref = exact_pdf_oracle(pos, INPUT, 400)
    res = run(pos, INPUT, small_cfg(log_observable=True, max_iterations=6), reference=ref)
    assert res.density.bin_edges[0] > 0
    assert res.error_vs_oracle < res.records[0].error_vs_oracle
    with pytest.raises(MapEvaluationFailure):
        run(lambda t: float(t[0]), INPUT, small_cfg(log_observable=True))


def test_records_csv(tmp_path):
    res = run(CUBIC, INPUT, small_cfg(max_iterations=2))
    write_records(res.records, tmp_path / "r.csv", 1)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "index,n_points,theta_1,q_observed,criterion_value,distance_fpm,error_vs_oracle,metric"
    assert len(lines) == 3 and lines[1].endswith(",,l2")


@pytest.mark.slow
@pytest.mark.parametrize("name, variances", [("cubic1d", [1.0]), ("tanh2d", [1.0, 1.0])])
def test_error_at_50_below_error_at_5(name, variances):
    dist = GaussianDiagonal(variances)
    res_grid = (400,) if len(variances) == 1 else (50, 50)
    ref = exact_pdf_oracle(SYNTHETIC[name], dist, res_grid)
    ratios = []
    for seed in range(5):
        cfg = small_cfg(ncore=5, max_iterations=50, resolution=res_grid, seed=seed, pso=PsoConfig(15, 15, seed=seed))
        res = run(SYNTHETIC[name], dist, cfg, reference=ref)
        errs = [r.error_vs_oracle for r in res.records] + [res.error_vs_oracle]
        ratios.append(errs[min(50, len(errs) - 1)] / errs[5])
    assert np.median(ratios) < 1
