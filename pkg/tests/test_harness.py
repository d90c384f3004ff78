"""Experiment harness: config parsing, aggregation, persistence, replay."""

import json
import pathlib

import numpy as np
import pytest

from pushsim.cli import main as cli_main
from pushsim.errors import ConfigurationError
from pushsim.harness import (ExperimentConfig, aggregate_series,
                             batch_window_means, build_problem,
                             centralized_baseline, ratio_study, read_raw,
                             replay, run_experiment)

BASE = {
    "name": "tiny",
    "topology": {"kind": "cycle", "n": 3, "bidirectional": True},
    "faults": {"max_wake_gap": 2, "max_consecutive_losses": 1,
               "max_transmission_delay": 2, "wake_prob": 0.6,
               "loss_prob": 0.2},
    "objective": {"kind": "quadratic", "dim": 2},
    "noise_width": 4.0,
    "horizon": 400,
    "runs": 4,
    "batch_size": 2,
    "master_seed": 77,
    "step_offset": 5,
}


def config(**overrides):
    raw = json.loads(json.dumps(BASE))
    raw.update(overrides)
    return ExperimentConfig.from_mapping(raw)


# ------------------------------------------------------------- configs

def test_config_round_trip(tmp_path):
    cfg = config()
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.as_dict()))
    again = ExperimentConfig.from_file(path)
    assert again.as_dict() == cfg.as_dict()
    assert again.faults.loss_prob == 0.2
    assert again.topology.n == 3


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigurationError, match="unknown"):
        config(extra_knob=1)
    bad = json.loads(json.dumps(BASE))
    bad["topology"]["flavor"] = "x"
    with pytest.raises(ConfigurationError, match="unknown"):
        ExperimentConfig.from_mapping(bad)


def test_config_rejects_missing_and_mistyped_fields():
    bad = json.loads(json.dumps(BASE))
    del bad["horizon"]
    with pytest.raises(ConfigurationError, match="horizon"):
        ExperimentConfig.from_mapping(bad)
    with pytest.raises(ConfigurationError):
        config(horizon="long")
    with pytest.raises(ConfigurationError):
        config(horizon=True)              # bools are not slot counts
    with pytest.raises(ConfigurationError):
        config(noise_width=0.0)
    with pytest.raises(ConfigurationError):
        config(runs=0)


def test_config_cross_kind_topology_keys_rejected():
    bad = json.loads(json.dumps(BASE))
    bad["topology"] = {"kind": "cycle", "n": 3, "edge_prob": 0.5}
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_mapping(bad)
    ok = json.loads(json.dumps(BASE))
    ok["topology"] = {"kind": "random", "n": 4, "edge_prob": 0.5}
    cfg = ExperimentConfig.from_mapping(ok)
    problem = build_problem(cfg)
    assert problem.topology.n == 4


def test_ratio_checkpoints_validated(tmp_path):
    with pytest.raises(ConfigurationError):
        config(ratio={"sizes": [5], "checkpoints": [50]})
    # a checkpoint past the horizon only surfaces when the study runs
    cfg = config(ratio={"sizes": [3], "checkpoints": [500]}, horizon=400)
    with pytest.raises(ConfigurationError, match="beyond"):
        ratio_study(cfg, cfg.ratio.sizes, cfg.ratio.checkpoints,
                    outdir=tmp_path / "r")
    cfg = config(ratio={"sizes": [3, 5], "checkpoints": [200, 400]})
    assert cfg.ratio.sizes == (3, 5)


# -------------------------------------------------------- aggregation

def test_window_means_of_constant_series_are_exact():
    raw = np.full((6, 701), 3.25)
    k, w = batch_window_means(raw, 3)
    assert np.array_equal(k, np.arange(100, 701, 100))
    assert w.shape == (2, 7)
    assert np.all(w == 3.25)


def test_window_means_average_within_batch_and_window():
    # two batches at constant levels s and 3s: medians land between,
    # per-batch rows keep their level
    raw = np.vstack([np.full((2, 201), 1.0), np.full((2, 201), 3.0)])
    k, w = batch_window_means(raw, 2)
    assert np.allclose(w[0], 1.0) and np.allclose(w[1], 3.0)
    med, std = aggregate_series(raw, 2)[1:]
    assert np.allclose(med, 2.0)
    assert np.allclose(std, np.std([1.0, 3.0], ddof=1))


def test_window_grid_drops_partial_tail():
    raw = np.ones((2, 251))                 # slots 0..250: two full windows
    k, w = batch_window_means(raw, 2)
    assert k.tolist() == [100, 200]
    assert w.shape == (1, 2)


def test_window_mean_uses_slots_from_one(tmp_path):
    # E(k) = 1/k for k >= 1: windowed k*E must sit near 1, proving the
    # multiply-then-window order and the [1, 100] first window
    slots = np.arange(1, 401)
    raw = (1.0 / slots)[None, :]
    raw = np.concatenate([[[np.nan]], raw], axis=1)   # slot 0 is unused
    ke = slots[None, :] * raw[:, 1:]
    k, w = batch_window_means(np.concatenate([[[0.0]], ke], axis=1), 1)
    assert np.allclose(w, 1.0)


def test_reduce_metrics_multiplies_before_windowing():
    from pushsim.harness import reduce_metrics
    slots = np.arange(0, 301, dtype=float)
    e = np.zeros((2, 301))
    e[:, 1:] = 1.0 / slots[1:]
    series = reduce_metrics(e, e.copy(), batch_size=1)
    assert np.allclose(series.k_e_dist, 1.0, atol=1e-12)
    # windowing E first and multiplying after would overshoot: the first
    # window mean of 1/k is ~0.052 and 100 * 0.052 != 1
    assert abs(series.e_dist[0] * series.k[0] - 1.0) > 3.0


# ------------------------------------------------- experiment pipeline

@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("exp") / "tiny"
    cfg = ExperimentConfig.from_mapping(BASE)
    result = run_experiment(cfg, outdir)
    return cfg, outdir, result


def test_experiment_outputs_and_manifest(tiny_run):
    cfg, outdir, result = tiny_run
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["config"] == cfg.as_dict()
    assert len(manifest["raw_files"]) == cfg.runs
    for rel in manifest["raw_files"]:
        assert (outdir / rel).exists()
    header = (outdir / manifest["raw_files"][0]).read_text().splitlines()[0]
    assert header == "k,E_dist,E_c"
    errors = (outdir / "errors.csv").read_text().splitlines()
    assert errors[0] == "k,E_dist,E_c,E_dist_std,E_c_std"
    assert len(errors) == 1 + cfg.horizon // 100
    assert (outdir / "k_errors.csv").exists()


def test_experiment_series_matches_raw_files(tiny_run):
    cfg, outdir, result = tiny_run
    manifest = json.loads((outdir / "manifest.json").read_text())
    raws = np.stack([read_raw(outdir / rel)[0]
                     for rel in manifest["raw_files"]])
    k, med, _ = aggregate_series(raws, cfg.batch_size)
    assert np.array_equal(result.series.k, k)
    assert np.allclose(result.series.e_dist, med, rtol=1e-12)


def test_replay_reproduces_and_detects_tampering(tiny_run, tmp_path):
    cfg, outdir, result = tiny_run
    assert replay(outdir, target=tmp_path / "replayed") is True
    victim = outdir / "run_0001.csv"
    text = victim.read_text()
    victim.write_text(text.replace(text.splitlines()[5],
                                   text.splitlines()[5] + "1"))
    assert replay(outdir, target=tmp_path / "replayed2") is False
    victim.write_text(text)
    assert replay(outdir) is True


def test_baseline_updates_on_gap_and_is_deterministic(tiny_run):
    cfg = config(horizon=60)
    problem = build_problem(cfg)
    a = centralized_baseline(problem, 60, cfg.master_seed, range(2),
                             update_gap=5, step_offset=cfg.step_offset)
    b = centralized_baseline(problem, 60, cfg.master_seed, range(2),
                             update_gap=5, step_offset=cfg.step_offset)
    assert np.array_equal(a, b)
    assert a.shape == (2, 61)
    # piecewise constant between updates at multiples of the gap
    for r in range(2):
        for k in range(61):
            base = (k // 5) * 5
            assert a[r, k] == a[r, base]
    assert not np.array_equal(a[:, ::5][:, 1:], a[:, ::5][:, :-1])


def test_single_node_ratio_is_unity_scale(tmp_path):
    cfg = config(topology={"kind": "cycle", "n": 1}, horizon=4000,
                 runs=40, batch_size=10, master_seed=15,
                 faults={"max_wake_gap": 1, "max_consecutive_losses": 0,
                         "max_transmission_delay": 1})
    rows = ratio_study(cfg, sizes=[1], checkpoints=[4000],
                       outdir=tmp_path / "ratio")
    assert len(rows) == 1
    assert rows[0].n == 1 and rows[0].k == 4000
    # same recursion up to noise realization: the ratio hugs one
    assert 0.4 < rows[0].ratio < 2.5
    text = (tmp_path / "ratio" / "ratio.csv").read_text().splitlines()
    assert text[0] == "n,k,ratio,ratio_std"
    assert len(text) == 2


# ------------------------------------------------------------- cli

def test_cli_exit_codes(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(dict(BASE, horizon=120, runs=2,
                                        batch_size=1)))
    out = tmp_path / "out"
    assert cli_main(["rasgp", "--config", str(cfg_path),
                     "--out", str(out)]) == 0
    assert (out / "errors.csv").exists()
    missing = cli_main(["rasgp", "--config", str(tmp_path / "nope.json"),
                        "--out", str(out)])
    assert missing == 2
    bad = json.loads(json.dumps(BASE))
    bad["noise_width"] = -1
    bad_path = tmp_path / "bad.json"
    bad_path.write_text(json.dumps(bad))
    assert cli_main(["rasgp", "--config", str(bad_path)]) == 2


def test_cli_replay_subcommand(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(dict(BASE, horizon=120, runs=2,
                                        batch_size=1)))
    out = tmp_path / "out"
    assert cli_main(["rasgp", "--config", str(cfg_path),
                     "--out", str(out)]) == 0
    assert cli_main(["replay", "--out", str(out)]) == 0
    victim = out / "run_0000.csv"
    victim.write_text(victim.read_text().replace(",", ",0", 1))
    assert cli_main(["replay", "--out", str(out)]) == 1


def test_bundled_configs_parse_and_build():
    configs = pathlib.Path(__file__).resolve().parent.parent / "configs"
    found = sorted(configs.glob("*.json"))
    assert len(found) == 5
    for path in found:
        cfg = ExperimentConfig.from_file(path)
        assert cfg.name == path.stem
        # every bundled config must at least build its problem instance
        if cfg.objective.kind == "quadratic":
            problem = build_problem(cfg)
            assert problem.z_star.shape == (cfg.objective.dim,)
