import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from marketstates import cli, pipeline
from marketstates.config import from_mapping, load_config
from marketstates.errors import ConfigError, DataError
from marketstates.ingest import write_wide_csv
from marketstates.pipeline import STAGES, StageError, run
from marketstates.synthetic import alternating, best_label_agreement, equicorrelation, regime_price_panel

SYNTHETIC = Path(__file__).resolve().parents[1] / "data" / "synthetic"


def _checksums(out: Path) -> dict[str, str]:
    return {p.relative_to(out).as_posix(): pipeline._sha256(p) for p in sorted(out.rglob("*"))
            if p.is_file() and p.name not in ("manifest.json", pipeline.STAMP)}


@pytest.fixture
def small(tmp_path):
    """A 6-asset, 300-day panel and a cheap config writing under tmp_path/out."""
    days = alternating(300, 2, 40)
    panel = regime_price_panel(days, [equicorrelation(6, 0.1), equicorrelation(6, 0.7)], seed=3)
    write_wide_csv(panel, tmp_path / "prices.csv")
    text = """
[input]
prices = "prices.csv"
[epochs]
length = 20
shift = 20
[scan]
epsilons = [0.0, 0.5]
k_min = 2
k_max = 3
restarts = 20
[mds]
restarts = 2
[run]
seed = 5
output = "out"
"""
    (tmp_path / "config.toml").write_text(text)
    return load_config(tmp_path / "config.toml")


@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic") / "out"
    cfg = load_config(SYNTHETIC / "config.toml").with_overrides(output=str(out))
    manifest = run(cfg)
    return cfg, out, manifest


def test_load_config_resolves_paths(small, tmp_path):
    assert small.prices == str(tmp_path / "prices.csv")
    assert small.output == str(tmp_path / "out")
    assert small.epsilons == (0.0, 0.5) and small.k_range == [2, 3]
    assert small.seed == 5 and small.mds_restarts == 2 and small.restarts == 20


def test_config_defaults():
    cfg = from_mapping({"input": {"prices": "p.csv"}, "run": {"seed": 1}})
    assert (cfg.epoch_length, cfg.shift, cfg.k_min, cfg.k_max) == (20, 10, 4, 10)
    assert cfg.epsilons == tuple(round(0.1 * i, 1) for i in range(10))
    assert (cfg.restarts, cfg.mds_restarts, cfg.ensemble_factor, cfg.return_kind) == (1000, 8, 3, "log")


@pytest.mark.parametrize(
    "data",
    [
        {"input": {"prices": "p.csv"}},
        {"run": {"seed": 1}},
        {"input": {"prices": "p.csv"}, "run": {"seed": 1}, "scan": {"epsilons": []}},
        {"input": {"prices": "p.csv"}, "run": {"seed": 1}, "scan": {"epsilons": [0.0, 1.0]}},
        {"input": {"prices": "p.csv"}, "run": {"seed": 1}, "scan": {"k_min": 5, "k_max": 4}},
        {"input": {"prices": "p.csv"}, "run": {"seed": 1}, "scan": {"bogus": 1}},
        {"input": {"prices": "p.csv"}, "run": {"seed": "x"}},
        {"input": {"prices": "p.csv", "return_kind": "pct"}, "run": {"seed": 1}},
        {"input": {"prices": "p.csv"}, "run": {"seed": 1}, "epochs": {"length": 20, "shift": 30}},
    ],
)
def test_config_rejects(data):
    with pytest.raises(ConfigError):
        from_mapping(data)


def test_config_hash_ignores_output_and_jobs(small):
    assert small.hash() == small.with_overrides(output="elsewhere", jobs=4).hash()
    assert small.hash() != small.with_overrides(seed=6).hash()


def test_bad_toml(tmp_path):
    (tmp_path / "c.toml").write_text("[run\nseed=1")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.toml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_cli_empty_grid_exits_before_compute(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["all", "--prices", str(tmp_path / "p.csv"), "--seed", "1", "--epsilons", "", "-o", str(out)])
    assert code == 2
    assert not out.exists()
    assert "epsilon grid is empty" in capsys.readouterr().err


def test_cli_missing_seed(tmp_path):
    assert cli.main(["all", "--prices", str(tmp_path / "p.csv")]) == 2


def test_cli_data_error(tmp_path):
    (tmp_path / "p.csv").write_text("date,A,B\n2020-01-01,1,-2\n")
    out = tmp_path / "out"
    assert cli.main(["ingest", "--prices", str(tmp_path / "p.csv"), "--seed", "1", "-o", str(out)]) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["failed_stage"] == "ingest"


def test_cli_numeric_error(small, monkeypatch):
    def boom(cfg, out):
        np.linalg.cholesky(-np.eye(2))

    monkeypatch.setitem(pipeline.STAGE_FUNCS, "ingest", boom)
    assert cli.main(["ingest", "-c", str(Path(small.prices).parent / "config.toml")]) == 4


def test_floating_point_errors_are_numeric(small, monkeypatch):
    def divide(cfg, out):
        np.array([1.0]) / np.array([0.0])

    monkeypatch.setitem(pipeline.STAGE_FUNCS, "ingest", divide)
    with pytest.raises(StageError) as info:
        run(small, ["ingest"])
    assert info.value.exit_code == 4


def test_missing_upstream_is_data_error(small):
    with pytest.raises(StageError) as info:
        run(small, ["scan"])
    assert info.value.exit_code == 3 and info.value.stage == "scan"
    assert isinstance(info.value.cause, DataError)


def test_small_run_layout_and_plot_data(small):
    manifest = run(small)
    out = Path(small.output)
    assert manifest.status == "ok" and manifest.skipped == []
    assert set(manifest.timings) == set(STAGES)
    files = {f["path"] for f in manifest.files}
    for name in ("ingest/returns.csv", "correlate/frames.json", "scan/selection.json", "cluster/state_model.json",
                 "dynamics/transition_probs.csv", "surrogate/report.json", "plot/transition_edges.csv"):
        assert name in files
    n_frames = json.loads((out / "correlate" / "info.json").read_text())["n_frames"]
    assert n_frames == 15
    plot = out / "plot"
    assert len(pd.read_csv(plot / "mu.csv")) == n_frames
    assert len(pd.read_csv(plot / "state_timeline.csv")) == n_frames
    assert len(pd.read_csv(plot / "embedding.csv")) == n_frames
    assert len(pd.read_csv(plot / "index_returns.csv")) == 300
    assert len(pd.read_csv(plot / "scan.csv")) == len(small.k_range) * len(small.epsilons)
    counts = pd.read_csv(out / "dynamics" / "transition_counts.csv", index_col=0).to_numpy()
    edges = pd.read_csv(plot / "transition_edges.csv")
    assert len(edges) == np.count_nonzero(counts)
    assert edges["count"].sum() == n_frames - 1


def test_rerun_is_cached_and_deterministic(small, tmp_path):
    run(small)
    out = Path(small.output)
    first = _checksums(out)
    again = run(small)
    assert again.skipped == list(STAGES)
    assert _checksums(out) == first
    other = small.with_overrides(output=str(tmp_path / "second"), jobs=3)
    run(other)
    assert _checksums(Path(other.output)) == first


def test_stale_stamp_reruns(small):
    run(small)
    out = Path(small.output)
    (out / "scan" / "scan.csv").write_text("tampered\n")
    manifest = run(small)
    assert "scan" not in manifest.skipped and "ingest" in manifest.skipped
    assert (out / "scan" / "scan.csv").read_text().startswith("k,epsilon")
    changed = run(small.with_overrides(restarts=21))
    assert changed.skipped == []


def test_single_stage_reproduces(small):
    run(small)
    out = Path(small.output)
    before = _checksums(out)
    for stage in ("dynamics", "surrogate", "cluster"):
        assert cli.main([stage, "-c", str(Path(small.prices).parent / "config.toml")]) == 0
    assert _checksums(out) == before


@pytest.mark.slow
def test_synthetic_recovers_planted_states(synthetic_run):
    cfg, out, manifest = synthetic_run
    assert manifest.status == "ok"
    sel = json.loads((out / "scan" / "selection.json").read_text())
    assert sel["k_star"] == 2
    truth = pd.read_csv(SYNTHETIC / "truth.csv")
    timeline = pd.read_csv(out / "cluster" / "state_timeline.csv")
    assert timeline["tau"].tolist() == truth["tau"].tolist()
    assert best_label_agreement(truth["regime"], timeline["state"]) >= 0.9
    model = json.loads((out / "cluster" / "state_model.json").read_text())
    assert model["mu"][0] == pytest.approx(0.2, abs=0.05)
    assert model["mu"][1] == pytest.approx(0.6, abs=0.05)
    # 20 blocks of three frames: 19 planted switches among 59 transitions
    counts = pd.read_csv(out / "dynamics" / "transition_counts.csv", index_col=0).to_numpy()
    assert counts.sum() == 59
    assert abs(counts[0, 1] + counts[1, 0] - 19) <= 4


@pytest.mark.slow
def test_synthetic_surrogate_report(synthetic_run):
    _, out, _ = synthetic_run
    report = json.loads((out / "surrogate" / "report.json").read_text())
    assert report["ensemble_factor"] == 3
    for s in report["states"]:
        assert s["n_surrogate"] == 3 * s["n_empirical"]
        assert s["overlap_fraction"] >= 0.9
    combined = pd.read_csv(out / "surrogate" / "combined_S1.csv")
    assert set(combined["source"]) == {"empirical", "surrogate"}


@pytest.mark.slow
def test_manifest_checksums_match(synthetic_run):
    _, out, manifest = synthetic_run
    for entry in manifest.files:
        assert pipeline._sha256(out / entry["path"]) == entry["sha256"]
    on_disk = json.loads((out / "manifest.json").read_text())
    assert on_disk["config_hash"] == manifest.config_hash
    assert "numpy" in on_disk["versions"]
