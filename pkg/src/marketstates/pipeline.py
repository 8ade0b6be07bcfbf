"""End-to-end orchestration: every stage reads its inputs from, and writes to, the output directory.

Stage layout under ``config.output``::

    ingest/      returns.csv, index_returns.csv, report.json
    correlate/   frames.json (raw frames), mu.csv, info.json
    scan/        scan.csv, embedding_eps<e>.json, selection.json
    cluster/     state_model.json, mean_corr_S<s>.csv, state_timeline.csv, embedding.csv
    dynamics/    transition_counts.csv, transition_probs.csv, summary.json
    surrogate/   report.json, combined_S<s>.csv
    plot/        plot-ready CSV bundle
    manifest.json
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
import scipy

import marketstates
from marketstates import clustering, correlation, dynamics, ingest, surrogate
from marketstates.config import RunConfig
from marketstates.errors import DataError, MarketStatesError, NumericError
from marketstates.similarity import Embedding

logger = logging.getLogger(__name__)

STAGES = ("ingest", "correlate", "scan", "cluster", "dynamics", "surrogate", "plot-data")
STAMP = ".stamp"


class StageError(MarketStatesError):
    def __init__(self, stage: str, cause: BaseException, manifest: "RunManifest | None" = None):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.manifest = manifest
        self.exit_code = getattr(cause, "exit_code", NumericError.exit_code)


@dataclass
class RunManifest:
    config_hash: str
    versions: dict[str, str]
    timings: dict[str, float] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)
    files: list[dict] = field(default_factory=list)
    status: str = "ok"
    failed_stage: str | None = None
    error: str | None = None

    def checksums(self) -> dict[str, str]:
        return {f["path"]: f["sha256"] for f in self.files}

    def write(self, out: Path) -> Path:
        path = out / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=1), encoding="utf-8")
        return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def inventory(out: Path) -> list[dict]:
    return [
        {"path": p.relative_to(out).as_posix(), "bytes": p.stat().st_size, "sha256": _sha256(p)}
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    ]


def versions() -> dict[str, str]:
    return {
        "marketstates": marketstates.__version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def run_key(cfg: RunConfig) -> str:
    """Cache key: numeric config plus the content of every input file."""
    parts = [cfg.hash()]
    for p in (cfg.prices, cfg.index):
        if p:
            parts.append(_sha256(Path(p)) if Path(p).exists() else "missing")
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing stage output {path}; run the upstream stage first")
    return path


# ---------------------------------------------------------------- readers

def read_returns(out: Path) -> ingest.ReturnPanel:
    frame = pd.read_csv(_require(out / "ingest" / "returns.csv"), index_col=0, float_precision="round_trip")
    return ingest.ReturnPanel(list(frame.columns), list(frame.index.astype(str)), frame.to_numpy().T)


def read_frames(out: Path) -> list[correlation.EpochCorrelation]:
    return correlation.frames_from_json(_require(out / "correlate" / "frames.json"))


def read_selection(out: Path) -> dict:
    return json.loads(_require(out / "scan" / "selection.json").read_text(encoding="utf-8"))


def read_state_model(out: Path) -> clustering.StateModel:
    _require(out / "cluster" / "state_model.json")
    return clustering.StateModel.read(out / "cluster")


def _eps_tag(eps: float) -> str:
    return f"{eps:.2f}"


# ---------------------------------------------------------------- stages

def stage_ingest(cfg: RunConfig, out: Path) -> None:
    d = out / "ingest"
    panel, report = ingest.load_price_panel(cfg.prices, cfg.gap_policy)
    returns = ingest.compute_returns(panel, cfg.return_kind)
    frame = pd.DataFrame(returns.returns.T, index=pd.Index(returns.dates, name="date"), columns=returns.tickers)
    frame.to_csv(d / "returns.csv", float_format="%.17g")

    if cfg.index:
        idx_panel, _ = ingest.load_price_panel(cfg.index, "strict", min_assets=1)
        if idx_panel.n_assets != 1:
            raise DataError(f"index file holds {idx_panel.n_assets} series, expected 1")
        index = ingest.compute_index_returns(idx_panel, cfg.return_kind)
        source = idx_panel.tickers[0]
    else:
        index = ingest.equal_weight_index(returns)
        source = "equal-weight"
    lines = ["date,R"] + [f"{t},{v!r}" for t, v in zip(index.dates, index.values.tolist())]
    (d / "index_returns.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    payload = report.to_dict()
    payload["source"] = Path(cfg.prices).name
    payload.update(return_kind=cfg.return_kind, n_return_days=returns.n_days, index_source=source)
    (d / "report.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")


def stage_correlate(cfg: RunConfig, out: Path) -> None:
    d = out / "correlate"
    returns = read_returns(out)
    spec = correlation.EpochSpec(cfg.epoch_length, cfg.shift)
    frames, dropped = correlation.epoch_correlations(returns, spec, 0.0, cfg.on_degenerate, cfg.jobs)
    correlation.frames_to_json(frames, d / "frames.json")
    series = correlation.mean_correlation_series(frames)
    lines = ["tau,date,mu"] + [
        f"{int(t)},{dt},{m!r}" for t, dt, m in zip(series.taus, series.dates or [""] * len(frames), series.mu.tolist())
    ]
    (d / "mu.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    info = {"epoch_length": spec.epoch_length, "shift": spec.shift, "n_frames": len(frames),
            "n_assets": frames[0].n, "dropped_flat_assets": dropped}
    (d / "info.json").write_text(json.dumps(info, indent=1), encoding="utf-8")


def stage_scan(cfg: RunConfig, out: Path) -> None:
    d = out / "scan"
    raw = read_frames(out)
    scan = clustering.scan_from_raw(
        raw, cfg.epsilons, cfg.k_range,
        restarts=cfg.restarts, seed=cfg.seed, k_min=cfg.k_min,
        mds_restarts=cfg.mds_restarts, mds_tol=cfg.mds_tol, mds_max_iter=cfg.mds_max_iter,
        init=cfg.kmeans_init, jobs=cfg.jobs,
    )
    scan.write_csv(d / "scan.csv")
    for eps, emb in scan.embeddings.items():
        emb.write_json(d / f"embedding_eps{_eps_tag(eps)}.json")
    best = scan.chosen
    selection = {
        "k_star": scan.k_star,
        "epsilon_star": scan.epsilon_star,
        "sigma_d_intra": best.sigma_d_intra,
        "mean_d_intra": best.mean_d_intra,
        "labels": [int(x) for x in best.best.labels],
        "inertia": best.best.inertia,
    }
    (d / "selection.json").write_text(json.dumps(selection, indent=1), encoding="utf-8")


def stage_cluster(cfg: RunConfig, out: Path) -> None:
    d = out / "cluster"
    raw = read_frames(out)
    sel = read_selection(out)
    model = clustering.build_state_model(np.asarray(sel["labels"]), raw)
    model.write(d)
    lines = ["tau,date,state,mu"] + [
        f"{int(f.tau)},{f.date or ''},{int(s)},{correlation.mean_correlation(f.matrix)!r}"
        for f, s in zip(raw, model.state_of_frame)
    ]
    (d / "state_timeline.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    emb_path = _require(out / "scan" / f"embedding_eps{_eps_tag(sel['epsilon_star'])}.json")
    emb = Embedding.from_dict(json.loads(emb_path.read_text(encoding="utf-8")))
    lines = ["tau,x,y,z,state"] + [
        f"{int(t)}," + ",".join(repr(float(v)) for v in row) + f",{int(s)}"
        for t, row, s in zip(emb.taus, emb.coords, model.state_of_frame)
    ]
    (d / "embedding.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    emb.write_json(d / "embedding.json")


def stage_dynamics(cfg: RunConfig, out: Path) -> None:
    d = out / "dynamics"
    model = read_state_model(out)
    seq = dynamics.StateSequence(model.taus, model.state_of_frame, model.k)
    tm = dynamics.transitions(seq)
    tm.write_csv(d)
    occ = dynamics.occupancy(seq)
    (d / "summary.json").write_text(dynamics.dynamics_summary(seq, tm, occ), encoding="utf-8")


def stage_surrogate(cfg: RunConfig, out: Path) -> None:
    d = out / "surrogate"
    model = read_state_model(out)
    eps = float(read_selection(out)["epsilon_star"])
    frames = correlation.apply_power_map(read_frames(out), eps)
    report = surrogate.surrogate_validation(
        model, frames, eps, seed=cfg.seed, ensemble_factor=cfg.ensemble_factor,
        epoch_length=cfg.epoch_length, mds_restarts=cfg.mds_restarts, mds_tol=cfg.mds_tol,
        mds_max_iter=cfg.mds_max_iter,
    )
    (d / "report.json").write_text(report.to_json(), encoding="utf-8")
    for st in report.states:
        st.write_csv(d / f"combined_S{st.state}.csv")


def emit_plot_data(out: str | Path) -> list[Path]:
    """Collect the series behind every figure into ``<out>/plot``."""
    out = Path(out)
    d = out / "plot"
    d.mkdir(parents=True, exist_ok=True)
    copies = {
        "index_returns.csv": out / "ingest" / "index_returns.csv",
        "mu.csv": out / "correlate" / "mu.csv",
        "state_timeline.csv": out / "cluster" / "state_timeline.csv",
        "scan.csv": out / "scan" / "scan.csv",
        "embedding.csv": out / "cluster" / "embedding.csv",
    }
    written = []
    for name, src in copies.items():
        target = d / name
        target.write_bytes(_require(src).read_bytes())
        written.append(target)
    model = read_state_model(out)
    tm = dynamics.transitions(dynamics.StateSequence(model.taus, model.state_of_frame, model.k))
    lines = ["source,target,count,probability"] + [f"S{a},S{b},{n},{p:.3f}" for a, b, n, p in tm.edges()]
    edges = d / "transition_edges.csv"
    edges.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(edges)
    return written


def stage_plot(cfg: RunConfig, out: Path) -> None:
    emit_plot_data(out)


STAGE_FUNCS: dict[str, Callable[[RunConfig, Path], None]] = {
    "ingest": stage_ingest,
    "correlate": stage_correlate,
    "scan": stage_scan,
    "cluster": stage_cluster,
    "dynamics": stage_dynamics,
    "surrogate": stage_surrogate,
    "plot-data": stage_plot,
}
STAGE_DIRS = {s: ("plot" if s == "plot-data" else s) for s in STAGES}


def _stamp_ok(stage_dir: Path, key: str) -> bool:
    stamp = stage_dir / STAMP
    if not stamp.exists():
        return False
    data = json.loads(stamp.read_text(encoding="utf-8"))
    if data.get("key") != key:
        return False
    return all((stage_dir / name).exists() and _sha256(stage_dir / name) == digest
               for name, digest in data.get("files", {}).items())


def _write_stamp(stage_dir: Path, key: str) -> None:
    files = {p.name: _sha256(p) for p in sorted(stage_dir.iterdir()) if p.is_file() and p.name != STAMP}
    (stage_dir / STAMP).write_text(json.dumps({"key": key, "files": files}, indent=1), encoding="utf-8")


def run(cfg: RunConfig, stages: Sequence[str] = STAGES, force: bool = False) -> RunManifest:
    """Run ``stages`` in pipeline order.

    A stage whose stamp matches the current cache key and whose files are
    intact is skipped unless ``force``. Any failure raises ``StageError``
    after writing a partial manifest.
    """
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ValueError(f"unknown stages {unknown}")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    key = run_key(cfg)
    manifest = RunManifest(cfg.hash(), versions())
    for stage in [s for s in STAGES if s in stages]:
        stage_dir = out / STAGE_DIRS[stage]
        if not force and _stamp_ok(stage_dir, key):
            manifest.skipped.append(stage)
            logger.info("%s: cached", stage)
            continue
        stage_dir.mkdir(parents=True, exist_ok=True)
        (stage_dir / STAMP).unlink(missing_ok=True)
        t0 = time.perf_counter()
        try:
            with np.errstate(invalid="raise", divide="raise", over="raise"):
                STAGE_FUNCS[stage](cfg, out)
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            err = NumericError(str(exc))
            raise _fail(manifest, out, stage, err) from exc
        except MarketStatesError as exc:
            raise _fail(manifest, out, stage, exc) from exc
        manifest.timings[stage] = round(time.perf_counter() - t0, 4)
        _write_stamp(stage_dir, key)
        logger.info("%s: %.2fs", stage, manifest.timings[stage])
    manifest.files = inventory(out)
    manifest.write(out)
    return manifest


def _fail(manifest: RunManifest, out: Path, stage: str, exc: BaseException) -> StageError:
    manifest.status = "failed"
    manifest.failed_stage = stage
    manifest.error = str(exc)
    manifest.files = inventory(out)
    manifest.write(out)
    return StageError(stage, exc, manifest)
