"""Epoch slicing, Pearson correlation frames, power map and mean correlation."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from marketstates.errors import ConfigError, DataError, DegenerateEpochError
from marketstates.ingest import ReturnPanel

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class EpochSpec:
    epoch_length: int = 20
    shift: int = 10

    def __post_init__(self):
        if self.epoch_length < 2:
            raise ConfigError(f"epoch_length must be >= 2, got {self.epoch_length}")
        if not 1 <= self.shift <= self.epoch_length:
            raise ConfigError(f"shift must lie in [1, {self.epoch_length}], got {self.shift}")


@dataclass(frozen=True)
class Epoch:
    """Half-open window ``[start, stop)`` of return days; ``tau`` is its last day."""

    index: int
    start: int
    stop: int

    @property
    def tau(self) -> int:
        return self.stop - 1


@dataclass(frozen=True)
class EpochCorrelation:
    tau: int
    epsilon: float
    matrix: np.ndarray
    date: str | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DataError(f"correlation frame must be square, got {m.shape}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if np.max(np.abs(m - m.T), initial=0.0) > SYMMETRY_TOL:
            raise DataError(f"frame tau={self.tau} is not symmetric")
        if not np.all(np.diag(m) == 1.0):
            raise DataError(f"frame tau={self.tau} lacks a unit diagonal")
        if np.any(np.abs(m) > 1.0):
            raise DataError(f"frame tau={self.tau} has entries outside [-1, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def upper_triangle(self) -> np.ndarray:
        iu = np.triu_indices(self.n, k=1)
        return self.matrix[iu]


@dataclass(frozen=True)
class MeanCorrelationSeries:
    taus: np.ndarray
    mu: np.ndarray
    dates: list[str] | None = None


def n_epochs(n_days: int, spec: EpochSpec) -> int:
    """Number of complete epochs: floor((T - L) / shift) + 1."""
    if n_days < spec.epoch_length:
        raise DataError(f"{n_days} return days is shorter than one epoch ({spec.epoch_length})")
    return (n_days - spec.epoch_length) // spec.shift + 1


def slice_epochs(returns: ReturnPanel | int, spec: EpochSpec = EpochSpec()) -> list[Epoch]:
    """Epoch windows over a return panel (or a bare day count). The ragged tail is discarded."""
    n_days = returns if isinstance(returns, int) else returns.n_days
    m = n_epochs(n_days, spec)
    return [Epoch(i, i * spec.shift, i * spec.shift + spec.epoch_length) for i in range(m)]


def pearson_correlation(window: np.ndarray, tickers: Sequence[str] | None = None) -> np.ndarray:
    """Equal-time Pearson correlation of the rows of an N x L block.

    Uses population moments over the window, (<r_i r_j> - <r_i><r_j>) / (sigma_i sigma_j).
    """
    x = np.asarray(window, dtype=float)
    if x.ndim != 2:
        raise DataError(f"window must be 2-D, got shape {x.shape}")
    n, length = x.shape
    if length < 2:
        raise DataError(f"window needs at least 2 samples, got {length}")
    centered = x - x.mean(axis=1, keepdims=True)
    sigma = np.sqrt(np.einsum("ij,ij->i", centered, centered) / length)
    scale = np.abs(x).max(axis=1)
    dead = np.flatnonzero(sigma <= 1e-14 * np.maximum(scale, 1e-300))
    if dead.size:
        names = [tickers[i] for i in dead] if tickers is not None else []
        label = ", ".join(names) if names else ", ".join(map(str, dead))
        raise DegenerateEpochError(f"zero variance within epoch for {label}", dead, names)
    z = centered / sigma[:, None]
    c = (z @ z.T) / length
    c = 0.5 * (c + c.T)
    np.clip(c, -1.0, 1.0, out=c)
    np.fill_diagonal(c, 1.0)
    return c


def power_map(matrix: np.ndarray, epsilon: float) -> np.ndarray:
    """Entry-wise sign(C) |C|^(1+epsilon); leaves the unit diagonal intact."""
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"epsilon must lie in [0, 1), got {epsilon}")
    c = np.asarray(matrix, dtype=float)
    if epsilon == 0.0:
        return c.copy()
    return np.sign(c) * np.abs(c) ** (1.0 + epsilon)


def mean_correlation(matrix: np.ndarray) -> float:
    """Mean of the off-diagonal entries."""
    c = np.asarray(matrix, dtype=float)
    n = c.shape[0]
    if c.ndim != 2 or c.shape[1] != n:
        raise DataError(f"matrix must be square, got {c.shape}")
    if n < 2:
        raise DataError("mean correlation needs N >= 2")
    iu = np.triu_indices(n, k=1)
    return float(c[iu].mean())


def apply_power_map(frames: Iterable[EpochCorrelation], epsilon: float) -> list[EpochCorrelation]:
    out = []
    for f in frames:
        if f.epsilon != 0.0:
            raise DataError("power map must be applied to raw (epsilon=0) frames")
        out.append(EpochCorrelation(f.tau, epsilon, power_map(f.matrix, epsilon), f.date))
    return out


def zero_variance_assets(returns: ReturnPanel, spec: EpochSpec = EpochSpec()) -> list[str]:
    """Tickers whose returns are constant inside at least one epoch."""
    bad: set[int] = set()
    for ep in slice_epochs(returns, spec):
        block = returns.returns[:, ep.start:ep.stop]
        spread = block.max(axis=1) - block.min(axis=1)
        bad.update(np.flatnonzero(spread == 0.0).tolist())
    return [returns.tickers[i] for i in sorted(bad)]


def epoch_correlations(
    returns: ReturnPanel,
    spec: EpochSpec = EpochSpec(),
    epsilon: float = 0.0,
    on_degenerate: Literal["raise", "drop"] = "raise",
    jobs: int = 1,
) -> tuple[list[EpochCorrelation], list[str]]:
    """Correlation frame for every epoch, ordered by tau.

    With ``on_degenerate="drop"`` any asset that is flat inside some epoch is
    removed from every frame so all frames keep a common dimension. Returns the
    frames and the list of dropped tickers.
    """
    dropped: list[str] = []
    if on_degenerate == "drop":
        dropped = zero_variance_assets(returns, spec)
        if dropped:
            logger.warning("dropping %d flat assets: %s", len(dropped), dropped)
            returns = returns.drop(dropped)
            if returns.n_assets < 2:
                raise DataError("fewer than 2 assets left after dropping flat series")
    elif on_degenerate != "raise":
        raise ConfigError(f"unknown on_degenerate {on_degenerate!r}")

    epochs = slice_epochs(returns, spec)

    def frame(ep: Epoch) -> EpochCorrelation:
        c = pearson_correlation(returns.returns[:, ep.start:ep.stop], returns.tickers)
        return EpochCorrelation(ep.tau, epsilon, power_map(c, epsilon), returns.dates[ep.tau])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            frames = list(pool.map(frame, epochs))
    else:
        frames = [frame(ep) for ep in epochs]
    return frames, dropped


def mean_correlation_series(frames: Sequence[EpochCorrelation]) -> MeanCorrelationSeries:
    return MeanCorrelationSeries(
        np.array([f.tau for f in frames]),
        np.array([mean_correlation(f.matrix) for f in frames]),
        [f.date for f in frames] if all(f.date is not None for f in frames) else None,
    )


def frames_to_json(frames: Sequence[EpochCorrelation], path: str | Path | None = None) -> str:
    """Serialize frames as ``[{tau, epsilon, n, date, upper_triangle}]``, row-major upper triangle."""
    payload = [
        {
            "tau": int(f.tau),
            "epsilon": float(f.epsilon),
            "n": f.n,
            "date": f.date,
            "upper_triangle": f.upper_triangle().tolist(),
        }
        for f in frames
    ]
    text = json.dumps(payload)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def matrix_from_upper(upper: Sequence[float], n: int) -> np.ndarray:
    u = np.asarray(upper, dtype=float)
    if u.size != n * (n - 1) // 2:
        raise DataError(f"upper triangle of length {u.size} does not fit N={n}")
    m = np.eye(n)
    iu = np.triu_indices(n, k=1)
    m[iu] = u
    m[(iu[1], iu[0])] = u
    return m


def frames_from_json(source: str | Path) -> list[EpochCorrelation]:
    text = Path(source).read_text(encoding="utf-8") if isinstance(source, Path) or (
        isinstance(source, str) and not source.lstrip().startswith("[")
    ) else source
    frames = []
    for rec in json.loads(text):
        upper = rec["upper_triangle"]
        n = rec.get("n") or int(round((1 + np.sqrt(1 + 8 * len(upper))) / 2))
        frames.append(EpochCorrelation(rec["tau"], rec["epsilon"], matrix_from_upper(upper, n), rec.get("date")))
    return frames
