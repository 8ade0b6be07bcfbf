"""Frame-to-frame distance matrix and metric MDS embedding by stress majorization."""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from marketstates.correlation import EpochCorrelation
from marketstates.errors import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimilarityMatrix:
    taus: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.zeta, dtype=float)
        taus = np.asarray(self.taus)
        if z.ndim != 2 or z.shape[0] != z.shape[1] or z.shape[0] != taus.size:
            raise DataError(f"zeta shape {z.shape} inconsistent with {taus.size} taus")
        if np.any(z < 0) or not np.array_equal(z, z.T) or np.any(np.diag(z) != 0):
            raise DataError("zeta must be symmetric, nonnegative, with zero diagonal")
        object.__setattr__(self, "zeta", z)
        object.__setattr__(self, "taus", taus)

    @property
    def size(self) -> int:
        return self.zeta.shape[0]


@dataclass
class Embedding:
    taus: np.ndarray
    coords: np.ndarray
    stress: float
    normalized_stress: float
    seed: int
    restarts: int
    best_restart: int = 0
    n_iter: int = 0
    stress_history: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "taus": [int(t) for t in self.taus],
            "coords": self.coords.tolist(),
            "stress": self.stress,
            "normalized_stress": self.normalized_stress,
            "seed": self.seed,
            "restarts": self.restarts,
            "best_restart": self.best_restart,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Embedding":
        return cls(
            np.asarray(d["taus"]),
            np.asarray(d["coords"], dtype=float).reshape(-1, 3) if d["coords"] else np.zeros((0, 3)),
            d["stress"],
            d["normalized_stress"],
            d["seed"],
            d["restarts"],
            d.get("best_restart", 0),
            d.get("n_iter", 0),
        )

    def write_csv(self, path: str | Path) -> None:
        lines = ["tau," + ",".join("xyz"[: self.coords.shape[1]])]
        for t, row in zip(self.taus, self.coords):
            lines.append(f"{int(t)}," + ",".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")


def _check_frames(frames: Sequence[EpochCorrelation]) -> None:
    if not frames:
        raise DataError("no frames to compare")
    ns = {f.n for f in frames}
    eps = {f.epsilon for f in frames}
    if len(ns) > 1:
        raise DataError(f"frames have mixed dimensions {sorted(ns)}")
    if len(eps) > 1:
        raise DataError(f"frames have mixed epsilon {sorted(eps)}")


def similarity_matrix(frames: Sequence[EpochCorrelation]) -> SimilarityMatrix:
    """Mean absolute entry-wise difference over the N(N-1)/2 upper-triangle positions."""
    _check_frames(frames)
    upper = np.stack([f.upper_triangle() for f in frames])
    n_pos = upper.shape[1]
    if n_pos == 0:
        zeta = np.zeros((len(frames), len(frames)))
    else:
        zeta = squareform(pdist(upper, metric="cityblock") / n_pos)
    return SimilarityMatrix(np.array([f.tau for f in frames]), zeta)


def raw_stress(coords: np.ndarray, dissim: np.ndarray) -> float:
    """Sum over pairs a<b of (d_ab(X) - delta_ab)^2."""
    d = squareform(pdist(coords)) if len(coords) > 1 else np.zeros((1, 1))
    iu = np.triu_indices(len(coords), k=1)
    return float(np.sum((d[iu] - dissim[iu]) ** 2))


def _guttman(coords: np.ndarray, dissim: np.ndarray) -> np.ndarray:
    m = coords.shape[0]
    d = squareform(pdist(coords))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d > 0, dissim / d, 0.0)
    b = -ratio
    np.fill_diagonal(b, 0.0)
    np.fill_diagonal(b, -b.sum(axis=1))
    return b @ coords / m


def smacof(
    dissim: np.ndarray,
    init: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 2000,
) -> tuple[np.ndarray, float, list[float]]:
    """Majorize raw stress from ``init``; returns coordinates, stress and per-iteration history.

    Stops when the relative stress decrease falls below ``tol`` or the stress
    itself reaches zero.
    """
    x = np.array(init, dtype=float)
    stress = raw_stress(x, dissim)
    history = [stress]
    for _ in range(max_iter):
        x = _guttman(x, dissim)
        new = raw_stress(x, dissim)
        history.append(new)
        if new == 0.0 or (stress - new) <= tol * stress:
            stress = new
            break
        stress = new
    return x, stress, history


def _restart_seeds(seed: int, restarts: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(child.generate_state(1)[0]) for child in ss.spawn(restarts)]


def mds_embed(
    zeta: SimilarityMatrix,
    dim: int = 3,
    restarts: int = 8,
    seed: int = 0,
    tol: float = 1e-9,
    max_iter: int = 2000,
    jobs: int = 1,
) -> Embedding:
    """Embed frames in ``dim`` dimensions so Euclidean distances approximate zeta.

    Each restart starts from a Gaussian configuration scaled to the mean
    dissimilarity; the lowest-stress restart wins (ties go to the lower
    restart index). Rows are processed in ascending-tau order so the result
    does not depend on input order, then mapped back. Output is centered.
    """
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    m = zeta.size
    if m < dim + 1:
        warnings.warn(f"{m} points cannot determine a {dim}-D embedding; proceeding anyway", RuntimeWarning)

    order = np.argsort(zeta.taus, kind="stable")
    dissim = zeta.zeta[np.ix_(order, order)]
    iu = np.triu_indices(m, k=1)
    total = float(np.sum(dissim[iu] ** 2))
    scale = float(dissim[iu].mean()) if m > 1 else 0.0
    seeds = _restart_seeds(seed, restarts)

    def run(r: int):
        rng = np.random.default_rng(seeds[r])
        init = rng.standard_normal((m, dim)) * (scale if scale > 0 else 1.0)
        if total == 0.0:
            return np.zeros((m, dim)), 0.0, [0.0]
        return smacof(dissim, init, tol, max_iter)

    if jobs > 1 and restarts > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(restarts)))
    else:
        results = [run(r) for r in range(restarts)]

    best = min(range(restarts), key=lambda r: (results[r][1], r))
    x, stress, history = results[best]
    x = x - x.mean(axis=0)
    coords = np.empty_like(x)
    coords[order] = x
    normalized = float(np.sqrt(stress / total)) if total > 0 else 0.0
    logger.debug("mds: M=%d best restart %d stress %.6g (%d iters)", m, best, stress, len(history) - 1)
    return Embedding(zeta.taus.copy(), coords, stress, normalized, seed, restarts, best, len(history) - 1, history)
