"""Lloyd k-means, the (k, epsilon) stability scan, and market-state models."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Mapping, Sequence

import numpy as np

from marketstates.correlation import EpochCorrelation, apply_power_map, mean_correlation
from marketstates.errors import ConfigError, DataError
from marketstates.similarity import Embedding, mds_embed, similarity_matrix

logger = logging.getLogger(__name__)

TIE_TOL = 1e-12


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    d_intra: float
    inertia: float
    seed: int | None = None
    n_iter: int = 0
    inertia_history: list[float] = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _sq_dist(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    idx = [int(rng.integers(len(points)))]
    d2 = _sq_dist(points, points[idx]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        nxt = int(rng.choice(len(points), p=d2 / total)) if total > 0 else int(rng.integers(len(points)))
        idx.append(nxt)
        d2 = np.minimum(d2, _sq_dist(points, points[[nxt]])[:, 0])
    return points[idx].copy()


def _centroids(points: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    return np.stack([points[labels == j].mean(axis=0) for j in range(k)])


def _repair_empty(points: np.ndarray, labels: np.ndarray, d2: np.ndarray, k: int) -> np.ndarray:
    """Move the point farthest from its centroid into each empty cluster."""
    labels = labels.copy()
    own = d2[np.arange(len(points)), labels]
    for j in range(k):
        if np.any(labels == j):
            continue
        counts = np.bincount(labels, minlength=k)
        movable = np.flatnonzero(counts[labels] > 1)
        far = movable[np.argmax(own[movable])]
        labels[far] = j
        own[far] = 0.0
    return labels


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int | np.random.Generator | None = None,
    max_iter: int = 300,
    init: Literal["random", "k-means++"] = "random",
) -> KMeansResult:
    """Lloyd iterations until assignments stop changing.

    ``init="random"`` seeds centroids at k distinct points chosen uniformly.
    """
    x = np.asarray(points, dtype=float)
    m = x.shape[0]
    if k < 1:
        raise ConfigError("k must be >= 1")
    if m < k:
        raise DataError(f"cannot form {k} clusters from {m} points")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if init == "random":
        centroids = x[rng.choice(m, size=k, replace=False)].copy()
    elif init == "k-means++":
        centroids = _plusplus(x, k, rng)
    else:
        raise ConfigError(f"unknown init {init!r}")

    labels = None
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_dist(x, centroids)
        new = np.argmin(d2, axis=1)
        if np.bincount(new, minlength=k).min() == 0:
            new = _repair_empty(x, new, d2, k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centroids = _centroids(x, labels, k)
        history.append(float(_sq_dist(x, centroids)[np.arange(m), labels].sum()))

    dist = np.sqrt(_sq_dist(x, centroids)[np.arange(m), labels])
    return KMeansResult(
        labels=labels,
        centroids=centroids,
        d_intra=float(dist.mean()),
        inertia=float((dist**2).sum()),
        seed=seed if isinstance(seed, int) else None,
        n_iter=n_iter,
        inertia_history=history,
    )


def d_intra(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    """Mean Euclidean distance of each point to its assigned centroid."""
    return float(np.linalg.norm(points - centroids[labels], axis=1).mean())


def restart_seeds(seed: int, n: int) -> list[int]:
    return [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(n)]


def kmeans_restarts(
    points: np.ndarray, k: int, restarts: int, seed: int, init: str = "random", jobs: int = 1
) -> list[KMeansResult]:
    seeds = restart_seeds(seed, restarts)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda s: kmeans(points, k, s, init=init), seeds))
    return [kmeans(points, k, s, init=init) for s in seeds]


@dataclass
class ScanCell:
    k: int
    epsilon: float
    mean_d_intra: float
    sigma_d_intra: float
    best: KMeansResult = field(repr=False)


@dataclass
class SelectionScan:
    cells: list[ScanCell]
    embeddings: dict[float, Embedding] = field(repr=False)
    k_star: int = 0
    epsilon_star: float = 0.0

    def cell(self, k: int, epsilon: float) -> ScanCell:
        for c in self.cells:
            if c.k == k and c.epsilon == epsilon:
                return c
        raise KeyError((k, epsilon))

    @property
    def chosen(self) -> ScanCell:
        return self.cell(self.k_star, self.epsilon_star)

    def write_csv(self, path: str | Path) -> None:
        lines = ["k,epsilon,mean_d_intra,sigma_d_intra"]
        lines += [f"{c.k},{c.epsilon!r},{c.mean_d_intra!r},{c.sigma_d_intra!r}" for c in self.cells]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def choose_cell(cells: Sequence[ScanCell], tie_tol: float = TIE_TOL) -> ScanCell:
    """Minimum sigma(d_intra); near-ties go to smaller k, then smaller epsilon."""
    if not cells:
        raise ConfigError("empty (k, epsilon) grid")
    floor = min(c.sigma_d_intra for c in cells)
    tied = [c for c in cells if c.sigma_d_intra <= floor + tie_tol]
    return min(tied, key=lambda c: (c.k, c.epsilon))


def scan_embedding(
    embedding: Embedding, epsilon: float, k_range: Sequence[int], restarts: int, seed: int,
    init: str = "random", jobs: int = 1,
) -> list[ScanCell]:
    cells = []
    for k in k_range:
        runs = kmeans_restarts(embedding.coords, k, restarts, seed + 7919 * k, init=init, jobs=jobs)
        values = np.array([r.d_intra for r in runs])
        best = min(runs, key=lambda r: r.inertia)
        cells.append(ScanCell(k, epsilon, float(values.mean()), float(values.std(ddof=0)), best))
        logger.debug("k=%d eps=%.2f: d_intra %.5f +- %.2e", k, epsilon, values.mean(), values.std())
    return cells


def selection_scan(
    frames_by_epsilon: Mapping[float, Sequence[EpochCorrelation]],
    k_range: Sequence[int],
    restarts: int = 1000,
    seed: int = 0,
    k_min: int = 4,
    mds_restarts: int = 8,
    mds_tol: float = 1e-9,
    mds_max_iter: int = 2000,
    init: str = "random",
    jobs: int = 1,
) -> SelectionScan:
    """For each epsilon embed the frames, then run ``restarts`` k-means per k.

    The chosen cell minimizes the population standard deviation of d_intra
    across restarts, restricted to k >= k_min.
    """
    ks = sorted({int(k) for k in k_range if k >= k_min})
    if not ks or not frames_by_epsilon:
        raise ConfigError("empty (k, epsilon) grid")
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    cells: list[ScanCell] = []
    embeddings: dict[float, Embedding] = {}
    for eps in sorted(frames_by_epsilon):
        frames = frames_by_epsilon[eps]
        if ks[-1] > len(frames):
            raise ConfigError(f"k={ks[-1]} exceeds the {len(frames)} available frames")
        emb = mds_embed(similarity_matrix(frames), 3, mds_restarts, seed, mds_tol, mds_max_iter, jobs)
        embeddings[eps] = emb
        cells += scan_embedding(emb, eps, ks, restarts, seed, init, jobs)
    chosen = choose_cell(cells)
    logger.info("selected k=%d epsilon=%.2f (sigma %.3g)", chosen.k, chosen.epsilon, chosen.sigma_d_intra)
    return SelectionScan(cells, embeddings, chosen.k, chosen.epsilon)


def scan_from_raw(raw_frames: Sequence[EpochCorrelation], epsilons: Sequence[float], k_range, **kw) -> SelectionScan:
    grid = {float(e): apply_power_map(raw_frames, float(e)) for e in epsilons}
    return selection_scan(grid, k_range, **kw)


@dataclass
class StateModel:
    """Clusters relabeled 1..k by ascending mean correlation of their raw mean matrix."""

    k: int
    taus: np.ndarray
    state_of_frame: np.ndarray
    mu_of_state: np.ndarray
    mean_corr_of_state: list[np.ndarray] = field(repr=False)
    cluster_of_state: list[int] = field(default_factory=list)

    def frames_in_state(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.state_of_frame == s)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "taus": [int(t) for t in self.taus],
            "states": [int(s) for s in self.state_of_frame],
            "mu": [float(m) for m in self.mu_of_state],
            "cluster_of_state": list(map(int, self.cluster_of_state)),
            "n_frames_per_state": [int(np.sum(self.state_of_frame == s)) for s in range(1, self.k + 1)],
        }

    def write(self, directory: str | Path) -> list[Path]:
        out = Path(directory)
        written = [out / "state_model.json"]
        written[0].write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")
        for s, c in enumerate(self.mean_corr_of_state, start=1):
            p = out / f"mean_corr_S{s}.csv"
            np.savetxt(p, c, delimiter=",", fmt="%.17g")
            written.append(p)
        return written

    @classmethod
    def read(cls, directory: str | Path) -> "StateModel":
        d = json.loads((Path(directory) / "state_model.json").read_text(encoding="utf-8"))
        mats = [
            np.atleast_2d(np.loadtxt(Path(directory) / f"mean_corr_S{s}.csv", delimiter=","))
            for s in range(1, d["k"] + 1)
        ]
        return cls(d["k"], np.asarray(d["taus"]), np.asarray(d["states"]), np.asarray(d["mu"]), mats,
                   d["cluster_of_state"])


def build_state_model(labels: np.ndarray | KMeansResult, raw_frames: Sequence[EpochCorrelation]) -> StateModel:
    """Average raw (epsilon=0) frames per cluster and order clusters by mean correlation."""
    if isinstance(labels, KMeansResult):
        labels = labels.labels
    labels = np.asarray(labels)
    if len(labels) != len(raw_frames):
        raise DataError(f"{len(labels)} labels for {len(raw_frames)} frames")
    if any(f.epsilon != 0.0 for f in raw_frames):
        raise DataError("state means must be computed from raw (epsilon=0) frames")
    clusters = sorted(set(labels.tolist()))
    stack = np.stack([f.matrix for f in raw_frames])
    means = {c: stack[labels == c].mean(axis=0) for c in clusters}
    for c in clusters:
        np.fill_diagonal(means[c], 1.0)
    mus = {c: mean_correlation(means[c]) for c in clusters}
    ordered = sorted(clusters, key=lambda c: (mus[c], c))
    state_of_cluster = {c: s for s, c in enumerate(ordered, start=1)}
    return StateModel(
        k=len(clusters),
        taus=np.array([f.tau for f in raw_frames]),
        state_of_frame=np.array([state_of_cluster[c] for c in labels.tolist()]),
        mu_of_state=np.array([mus[c] for c in ordered]),
        mean_corr_of_state=[means[c] for c in ordered],
        cluster_of_state=ordered,
    )
