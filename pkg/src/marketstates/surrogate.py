"""Correlated Wishart surrogates around each state's mean correlation matrix.

Surrogate frames are sample correlations of colored Gaussian white noise over
an epoch-length window, so their noise level matches that of the empirical
frames. They are pushed through the same power map, distance, MDS and
k-means code as the market data.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from marketstates import clustering, correlation, similarity
from marketstates.correlation import EpochCorrelation
from marketstates.errors import ConfigError, DataError

logger = logging.getLogger(__name__)


def psd_sqrt(matrix: np.ndarray, return_clamped: bool = False):
    """Symmetric square root via eigendecomposition, with negative eigenvalues clamped to 0.

    With ``return_clamped`` also returns the total magnitude of the clamped
    eigenvalues.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"matrix must be square, got {a.shape}")
    scale = max(np.abs(a).max(initial=0.0), 1.0)
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * scale:
        raise DataError("psd_sqrt needs a symmetric matrix")
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    clamped = float(-w[w < 0].sum())
    if clamped > 1e-10 * scale:
        logger.warning("clamped negative eigenvalue mass %.3g", clamped)
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    root = 0.5 * (root + root.T)
    return (root, clamped) if return_clamped else root


@dataclass(frozen=True)
class CwoeSpec:
    target: np.ndarray
    samples: int
    epoch_length: int = 20
    seed: int = 0
    root: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.target, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise DataError(f"target must be square, got {t.shape}")
        if np.max(np.abs(t - t.T), initial=0.0) > 1e-10:
            raise DataError("target must be symmetric")
        if not np.allclose(np.diag(t), 1.0, atol=1e-12, rtol=0):
            raise DataError("target must have a unit diagonal")
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        if self.epoch_length < 2:
            raise ConfigError(f"epoch_length must be >= 2, got {self.epoch_length}")
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "root", psd_sqrt(t))

    @property
    def n(self) -> int:
        return self.target.shape[0]


def sample_cwoe_frame(spec: CwoeSpec, rng: np.random.Generator, tau: int = 0) -> EpochCorrelation:
    """One raw (epsilon=0) surrogate frame: Pearson correlation of root(target) @ G, G ~ N(0,1)^(N x L)."""
    if spec.n == 1:
        return EpochCorrelation(tau, 0.0, np.ones((1, 1)))
    g = rng.standard_normal((spec.n, spec.epoch_length))
    return EpochCorrelation(tau, 0.0, correlation.pearson_correlation(spec.root @ g))


def sample_cwoe_ensemble(spec: CwoeSpec, tau0: int = 0) -> list[EpochCorrelation]:
    """``spec.samples`` independent frames, each from its own seed derived from ``spec.seed``."""
    children = np.random.SeedSequence(spec.seed).spawn(spec.samples)
    return [sample_cwoe_frame(spec, np.random.default_rng(c), tau0 + i) for i, c in enumerate(children)]


@dataclass
class StateSurrogate:
    state: int
    n_empirical: int
    n_surrogate: int
    overlap_fraction: float
    assigned_states: dict[int, int]
    embedded_overlap: float
    surrogate_radius: float
    empirical_radius: float
    dispersion_ratio: float
    centroid_offset: float
    mds_stress: float
    embedding: similarity.Embedding = field(repr=False)
    is_surrogate: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "state": self.state,
            "n_empirical": self.n_empirical,
            "n_surrogate": self.n_surrogate,
            "overlap_fraction": self.overlap_fraction,
            "assigned_states": {str(s): n for s, n in self.assigned_states.items()},
            "embedded_overlap": self.embedded_overlap,
            "surrogate_radius": self.surrogate_radius,
            "empirical_radius": self.empirical_radius,
            "dispersion_ratio": self.dispersion_ratio,
            "centroid_offset": self.centroid_offset,
            "mds_stress": self.mds_stress,
        }

    def write_csv(self, path: str | Path) -> None:
        lines = ["source,tau,x,y,z"]
        for flag, t, row in zip(self.is_surrogate, self.embedding.taus, self.embedding.coords):
            src = "surrogate" if flag else "empirical"
            lines.append(f"{src},{int(t)}," + ",".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class SurrogateReport:
    epsilon: float
    ensemble_factor: int
    seed: int
    states: list[StateSurrogate]

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "ensemble_factor": self.ensemble_factor,
            "seed": self.seed,
            "states": [s.to_dict() for s in self.states],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _radius(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """k=1 clustering of a point cloud: centroid and per-point distances to it."""
    fit = clustering.kmeans(points, 1, seed=0)
    return fit.centroids[0], np.linalg.norm(points - fit.centroids[0], axis=1)


def surrogate_validation(
    state_model: clustering.StateModel,
    empirical_frames: Sequence[EpochCorrelation],
    epsilon: float,
    seed: int = 0,
    ensemble_factor: int = 3,
    epoch_length: int = 20,
    mds_restarts: int = 8,
    mds_tol: float = 1e-9,
    mds_max_iter: int = 2000,
) -> SurrogateReport:
    """Compare each state's cluster with a CWOE cloud drawn around its mean correlation matrix.

    ``empirical_frames`` are the power-mapped frames used for clustering, in
    the same order as the state model. Two views are reported per state:

    * ``overlap_fraction``: share of surrogate frames whose nearest state
      centroid (entry-wise mean of that state's frames, distance zeta) is the
      generating state.
    * embedding view: the empirical and surrogate frames of the state are
      embedded together; each cloud is summarized by a single-cluster
      k-means (centroid, mean radius) and ``embedded_overlap`` is the share of
      surrogate points within the empirical cloud's maximal radius.
    """
    if len(empirical_frames) != len(state_model.state_of_frame):
        raise DataError("empirical frames do not align with the state model")
    if ensemble_factor < 1:
        raise ConfigError("ensemble_factor must be >= 1")
    emp = list(empirical_frames)
    if any(f.epsilon != epsilon for f in emp):
        raise DataError(f"empirical frames must carry epsilon={epsilon}")

    state_centroids = []
    for s in range(1, state_model.k + 1):
        idx = state_model.frames_in_state(s)
        if idx.size == 0:
            raise DataError(f"state S{s} has no frames")
        state_centroids.append(np.mean([emp[i].matrix for i in idx], axis=0))
    iu = np.triu_indices(emp[0].n, k=1)
    centroid_upper = np.stack([c[iu] for c in state_centroids])

    seeds = np.random.SeedSequence(seed).spawn(state_model.k)
    tau_base = int(max(f.tau for f in emp)) + 1
    results = []
    for s in range(1, state_model.k + 1):
        idx = state_model.frames_in_state(s)
        members = [emp[i] for i in idx]
        spec = CwoeSpec(
            state_model.mean_corr_of_state[s - 1],
            ensemble_factor * len(members),
            epoch_length,
            int(seeds[s - 1].generate_state(1)[0]),
        )
        raw = sample_cwoe_ensemble(spec, tau0=tau_base)
        sur = correlation.apply_power_map(raw, epsilon)

        sur_upper = np.stack([f.upper_triangle() for f in sur])
        dist = np.stack([np.abs(sur_upper - c).mean(axis=1) for c in centroid_upper], axis=1)
        nearest = dist.argmin(axis=1) + 1
        assigned = {int(t): int(np.sum(nearest == t)) for t in range(1, state_model.k + 1)}

        combined = members + sur
        emb = similarity.mds_embed(
            similarity.similarity_matrix(combined), 3, mds_restarts, seed + s, mds_tol, mds_max_iter
        )
        flag = np.array([False] * len(members) + [True] * len(sur))
        c_emp, d_emp = _radius(emb.coords[~flag])
        c_sur, d_sur = _radius(emb.coords[flag])
        extent = d_emp.max()
        inside = np.linalg.norm(emb.coords[flag] - c_emp, axis=1) <= extent
        r_emp, r_sur = float(d_emp.mean()), float(d_sur.mean())
        results.append(
            StateSurrogate(
                state=s,
                n_empirical=len(members),
                n_surrogate=len(sur),
                overlap_fraction=assigned[s] / len(sur),
                assigned_states=assigned,
                embedded_overlap=float(inside.mean()),
                surrogate_radius=r_sur,
                empirical_radius=r_emp,
                dispersion_ratio=r_sur / r_emp if r_emp > 0 else float("inf"),
                centroid_offset=float(np.linalg.norm(c_sur - c_emp)),
                mds_stress=emb.normalized_stress,
                embedding=emb,
                is_surrogate=flag,
            )
        )
        logger.info("S%d: overlap %.3f, dispersion ratio %.3f", s, results[-1].overlap_fraction,
                    results[-1].dispersion_ratio)
    return SurrogateReport(float(epsilon), ensemble_factor, seed, results)
