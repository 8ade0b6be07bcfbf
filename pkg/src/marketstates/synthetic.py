"""Planted-regime generators with known ground truth."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import pandas as pd

from marketstates.correlation import EpochCorrelation
from marketstates.ingest import PricePanel
from marketstates.surrogate import CwoeSpec, psd_sqrt, sample_cwoe_frame


def equicorrelation(n: int, mu: float) -> np.ndarray:
    """Unit-diagonal matrix with every off-diagonal entry equal to ``mu``."""
    return (1.0 - mu) * np.eye(n) + mu * np.ones((n, n))


def alternating(n: int, n_regimes: int = 2, block: int = 1) -> np.ndarray:
    """Regime index per step, cycling 0, 1, ... with each regime held for ``block`` steps."""
    return (np.arange(n) // block) % n_regimes


def regime_frames(
    regimes: Sequence[int],
    targets: Sequence[np.ndarray],
    epoch_length: int = 20,
    seed: int = 0,
) -> list[EpochCorrelation]:
    """One CWOE frame per entry of ``regimes``, drawn from ``targets[regime]``."""
    specs = [CwoeSpec(t, 1, epoch_length) for t in targets]
    children = np.random.SeedSequence(seed).spawn(len(regimes))
    return [
        sample_cwoe_frame(specs[r], np.random.default_rng(c), tau=(i + 1) * epoch_length - 1)
        for i, (r, c) in enumerate(zip(regimes, children))
    ]


def regime_price_panel(
    day_regimes: Sequence[int],
    targets: Sequence[np.ndarray],
    volatility: float = 0.01,
    seed: int = 0,
    start: str = "2006-01-02",
) -> PricePanel:
    """Prices whose log returns on day t are root(targets[day_regimes[t]]) @ N(0, 1) * volatility.

    Dates are consecutive business days; the first day carries the base price 100.
    """
    rng = np.random.default_rng(seed)
    roots = [psd_sqrt(t) for t in targets]
    n = targets[0].shape[0]
    g = rng.standard_normal((n, len(day_regimes)))
    r = np.empty_like(g)
    for t, reg in enumerate(day_regimes):
        r[:, t] = roots[reg] @ g[:, t]
    log_p = np.log(100.0) + np.concatenate([np.zeros((n, 1)), np.cumsum(volatility * r, axis=1)], axis=1)
    dates = pd.bdate_range(start, periods=len(day_regimes) + 1).strftime("%Y-%m-%d").tolist()
    tickers = [f"A{i:03d}" for i in range(n)]
    return PricePanel(tickers, dates, np.exp(log_p))


def best_label_agreement(truth: Sequence[int], labels: Sequence[int]) -> float:
    """Fraction of matching labels under the best one-to-one relabeling."""
    from scipy.optimize import linear_sum_assignment

    truth, labels = np.asarray(truth), np.asarray(labels)
    t_vals, l_vals = np.unique(truth), np.unique(labels)
    table = np.array([[np.sum((truth == a) & (labels == b)) for b in l_vals] for a in t_vals])
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / len(truth))
