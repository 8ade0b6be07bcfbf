import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from marketstates.correlation import (
    EpochCorrelation,
    EpochSpec,
    epoch_correlations,
    frames_from_json,
    frames_to_json,
    mean_correlation,
    mean_correlation_series,
    n_epochs,
    pearson_correlation,
    power_map,
    slice_epochs,
)
from marketstates.errors import ConfigError, DataError, DegenerateEpochError
from marketstates.ingest import ReturnPanel

from conftest import random_correlation


def pearson_oracle(x):
    """Two-pass textbook Pearson with explicit loops."""
    n, length = x.shape
    out = np.empty((n, n))
    means = [sum(row) / length for row in x]
    sds = [np.sqrt(sum((v - means[i]) ** 2 for v in x[i]) / length) for i in range(n)]
    for i in range(n):
        for j in range(n):
            cov = sum((x[i, t] - means[i]) * (x[j, t] - means[j]) for t in range(length)) / length
            out[i, j] = cov / (sds[i] * sds[j])
    return out


def _panel(returns):
    n, t = returns.shape
    return ReturnPanel([f"T{i}" for i in range(n)], [f"d{j:04d}" for j in range(t)], returns)


@pytest.mark.parametrize("t, expected", [(3523, 351), (3459, 344), (20, 1), (29, 1), (30, 2)])
def test_frame_count(t, expected):
    assert n_epochs(t, EpochSpec(20, 10)) == expected
    assert len(slice_epochs(t, EpochSpec(20, 10))) == expected


def test_epoch_windows():
    eps = slice_epochs(45, EpochSpec(20, 10))
    assert [(e.start, e.stop, e.tau) for e in eps] == [(0, 20, 19), (10, 30, 29), (20, 40, 39)]
    with pytest.raises(DataError):
        slice_epochs(19, EpochSpec(20, 10))


@pytest.mark.parametrize("length, shift", [(1, 1), (20, 0), (20, 21)])
def test_epoch_spec_validation(length, shift):
    with pytest.raises(ConfigError):
        EpochSpec(length, shift)


def test_pearson_extremes():
    row = np.array([1.0, 3.0, 2.0, 5.0, 4.0])
    c = pearson_correlation(np.stack([row, row, -row]))
    assert c[0, 1] == pytest.approx(1.0, abs=1e-14)
    assert c[0, 2] == pytest.approx(-1.0, abs=1e-14)
    assert np.all(np.diag(c) == 1.0)


def test_pearson_matches_oracle():
    block = np.array([[3, 1, 4, 1, 5], [9, 2, 6, 5, 3], [5, 8, 9, 7, 9]], dtype=float)
    np.testing.assert_allclose(pearson_correlation(block), pearson_oracle(block), atol=1e-12, rtol=0)


def test_pearson_zero_variance_names_ticker():
    block = np.array([[1.0, 2.0, 3.0], [0.5, 0.5, 0.5]])
    with pytest.raises(DegenerateEpochError, match="BBB") as info:
        pearson_correlation(block, ["AAA", "BBB"])
    assert info.value.rows == [1]


@settings(max_examples=60)
@given(
    st.integers(0, 2**32 - 1),
    arrays(float, 4, elements=st.floats(0.01, 100)),
    arrays(float, 4, elements=st.floats(-100, 100)),
)
def test_pearson_affine_invariance(seed, scale, shift):
    x = np.random.default_rng(seed).standard_normal((4, 20))
    y = scale[:, None] * x + shift[:, None]
    np.testing.assert_allclose(pearson_correlation(y), pearson_correlation(x), atol=1e-10)


def test_short_window_is_rank_deficient(rng):
    c = pearson_correlation(rng.standard_normal((30, 20)))
    assert np.linalg.matrix_rank(c) <= 19


def test_power_map_values():
    c = np.array([[1.0, 0.5, -0.5], [0.5, 1.0, 0.0], [-0.5, 0.0, 1.0]])
    out = power_map(c, 0.5)
    # 0.5 ** 1.5 == 1 / (2 sqrt 2)
    assert out[0, 1] == pytest.approx(1 / (2 * np.sqrt(2)), abs=1e-15)
    assert out[0, 1] == pytest.approx(0.3535534, abs=5e-8)
    assert out[0, 2] == pytest.approx(-0.3535534, abs=5e-8)
    assert out[1, 2] == 0.0
    assert np.all(np.diag(out) == 1.0)
    np.testing.assert_array_equal(power_map(c, 0.0), c)


@pytest.mark.parametrize("eps", [-0.1, 1.0, 1.5])
def test_power_map_rejects_epsilon(eps):
    with pytest.raises(ConfigError):
        power_map(np.eye(2), eps)


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 0.999))
def test_power_map_shrinks(seed, eps):
    c = random_correlation(6, np.random.default_rng(seed))
    out = power_map(c, eps)
    off = ~np.eye(6, dtype=bool)
    assert np.all(np.abs(out) <= np.abs(c))
    inner = off & (np.abs(c) > 0) & (np.abs(c) < 1)
    assert np.all(np.abs(out[inner]) < np.abs(c[inner]))
    assert np.array_equal(np.sign(out), np.sign(c))
    assert np.all(np.diag(out) == 1.0)


def test_mean_correlation():
    assert mean_correlation(np.eye(4)) == 0.0
    assert mean_correlation(np.ones((4, 4))) == 1.0
    c = np.array([[1, 0.1, 0.2], [0.1, 1, 0.3], [0.2, 0.3, 1]])
    assert mean_correlation(c) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(DataError):
        mean_correlation(np.ones((1, 1)))


def test_epoch_correlations_and_series(rng):
    r = rng.standard_normal((5, 55))
    frames, dropped = epoch_correlations(_panel(r), EpochSpec(20, 10))
    assert dropped == []
    assert [f.tau for f in frames] == [19, 29, 39, 49]
    np.testing.assert_allclose(frames[1].matrix, pearson_correlation(r[:, 10:30]), atol=0)
    assert frames[2].date == "d0039"
    series = mean_correlation_series(frames)
    assert series.mu[3] == mean_correlation(frames[3].matrix)
    threaded, _ = epoch_correlations(_panel(r), EpochSpec(20, 10), jobs=3)
    for a, b in zip(frames, threaded):
        assert np.array_equal(a.matrix, b.matrix)


def test_epoch_correlations_degenerate(rng):
    r = rng.standard_normal((4, 40))
    r[2, 10:30] = 0.0
    with pytest.raises(DegenerateEpochError, match="T2"):
        epoch_correlations(_panel(r), EpochSpec(20, 10))
    frames, dropped = epoch_correlations(_panel(r), EpochSpec(20, 10), on_degenerate="drop")
    assert dropped == ["T2"] and frames[0].n == 3


def test_frame_invariants():
    with pytest.raises(DataError):
        EpochCorrelation(0, 0.0, np.array([[1.0, 0.2], [0.3, 1.0]]))
    with pytest.raises(DataError):
        EpochCorrelation(0, 0.0, np.array([[0.9, 0.2], [0.2, 1.0]]))
    with pytest.raises(DataError):
        EpochCorrelation(0, 0.0, np.array([[1.0, 1.2], [1.2, 1.0]]))
    with pytest.raises(ConfigError):
        EpochCorrelation(0, 1.0, np.eye(2))


def test_json_roundtrip(tmp_path, rng):
    frames = [EpochCorrelation(t, 0.3, power_map(random_correlation(5, rng), 0.3), f"d{t}") for t in (9, 19)]
    path = tmp_path / "frames.json"
    frames_to_json(frames, path)
    back = frames_from_json(path)
    for a, b in zip(frames, back):
        assert (a.tau, a.epsilon, a.date) == (b.tau, b.epsilon, b.date)
        assert np.array_equal(a.matrix, b.matrix)
    assert len(json.loads(path.read_text())[0]["upper_triangle"]) == 10
