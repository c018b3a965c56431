import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from alphaforge.panel import FeaturePanel  # noqa: E402


def random_panel(rng: np.random.Generator, n: int = 20, T: int = 300,
                 gaps: bool = True) -> FeaturePanel:
    """Random-walk bars with late listings, suspensions and delistings."""
    close = 10 * np.exp(np.cumsum(rng.normal(0, 0.02, (n, T)), axis=1))
    open_ = close * np.exp(rng.normal(0, 0.01, (n, T)))
    high = np.maximum(open_, close) * np.exp(np.abs(rng.normal(0, 0.01, (n, T))))
    low = np.minimum(open_, close) * np.exp(-np.abs(rng.normal(0, 0.01, (n, T))))
    volume = np.round(rng.lognormal(10, 1, (n, T)))
    vwap = (high + low + close) / 3
    values = np.stack([open_, close, high, low, volume, vwap], axis=-1)
    mask = np.ones((n, T), dtype=bool)
    if gaps:
        for i in range(n):
            if rng.random() < 0.3:
                mask[i, : rng.integers(1, T // 3)] = False
            if rng.random() < 0.2:
                mask[i, T - rng.integers(1, T // 4):] = False
        mask &= rng.random((n, T)) > 0.03
    values = np.where(mask[..., None], values, np.nan)
    dates = tuple(str(np.datetime64("2015-01-01") + i) for i in range(T))
    tickers = tuple(f"S{i:03d}" for i in range(n))
    return FeaturePanel(values, mask, dates, tickers)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def panel(rng):
    return random_panel(rng)


def assert_matrix_close(got: np.ndarray, want: np.ndarray, rtol: float = 1e-9, atol: float = 0.0):
    got_valid, want_valid = np.isfinite(got), np.isfinite(want)
    mismatch = got_valid != want_valid
    assert not mismatch.any(), f"validity differs at {np.argwhere(mismatch)[:5].tolist()}"
    np.testing.assert_allclose(got[got_valid], want[want_valid], rtol=rtol, atol=atol)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
