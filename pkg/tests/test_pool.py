import logging

import numpy as np
import pytest

import oracles
from alphaforge import dsl, metrics, ops
from alphaforge.pool import AlphaPool, EvalSet, PoolEntry, PoolError, combine, zscore_daily
from alphaforge.synthetic import make_panel, planted_target
from test_dsl import CLASSIC_ALPHAS

P = dsl.parse
# roughly independent building blocks on the synthetic panels
BLOCKS = ["Delta(close, 5)", "volume", "(high - low)", "Delta(volume, 5)",
          "Ref(Delta(close, 5), 5)", "Abs(Delta(close, 10))"]


def planted_evalset(seed, coefs, n=40, T=160, noise=1.0):
    """Target = sum_j coefs[j] * zscore(BLOCKS[j]) + noise."""
    panel = make_panel(n, T, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    data = EvalSet(panel, np.zeros((n, T)))
    y = noise * rng.normal(size=(n, T))
    for c, text in zip(coefs, BLOCKS):
        y = y + c * data.factor(P(text))
    return panel, EvalSet(panel, y)


@pytest.fixture(scope="module")
def planted():
    panel = make_panel(40, 300, seed=7)
    return panel, EvalSet(panel, planted_target(panel, seed=7), slice(0, 200))


def test_zscore_matches_naive(rng):
    x = rng.normal(size=(9, 12))
    x[rng.random(x.shape) < 0.2] = np.nan
    x[:, 3] = 5.0
    np.testing.assert_allclose(zscore_daily(x), oracles.naive_zscore(x), rtol=1e-12, equal_nan=True)


# -- combine ---------------------------------------------------------------

def test_combine_single_scaled(planted):
    panel, data = planted
    e = P("Delta(close, 5)")
    z = combine([(e, 2.0)], panel).values
    np.testing.assert_allclose(z, 2 * zscore_daily(ops.evaluate(e, panel).values), equal_nan=True)
    y = data.target
    assert metrics.ic(z[:, data.days], y).ic == pytest.approx(metrics.ic(data.raw(e), y).ic, abs=1e-12)


def test_combine_duplicate_collapses(planted):
    panel, data = planted
    e = P("Delta(close, 5)")
    z = combine([(e, 0.5), (e, 0.5)], panel).values[:, data.days]
    assert metrics.ic(z, data.target).ic == pytest.approx(metrics.ic(data.raw(e), data.target).ic, abs=1e-12)


def test_combine_matches_naive_loop(panel):
    a, b = P("Mean(close, 5)"), P("Corr(open, volume, 10)")
    w = (0.7, -1.3)
    got = combine([(a, w[0]), (b, w[1])], panel).values
    za = oracles.naive_zscore(ops.evaluate(a, panel).values)
    zb = oracles.naive_zscore(ops.evaluate(b, panel).values)
    want = np.full(got.shape, np.nan)
    for i in range(got.shape[0]):
        for t in range(got.shape[1]):
            a_ok, b_ok = np.isfinite(za[i, t]), np.isfinite(zb[i, t])
            if a_ok or b_ok:
                want[i, t] = (w[0] * za[i, t] if a_ok else 0.0) + (w[1] * zb[i, t] if b_ok else 0.0)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12, equal_nan=True)


def test_train_ic_matches_signal_ic_of_combine(planted):
    panel, data = planted
    pool = AlphaPool(5, data)
    for text in ("Delta(close, 5)", "Corr(open, volume, 60)", "Mean(volume, 120)"):
        pool.add_factor(P(text))
    z = combine(pool, panel).values[:, data.days]
    assert metrics.signal_ic(z, data.target).ic == pytest.approx(pool.train_ic, abs=1e-12)


def test_sparse_factor_cannot_inflate_ic(planted):
    """A factor defined on a couple of cells per day on a few days would
    correlate perfectly on those days; it must not score as a strong alpha."""
    panel, data = planted
    f = data.target.copy()
    keep = np.zeros(f.shape, bool)
    keep[:2, :3] = True
    sparse = np.where(keep, f, np.nan)
    obj = metrics.CombinedIC([sparse], data.target, neutral_fill=True)
    assert abs(obj.value([1.0])) <= 3 / obj.n_days + 1e-12
    pool = AlphaPool(3, data)
    pool.add_factor(P("Delta(close, 5)"))
    dense = pool.train_ic
    pool.entries.append(PoolEntry(P("volume"), 0.01, sparse))
    assert pool.optimize_weights() <= dense + 3 / obj.n_days


def test_combine_empty_raises(planted):
    panel, data = planted
    with pytest.raises(PoolError):
        combine(AlphaPool(3, data), panel)


# -- optimize_weights -----------------------------------------------------

def two_factor_pool(seed):
    rng = np.random.default_rng(seed)
    coefs = [1.0, 0.0, rng.normal() * 0.7]
    _, data = planted_evalset(seed, coefs, noise=rng.uniform(0.5, 3))
    pool = AlphaPool(2, data)
    for text in (BLOCKS[0], BLOCKS[2]):
        pool.add_factor(P(text))
    return pool


def test_single_factor_weight_invariance(planted):
    _, data = planted
    pool = AlphaPool(3, data)
    pool.add_factor(P("Delta(close, 5)"))
    before = pool.train_ic
    pool._set_weights([3.7])
    assert pool.recompute_ic() == pytest.approx(before, abs=1e-14)
    assert pool.optimize_weights() == pytest.approx(before, abs=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_optimizer_reaches_angle_sweep_optimum(seed):
    pool = two_factor_pool(seed)
    f1, f2 = (oracles.naive_zscore(pool.data.raw(e.expr)) for e in pool.entries)
    best, _ = oracles.angle_sweep(f1, f2, pool.data.target)
    pool._set_weights([1.0, -1.0])
    got = pool.optimize_weights()
    assert got >= best - 1e-3
    assert got <= best + 1e-6


def test_start_at_optimum_does_not_decrease():
    pool = two_factor_pool(11)
    f1, f2 = (e.factor for e in pool.entries)
    best, theta = oracles.angle_sweep(f1, f2, pool.data.target)
    pool._set_weights([np.cos(theta), np.sin(theta)])
    start = pool.recompute_ic()
    assert pool.optimize_weights() >= start


def test_successive_optimize_monotone():
    pool = two_factor_pool(3)
    pool._set_weights([0.2, -1.0])
    ics = [pool.recompute_ic()]
    for _ in range(5):
        ics.append(pool.optimize_weights(max_iters=3))
    assert all(b >= a - pool.tol for a, b in zip(ics, ics[1:]))


def test_optimize_preconditions(planted):
    _, data = planted
    pool = AlphaPool(2, data)
    with pytest.raises(PoolError):
        pool.optimize_weights()
    pool.add_factor(P("close"))
    with pytest.raises(PoolError):
        pool.optimize_weights(lr=0)


# -- add_factor / seed ----------------------------------------------------

def test_add_to_empty_pool(planted):
    _, data = planted
    pool = AlphaPool(3, data)
    e = P("Delta(close, 10)")
    # warm-up days without a value count as zero IC in the pool objective
    single = metrics.signal_ic(data.raw(e), data.target).ic
    res = pool.add_factor(e)
    assert res.status == "added"
    assert pool.train_ic == pytest.approx(single, abs=1e-12)
    assert res.delta_ic == pytest.approx(single, abs=1e-12)
    raw = data.raw(e)[:, 10:]
    assert metrics.signal_ic(raw, data.target[:, 10:]).ic == pytest.approx(
        metrics.ic(raw, data.target[:, 10:]).ic, abs=1e-12)


def test_add_negative_factor_gets_negative_weight(planted):
    _, data = planted
    pool = AlphaPool(3, data)
    pool.add_factor(P("-1 * Delta(close, 5)"))
    assert pool.weights[0] < 0 and pool.train_ic > 0.5


def test_duplicate_is_noop(planted):
    _, data = planted
    pool = AlphaPool(3, data)
    pool.add_factor(P("Delta(close, 5)"))
    pool.add_factor(P("volume"))
    snap = pool.to_dict()
    res = pool.add_factor(P("Delta(close,5)"))
    assert (res.status, res.delta_ic) == ("duplicate", 0.0)
    assert pool.to_dict() == snap


def test_degenerate_rejected(planted):
    _, data = planted
    pool = AlphaPool(3, data)
    res = pool.add_factor(P("Log(-1 * volume)"))
    assert (res.status, res.delta_ic, len(pool)) == ("degenerate", 0.0, 0)


def test_capacity_eviction_of_weak_entry():
    _, data = planted_evalset(21, [1.0, 0.0, 0.0, 0.8], noise=1.0)
    pool = AlphaPool(2, data)
    pool.add_factor(P(BLOCKS[0]))
    pool.add_factor(P(BLOCKS[2]))           # noise factor
    before = pool.train_ic
    res = pool.add_factor(P(BLOCKS[3]))     # strong second signal
    assert res.evicted == dsl.to_formula(P(BLOCKS[2]))
    assert len(pool) == 2
    assert pool.train_ic >= before - 1e-6
    assert res.delta_ic == pytest.approx(pool.train_ic - before)


def leave_one_out(pool, entries):
    out = []
    for j in range(len(entries)):
        p = AlphaPool(pool.capacity, pool.data)
        p.entries = [e for i, e in enumerate(entries) if i != j]
        p.train_ic = p.recompute_ic()
        out.append(p.optimize_weights())
    return np.array(out)


@pytest.mark.parametrize("k", [2, 3, 4, 5])
def test_eviction_never_drops_most_important(k):
    rng = np.random.default_rng(100 + k)
    for trial in range(3):
        coefs = rng.permutation([1.0, 0.6, 0.3, 0.1, 0.0, 0.0])
        _, data = planted_evalset(int(rng.integers(1 << 30)), coefs, noise=0.7)
        order = rng.permutation(len(BLOCKS))[: k + 1]
        pool = AlphaPool(k, data)
        for j in order[:k]:
            pool.add_factor(P(BLOCKS[j]))
        # state just before eviction: k+1 entries, optimized
        full = AlphaPool(k + 1, data)
        full.entries = list(pool.entries)
        full.train_ic = pool.train_ic
        full.add_factor(P(BLOCKS[order[k]]))
        loo = leave_one_out(full, full.entries)
        res = pool.add_factor(P(BLOCKS[order[k]]))
        worst = int(np.argmin(loo))
        if np.sum(loo > loo[worst]) > 0:
            assert res.evicted != full.entries[worst].formula


def test_seed_classic_alphas(planted):
    panel, data = planted
    exprs = [P(t) for t in CLASSIC_ALPHAS.values()]
    pool = AlphaPool(20, data)
    pool.seed(exprs)
    assert 0 < len(pool) <= 5
    single = max(metrics.ic(data.raw(e), data.target).ic for e in exprs)
    assert pool.train_ic >= single - 1e-6


def test_seed_empty_and_degenerate(planted, caplog):
    _, data = planted
    pool = AlphaPool(5, data)
    pool.seed([])
    assert len(pool) == 0 and pool.train_ic == 0.0
    with caplog.at_level(logging.WARNING):
        pool.seed([P("Delta(close, 5)"), P("Log(-1 * volume)"), P("volume")])
    assert pool.formulas == ["Delta(close, 5)", "volume"]
    assert "Log" in caplog.text


def test_seed_over_capacity_raises(planted):
    _, data = planted
    with pytest.raises(PoolError):
        AlphaPool(1, data).seed([P("close"), P("open")])


def test_seeds_remain_evictable():
    _, data = planted_evalset(5, [0.0, 0.0, 0.0, 1.0], noise=0.5)
    pool = AlphaPool(1, data)
    pool.seed([P(BLOCKS[2])])
    res = pool.add_factor(P(BLOCKS[3]))
    assert res.evicted == dsl.to_formula(P(BLOCKS[2]))


def test_save_load_round_trip(tmp_path, planted):
    _, data = planted
    pool = AlphaPool(4, data)
    for text in ("Delta(close, 5)", "volume", "Corr(open, volume, 10)"):
        pool.add_factor(P(text))
    pool.save(tmp_path / "pool.json")
    back = AlphaPool.load(tmp_path / "pool.json", data)
    assert [e.expr for e in back.entries] == [e.expr for e in pool.entries]
    np.testing.assert_allclose(back.weights, pool.weights, rtol=1e-15, atol=0)
    assert back.recompute_ic() == pool.recompute_ic()
    assert back.train_ic == pool.train_ic
