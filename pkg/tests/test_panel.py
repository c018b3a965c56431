import datetime as dt

import numpy as np
import pytest

from alphaforge import panel as pn
from alphaforge.synthetic import business_days, make_panel, write_csv

HEADER = "date,ticker,open,high,low,close,volume,vwap\n"


def write(tmp_path, body, header=HEADER, name="bars.csv"):
    path = tmp_path / name
    path.write_text(header + body)
    return path


def row(date, ticker, close=10.0, volume=100):
    return f"{date},{ticker},{close},{close + 1},{close - 1},{close},{volume},{close}\n"


def test_dense_ingest(tmp_path):
    body = "".join(row(d, t) for d in ("2020-01-02", "2020-01-03", "2020-01-06") for t in "AB")
    p = pn.ingest_csv(write(tmp_path, body))
    assert (p.n_stocks, p.n_days) == (2, 3)
    assert p.mask.all()
    assert p.feature_names == ("open", "close", "high", "low", "volume", "vwap")


def test_late_listing_masked(tmp_path):
    body = row("2020-01-02", "A") + row("2020-01-03", "A") + row("2020-01-03", "B") \
        + row("2020-01-06", "A") + row("2020-01-06", "B")
    p = pn.ingest_csv(write(tmp_path, body))
    b = p.tickers.index("B")
    assert p.mask[b].tolist() == [False, True, True]
    assert np.isnan(p.values[b, 0]).all()


def test_schema_mapping(tmp_path):
    header = "Day,Sym,open,high,low,close,volume,vwap\n"
    p = pn.ingest_csv(write(tmp_path, row("2020-01-02", "A"), header), {"date": "Day", "ticker": "Sym"})
    assert p.tickers == ("A",)


@pytest.mark.parametrize("body,match", [
    (row("2020-01-02", "A") + "2020-01-03,A,1,1,1,1,abc,1\n", r":3: volume"),
    (row("2020-01-02", "A") + row("2020-01-02", "A"), r":3: duplicate"),
    (row("2020-01-02", "A") + "2020-01-03,A,1,1\n", r":3: expected"),
    (row("2020-01-02", "A", volume=-1), r":2: negative volume"),
    (row("2020-13-02", "A"), r":2: bad date"),
])
def test_malformed_rows_name_line(tmp_path, body, match):
    with pytest.raises(pn.DataError, match=match):
        pn.ingest_csv(write(tmp_path, body))


def test_empty_and_missing_column(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(pn.DataError, match="empty"):
        pn.ingest_csv(empty)
    with pytest.raises(pn.DataError, match="no data rows"):
        pn.ingest_csv(write(tmp_path, ""))
    with pytest.raises(pn.DataError, match="missing column"):
        pn.ingest_csv(write(tmp_path, "2020-01-02,A,1,1\n", "date,ticker,open,close\n"))


def test_ingest_deterministic_and_round_trip(tmp_path):
    src = make_panel(6, 40, seed=3, listing_gaps=True)
    path = tmp_path / "syn.csv"
    write_csv(src, path)
    a, b = pn.ingest_csv(path), pn.ingest_csv(path)
    assert a.checksum() == b.checksum()
    np.testing.assert_array_equal(a.mask, src.mask)
    np.testing.assert_array_equal(a.values, src.values)


def test_save_load(tmp_path):
    p = make_panel(4, 30, seed=1, listing_gaps=True)
    p.save(tmp_path / "p.npz")
    assert pn.FeaturePanel.load(tmp_path / "p.npz").checksum() == p.checksum()


def test_invariants_enforced():
    p = make_panel(3, 10)
    with pytest.raises(pn.DataError):
        pn.FeaturePanel(p.values, p.mask, p.dates[::-1], p.tickers)
    with pytest.raises(pn.DataError):
        pn.FeaturePanel(p.values, p.mask, p.dates, ("A", "A", "B"))


def one_stock(close):
    close = np.asarray(close, dtype=float)
    values = np.repeat(close[None, :, None], 6, axis=2)
    return pn.FeaturePanel(values, np.ones((1, len(close)), bool), business_days("2020-01-01", len(close)), ("X",))


def test_targets_examples():
    assert pn.compute_targets(one_stock([100, 110]), 1).returns[0, 0] == pytest.approx(0.10, abs=1e-15)
    r = pn.compute_targets(one_stock([7.0] * 12), 5).returns
    assert (r[0, :7] == 0).all() and np.isnan(r[0, 7:]).all()
    p = make_panel(2, 30, seed=0)
    mask = p.mask.copy()
    mask[0, 15] = False
    q = pn.FeaturePanel(np.where(mask[..., None], p.values, np.nan), mask, p.dates, p.tickers)
    r = pn.compute_targets(q, 5).returns
    assert np.isnan(r[0, 10]) and np.isnan(r[0, 15])
    assert np.isfinite(r[0, 9]) and np.isfinite(r[1, 10])


@pytest.mark.parametrize("h", [0, 30, 31])
def test_bad_horizon(h):
    with pytest.raises(pn.DataError):
        pn.compute_targets(make_panel(2, 30), h)


def test_translation_equivariance():
    p = make_panel(5, 60, seed=2)
    q = pn.FeaturePanel(p.values[:, 1:], p.mask[:, 1:], p.dates[1:], p.tickers)
    a = pn.compute_targets(p, 10).returns
    b = pn.compute_targets(q, 10).returns
    np.testing.assert_array_equal(a[:, 1:], b)


def test_targets_ignore_far_future_and_past():
    p = make_panel(5, 60, seed=4)
    h, t = 10, 25
    base = pn.compute_targets(p, h).returns[:, t]
    values = p.values.copy()
    values[:, t + h + 1:] = 0.0
    values[:, :t] = 1.0
    q = pn.FeaturePanel(values, p.mask, p.dates, p.tickers)
    np.testing.assert_array_equal(pn.compute_targets(q, h).returns[:, t], base)


def test_split_partition():
    p = make_panel(3, 100)
    d = p.dates
    tr, va, te = pn.split(p, (d[0], d[59]), (d[60], d[79]), (d[80], d[99]))
    assert (tr.n_days, va.n_days, te.n_days) == (60, 20, 20)
    assert tr.tickers == te.tickers == p.tickers
    assert va.materialize().dates == d[60:80]


def test_split_errors():
    p = make_panel(3, 100)
    d = p.dates
    with pytest.raises(pn.DataError, match="overlap"):
        pn.split(p, (d[0], d[60]), (d[60], d[79]), (d[80], d[99]))
    with pytest.raises(pn.DataError, match="outside"):
        pn.split(p, (d[0], d[59]), (d[60], d[79]), (d[80], "2099-01-01"))
    with pytest.raises(pn.DataError, match="no trading days"):
        # weekend between two trading days
        fri = next(i for i in range(81, 99) if dt.date.fromisoformat(d[i]).weekday() == 4)
        sat = (dt.date.fromisoformat(d[fri]) + dt.timedelta(days=1)).isoformat()
        sun = (dt.date.fromisoformat(d[fri]) + dt.timedelta(days=2)).isoformat()
        pn.split(p, (d[0], d[59]), (d[60], d[79]), (sat, sun))
