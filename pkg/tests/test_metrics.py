import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mprnet import metrics as M
from mprnet.model import MPRNet, ModelConfig
from mprnet.tensor import ShapeMismatch
from oracles import mape_loop, mase_loop, smape_loop


def test_perfect_forecast_scores_zero(rng):
    y = rng.uniform(1, 2, size=(4, 3))
    assert M.smape(y, y) == 0 and M.mape(y, y) == 0 and M.mse(y, y) == 0 and M.mae(y, y) == 0
    assert M.mase(y, y, rng.standard_normal(20), 1) == 0


def test_smape_antipodal_is_maximal(rng):
    y = rng.uniform(0.5, 2, size=10) * rng.choice([-1, 1], size=10)
    assert M.smape(-y, y) == pytest.approx(200.0, rel=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_metrics_match_loops(seed):
    r = np.random.default_rng(seed)
    p, t = r.standard_normal(30), r.standard_normal(30)
    assert M.smape(p, t) == pytest.approx(smape_loop(p, t), rel=1e-10)
    assert M.mape(p, t) == pytest.approx(mape_loop(p, t), rel=1e-10)
    insample = r.standard_normal(50)
    for m in (1, 4, 12):
        assert M.mase(p, t, insample, m) == pytest.approx(mase_loop(p, t, insample, m), rel=1e-10)


def test_mase_multichannel_averages_channels(rng):
    p, t, h = rng.standard_normal((6, 2)), rng.standard_normal((6, 2)), rng.standard_normal((30, 2))
    per = [mase_loop(p[:, c], t[:, c], h[:, c], 2) for c in range(2)]
    assert M.mase(p, t, h, 2) == pytest.approx(np.mean(per), rel=1e-12)


def test_mase_zero_scale():
    insample = np.tile([1.0, 2.0, 3.0, 4.0], 5)
    with pytest.raises(M.ZeroScale):
        M.mase(insample[:4], insample[:4], insample, 4)


def test_seasonal_naive_mase_is_near_one():
    r = np.random.default_rng(0)
    m, n = 12, 12_000
    t = np.arange(n + m)
    x = np.sin(2 * np.pi * t / m) + 0.3 * r.standard_normal(n + m)
    insample, future = x[:n], x[n:]
    assert M.mase(insample[-m:], future, insample, m) == pytest.approx(1.0, abs=0.35)
    # in expectation over many origins the ratio is exactly one
    errs = np.abs(x[m:] - x[:-m])
    assert errs[: n // 2].mean() / errs[n // 2:].mean() == pytest.approx(1.0, abs=0.05)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        M.smape(np.zeros(3), np.zeros(4))


def test_owa_examples():
    assert M.owa(13.0, 2.0, 13.0, 2.0) == 1.0
    assert M.owa(6.5, 1.0, 13.0, 2.0) == 0.5
    with pytest.raises(M.InvalidReference):
        M.owa(1.0, 1.0, 0.0, 1.0)


@pytest.mark.parametrize("subset,smape_v,mase_v,expected", [
    ("Average", 11.774, 1.571, 0.845),
    ("Yearly", 13.285, 2.961, 0.779),
    ("Quarterly", 10.011, 1.167, 0.88),
    ("Monthly", 12.668, 0.933, 0.878),
])
def test_owa_recomputes_from_component_scores(subset, smape_v, mase_v, expected):
    s2, m2 = M.M4_NAIVE2[subset]
    assert round(M.owa(smape_v, mase_v, s2, m2), 3) == pytest.approx(expected, abs=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16), st.integers(2, 8))
def test_metrics_permutation_invariant_and_nonnegative(seed, n):
    r = np.random.default_rng(seed)
    p, t, h = r.standard_normal((n, 5, 2)), r.standard_normal((n, 5, 2)), r.standard_normal((n, 20, 2))
    perm = r.permutation(n)
    a = M.evaluate(p, t, h, period=2, naive2_ref=(10.0, 1.0))
    b = M.evaluate(p[perm], t[perm], h[perm], period=2, naive2_ref=(10.0, 1.0))
    for key in ("mse", "mae", "smape", "mape", "mase", "owa"):
        va, vb = getattr(a, key), getattr(b, key)
        assert va >= 0 and va == pytest.approx(vb, rel=1e-12)


def test_report_owa_only_with_reference(rng):
    p, t, h = rng.standard_normal((2, 4, 1)), rng.standard_normal((2, 4, 1)), rng.standard_normal((2, 10, 1))
    assert M.evaluate(p, t, h).owa is None
    assert M.evaluate(p, t).mase is None
    rep = M.evaluate(p, t, h, naive2_ref=(1.0, 1.0), meta={"dataset": "x"})
    assert rep.owa is not None and rep.windows == 2
    assert '"dataset": "x"' in rep.to_json()
    assert "SMAPE" in rep.table()


def test_forecasts_scored_on_original_scale(rng):
    cfg = ModelConfig(history_len=16, horizon=4, channels=2, layers=1, query_len=3)
    model = MPRNet(cfg)
    for p in model.parameters():
        p.value = np.zeros_like(p.value)
    scales = np.array([1e-3, 1e3])
    hist = rng.standard_normal((5, 16, 2)) * scales + np.array([0.0, 5e3])
    true = rng.standard_normal((5, 4, 2)) * scales + np.array([0.0, 5e3])
    pred = model.predict(hist)
    # the zero network forecasts each window's mean in raw units
    np.testing.assert_allclose(pred[:, 0], hist.mean(axis=1), rtol=1e-12)
    expected = np.mean((pred - true) ** 2)
    assert M.evaluate(pred, true).mse == pytest.approx(expected, rel=1e-12)
    assert M.evaluate(pred, true).mse > 1e4  # dominated by the large channel


def test_repeat_last():
    h = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(M.repeat_last(h, 2), [[4, 5], [4, 5]])


def test_naive2_non_seasonal_is_last_value():
    x = np.array([1.0, 3.0, 2.0, 5.0, 4.0])
    np.testing.assert_array_equal(M.naive2(x, 3, 1), [4.0, 4.0, 4.0])


def test_naive2_reproduces_multiplicative_season():
    period = 4
    pattern = np.array([0.8, 1.2, 1.0, 1.0])
    x = 10.0 * np.tile(pattern, 8)
    fc = M.naive2(x, 6, period)
    np.testing.assert_allclose(fc, 10.0 * np.tile(pattern, 2)[:6], rtol=1e-10)
