import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mprnet.data import (M4_HORIZONS, STANDARD_ROWS, MissingColumn, ParseError, TooShort,
                         all_train_windows, inject_noise, load_csv, load_m4, sine_series,
                         split_and_window, standard_borders, write_csv)


def write(path, text):
    path.write_text(text)
    return path


def test_load_small_file(tmp_path):
    raw = load_csv(write(tmp_path / "a.csv", "date,a,OT\n2020-01-01,1,2\n2020-01-02,3,4\n2020-01-03,5,6\n"))
    assert raw.values.shape == (3, 2)
    assert raw.columns == ["a", "OT"]
    assert raw.timestamps == ["2020-01-01", "2020-01-02", "2020-01-03"]
    np.testing.assert_array_equal(raw.values[:, 1], [2, 4, 6])


def test_load_without_timestamp_and_column_selection(tmp_path):
    raw = load_csv(write(tmp_path / "a.csv", "x,y,z\n1,2,3\n4,5,6\n"), columns=["z", "x"])
    assert raw.timestamps is None
    np.testing.assert_array_equal(raw.values, [[3, 1], [6, 4]])


def test_parse_error_names_location(tmp_path):
    path = write(tmp_path / "bad.csv", "date,HUFL,OT\nd1,1.0,2.0\nd2,1.5,abc\nd3,1.0,2.0\n")
    with pytest.raises(ParseError, match=r"row 2, column 'OT'"):
        load_csv(path)


def test_missing_column(tmp_path):
    with pytest.raises(MissingColumn):
        load_csv(write(tmp_path / "a.csv", "a,b\n1,2\n"), columns=["OT"])


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        load_csv(tmp_path / "nope.csv")


def test_gap_rows_rejected_and_counted(tmp_path):
    raw = load_csv(write(tmp_path / "g.csv", "a,b\n1,2\n,3\n4,nan\n5,6\n"))
    assert raw.rejected_rows == 2
    np.testing.assert_array_equal(raw.values, [[1, 2], [5, 6]])


def test_csv_round_trip(tmp_path, rng):
    x = rng.standard_normal((5, 2))
    write_csv(tmp_path / "w.csv", x, ["a", "b"])
    np.testing.assert_array_equal(load_csv(tmp_path / "w.csv").values, x)


def test_all_train_window_count():
    split = all_train_windows(np.arange(10.0), 3, 2)
    assert len(split) == 6
    h, t = split.window(5)
    np.testing.assert_array_equal(h[:, 0], [5, 6, 7])
    np.testing.assert_array_equal(t[:, 0], [8, 9])


def test_too_short():
    with pytest.raises(TooShort):
        all_train_windows(np.arange(4.0), 3, 2)
    with pytest.raises(TooShort):
        split_and_window(np.arange(5.0), 3, 2)


# Standard benchmark split sizes.  The ETT/Electricity/Traffic/Weather figures count
# history positions (L=96); Exchange and ILI count full windows.
HISTORY_COUNTS = {
    "ETTh1": (8545, 2881, 2881),
    "ETTh2": (8545, 2881, 2881),
    "ETTm1": (34465, 11521, 11521),
    "ETTm2": (34465, 11521, 11521),
    "Electricity": (18317, 2633, 5261),
    "Traffic": (12185, 1757, 3509),
    "Weather": (36792, 5271, 10540),
}
WINDOW_COUNTS = {"Exchange": ((5120, 665, 1422), 96, 96), "ILI": ((617, 74, 170), 36, 24)}


@pytest.mark.parametrize("name", sorted(HISTORY_COUNTS))
def test_standard_history_counts(name):
    n = STANDARD_ROWS[name]
    data = split_and_window(np.zeros((n, 1)), 96, 96, borders=standard_borders(name, n, 96))
    assert data.history_counts() == HISTORY_COUNTS[name]


@pytest.mark.parametrize("name", sorted(WINDOW_COUNTS))
def test_standard_window_counts(name):
    expected, L, T = WINDOW_COUNTS[name]
    n = STANDARD_ROWS[name]
    data = split_and_window(np.zeros((n, 1)), L, T, borders=standard_borders(name, n, L))
    assert data.counts() == expected


def test_etth1_window_counts_at_horizon_96():
    n = STANDARD_ROWS["ETTh1"]
    data = split_and_window(np.zeros((n, 7)), 96, 96, borders=standard_borders("ETTh1", n, 96))
    assert data.counts() == (8449, 2785, 2785)


def test_validation_history_reaches_into_train():
    n, L, T = 200, 10, 4
    data = split_and_window(np.arange(float(n)), L, T)
    train_end = data.borders["train"][1]
    hist, tgt = data.val.window(0)
    assert hist[0, 0] == train_end - L and hist[-1, 0] == train_end - 1
    assert tgt[0, 0] == train_end
    # no target ever crosses its split's end
    for split in (data.train, data.val, data.test):
        _, last = split.window(len(split) - 1)
        assert last[-1, 0] == split.border[1] - 1


@settings(max_examples=30, deadline=None)
@given(n=st.integers(60, 200), L=st.integers(2, 8), T=st.integers(1, 5))
def test_history_then_target_contiguous(n, L, T):
    data = split_and_window(np.arange(float(n)), L, T)
    for split in (data.train, data.val, data.test):
        h, t = split.arrays()
        np.testing.assert_array_equal(h[:, -1, 0] + 1, t[:, 0, 0])


def test_rewindowing_is_bit_identical(rng):
    x = rng.standard_normal((300, 3))
    a = split_and_window(x, 12, 6, standardize=True)
    b = split_and_window(x, 12, 6, standardize=True)
    for s in ("train", "val", "test"):
        ha, ta = getattr(a, s).arrays()
        hb, tb = getattr(b, s).arrays()
        assert ha.tobytes() == hb.tobytes() and ta.tobytes() == tb.tobytes()


def test_standardize_uses_train_statistics(rng):
    x = rng.standard_normal((300, 2)) * 3 + 5
    data = split_and_window(x, 12, 6, standardize=True)
    a, b = data.borders["train"]
    np.testing.assert_allclose(data.train.data[a:b].mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(data.train.data[a:b].std(axis=0), 1.0, atol=1e-12)


def test_noise_alpha_zero_is_identity(rng):
    x = rng.standard_normal((20, 3))
    np.testing.assert_array_equal(inject_noise(x, 0.0, rng), x)


def test_noise_constant_input_unchanged(rng):
    out = inject_noise(np.full((50, 2), 3.0), 0.4, rng)
    assert np.std(out) == pytest.approx(0.0, abs=1e-12)


def test_noise_magnitude_monte_carlo():
    r = np.random.default_rng(21)
    x = np.tile(np.array([[0.0, 0.0], [2.0, 4.0]]), (50_000, 1))  # per-channel std 1 and 2
    out = inject_noise(x, 0.25, r)
    S = x.std(axis=0)
    emp = (out - x).std(axis=0)
    np.testing.assert_allclose(emp, 0.25 * S, rtol=0.02)


def test_noise_negative_alpha(rng):
    with pytest.raises(ValueError):
        inject_noise(np.ones((3, 1)), -0.1, rng)


def test_sine_series_is_seeded():
    a, b = sine_series(100, seed=3), sine_series(100, seed=3)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (100, 1)


def test_m4_loader(tmp_path):
    tr = write(tmp_path / "Yearly-train.csv", '"V1","V2","V3","V4"\n"Y1",1,2,3\n"Y2",4,5,\n')
    te = write(tmp_path / "Yearly-test.csv", '"V1","V2","V3"\n"Y1",7,8\n"Y2",9,10\n')
    series = load_m4(tr, te)
    assert [s.ident for s in series] == ["Y1", "Y2"]
    np.testing.assert_array_equal(series[1].insample, [4, 5])
    np.testing.assert_array_equal(series[0].outsample, [7, 8])
    assert M4_HORIZONS["Monthly"] == 18


def test_m4_loader_mismatched_ids(tmp_path):
    tr = write(tmp_path / "a.csv", "V1,V2\nY1,1\n")
    te = write(tmp_path / "b.csv", "V1,V2\nY2,1\n")
    with pytest.raises(ParseError):
        load_m4(tr, te)
