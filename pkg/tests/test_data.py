import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delta_adapt.data import (SPLITS, DataError, SeriesFrame, SyntheticSpec, generate, load_csv, make_windows,
                              oracle_backbone, windows_from_array, write_csv)
from delta_adapt.forecaster import predict_array


def _frame(T, d=2, seed=0):
    v = np.random.default_rng(seed).standard_normal((T, d))
    return SeriesFrame(tuple(float(t) for t in range(T)), v, tuple(f"c{j}" for j in range(d)))


# ---------------------------------------------------------------- CSV


def test_toy_csv(tmp_path):
    p = tmp_path / "toy.csv"
    p.write_text("date,a,b\n2020-01-01 00:00,1,2\n2020-01-01 01:00,3,4\n2020-01-01 02:00,5,6\n")
    fr = load_csv(p)
    assert (fr.T, fr.d) == (3, 2)
    assert fr.names == ("a", "b")
    assert np.array_equal(fr.values, [[1, 2], [3, 4], [5, 6]])


def test_shuffled_timestamps_name_first_inversion(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("date,a\n2020-01-01 00:00,1\n2020-01-01 02:00,2\n2020-01-01 01:00,3\n2020-01-01 03:00,4\n")
    with pytest.raises(DataError, match="row 2"):
        load_csv(p)


def test_etth1_shaped_file(tmp_path):
    cols = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"]
    lines = ["date," + ",".join(cols)]
    rng = np.random.default_rng(0)
    for h in range(48):
        row = ",".join(f"{v:.3f}" for v in rng.standard_normal(7))
        lines.append(f"2016-07-{1 + h // 24:02d} {h % 24:02d}:00:00,{row}")
    p = tmp_path / "ETTh1.csv"
    p.write_text("\n".join(lines) + "\n")
    fr = load_csv(p, target_cols=["OT"])
    assert fr.d == 7 and fr.T == 48 and fr.column("OT") == 6


def test_missing_column_and_bad_cell(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("date,a\n0,1\n1,oops\n")
    with pytest.raises(DataError, match="column 'zz'"):
        load_csv(p, target_cols=["zz"])
    with pytest.raises(DataError, match="row 3"):
        load_csv(p)


def test_nan_rows_dropped_and_counted(tmp_path):
    p = tmp_path / "n.csv"
    p.write_text("date,a\n0,1\n1,nan\n2,3\n")
    fr = load_csv(p)
    assert fr.T == 2 and fr.dropped_rows == 1


def test_csv_round_trip_is_bit_exact(tmp_path):
    fr = _frame(20, 3)
    write_csv(fr, tmp_path / "r.csv")
    back = load_csv(tmp_path / "r.csv")
    assert back.values.tobytes() == fr.values.tobytes()
    assert back.names == fr.names


# ---------------------------------------------------------------- windows


def test_window_counts():
    assert len(make_windows(_frame(7), 4, 3)) == 1
    assert len(make_windows(_frame(16), 4, 3)) == 10
    with pytest.raises(DataError, match="at least L \\+ H = 7"):
        make_windows(_frame(6), 4, 3)
    with pytest.raises(DataError):
        make_windows(_frame(20), 4, 3, splits=(0.5, 0.5, 0.5, 0.0))


def test_train_rows_are_standardized():
    ws = make_windows(_frame(500, 3), 4, 2)
    a, b = ws.row_ranges["train"]
    Z = ws.scaler.transform(_frame(500, 3).values[a:b])
    assert np.max(np.abs(Z.mean(axis=0))) < 1e-10
    assert np.max(np.abs(Z.std(axis=0) - 1.0)) < 1e-10


def test_windows_hold_the_right_rows():
    fr = _frame(30, 2)
    ws = make_windows(fr, 4, 3, targets=["c1"])
    Z = ws.scaler.transform(fr.values)
    i = 5
    o = ws.origins[i]
    assert np.array_equal(ws.X[i], Z[o:o + 4])
    assert np.array_equal(ws.Y[i], Z[o + 4:o + 7, [1]])


def test_scaler_ignores_test_rows():
    fr = _frame(200, 2)
    ws = make_windows(fr, 4, 2)
    a, _ = ws.row_ranges["test"]
    v = np.array(fr.values)
    v[a:] += 1e6
    ws2 = make_windows(SeriesFrame(fr.timestamps, v, fr.names), 4, 2)
    assert np.array_equal(ws.scaler.mean, ws2.scaler.mean) and np.array_equal(ws.scaler.std, ws2.scaler.std)


@settings(max_examples=40, deadline=None)
@given(fr=st.lists(st.integers(1, 20), min_size=4, max_size=4), T=st.integers(10, 200),
       L=st.integers(1, 5), H=st.integers(1, 3))
def test_splits_never_share_a_row(fr, T, L, H):
    fracs = np.asarray(fr, dtype=float) / sum(fr)
    ws = make_windows(_frame(max(T, L + H)), L, H, splits=tuple(fracs))
    used = {}
    for s in SPLITS:
        for i in ws.indices(s):
            for r in range(ws.origins[i], ws.origins[i] + L + H):
                assert used.setdefault(r, s) == s
    lo = [ws.row_ranges[s] for s in SPLITS]
    assert all(lo[k][1] == lo[k + 1][0] for k in range(3))


def test_windows_from_array_shapes():
    X, Y = windows_from_array(np.arange(20.0).reshape(10, 2), 3, 2, [0, 1], [1])
    assert X.shape == (6, 3, 2) and Y.shape == (6, 2, 1)
    assert Y[0, 0, 0] == 7.0


# ---------------------------------------------------------------- generators


def test_bias_generator_residual_is_the_bias():
    fr, meta = generate(SyntheticSpec("bias", {"b": 0.05}, 3), 300)
    X, Y = windows_from_array(fr.values, 8, 4, [0, 1], [1])
    spec = oracle_backbone(meta, 8, 4, d=2)
    assert np.allclose(Y - predict_array(spec, X), 0.05, atol=1e-12)
    with pytest.raises(DataError):
        oracle_backbone(meta, 2, 1)


def test_gaussian_generator_std():
    fr, meta = generate(SyntheticSpec("exchangeable_gaussian", {"sigma": 1.0}, 0), 100_000)
    assert 0.99 <= fr.values.std() <= 1.01
    assert meta["sigma"] == 1.0


def test_planted_columns_matter_by_ablation():
    fr, meta = generate(SyntheticSpec("planted_features", {}, 0), 5000)
    x, y = fr.values[:-1, :10], fr.values[1:, 10]      # target at t reads covariates one row earlier
    w, *_ = np.linalg.lstsq(x, y, rcond=None)
    base = np.mean((x @ w - y) ** 2)

    def ablated(j):
        xa = x.copy()
        xa[:, j] = 0.0
        return np.mean((xa @ w - y) ** 2)

    assert meta["planted"] == [2, 5]
    assert ablated(2) > base + 0.5
    assert ablated(7) < base * 1.01


def test_regime_shift_metadata():
    fr, meta = generate(SyntheticSpec("regime_shift", {"t0": 1000, "shift": 2.0}, 0), 2000)
    assert meta["shift_time"] == 1000
    assert fr.values[1000:].mean() - fr.values[:1000].mean() == pytest.approx(2.0, abs=0.3)


def test_heteroscedastic_metadata():
    fr, meta = generate(SyntheticSpec("heteroscedastic", {}, 0), 20000)
    flag, y = fr.values[:-1, 0], fr.values[1:, 1]
    assert meta["sigma_ratio"] == 3.0
    assert y[flag > 0].std() / y[flag < 1].std() == pytest.approx(3.0, rel=0.05)


def test_generators_are_reproducible():
    a, _ = generate(SyntheticSpec("ar_drift", {}, 11), 100)
    b, _ = generate(SyntheticSpec("ar_drift", {}, 11), 100)
    assert a.values.tobytes() == b.values.tobytes()
    with pytest.raises(DataError):
        SyntheticSpec("random_walk")
