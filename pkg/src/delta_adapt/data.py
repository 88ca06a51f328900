"""CSV ingestion, leak-free windowing and synthetic generators with known truth."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "cal", "test")
DEFAULT_SPLITS = (0.6, 0.1, 0.1, 0.2)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SeriesFrame:
    timestamps: tuple
    values: np.ndarray
    names: tuple[str, ...]
    freq: str | None = None
    dropped_rows: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != len(self.names):
            raise DataError(f"values of shape {v.shape} do not match {len(self.names)} column names")
        if len(self.timestamps) != v.shape[0]:
            raise DataError("timestamps and values disagree in length")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"missing column {name!r}") from None


def _parse_time(s: str):
    s = s.strip()
    try:
        return float(s)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(s)
    except ValueError:
        raise DataError(f"unparsable timestamp {s!r}") from None


def _time_key(t):
    if isinstance(t, datetime):
        if t.tzinfo is None:
            t = t.replace(tzinfo=timezone.utc)
        return t.timestamp()
    return float(t)


def load_csv(path, target_cols=None, date_col: str | None = None, freq: str | None = None) -> SeriesFrame:
    """Read a header-first CSV whose date column is ISO-8601 or epoch seconds.

    Rows holding NaN are dropped and counted in ``dropped_rows``; non-numeric
    cells and non-increasing timestamps raise :class:`DataError` naming the row.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        date_col = date_col or header[0]
        if date_col not in header:
            raise DataError(f"missing column {date_col!r}")
        di = header.index(date_col)
        names = [h for i, h in enumerate(header) if i != di]
        for t in target_cols or ():
            if t not in names:
                raise DataError(f"missing column {t!r}")
        stamps, rows, dropped = [], [], 0
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"row {lineno}: expected {len(header)} cells, got {len(rec)}")
            vals = []
            for i, cell in enumerate(rec):
                if i == di:
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(f"row {lineno}: unparsable cell {cell!r} in column {header[i]!r}") from None
            if any(math.isnan(v) for v in vals):
                dropped += 1
                continue
            stamps.append(_parse_time(rec[di]))
            rows.append(vals)
    keys = [_time_key(t) for t in stamps]
    for i in range(1, len(keys)):
        if keys[i] <= keys[i - 1]:
            raise DataError(f"timestamps not strictly increasing at data row {i} "
                            f"({stamps[i - 1]} -> {stamps[i]})")
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return SeriesFrame(tuple(stamps), values, tuple(names), freq, dropped)


def write_csv(frame: SeriesFrame, path, date_col: str = "date") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([date_col, *frame.names])
        for t, row in zip(frame.timestamps, frame.values):
            ts = t.isoformat() if isinstance(t, datetime) else repr(t)
            w.writerow([ts, *(repr(float(v)) for v in row)])


# ---------------------------------------------------------------- windows


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, v: np.ndarray) -> np.ndarray:
        return (v - self.mean) / self.std

    def inverse(self, v: np.ndarray, cols=None) -> np.ndarray:
        if cols is None:
            return v * self.std + self.mean
        return v * self.std[list(cols)] + self.mean[list(cols)]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass(frozen=True)
class WindowSet:
    X: np.ndarray                  # (N, L, d) standardized
    Y: np.ndarray                  # (N, H, m) standardized
    origins: np.ndarray            # row index of each window's first context row
    L: int
    H: int
    input_cols: tuple[int, ...]
    target_cols: tuple[int, ...]
    scaler: Scaler
    row_ranges: dict = field(default_factory=dict)   # split -> (start, stop) rows
    labels: np.ndarray | None = None                  # split name per window, "" if straddling

    def __len__(self) -> int:
        return len(self.X)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(name)
        return self.X[idx], self.Y[idx]

    def indices(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        return np.flatnonzero(self.labels == name)


def make_windows(frame: SeriesFrame, L: int, H: int, targets=None, splits=DEFAULT_SPLITS,
                 inputs=None) -> WindowSet:
    """Stride-1 windows; rows split into contiguous train/val/cal/test blocks.

    A window belongs to a split only when all ``L + H`` of its rows lie inside
    that block, so no split shares a row with another. The z-score scaler is
    fit on train-block rows alone.
    """
    T = frame.T
    if T < L + H:
        raise DataError(f"series of length {T} is too short; need at least L + H = {L + H} rows")
    if len(splits) != 4 or abs(sum(splits) - 1.0) > 1e-9 or min(splits) < 0:
        raise DataError("split fractions must be four non-negative numbers summing to 1")
    cols = lambda spec: tuple(frame.column(c) if isinstance(c, str) else int(c) for c in spec)
    target_cols = cols(targets) if targets is not None else tuple(range(frame.d))
    input_cols = cols(inputs) if inputs is not None else tuple(range(frame.d))
    bounds = np.floor(np.cumsum([0.0, *splits]) * T + 1e-9).astype(int)
    bounds[-1] = T
    ranges = {s: (int(bounds[i]), int(bounds[i + 1])) for i, s in enumerate(SPLITS)}
    a, b = ranges["train"]
    fit_rows = frame.values[a:b] if b - a >= 2 else frame.values
    mu = fit_rows.mean(axis=0)
    sd = fit_rows.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    scaler = Scaler(mu, sd)
    Z = scaler.transform(frame.values)
    n = T - L - H + 1
    origins = np.arange(n)
    ix = origins[:, None] + np.arange(L)[None, :]
    iy = origins[:, None] + L + np.arange(H)[None, :]
    X = Z[ix][:, :, list(input_cols)]
    Y = Z[iy][:, :, list(target_cols)]
    labels = np.full(n, "", dtype=object)
    for s, (lo, hi) in ranges.items():
        inside = (origins >= lo) & (origins + L + H <= hi)
        labels[inside] = s
    return WindowSet(X, Y, origins, L, H, input_cols, target_cols, scaler, ranges, labels)


def windows_from_array(Z: np.ndarray, L: int, H: int, input_cols, target_cols) -> tuple[np.ndarray, np.ndarray]:
    """Plain stride-1 ``(X, Y)`` windows from an already-scaled ``(T, d)`` array."""
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[0] - L - H + 1
    if n < 1:
        raise DataError(f"need at least L + H = {L + H} rows")
    o = np.arange(n)
    X = Z[o[:, None] + np.arange(L)][:, :, list(input_cols)]
    Y = Z[o[:, None] + L + np.arange(H)][:, :, list(target_cols)]
    return X, Y


# ---------------------------------------------------------------- synthetic

SYNTHETIC_KINDS = ("bias", "ar_drift", "regime_shift", "planted_features", "heteroscedastic",
                   "exchangeable_gaussian")


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise DataError(f"unknown synthetic kind {self.kind!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(d["kind"], dict(d.get("params", {})), int(d.get("seed", 0)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "seed": self.seed}


def _ar1(rng, T, d, phi, sigma=1.0):
    x = np.zeros((T, d))
    innov = rng.standard_normal((T, d)) * sigma * math.sqrt(1 - phi ** 2)
    x[0] = rng.standard_normal(d) * sigma
    for t in range(1, T):
        x[t] = phi * x[t - 1] + innov[t]
    return x


def generate(spec: SyntheticSpec, T: int) -> tuple[SeriesFrame, dict]:
    """Reproducible stream plus the analytic truth that tests compare against."""
    if T < 1:
        raise DataError("T must be positive")
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    meta = {"kind": spec.kind, "seed": spec.seed, "T": T}
    if spec.kind == "bias":
        # target_t = x_{t - lag} + b: the lag selector is an exact backbone up to b
        lag, b = int(p.get("lag", 4)), float(p.get("b", 0.05))
        noise = float(p.get("noise", 0.0))
        x = _ar1(rng, T + lag, 1, float(p.get("phi", 0.8)))[:, 0]
        y = x[:T] + b + noise * rng.standard_normal(T)
        values = np.column_stack([x[lag:], y])
        names = ("x", "y")
        meta.update(bias=b, lag=lag, noise=noise, source_col=0, target_col=1)
    elif spec.kind == "ar_drift":
        phi, slope = float(p.get("phi", 0.7)), float(p.get("slope", 1e-3))
        values = _ar1(rng, T, 1, phi) + slope * np.arange(T)[:, None]
        names = ("x",)
        meta.update(phi=phi, slope=slope)
    elif spec.kind == "regime_shift":
        phi = float(p.get("phi", 0.7))
        t0, shift = int(p.get("t0", T // 2)), float(p.get("shift", 1.0))
        base = _ar1(rng, T, 1, phi, float(p.get("sigma", 1.0)))
        base[t0:] += shift
        values, names = base, ("x",)
        meta.update(phi=phi, shift_time=t0, shift=shift)
    elif spec.kind == "planted_features":
        d = int(p.get("d", 10))
        planted = [int(c) for c in p.get("planted", [2, 5])]
        weights = [float(w) for w in p.get("weights", [1.0, -1.0][:len(planted)] or [1.0])]
        lag, noise = int(p.get("lag", 1)), float(p.get("noise", 0.1))
        x = _ar1(rng, T + lag, d, float(p.get("phi", 0.5)))
        y = sum(w * x[:T, c] for w, c in zip(weights, planted)) + noise * rng.standard_normal(T)
        values = np.column_stack([x[lag:], y])
        names = tuple(f"x{j}" for j in range(d)) + ("y",)
        meta.update(planted=planted, weights=weights, lag=lag, noise=noise, target_col=d,
                    input_cols=list(range(d)))
    elif spec.kind == "heteroscedastic":
        s0, s1 = float(p.get("sigma0", 1.0)), float(p.get("sigma1", 3.0))
        flag = rng.integers(0, 2, T).astype(np.float64)
        z = rng.standard_normal(T)
        y = np.zeros(T)
        y[1:] = np.where(flag[:-1] > 0, s1, s0) * z[1:]
        y[0] = s0 * z[0]
        values = np.column_stack([flag, y])
        names = ("flag", "y")
        meta.update(sigma0=s0, sigma1=s1, sigma_ratio=s1 / s0, flag_col=0, target_col=1)
    else:
        mu, sigma = float(p.get("mu", 0.0)), float(p.get("sigma", 1.0))
        d = int(p.get("d", 1))
        values = mu + sigma * rng.standard_normal((T, d))
        names = tuple(f"x{j}" for j in range(d))
        meta.update(mu=mu, sigma=sigma)
    stamps = tuple(float(t) for t in range(T))
    return SeriesFrame(stamps, values, names, freq="step"), meta


def oracle_backbone(meta: dict, L: int, H: int, d: int | None = None):
    """Matched linear backbone for the ``bias`` generator: ``Y^_h = x_{t + h - lag}``.

    Its residual on raw (unscaled) windows is exactly the planted bias.
    """
    from .forecaster import linear_ar

    lag = meta["lag"]
    if lag < H or lag > L + H - 1:
        raise DataError(f"lag {lag} must lie in [H, L + H - 1] for the matched backbone")
    d = d if d is not None else 1
    W = np.zeros((H, L * d))
    for h in range(H):
        W[h, (L + h - lag) * d + 0] = 1.0
    return linear_ar(W, np.zeros(H), L, d, H, 1)
