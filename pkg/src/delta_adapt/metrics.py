"""Point and interval scores over ``(N, H, m)`` forecasts."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricReport:
    mse: float
    mae: float
    per_horizon_mse: list
    per_horizon_mae: list
    n: int
    picp: float | None = None
    mean_width: float | None = None
    mse_improvement: float | None = None
    mae_improvement: float | None = None
    mean_improvement: float | None = None
    baseline: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _check(preds, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} != target shape {t.shape}")
    if p.ndim == 2:
        p, t = p[None], t[None]
    return p, t


def point_metrics(preds, targets, w_h=None) -> MetricReport:
    """Horizon-weighted MSE and MAE, averaged over windows, horizons and targets."""
    p, t = _check(preds, targets)
    H = p.shape[1]
    w = np.ones(H) if w_h is None else np.asarray(w_h, dtype=np.float64)
    if w.shape != (H,):
        raise ValueError(f"horizon weights must have length {H}")
    err = p - t
    wv = w[None, :, None]
    mse = float(np.mean(wv * err ** 2))
    mae = float(np.mean(wv * np.abs(err)))
    return MetricReport(mse, mae, np.mean(err ** 2, axis=(0, 2)).tolist(),
                        np.mean(np.abs(err), axis=(0, 2)).tolist(), int(p.shape[0]))


def interval_metrics(lower, upper, targets, point=None) -> MetricReport:
    lo, hi = _check(lower, upper)
    _, y = _check(lower, targets)
    if np.any(lo > hi):
        raise ValueError("interval lower bound exceeds upper bound")
    inside = (y >= lo) & (y <= hi)
    base = point_metrics(point, targets) if point is not None else point_metrics(y, y)
    base.picp = float(np.mean(inside))
    base.mean_width = float(np.mean(hi - lo))
    return base


def improvement_pct(value: float, baseline: float) -> float | None:
    """``100 (baseline - value) / baseline``; positive means better, None if undefined."""
    if baseline == 0:
        return None
    return 100.0 * (baseline - value) / baseline


def improvement(report: MetricReport, baseline: MetricReport, name: str = "frozen") -> MetricReport:
    """Attach MSE, MAE and mean-of-both relative improvements against ``baseline``."""
    report.mse_improvement = improvement_pct(report.mse, baseline.mse)
    report.mae_improvement = improvement_pct(report.mae, baseline.mae)
    if report.mse_improvement is not None and report.mae_improvement is not None:
        report.mean_improvement = 0.5 * (report.mse_improvement + report.mae_improvement)
    report.baseline = name
    return report


def display_pct(p: float | None) -> str:
    return "n/a" if p is None else f"{round(p):d}%"
