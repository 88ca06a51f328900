"""Distributional post-processors for a frozen point forecaster.

``QuantileCalibrator`` emits a strictly increasing quantile fan anchored at the
central level; ``ConformalCalibrator`` learns a positive residual scale and
turns held-out normalised residuals into bands with finite-sample coverage.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .adapters import x_summary
from .autodiff import Tensor, no_grad
from .forecaster import ForecasterSpec, predict
from .nn import MLP, decode_params, encode_params

DEFAULT_LEVELS = (0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95)
FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


class CoverageInfeasibleError(ValueError):
    pass


class CalibrationStateError(RuntimeError):
    pass


# ---------------------------------------------------------------- pinball


def pinball(y, q, tau: float) -> float:
    """Mean pinball loss ``u (tau - 1{u < 0})`` with ``u = y - q``."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"quantile level must lie in (0, 1), got {tau}")
    u = np.asarray(y, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return float(np.mean(np.where(u >= 0, u * tau, u * (tau - 1.0))))


def pinball_tensor(y, q: Tensor, tau: float) -> Tensor:
    u = (y if isinstance(y, Tensor) else Tensor(y)) - q
    # tau*u + (-u)_+ equals u*tau for u >= 0 and u*(tau - 1) otherwise
    return u * tau + ad.relu(-u)


@dataclass
class IntervalSet:
    point: np.ndarray                 # (N, H, m)
    lower: np.ndarray
    upper: np.ndarray
    alpha: float | None = None
    levels: tuple | None = None
    fan: np.ndarray | None = None     # (N, J, H, m) for quantile output

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def width_stats(self) -> dict:
        w = self.width
        return {"mean": float(w.mean()), "median": float(np.median(w)), "max": float(w.max())}


def _features(X: Tensor, Y_hat: Tensor) -> Tensor:
    n = X.shape[0]
    return ad.concat([Y_hat.reshape(n, -1), x_summary(X)], axis=-1)


# ---------------------------------------------------------------- quantile


class QuantileCalibrator:
    def __init__(self, L: int, d: int, H: int, m: int, levels=DEFAULT_LEVELS, eps: float = 0.5,
                 eps_s: float = 1e-3, lam_cal: float = 0.1, lam_mag: float = 1e-4,
                 sharpness: float = 50.0, hidden: int = 64, depth: int = 2, seed: int = 0):
        levels = tuple(float(t) for t in levels)
        if any(not 0.0 < t < 1.0 for t in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigError("levels must be strictly increasing inside (0, 1)")
        self.L, self.d, self.H, self.m = L, d, H, m
        self.levels = levels
        self.J = len(levels)
        self.anchor_index = self.J // 2
        self.eps, self.eps_s = eps, eps_s
        self.lam_cal, self.lam_mag, self.sharpness = lam_cal, lam_mag, sharpness
        self.hidden, self.depth, self.seed = hidden, depth, seed
        self.n_heads = 2 + self.J - 1
        self.mlp = MLP(H * m + 2 * d, self.n_heads * H * m, hidden, depth, np.random.default_rng(seed))
        self.params = dict(self.mlp.params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def heads(self, X: Tensor, Y_hat: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        n = X.shape[0]
        out = self.mlp(_features(X, Y_hat)).reshape(n, self.n_heads, self.H, self.m)
        a = ad.tanh(out[:, 0])
        s = ad.softplus(out[:, 1]) + self.eps_s
        incr = out[:, 2:]
        return a, s, incr

    def fan(self, X, Y_hat) -> tuple[Tensor, Tensor]:
        """Quantiles ``(N, J, H, m)`` and the bounded anchor direction ``a``."""
        X = X if isinstance(X, Tensor) else Tensor(X)
        Y_hat = Y_hat if isinstance(Y_hat, Tensor) else Tensor(Y_hat)
        n = X.shape[0]
        a, s, incr = self.heads(X, Y_hat)
        shape = (n, 1, self.H, self.m)
        qs: list[Tensor | None] = [None] * self.J
        qs[self.anchor_index] = (Y_hat + a * s * self.eps).reshape(shape)
        for j in range(self.anchor_index, self.J - 1):
            qs[j + 1] = qs[j] + ad.softplus(incr[:, j]).reshape(shape)
        for j in range(self.anchor_index - 1, -1, -1):
            qs[j] = qs[j + 1] - ad.softplus(incr[:, j]).reshape(shape)
        return ad.concat(qs, axis=1), a

    def loss(self, X, Y_hat, Y) -> Tensor:
        q, a = self.fan(X, Y_hat)
        Yt = Tensor(np.asarray(Y, dtype=np.float64)[:, None])
        pin = ad.mean(ad.concat([ad.mean(pinball_tensor(Yt, q[:, j:j + 1], t)).reshape(1)
                                 for j, t in enumerate(self.levels)]))
        total = pin
        if self.lam_cal:
            # steep sigmoid stands in for 1{y > q}; its mean should be 1 - tau
            above = ad.sigmoid((Yt - q) * self.sharpness)
            frac = ad.mean(above.transpose(1, 0, 2, 3).reshape(self.J, -1), axis=1)
            target = Tensor(1.0 - np.asarray(self.levels))
            total = total + ad.tsum(ad.square(frac - target)) * self.lam_cal
        if self.lam_mag:
            total = total + ad.mean(ad.square(a)) * self.lam_mag
        return total

    def training_loss(self, spec: ForecasterSpec, X, Y, rng=None) -> Tensor:
        return self.loss(Tensor(X), _frozen(spec, X), Y)

    def eval_loss(self, spec: ForecasterSpec, X, Y) -> float:
        with no_grad():
            return float(self.loss(Tensor(X), _frozen(spec, X), Y).data)

    def to_json(self) -> str:
        doc = {"format_version": FORMAT_VERSION, "kind": "quantile",
               "shapes": {"L": self.L, "d": self.d, "H": self.H, "m": self.m},
               "levels": list(self.levels), "eps": self.eps, "eps_s": self.eps_s,
               "lam_cal": self.lam_cal, "lam_mag": self.lam_mag, "sharpness": self.sharpness,
               "hidden": self.hidden, "depth": self.depth, "theta": encode_params(self.params)}
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "QuantileCalibrator":
        doc = json.loads(text)
        s = doc["shapes"]
        qc = cls(s["L"], s["d"], s["H"], s["m"], doc["levels"], doc["eps"], doc["eps_s"],
                 doc["lam_cal"], doc["lam_mag"], doc["sharpness"], doc["hidden"], doc["depth"])
        for k, v in decode_params(doc["theta"]).items():
            qc.params[k].data[...] = v.data
        return qc


def _frozen(spec: ForecasterSpec, X) -> Tensor:
    with no_grad():
        return Tensor(predict(spec, np.asarray(X, dtype=np.float64)).data)


def quantile_fan(qc: QuantileCalibrator, X, Y_hat) -> IntervalSet:
    X = np.asarray(X, dtype=np.float64)
    Y_hat = np.asarray(Y_hat, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X, Y_hat = X[None], Y_hat[None]
    with no_grad():
        q = qc.fan(X, Y_hat)[0].data
    return IntervalSet(Y_hat, q[:, 0], q[:, -1], levels=qc.levels, fan=q)


# ---------------------------------------------------------------- conformal


def conformal_rank(n: int, alpha: float) -> int:
    """1-indexed order statistic ``ceil((1 - alpha)(n + 1))``."""
    # the small offset absorbs float error in products such as 0.9 * 10
    return math.ceil((1.0 - alpha) * (n + 1) - 1e-9)


def min_calibration_size(alpha: float) -> int:
    return math.ceil(1.0 / alpha - 1e-9) - 1


def conformal_quantile(scores, alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    s = np.sort(np.asarray(scores, dtype=np.float64).reshape(-1))
    n = s.size
    k = conformal_rank(n, alpha)
    if k > n or n == 0:
        raise CoverageInfeasibleError(
            f"{n} calibration scores cannot give 1 - alpha = {1 - alpha:g} coverage; "
            f"need at least {min_calibration_size(alpha)}")
    return float(s[k - 1])


SCALE_LOSSES = ("ratio", "nll")
RESIDUAL_MODES = ("per_horizon", "joint")


class ConformalCalibrator:
    """Learned positive scale ``w(X, Y^)`` plus a split-conformal radius ``kappa``.

    ``per_horizon`` mode keeps one scale per horizon step (pooled over targets)
    and calibrates on the max-over-horizon normalised score, so the bands hold
    jointly across the horizon. ``joint`` mode uses one Frobenius residual and
    one scale per window.
    """

    def __init__(self, L: int, d: int, H: int, m: int, alpha: float = 0.1, mode: str = "per_horizon",
                 lam_w: float = 0.1, eps_w: float = 1e-3, scale_loss: str = "ratio",
                 hidden: int = 64, depth: int = 2, seed: int = 0):
        if mode not in RESIDUAL_MODES:
            raise ConfigError(f"mode must be one of {RESIDUAL_MODES}")
        if scale_loss not in SCALE_LOSSES:
            raise ConfigError(f"scale_loss must be one of {SCALE_LOSSES}")
        if not 0.0 < alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        self.L, self.d, self.H, self.m = L, d, H, m
        self.alpha, self.mode, self.lam_w, self.eps_w = alpha, mode, lam_w, eps_w
        self.scale_loss = scale_loss
        self.hidden, self.depth, self.seed = hidden, depth, seed
        self.n_scales = H if mode == "per_horizon" else 1
        # final bias = softplus^-1(1 - eps_w) so the scale starts at exactly 1
        b0 = math.log(math.expm1(1.0 - eps_w))
        self.mlp = MLP(H * m + 2 * d, self.n_scales, hidden, depth, np.random.default_rng(seed),
                       out_bias=b0)
        self.params = dict(self.mlp.params)
        self.kappa: float | None = None
        self.n_cal: int | None = None
        self.calibration_scores: np.ndarray | None = None

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def scale(self, X, Y_hat) -> Tensor:
        X = X if isinstance(X, Tensor) else Tensor(X)
        Y_hat = Y_hat if isinstance(Y_hat, Tensor) else Tensor(Y_hat)
        return ad.softplus(self.mlp(_features(X, Y_hat))) + self.eps_w

    def residual_norms(self, Y, Y_hat) -> np.ndarray:
        r = np.asarray(Y, dtype=np.float64) - np.asarray(Y_hat, dtype=np.float64)
        if self.mode == "per_horizon":
            return np.sqrt(np.sum(r ** 2, axis=2))
        return np.sqrt(np.sum(r.reshape(r.shape[0], -1) ** 2, axis=1, keepdims=True))

    def loss(self, X, Y_hat, Y) -> Tensor:
        w = self.scale(X, Y_hat)
        rho = Tensor(self.residual_norms(Y, Y_hat.data if isinstance(Y_hat, Tensor) else Y_hat))
        fit = ad.mean(rho / w)
        if self.scale_loss == "nll":
            fit = fit + ad.mean(ad.log(w))
        return fit + ad.mean(ad.square(w - 1.0)) * self.lam_w

    def training_loss(self, spec: ForecasterSpec, X, Y, rng=None) -> Tensor:
        return self.loss(Tensor(X), _frozen(spec, X), Y)

    def eval_loss(self, spec: ForecasterSpec, X, Y) -> float:
        with no_grad():
            return float(self.loss(Tensor(X), _frozen(spec, X), Y).data)

    def scale_array(self, X, Y_hat) -> np.ndarray:
        with no_grad():
            return self.scale(np.asarray(X, dtype=np.float64), np.asarray(Y_hat, dtype=np.float64)).data

    def scores(self, X, Y, Y_hat) -> np.ndarray:
        s = self.residual_norms(Y, Y_hat) / self.scale_array(X, Y_hat)
        return s.max(axis=1)

    def collapse_fraction(self, X, Y_hat) -> float:
        return float(np.mean(self.scale_array(X, Y_hat) < 2 * self.eps_w))

    def to_json(self) -> str:
        doc = {"format_version": FORMAT_VERSION, "kind": "conformal",
               "shapes": {"L": self.L, "d": self.d, "H": self.H, "m": self.m},
               "alpha": self.alpha, "mode": self.mode, "lam_w": self.lam_w, "eps_w": self.eps_w,
               "scale_loss": self.scale_loss, "hidden": self.hidden, "depth": self.depth,
               "kappa": self.kappa, "n_cal": self.n_cal, "theta": encode_params(self.params)}
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ConformalCalibrator":
        doc = json.loads(text)
        s = doc["shapes"]
        cc = cls(s["L"], s["d"], s["H"], s["m"], doc["alpha"], doc["mode"], doc["lam_w"],
                 doc["eps_w"], doc["scale_loss"], doc["hidden"], doc["depth"])
        for k, v in decode_params(doc["theta"]).items():
            cc.params[k].data[...] = v.data
        cc.kappa, cc.n_cal = doc["kappa"], doc["n_cal"]
        return cc


def fit_conformal_scale(cc: ConformalCalibrator, spec: ForecasterSpec, X, Y, cfg=None):
    """Train the scale net on the proper-training split (must be disjoint from calibration).

    No validation split is consumed, so early stopping is switched off.
    """
    from .training import TrainConfig, train_batch

    cfg = cfg or TrainConfig(epochs=50, lr=1e-2, batch_size=64)
    cfg = TrainConfig(**{**cfg.to_dict(), "early_stop_patience": 0})
    trained, trace = train_batch(cc, spec, X, Y, cfg)
    frac = cc.collapse_fraction(X, predict_np(spec, X))
    if frac > 0.5:
        warnings.warn(f"scale collapsed to its floor on {frac:.0%} of windows; increase lam_w",
                      RuntimeWarning)
    return trained, trace


def predict_np(spec: ForecasterSpec, X) -> np.ndarray:
    with no_grad():
        return predict(spec, np.asarray(X, dtype=np.float64)).data


def conformal_calibrate(cc: ConformalCalibrator, spec: ForecasterSpec, X_cal, Y_cal) -> float:
    scores = cc.scores(X_cal, Y_cal, predict_np(spec, X_cal))
    cc.kappa = conformal_quantile(scores, cc.alpha)
    cc.n_cal = int(scores.size)
    cc.calibration_scores = np.sort(scores)
    return cc.kappa


def conformal_interval(cc: ConformalCalibrator, X, Y_hat) -> IntervalSet:
    if cc.kappa is None:
        raise CalibrationStateError("conformal calibrator has not been calibrated")
    X = np.asarray(X, dtype=np.float64)
    Y_hat = np.asarray(Y_hat, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X, Y_hat = X[None], Y_hat[None]
    w = cc.scale_array(X, Y_hat)                      # (N, H) or (N, 1)
    radius = np.broadcast_to((cc.kappa * w)[:, :, None], Y_hat.shape)
    return IntervalSet(Y_hat, Y_hat - radius, Y_hat + radius, alpha=cc.alpha)


def calibration_metadata(cc: ConformalCalibrator, seed: int | None = None) -> dict:
    return {"alpha": cc.alpha, "n_cal": cc.n_cal, "kappa": cc.kappa,
            "rank_convention": "ceil((1-alpha)(n+1))", "residual_mode": cc.mode, "seed": seed}


def write_interval_csv(iv: IntervalSet, path, window_ids=None) -> None:
    """One row per (window, horizon, target); quantile fans emit each central pair (tau, 1 - tau)."""
    N, H, m = iv.point.shape
    ids = list(range(N)) if window_ids is None else list(window_ids)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_id", "horizon", "target", "point", "lower", "upper", "level_or_alpha"])
        if iv.fan is None:
            for i in range(N):
                for h in range(H):
                    for k in range(m):
                        w.writerow([ids[i], h + 1, k, repr(float(iv.point[i, h, k])),
                                    repr(float(iv.lower[i, h, k])), repr(float(iv.upper[i, h, k])),
                                    iv.alpha])
            return
        J = len(iv.levels)
        pairs = [(j, J - 1 - j) for j in range(J // 2)]
        for i in range(N):
            for h in range(H):
                for k in range(m):
                    for lo, hi in pairs:
                        w.writerow([ids[i], h + 1, k, repr(float(iv.point[i, h, k])),
                                    repr(float(iv.fan[i, lo, h, k])), repr(float(iv.fan[i, hi, h, k])),
                                    repr(round(1.0 - (iv.levels[hi] - iv.levels[lo]), 12))])
