"""Sparse input mask ``X' = X * M(X)`` with a relaxed-Bernoulli sampler."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .forecaster import ForecasterSpec, predict
from .nn import MLP, decode_params, encode_params

HARDENING = ("soft", "threshold", "straight_through")
NOISE = ("logistic", "gumbel")
ENT_EPS = 1e-8
FORMAT_VERSION = 1


@dataclass
class SelectorLossWeights:
    l1: float = 1e-3
    ent: float = 1e-3
    tv: float = 1e-4
    bud: float = 0.0
    group: float = 0.0
    kappa: float = 1.0
    w_h: list | None = None

    def __post_init__(self):
        if min(self.l1, self.ent, self.tv, self.bud, self.group) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError("budget kappa must lie in (0, 1]")

    @classmethod
    def with_budget(cls, kappa: float, bud: float = 1.0, **kw) -> "SelectorLossWeights":
        return cls(bud=bud, kappa=kappa, **kw)


class MaskNet:
    """Per-covariate logit network.

    Covariate ``j`` is encoded as its own ``L``-vector, the per-covariate means of
    the window and a one-hot id; a shared MLP maps that to ``L`` logits, added to
    a learned ``(L, d)`` bias table.
    """

    def __init__(self, L: int, d: int, hidden: int = 32, depth: int = 2, tau_start: float = 5.0,
                 tau_end: float = 0.1, hardening: str = "soft", noise: str = "logistic",
                 init_logit: float = 1.0, seed: int = 0):
        if hardening not in HARDENING:
            raise ValueError(f"hardening must be one of {HARDENING}")
        if noise not in NOISE:
            raise ValueError(f"noise must be one of {NOISE}")
        if not (tau_start > 0 and tau_end > 0):
            raise ValueError("temperatures must be positive")
        self.L, self.d = L, d
        self.hidden, self.depth = hidden, depth
        self.tau_start, self.tau_end = float(tau_start), float(tau_end)
        self.tau = float(tau_start)
        self.hardening, self.noise = hardening, noise
        self.init_logit = init_logit
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.mlp = MLP(L + 2 * d, L, hidden, depth, rng)
        self.params = dict(self.mlp.params)
        self.params["logit_bias"] = Tensor(np.full((L, d), float(init_logit)), requires_grad=True)
        self._onehot = np.eye(d)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def anneal(self, epoch: int, n_epochs: int) -> float:
        """Geometric schedule from ``tau_start`` (epoch 0) to ``tau_end`` (last epoch)."""
        if n_epochs <= 1:
            self.tau = self.tau_end
        else:
            frac = min(max(epoch / (n_epochs - 1), 0.0), 1.0)
            self.tau = self.tau_start * (self.tau_end / self.tau_start) ** frac
        return self.tau

    def logits(self, X: Tensor) -> Tensor:
        n, L, d = X.shape
        cols = X.transpose(0, 2, 1)                                   # (n, d, L)
        means = ad.broadcast_to(ad.mean(X, axis=1).reshape(n, 1, d), (n, d, d))
        ids = Tensor(np.broadcast_to(self._onehot, (n, d, d)))
        z = ad.concat([cols, means, ids], axis=-1).reshape(n * d, L + 2 * d)
        out = self.mlp(z).reshape(n, d, L).transpose(0, 2, 1)         # (n, L, d)
        return out + self.params["logit_bias"]

    def to_json(self) -> str:
        doc = {"format_version": FORMAT_VERSION, "L": self.L, "d": self.d, "hidden": self.hidden,
               "depth": self.depth, "tau_start": self.tau_start, "tau_end": self.tau_end,
               "tau": self.tau, "hardening": self.hardening, "noise": self.noise,
               "theta": encode_params(self.params)}
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MaskNet":
        doc = json.loads(text)
        net = cls(doc["L"], doc["d"], doc["hidden"], doc["depth"], doc["tau_start"], doc["tau_end"],
                  doc["hardening"], doc["noise"])
        net.tau = doc["tau"]
        for k, v in decode_params(doc["theta"]).items():
            net.params[k].data[...] = v.data
        return net


@dataclass
class MaskSample:
    soft: Tensor
    hard: np.ndarray
    keep_rate: float
    gumbel_seed: int | None
    tau: float


def relaxed_noise(rng: np.random.Generator, shape, law: str = "logistic") -> np.ndarray:
    """Logistic (difference of two Gumbels) or single standard-Gumbel noise via inverse CDF."""
    u = rng.uniform(np.finfo(float).tiny, 1.0, size=shape)
    if law == "gumbel":
        return -np.log(-np.log(u))
    return np.log(u) - np.log1p(-u)


def sample_mask(net: MaskNet, X, rng: np.random.Generator | int | None = None,
                tau: float | None = None, noise: np.ndarray | None = None) -> MaskSample:
    """``sigma((logit + G) / tau)``; with ``rng=None`` the noise sits at its median 0."""
    X = X if isinstance(X, Tensor) else Tensor(X)
    single = X.ndim == 2
    if single:
        X = X.reshape(1, *X.shape)
    tau = net.tau if tau is None else tau
    if tau <= 0:
        raise ValueError("temperature must be positive")
    seed = None
    logits = net.logits(X)
    if noise is None and rng is not None:
        if isinstance(rng, (int, np.integer)):
            seed = int(rng)
            rng = np.random.default_rng(seed)
        noise = relaxed_noise(rng, logits.shape, net.noise)
    z = logits if noise is None else logits + Tensor(noise)
    soft = ad.sigmoid(z * (1.0 / tau))
    if single:
        soft = soft.reshape(net.L, net.d)
    hard = (soft.data > 0.5).astype(np.float64)
    return MaskSample(soft, hard, float(np.mean(soft.data)), seed, tau)


def harden(net: MaskNet, M_soft: Tensor) -> Tensor:
    """Threshold at 0.5; straight-through keeps the sigmoid's gradient."""
    if net.hardening == "straight_through":
        return ad.straight_through(M_soft)
    if net.hardening == "threshold":
        return Tensor((M_soft.data > 0.5).astype(np.float64))
    raise ValueError("harden needs hardening in {'threshold', 'straight_through'}")


def apply_mask(net: MaskNet, X: Tensor, sample: MaskSample) -> tuple[Tensor, Tensor]:
    """Masked input and the mask actually used in the forward pass."""
    M = sample.soft if net.hardening == "soft" else harden(net, sample.soft)
    return X * M, M


# ---------------------------------------------------------------- loss


def binary_entropy(M: Tensor) -> Tensor:
    return -(M * ad.log(M + ENT_EPS) + (1.0 - M) * ad.log(1.0 - M + ENT_EPS))


PRED_LOSSES = ("mse", "mae", "pinball")


def pred_loss(Y_pred: Tensor, Y, kind: str = "mse", w_h=None, tau: float = 0.5) -> Tensor:
    Y = Y if isinstance(Y, Tensor) else Tensor(Y)
    H = Y.shape[-2]
    w = Tensor(np.ones(H) if w_h is None else np.asarray(w_h, dtype=np.float64)).reshape(H, 1)
    err = Y_pred - Y
    if kind == "mse":
        return ad.mean(w * ad.square(err))
    if kind == "mae":
        return ad.mean(w * ad.tabs(err))
    if kind == "pinball":
        # under-prediction (err < 0) costs tau, over-prediction 1 - tau
        return ad.mean(w * (ad.relu(-err) * tau + ad.relu(err) * (1.0 - tau)))
    raise ValueError(f"unknown prediction loss {kind!r}")


def selector_loss(M: Tensor, Y_pred: Tensor, Y, w: SelectorLossWeights,
                  kind: str = "mse", tau: float = 0.5) -> tuple[Tensor, dict]:
    """Prediction loss plus sparsity, entropy, TV, budget-hinge and group terms.

    Every regulariser is a per-window mean (entries, adjacent-step pairs or
    columns) averaged over the batch; the returned dict holds each term before
    its weight.
    """
    if M.ndim == 2:
        M = M.reshape(1, *M.shape)
    n, L, d = M.shape
    terms = {
        "pred": pred_loss(Y_pred, Y, kind, w.w_h, tau),
        "l1": ad.mean(M),
        "ent": ad.mean(binary_entropy(M)),
        "tv": ad.mean(ad.tabs(M[:, 1:, :] - M[:, :-1, :])) if L > 1 else Tensor(0.0),
        "bud": ad.mean(ad.relu(ad.mean(M.reshape(n, L * d), axis=1) - w.kappa)),
        "group": ad.mean(ad.sqrt(ad.tsum(ad.square(M), axis=1) + ENT_EPS)),
    }
    total = terms["pred"]
    for name, lam in (("l1", w.l1), ("ent", w.ent), ("tv", w.tv), ("bud", w.bud), ("group", w.group)):
        if lam:
            total = total + terms[name] * lam
    return total, {k: float(v.data) for k, v in terms.items()}


# ---------------------------------------------------------------- model wrapper


class Selector:
    """MaskNet bound to a frozen forecaster and its loss weights (trainable unit)."""

    def __init__(self, net: MaskNet, weights: SelectorLossWeights | None = None, loss: str = "mse",
                 tau: float = 0.5):
        if loss not in PRED_LOSSES:
            raise ValueError(f"loss must be one of {PRED_LOSSES}")
        if not 0.0 < tau < 1.0:
            raise ValueError("pinball level must lie in (0, 1)")
        self.net = net
        self.weights = weights or SelectorLossWeights()
        self.loss_kind, self.tau = loss, tau

    def parameters(self) -> dict[str, Tensor]:
        return self.net.params

    def begin_epoch(self, epoch: int, n_epochs: int) -> None:
        self.net.anneal(epoch, n_epochs)

    def training_loss(self, spec: ForecasterSpec, X, Y, rng: np.random.Generator) -> Tensor:
        Xt = Tensor(X)
        sample = sample_mask(self.net, Xt, rng)
        Xm, M = apply_mask(self.net, Xt, sample)
        return selector_loss(sample.soft, predict(spec, Xm), Y, self.weights, self.loss_kind, self.tau)[0]

    def forecast(self, spec: ForecasterSpec, X) -> np.ndarray:
        with no_grad():
            Xt = Tensor(X)
            sample = sample_mask(self.net, Xt, None, tau=self.net.tau)
            return predict(spec, apply_mask(self.net, Xt, sample)[0]).data

    def eval_loss(self, spec: ForecasterSpec, X, Y) -> float:
        with no_grad():
            Xt = Tensor(X)
            sample = sample_mask(self.net, Xt, None)
            Xm, _ = apply_mask(self.net, Xt, sample)
            return float(selector_loss(sample.soft, predict(spec, Xm), Y, self.weights,
                                       self.loss_kind, self.tau)[0].data)


# ---------------------------------------------------------------- ranking


@dataclass
class FeatureRanking:
    entries: list                # (t, j, importance), descending
    importance: np.ndarray       # (L, d)
    column_importance: np.ndarray
    mask_ratio: float
    untrained: bool

    def top_columns(self, k: int) -> list[int]:
        order = np.argsort(-self.column_importance, kind="stable")
        return [int(j) for j in order[:k]]


def rank_features(net: MaskNet, X_val, tau: float | None = None) -> FeatureRanking:
    """Mean noise-free soft mask over validation windows, sorted descending."""
    with no_grad():
        soft = sample_mask(net, np.asarray(X_val, dtype=np.float64), None,
                           tau=net.tau_end if tau is None else tau).soft.data
    if soft.ndim == 2:
        soft = soft[None]
    imp = soft.mean(axis=0)
    L, d = imp.shape
    order = sorted(((t, j, float(imp[t, j])) for t in range(L) for j in range(d)),
                   key=lambda e: (-e[2], e[0], e[1]))
    untrained = bool(np.all(np.abs(imp - 0.5) < 0.05))
    # a covariate counts as much as its most-used lag; lags the forecaster ignores get
    # no prediction gradient, so averaging over them would mostly measure init noise
    return FeatureRanking(order, imp, imp.max(axis=0), float(np.mean(imp > 0.5)), untrained)


def write_feature_report(ranking: FeatureRanking, path, kappa: float | None, names=None) -> None:
    names = names or [f"x{j}" for j in range(ranking.importance.shape[1])]
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# mask_ratio={ranking.mask_ratio!r},kappa={kappa!r}\n")
        w = csv.writer(fh)
        w.writerow(["covariate", "time_offset", "importance", "selected"])
        L = ranking.importance.shape[0]
        for t, j, imp in ranking.entries:
            # time_offset counts back from the last context step (0 = most recent)
            w.writerow([names[j], L - 1 - t, repr(imp), int(imp > 0.5)])


def read_feature_report(path) -> tuple[dict, list[dict]]:
    with Path(path).open(newline="") as fh:
        head = fh.readline().lstrip("#").strip()
        meta = {}
        for kv in head.split(","):
            k, v = kv.split("=")
            meta[k] = None if v == "None" else float(v)
        rows = list(csv.DictReader(fh))
    return meta, rows


def masked_column_mse(spec: ForecasterSpec, X, Y, drop_cols) -> float:
    """MSE of the frozen forecaster after zeroing the given input columns."""
    Xd = np.array(X, dtype=np.float64, copy=True)
    Xd[:, :, list(drop_cols)] = 0.0
    with no_grad():
        P = predict(spec, Xd).data
    return float(np.mean((P - np.asarray(Y)) ** 2))


def mean_mask_entropy(net: MaskNet, X, tau: float | None = None) -> float:
    with no_grad():
        soft = sample_mask(net, np.asarray(X, dtype=np.float64), None, tau=tau).soft
        return float(np.mean(binary_entropy(soft).data))

