"""Batch, joint and leakage-free online training around a frozen forecaster."""

from __future__ import annotations

import csv
import time
import warnings
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .adapters import AdapterNet, CompositeAdapter, adapt, descent_witness
from .autodiff import Adam, Tensor, TrainingError, no_grad
from .forecaster import ForecasterSpec, predict
from .selector import pred_loss


class LeakageError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-4
    early_stop_patience: int = 5
    seed: int = 0
    mode: str = "batch"
    joint: bool = False
    loss: str = "mse"
    diagnostics: bool = False
    w_h: list | None = None

    def __post_init__(self):
        if self.mode not in ("batch", "online"):
            raise ValueError("mode must be 'batch' or 'online'")
        if self.loss not in ("mse", "mae"):
            raise ValueError("loss must be 'mse' or 'mae'")
        if self.mode == "online":
            self.batch_size = 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trace:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    descent: list = field(default_factory=list)

    def values(self, split: str, key: str = "loss") -> list[float]:
        return [r[key] for r in self.rows if r["split"] == split]

    def write_csv(self, path, canonical: bool = False, footer: str | None = None) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch_or_step", "split", "loss", "mse", "mae", "wall_ms"])
            for r in self.rows:
                w.writerow([r["epoch_or_step"], r["split"], repr(r["loss"]), repr(r["mse"]),
                            repr(r["mae"]), 0 if canonical else r["wall_ms"]])
            if footer:
                fh.write(f"# {footer}\n")


# ---------------------------------------------------------------- helpers


class UnfrozenBackbone:
    """Trainable copy of a built-in backbone; only for the fine-tuning baselines.

    None of the drift or descent guarantees apply to it.
    """

    def __init__(self, spec: ForecasterSpec):
        if spec.kind not in ("linear_ar", "tiny_mlp"):
            raise ValueError("only linear_ar and tiny_mlp backbones can be unfrozen")
        self.base = spec
        self.params = {k: Tensor(np.array(v), requires_grad=True) for k, v in spec.params.items()}

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def forward(self, X: Tensor) -> Tensor:
        s, P = self.base, self.params
        n = X.shape[0]
        flat = X.reshape(n, s.L * s.d)
        if s.kind == "linear_ar":
            out = ad.matmul(flat, P["W"].T) + P["b"]
        else:
            out = ad.matmul(ad.tanh(ad.matmul(flat, P["W1"].T) + P["b1"]), P["W2"].T) + P["b2"]
        return out.reshape(n, s.H, s.m)

    def freeze(self) -> ForecasterSpec:
        from .forecaster import linear_ar, tiny_mlp

        s, P = self.base, {k: v.data for k, v in self.params.items()}
        if s.kind == "linear_ar":
            return linear_ar(P["W"], P["b"], s.L, s.d, s.H, s.m, dict(s.fit_config, unfrozen=True))
        return tiny_mlp(P["W1"], P["b1"], P["W2"], P["b2"], s.L, s.d, s.H, s.m,
                        dict(s.fit_config, unfrozen=True))


def forecast(model, spec: ForecasterSpec, X) -> Tensor:
    """Point forecast of ``model`` (None means the frozen forecaster itself)."""
    Xt = X if isinstance(X, Tensor) else Tensor(np.asarray(X, dtype=np.float64))
    if model is None:
        return predict(spec, Xt)
    if isinstance(model, (AdapterNet, CompositeAdapter)):
        return adapt(model, spec, Xt)
    if isinstance(model, UnfrozenBackbone):
        return model.forward(Xt)
    if hasattr(model, "forecast"):
        return Tensor(model.forecast(spec, Xt.data))
    return predict(spec, Xt)


def forecast_array(model, spec: ForecasterSpec, X) -> np.ndarray:
    with no_grad():
        return forecast(model, spec, X).data


def _is_point_model(model) -> bool:
    return isinstance(model, (AdapterNet, CompositeAdapter, UnfrozenBackbone))


def _training_loss(model, spec, X, Y, cfg: TrainConfig, rng) -> Tensor:
    if _is_point_model(model):
        return pred_loss(forecast(model, spec, X), Y, cfg.loss, cfg.w_h)
    return model.training_loss(spec, X, Y, rng)


def _eval_loss(model, spec, X, Y, cfg: TrainConfig) -> float:
    if _is_point_model(model):
        with no_grad():
            return float(pred_loss(forecast(model, spec, X), Y, cfg.loss, cfg.w_h).data)
    return model.eval_loss(spec, X, Y)


def _optimizers(model, cfg: TrainConfig) -> list[Adam]:
    if isinstance(model, CompositeAdapter) and cfg.joint:
        # one optimizer per adapter, stepped together after a single backward pass
        in_p = {k: v for k, v in model.parameters().items() if not k.startswith("out.")}
        out_p = {k: v for k, v in model.parameters().items() if k.startswith("out.")}
        return [Adam(in_p, lr=cfg.lr), Adam(out_p, lr=cfg.lr)]
    return [Adam(model.parameters(), lr=cfg.lr)]


def _snapshot(model) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in model.parameters().items()}


def _restore(model, snap: dict[str, np.ndarray]) -> None:
    for k, v in model.parameters().items():
        v.data[...] = snap[k]


def _diag_applicable(model) -> bool:
    return isinstance(model, AdapterNet) and model.placement == "output" and model.form == "additive"


def early_stop(val_losses, patience: int) -> tuple[int, int]:
    """(best epoch, epoch after which training stops), both 1-indexed."""
    if len(val_losses) == 0:
        raise ValueError("early_stop needs a non-empty trace")
    best, best_i, since = float("inf"), 0, 0
    for i, v in enumerate(val_losses):
        if v < best:
            best, best_i, since = v, i, 0
        else:
            since += 1
            if since >= patience:
                return best_i + 1, i + 1
    return best_i + 1, len(val_losses)


# ---------------------------------------------------------------- batch


def train_batch(model, spec: ForecasterSpec, X, Y, cfg: TrainConfig | None = None,
                X_val=None, Y_val=None):
    """Adam on the model's loss with the forecaster excluded from the update set.

    Returns ``(model, trace)``. With a validation split the best-validation
    parameters are restored at the end; without one early stopping is off.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("train_batch needs at least one window")
    has_val = X_val is not None and len(X_val) > 0
    if not has_val and cfg.epochs > 0 and cfg.early_stop_patience:
        warnings.warn("no validation windows; early stopping disabled", RuntimeWarning)
    f_sum = spec.checksum()
    rng = np.random.default_rng(cfg.seed)
    opts = _optimizers(model, cfg)
    trace = Trace()
    best_val, best_snap, since = float("inf"), _snapshot(model), 0
    last_good = _snapshot(model)
    ad.reset_tape()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        if hasattr(model, "begin_epoch"):
            model.begin_epoch(epoch - 1, cfg.epochs)
        order = rng.permutation(len(X))
        losses = []
        for s in range(0, len(X), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            Xb, Yb = X[idx], Y[idx]
            loss = _training_loss(model, spec, Xb, Yb, cfg, rng)
            if not np.isfinite(loss.data).all():
                ad.reset_tape()
                _restore(model, last_good)
                err = TrainingError(f"non-finite loss at epoch {epoch}; restored last good parameters")
                err.last_good = last_good
                raise err
            for o in opts:
                o.zero_grad()
            loss.backward()
            if cfg.diagnostics and _diag_applicable(model):
                with no_grad():
                    Y_hat = predict(spec, Xb).data
                    d = model.raw_edit(Tensor(Xb), Tensor(Y_hat)).data
                rec = descent_witness(Y_hat, Yb, d, model.delta)
                if rec is not None:
                    trace.descent.append(rec)
            last_good = _snapshot(model)
            for o in opts:
                o.step()
            losses.append(float(loss.data))
        wall = (time.perf_counter() - t0) * 1e3
        trace.rows.append(_row(epoch, "train", float(np.mean(losses)), model, spec, X, Y, wall))
        if has_val:
            vloss = _eval_loss(model, spec, X_val, Y_val, cfg)
            trace.rows.append(_row(epoch, "val", vloss, model, spec, X_val, Y_val, wall))
            if vloss < best_val:
                best_val, best_snap, since = vloss, _snapshot(model), 0
                trace.best_epoch = epoch
            else:
                since += 1
        trace.stopped_epoch = epoch
        if has_val and cfg.early_stop_patience and since >= cfg.early_stop_patience:
            break
    if has_val and trace.best_epoch:
        _restore(model, best_snap)
    elif not has_val:
        trace.best_epoch = trace.stopped_epoch
    if spec.checksum() != f_sum:
        raise TrainingError("frozen forecaster parameters changed during training")
    return model, trace


def _row(epoch, split, loss, model, spec, X, Y, wall) -> dict:
    if _is_point_model(model) or hasattr(model, "forecast"):
        P = forecast_array(model, spec, X)
    else:
        P = forecast_array(None, spec, X)
    err = P - Y
    return {"epoch_or_step": epoch, "split": split, "loss": loss,
            "mse": float(np.mean(err ** 2)), "mae": float(np.mean(np.abs(err))), "wall_ms": round(wall, 3)}


def train_joint(composite: CompositeAdapter, spec: ForecasterSpec, X, Y, cfg: TrainConfig | None = None,
                X_val=None, Y_val=None):
    cfg = cfg or TrainConfig(joint=True)
    if not cfg.joint:
        raise ValueError("train_joint needs cfg.joint = True")
    return train_batch(composite, spec, X, Y, cfg, X_val, Y_val)


# ---------------------------------------------------------------- online


class InstrumentedStream:
    """Reveals one row per call and records the largest index ever handed out."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)
        self.clock = -1
        self.max_read = -1

    def __len__(self) -> int:
        return len(self.values)

    def reveal(self) -> tuple[int, np.ndarray]:
        self.clock += 1
        return self.clock, self.read(self.clock)

    def read(self, i: int) -> np.ndarray:
        if i > self.clock:
            raise LeakageError(f"read of index {i} beyond clock {self.clock}")
        self.max_read = max(self.max_read, i)
        return self.values[i]


class StreamingBuffer:
    """Ring of the last ``L + H`` observations and their stream indices."""

    def __init__(self, L: int, H: int):
        self.L, self.H = L, H
        self.pending: deque = deque(maxlen=L + H)
        self.t = -1

    def push(self, t: int, row: np.ndarray) -> None:
        if t != self.t + 1:
            raise LeakageError(f"buffer expected index {self.t + 1}, got {t}")
        self.t = t
        self.pending.append((t, np.array(row)))

    def context(self) -> tuple[np.ndarray, np.ndarray]:
        """Most recent ``L`` rows (indices ``t-L+1 .. t``)."""
        items = list(self.pending)[-self.L:]
        return np.array([i for i, _ in items]), np.stack([r for _, r in items])

    def ready(self) -> bool:
        return len(self.pending) == self.L + self.H

    def sample(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Lagged, fully observed pair: input ``t-H-L+1 .. t-H``, label ``t-H+1 .. t``."""
        idx = np.array([i for i, _ in self.pending])
        rows = np.stack([r for _, r in self.pending])
        ix, iy = idx[:self.L], idx[self.L:]
        t = self.t
        if not (ix[0] == t - self.H - self.L + 1 and ix[-1] == t - self.H
                and iy[0] == t - self.H + 1 and iy[-1] == t):
            raise LeakageError(f"buffer invariant violated at t={t}")
        return ix, rows[:self.L], iy, rows[self.L:]


@dataclass
class OnlineResult:
    steps: np.ndarray              # clock index of each logged step
    predictions: np.ndarray        # (S, H, m) forecasts for t+1 .. t+H
    errors: np.ndarray             # per-step MSE of the logged forecast (NaN when unlabeled)
    abs_errors: np.ndarray
    update_losses: np.ndarray
    max_read: np.ndarray           # largest stream index read during each step
    leakage_free: bool
    trace: Trace

    @property
    def attestation(self) -> str:
        ok = int(np.sum(self.max_read == self.steps))
        verdict = "max_read_index == clock" if self.leakage_free else "LEAKAGE DETECTED"
        return f"leakage_probe: {verdict} at {ok}/{len(self.steps)} steps"

    def cumulative_mse(self, start: int = 0) -> float:
        sel = (self.steps >= start) & np.isfinite(self.errors)
        return float(np.mean(self.errors[sel]))


def run_online(model, spec: ForecasterSpec, stream, cfg: TrainConfig | None = None,
               input_cols=None, target_cols=None, steps: int | None = None) -> OnlineResult:
    """Predict-then-update loop over a stream; one Adam step on one lagged sample per tick.

    ``model=None`` runs the frozen forecaster. The stream must already be in
    the model's (standardized) space.
    """
    cfg = cfg or TrainConfig(mode="online")
    if cfg.mode != "online":
        cfg = TrainConfig(**{**cfg.to_dict(), "mode": "online"})
    if not isinstance(stream, InstrumentedStream):
        stream = InstrumentedStream(stream)
    L, H = spec.L, spec.H
    d_all = stream.values.shape[1]
    input_cols = list(range(d_all)) if input_cols is None else list(input_cols)
    target_cols = list(range(d_all)) if target_cols is None else list(target_cols)
    if len(stream) <= L + H:
        raise ValueError(f"stream length must exceed L + H = {L + H}")
    f_sum = spec.checksum()
    buf = StreamingBuffer(L, H)
    opts = _optimizers(model, cfg) if model is not None and cfg.lr > 0 else []
    rng = np.random.default_rng(cfg.seed)
    first = L + H - 1
    last = len(stream) - 1 if steps is None else min(len(stream) - 1, first + steps - 1)
    rec_steps, preds, max_read, upd = [], [], [], []
    trace = Trace()
    ad.reset_tape()
    while stream.clock < last:
        t0 = time.perf_counter()
        t, row = stream.reveal()
        buf.push(t, row)
        if t < first:
            continue
        # (1) forecast the future window from X_{t-L+1..t}
        _, ctx = buf.context()
        preds.append(forecast_array(model, spec, ctx[None][:, :, input_cols])[0])
        # (2) lagged fully-labelled sample from the buffer
        ix, xin, iy, lab = buf.sample()
        if max(ix.max(), iy.max()) > t:
            raise LeakageError(f"sample reaches index {max(ix.max(), iy.max())} at clock {t}")
        Xs = xin[None][:, :, input_cols]
        Ys = lab[None][:, :, target_cols]
        # (3) one optimizer step on that single sample
        if opts:
            loss = _training_loss(model, spec, Xs, Ys, cfg, rng)
            for o in opts:
                o.zero_grad()
            loss.backward()
            for o in opts:
                o.step()
            upd.append(float(loss.data))
        else:
            upd.append(float(np.mean((forecast_array(model, spec, Xs) - Ys) ** 2)))
        rec_steps.append(t)
        max_read.append(stream.max_read)
        trace.rows.append({"epoch_or_step": t, "split": "online", "loss": upd[-1],
                           "mse": float("nan"), "mae": float("nan"),
                           "wall_ms": round((time.perf_counter() - t0) * 1e3, 3)})
    if spec.checksum() != f_sum:
        raise TrainingError("frozen forecaster parameters changed during online run")
    steps_arr = np.array(rec_steps)
    preds_arr = np.array(preds)
    # scoring happens after the loop, outside the probed protocol
    errs = np.full(len(steps_arr), np.nan)
    abs_errs = np.full(len(steps_arr), np.nan)
    vals = stream.values
    for i, t in enumerate(steps_arr):
        if t + H < len(vals):
            truth = vals[t + 1:t + 1 + H][:, target_cols]
            errs[i] = float(np.mean((preds_arr[i] - truth) ** 2))
            abs_errs[i] = float(np.mean(np.abs(preds_arr[i] - truth)))
    for r, e, a in zip(trace.rows, errs, abs_errs):
        r["mse"], r["mae"] = float(e), float(a)
    max_read_arr = np.array(max_read)
    return OnlineResult(steps_arr, preds_arr, errs, abs_errs, np.array(upd), max_read_arr,
                        bool(np.all(max_read_arr == steps_arr)), trace)
