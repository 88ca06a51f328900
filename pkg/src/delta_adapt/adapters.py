"""Bounded edit networks placed at the input or output of a frozen forecaster.

Every raw edit goes through ``tanh`` so ``|A| <= 1`` entrywise and ``delta``
bounds the per-entry change of the additive form. The final layer starts at
zero, which makes every adapter (and every composite) the identity map before
training.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .forecaster import ForecasterSpec, predict
from .nn import MLP, decode_params, encode_params

PLACEMENTS = ("input", "output")
FORMS = ("additive", "multiplicative", "exp")
FORMAT_VERSION = 1


class UndefinedStepError(ZeroDivisionError):
    pass


def _as_batch(x, trailing: int) -> tuple[Tensor, bool]:
    x = x if isinstance(x, Tensor) else Tensor(x)
    single = x.ndim == trailing
    if single:
        x = x.reshape(1, *x.shape)
    return x, single


def x_summary(X: Tensor) -> Tensor:
    """Per-covariate mean and last value of a ``(N, L, d)`` batch -> ``(N, 2d)``."""
    return ad.concat([ad.mean(X, axis=1), X[:, -1, :]], axis=-1)


def apply_edit(form: str, pre, raw, delta: float) -> Tensor:
    if form == "additive":
        return pre + raw * delta
    if form == "multiplicative":
        return pre * (raw * delta + 1.0)
    if form == "exp":
        return pre * ad.exp(raw * delta)
    raise ValueError(f"unknown adapter form {form!r}")


class AdapterNet:
    def __init__(self, placement: str, form: str, L: int, d: int, H: int, m: int, delta: float = 0.1,
                 hidden_width: int = 128, depth: int = 2, horizon_dim: int = 8, seed: int = 0):
        if placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}")
        if form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}")
        if not 0.0 < delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {delta}")
        self.placement, self.form, self.delta = placement, form, float(delta)
        self.L, self.d, self.H, self.m = L, d, H, m
        self.hidden_width, self.depth, self.seed = hidden_width, depth, seed
        self.horizon_dim = horizon_dim if placement == "output" else 0
        rng = np.random.default_rng(seed)
        if placement == "input":
            self.mlp = MLP(L * d, L * d, hidden_width, depth, rng)
            self.params = dict(self.mlp.params)
        elif self.horizon_dim > 0:
            self.mlp = MLP(H * m + 2 * d + self.horizon_dim, m, hidden_width, depth, rng)
            self.params = dict(self.mlp.params)
            self.params["horizon_embedding"] = Tensor(0.1 * rng.standard_normal((H, self.horizon_dim)),
                                                      requires_grad=True)
        else:
            self.mlp = MLP(H * m + 2 * d, H * m, hidden_width, depth, rng)
            self.params = dict(self.mlp.params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def raw_edit(self, X: Tensor, Y_hat: Tensor | None = None) -> Tensor:
        """tanh-bounded edit for a batch: ``(N, L, d)`` (input) or ``(N, H, m)`` (output)."""
        n = X.shape[0]
        if self.placement == "input":
            return ad.tanh(self.mlp(X.reshape(n, self.L * self.d))).reshape(n, self.L, self.d)
        feats = ad.concat([Y_hat.reshape(n, self.H * self.m), x_summary(X)], axis=-1)
        if self.horizon_dim == 0:
            return ad.tanh(self.mlp(feats)).reshape(n, self.H, self.m)
        per_h = ad.broadcast_to(feats.reshape(n, 1, feats.shape[-1]), (n, self.H, feats.shape[-1]))
        emb = ad.broadcast_to(self.params["horizon_embedding"].reshape(1, self.H, self.horizon_dim),
                              (n, self.H, self.horizon_dim))
        z = ad.concat([per_h, emb], axis=-1).reshape(n * self.H, -1)
        return ad.tanh(self.mlp(z)).reshape(n, self.H, self.m)

    # -- checkpoint
    def to_json(self) -> str:
        doc = {
            "format_version": FORMAT_VERSION,
            "placement": self.placement, "form": self.form, "delta": self.delta,
            "hidden_width": self.hidden_width, "depth": self.depth,
            "shapes": {"L": self.L, "d": self.d, "H": self.H, "m": self.m},
            "horizon_embedding": self.horizon_dim,
            "theta": encode_params(self.params),
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AdapterNet":
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError("unsupported adapter format_version")
        s = doc["shapes"]
        net = cls(doc["placement"], doc["form"], s["L"], s["d"], s["H"], s["m"], doc["delta"],
                  doc["hidden_width"], doc["depth"], doc["horizon_embedding"])
        net.load_params(decode_params(doc["theta"]))
        return net

    def load_params(self, params: dict[str, Tensor]) -> None:
        for k, v in params.items():
            self.params[k].data[...] = v.data


@dataclass
class EditRecord:
    placement: str
    form: str
    raw_edit: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    drift_norm: np.ndarray | None
    delta: float = 0.0


def _norms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(a.reshape(a.shape[0], -1) ** 2, axis=1))


def nudge_input(net: AdapterNet, X) -> tuple[Tensor, EditRecord]:
    """``X~ = X + dA``, ``X (1 + dA)`` or ``X exp(dA)``; differentiable in theta."""
    if net.placement != "input":
        raise ValueError("nudge_input needs an input-placement adapter")
    Xb, single = _as_batch(X, 2)
    raw = net.raw_edit(Xb)
    post = apply_edit(net.form, Xb, raw, net.delta)
    rec = EditRecord("input", net.form, raw.data.copy(), Xb.data.copy(), post.data.copy(), None, net.delta)
    return (post.reshape(net.L, net.d) if single else post), rec


def correct_output(net: AdapterNet, Y_hat, X) -> tuple[Tensor, EditRecord]:
    """Residual correction of ``Y^``, conditioned on ``Y^`` and a pooled summary of ``X``."""
    if net.placement != "output":
        raise ValueError("correct_output needs an output-placement adapter")
    Yb, single = _as_batch(Y_hat, 2)
    Xb, _ = _as_batch(X, 2)
    if Yb.shape[1:] != (net.H, net.m):
        raise ad.DimensionError(f"expected forecasts of shape ({net.H}, {net.m}), got {Yb.shape[1:]}")
    raw = net.raw_edit(Xb, Yb)
    post = apply_edit(net.form, Yb, raw, net.delta)
    rec = EditRecord("output", net.form, raw.data.copy(), Yb.data.copy(), post.data.copy(),
                     _norms(post.data - Yb.data), net.delta)
    return (post.reshape(net.H, net.m) if single else post), rec


class CompositeAdapter:
    """Input nudge, frozen forecast, output correction on one tape."""

    def __init__(self, input_adapter: AdapterNet, output_adapter: AdapterNet, gate: bool = False):
        if input_adapter.placement != "input" or output_adapter.placement != "output":
            raise ValueError("composite needs one input and one output adapter")
        self.input_adapter = input_adapter
        self.output_adapter = output_adapter
        self.gate_logits = Tensor(np.zeros(output_adapter.H), requires_grad=True) if gate else None

    @classmethod
    def build(cls, L, d, H, m, delta=0.1, form_in="additive", form_out="additive",
              hidden_width=128, depth=2, gate=False, seed=0) -> "CompositeAdapter":
        return cls(AdapterNet("input", form_in, L, d, H, m, delta, hidden_width, depth, seed=seed),
                   AdapterNet("output", form_out, L, d, H, m, delta, hidden_width, depth, seed=seed + 1),
                   gate=gate)

    @property
    def delta(self) -> float:
        return self.output_adapter.delta

    def parameters(self) -> dict[str, Tensor]:
        p = {f"in.{k}": v for k, v in self.input_adapter.params.items()}
        p.update({f"out.{k}": v for k, v in self.output_adapter.params.items()})
        if self.gate_logits is not None:
            p["gate"] = self.gate_logits
        return p

    def to_json(self) -> str:
        doc = {"format_version": FORMAT_VERSION, "composite": True,
               "input": json.loads(self.input_adapter.to_json()),
               "output": json.loads(self.output_adapter.to_json()),
               "gate": None if self.gate_logits is None else self.gate_logits.data.tolist()}
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CompositeAdapter":
        doc = json.loads(text)
        c = cls(AdapterNet.from_json(json.dumps(doc["input"])),
                AdapterNet.from_json(json.dumps(doc["output"])), gate=doc["gate"] is not None)
        if doc["gate"] is not None:
            c.gate_logits.data[...] = doc["gate"]
        return c


def apply_composite(c: CompositeAdapter, spec: ForecasterSpec, X) -> tuple[Tensor, EditRecord, EditRecord]:
    Xb, single = _as_batch(X, 2)
    X_t, rec_in = nudge_input(c.input_adapter, Xb)
    Y_prime = predict(spec, X_t)
    if c.gate_logits is not None:
        # only the input-side contribution is gated; gamma <= 1 keeps the O(delta) drift bound
        Y0 = predict(spec, Xb)
        gamma = ad.sigmoid(c.gate_logits).reshape(1, -1, 1)
        Y_prime = Y0 + gamma * (Y_prime - Y0)
    with no_grad():
        rec_in.drift_norm = _norms(predict(spec, rec_in.post).data - predict(spec, rec_in.pre).data)
    Y_t, rec_out = correct_output(c.output_adapter, Y_prime, Xb)
    if single:
        Y_t = Y_t.reshape(spec.H, spec.m)
    return Y_t, rec_in, rec_out


def adapt(model, spec: ForecasterSpec, X) -> Tensor:
    """Adapted forecast for any adapter model (batched)."""
    if isinstance(model, CompositeAdapter):
        return apply_composite(model, spec, X)[0]
    if model.placement == "input":
        return predict(spec, nudge_input(model, X)[0])
    return correct_output(model, predict(spec, X), X)[0]


# ---------------------------------------------------------------- theory helpers


@dataclass
class StepSize:
    delta: float
    improvable: bool
    alignment: float
    g_energy: float


def optimal_delta_closed_form(r, g) -> StepSize:
    """Risk-minimising shrinkage ``E<r, g> / E||g||^2`` over a dataset of residuals/corrections."""
    r = np.asarray(r, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if r.shape != g.shape:
        raise ad.DimensionError("residuals and corrections must share a shape")
    r2 = r.reshape(r.shape[0], -1) if r.ndim > 1 else r.reshape(-1, 1)
    g2 = g.reshape(r2.shape)
    align = float(np.mean(np.sum(r2 * g2, axis=1)))
    energy = float(np.mean(np.sum(g2 * g2, axis=1)))
    if energy == 0.0:
        raise UndefinedStepError("all corrections are zero; the optimal step is undefined")
    if align <= 0.0:
        return StepSize(0.0, False, align, energy)
    return StepSize(align / energy, True, align, energy)


def shrinkage_risk(r, g, delta: float) -> float:
    """``1/2 mean ||r - delta g||^2``."""
    r = np.asarray(r, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    diff = (r - delta * g).reshape(r.shape[0], -1) if r.ndim > 1 else (r - delta * g).reshape(-1, 1)
    return 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))


@dataclass
class DriftCheck:
    holds: bool
    lhs: np.ndarray
    rhs: np.ndarray


def drift_bound_check(record: EditRecord, L_F: float, spec: ForecasterSpec, tol: float = 1e-9) -> DriftCheck:
    """Compare realised prediction drift of an input edit with its Lipschitz bound.

    additive: ``d L_F ||A||``; exp: ``d e^d L_F ||X||_inf ||A||``;
    multiplicative ``1 + dA``: the additive bound with the effective edit ``A * X``.
    """
    if record.placement != "input":
        raise ValueError("drift bound applies to input edits")
    raw, pre = record.raw_edit, record.pre
    n = raw.shape[0]
    delta = record.delta
    with no_grad():
        lhs = _norms(predict(spec, record.post).data - predict(spec, pre).data)
    if record.form == "additive":
        rhs = delta * L_F * _norms(raw)
    elif record.form == "exp":
        bx = np.max(np.abs(pre.reshape(n, -1)), axis=1)
        rhs = delta * math.exp(delta) * L_F * bx * _norms(raw)
    else:
        rhs = delta * L_F * _norms(raw * pre)
    return DriftCheck(bool(np.all(lhs <= rhs + tol)), lhs, rhs)


@dataclass
class DescentRecord:
    alignment: float      # alpha = -<g, d> / (||g|| ||d||)
    g_norm: float
    d_norm: float
    delta: float
    realized: float       # loss(Y~) - loss(Y^)
    bound: float          # -delta alpha ||g|| ||d|| + beta/2 delta^2 ||d||^2
    step_ok: bool         # delta < 2 alpha ||g|| / (beta ||d||)


def descent_witness(Y_hat, Y, d, delta: float, beta: float = 1.0) -> DescentRecord | None:
    """One-step loss change of an additive output edit under ``1/2 ||.||^2``; None if ``d = 0``."""
    Y_hat = np.asarray(Y_hat, dtype=np.float64).reshape(-1)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    g = Y_hat - Y
    gn, dn = float(np.linalg.norm(g)), float(np.linalg.norm(d))
    if dn == 0.0 or gn == 0.0:
        return None
    alpha = -float(g @ d) / (gn * dn)
    before = 0.5 * float(g @ g)
    e = Y_hat + delta * d - Y
    realized = 0.5 * float(e @ e) - before
    bound = -delta * alpha * gn * dn + 0.5 * beta * delta ** 2 * dn ** 2
    step_ok = alpha > 0 and delta < 2 * alpha * gn / (beta * dn)
    return DescentRecord(alpha, gn, dn, delta, realized, bound, step_ok)
