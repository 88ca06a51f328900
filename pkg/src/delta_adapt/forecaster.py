"""Frozen forecasters ``F: R^{L x d} -> R^{H x m}``.

Built-in kinds are differentiable w.r.t. their *input* (gradients flow through
them into adapters) but their parameters are read-only arrays that never get
``requires_grad``. ``blackbox`` wraps an arbitrary callable and supplies
finite-difference Jacobians.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .nn import checksum, decode_array, encode_array

KINDS = ("linear_ar", "seasonal_naive", "tiny_mlp", "blackbox")
FORMAT_VERSION = 1


class BackboneError(RuntimeError):
    pass


class UnsupportedError(RuntimeError):
    pass


def _freeze(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ForecasterSpec:
    kind: str
    L: int
    d: int
    H: int
    m: int
    params: dict = field(default_factory=dict)
    lipschitz_hint: float | None = None
    target_cols: tuple[int, ...] = ()
    period: int | None = None
    fn: Callable | None = None
    fit_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown forecaster kind {self.kind!r}")
        object.__setattr__(self, "params", {k: _freeze(v) for k, v in self.params.items()})

    @property
    def differentiable(self) -> bool:
        return self.kind != "blackbox"

    def checksum(self) -> str:
        # the header covers parameter-free backbones, whose behaviour is all geometry
        header = f"{self.kind}|{self.L},{self.d},{self.H},{self.m}|{self.period}|{list(self.target_cols)}"
        return checksum(self.params, header)

    def __call__(self, X):
        return predict(self, X)


# ---------------------------------------------------------------- constructors


def linear_ar(W, b, L: int, d: int, H: int, m: int, fit_config: dict | None = None) -> ForecasterSpec:
    W = np.asarray(W, dtype=np.float64).reshape(H * m, L * d)
    b = np.asarray(b, dtype=np.float64).reshape(H * m)
    lip = float(np.linalg.norm(W, 2)) if W.size else 0.0
    return ForecasterSpec("linear_ar", L, d, H, m, {"W": W, "b": b}, lipschitz_hint=lip,
                          fit_config=fit_config or {})


def seasonal_naive(L: int, d: int, H: int, period: int, target_cols=(0,)) -> ForecasterSpec:
    if not 1 <= period <= L:
        raise ValueError("period must lie in [1, L]")
    target_cols = tuple(int(c) for c in target_cols)
    spec = ForecasterSpec("seasonal_naive", L, d, H, len(target_cols), {},
                          target_cols=target_cols, period=int(period))
    object.__setattr__(spec, "lipschitz_hint", float(np.linalg.norm(_selection_matrix(spec), 2)))
    return spec


def tiny_mlp(W1, b1, W2, b2, L: int, d: int, H: int, m: int, fit_config: dict | None = None) -> ForecasterSpec:
    W1 = np.asarray(W1, dtype=np.float64)
    W2 = np.asarray(W2, dtype=np.float64)
    params = {"W1": W1.reshape(-1, L * d), "b1": np.asarray(b1, dtype=np.float64).reshape(-1),
              "W2": W2.reshape(H * m, -1), "b2": np.asarray(b2, dtype=np.float64).reshape(H * m)}
    return ForecasterSpec("tiny_mlp", L, d, H, m, params, fit_config=fit_config or {})


def blackbox(fn: Callable, L: int, d: int, H: int, m: int, lipschitz_hint: float | None = None) -> ForecasterSpec:
    """``fn`` maps one ``(L, d)`` window to an ``(H, m)`` forecast."""
    return ForecasterSpec("blackbox", L, d, H, m, {}, lipschitz_hint=lipschitz_hint, fn=fn)


# ---------------------------------------------------------------- predict


def _batched(spec: ForecasterSpec, X) -> tuple[Tensor, bool]:
    X = X if isinstance(X, Tensor) else Tensor(X)
    single = X.ndim == 2
    if single:
        X = X.reshape(1, *X.shape)
    if X.shape[1:] != (spec.L, spec.d):
        raise ad.DimensionError(f"expected windows of shape ({spec.L}, {spec.d}), got {X.shape[1:]}")
    return X, single


def _selection_index(spec: ForecasterSpec) -> tuple[np.ndarray, np.ndarray]:
    p = spec.period
    rows = np.array([spec.L - p + (h % p) for h in range(spec.H)])
    cols = np.array(spec.target_cols)
    return rows, cols


def _selection_matrix(spec: ForecasterSpec) -> np.ndarray:
    rows, cols = _selection_index(spec)
    S = np.zeros((spec.H * spec.m, spec.L * spec.d))
    for h, r in enumerate(rows):
        for k, c in enumerate(cols):
            S[h * spec.m + k, r * spec.d + c] = 1.0
    return S


def _blackbox_eval(spec: ForecasterSpec, Xd: np.ndarray) -> np.ndarray:
    out = np.empty((Xd.shape[0], spec.H, spec.m))
    for i, x in enumerate(Xd):
        try:
            y = np.asarray(spec.fn(x), dtype=np.float64)
        except Exception as e:  # the wrapped callable is foreign code
            raise BackboneError(f"blackbox forecaster failed: {e}") from e
        if y.shape != (spec.H, spec.m) or not np.all(np.isfinite(y)):
            raise BackboneError(f"blackbox returned {y.shape} / non-finite output")
        out[i] = y
    return out


def _blackbox_vjp(spec: ForecasterSpec, Xd: np.ndarray, g: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(Xd)
    for i in range(Xd.shape[0]):
        for idx in np.ndindex(spec.L, spec.d):
            xp = Xd[i].copy()
            xm = Xd[i].copy()
            xp[idx] += h
            xm[idx] -= h
            col = (_blackbox_eval(spec, xp[None])[0] - _blackbox_eval(spec, xm[None])[0]) / (2 * h)
            grad[i][idx] = np.sum(col * g[i])
    return grad


def predict(spec: ForecasterSpec, X) -> Tensor:
    """Forecast for one ``(L, d)`` window or a batch ``(N, L, d)``; gradients reach ``X`` only."""
    Xb, single = _batched(spec, X)
    n = Xb.shape[0]
    P = {k: Tensor(v) for k, v in spec.params.items()}
    if spec.kind == "linear_ar":
        flat = Xb.reshape(n, spec.L * spec.d)
        out = ad.matmul(flat, P["W"].T) + P["b"]
    elif spec.kind == "tiny_mlp":
        flat = Xb.reshape(n, spec.L * spec.d)
        hid = ad.tanh(ad.matmul(flat, P["W1"].T) + P["b1"])
        out = ad.matmul(hid, P["W2"].T) + P["b2"]
    elif spec.kind == "seasonal_naive":
        rows, cols = _selection_index(spec)
        out = Xb[:, rows[:, None], cols[None, :]]
    else:
        data = _blackbox_eval(spec, Xb.data)
        out = ad._make(data, (Xb,), lambda g: (_blackbox_vjp(spec, Xb.data, g),))
    out = out.reshape(n, spec.H, spec.m)
    return out.reshape(spec.H, spec.m) if single else out


def predict_array(spec: ForecasterSpec, X) -> np.ndarray:
    with no_grad():
        return predict(spec, np.asarray(X, dtype=np.float64)).data.copy()


# ---------------------------------------------------------------- jacobians


def jacobian(spec: ForecasterSpec, X, mode: str = "exact", fd_step: float = 1e-5) -> np.ndarray:
    """Input Jacobian at a single window, shape ``(H*m, L*d)`` in row-major flattening."""
    X = np.asarray(X, dtype=np.float64).reshape(spec.L, spec.d)
    if mode == "exact":
        if not spec.differentiable:
            raise UnsupportedError("exact Jacobian needs a differentiable kind")
        if spec.kind == "linear_ar":
            return np.array(spec.params["W"])
        if spec.kind == "seasonal_naive":
            return _selection_matrix(spec)
        W1, b1, W2 = spec.params["W1"], spec.params["b1"], spec.params["W2"]
        z = W1 @ X.reshape(-1) + b1
        return W2 @ ((1.0 - np.tanh(z) ** 2)[:, None] * W1)
    J = np.empty((spec.H * spec.m, spec.L * spec.d))
    for c in range(spec.L * spec.d):
        e = np.zeros(spec.L * spec.d)
        e[c] = 1.0
        J[:, c] = jvp(spec, X, e.reshape(spec.L, spec.d), mode="finite_difference", fd_step=fd_step).reshape(-1)
    return J


def jvp(spec: ForecasterSpec, X, v, mode: str | None = None, fd_step: float = 1e-5) -> np.ndarray:
    """``J_F(X) v``; exact for built-in kinds, central differences for blackbox."""
    X = np.asarray(X, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != X.shape:
        raise ad.DimensionError(f"direction shape {v.shape} != input shape {X.shape}")
    if mode is None:
        mode = "exact" if spec.differentiable else "finite_difference"
    if mode == "finite_difference":
        return (predict_array(spec, X + fd_step * v) - predict_array(spec, X - fd_step * v)) / (2 * fd_step)
    if not spec.differentiable:
        raise UnsupportedError("exact jvp needs a differentiable kind")
    single = X.ndim == 2
    Xb = X.reshape(-1, spec.L * spec.d)
    vb = v.reshape(-1, spec.L * spec.d)
    if spec.kind == "linear_ar":
        out = vb @ spec.params["W"].T
    elif spec.kind == "seasonal_naive":
        out = vb @ _selection_matrix(spec).T
    else:
        W1, b1, W2 = spec.params["W1"], spec.params["b1"], spec.params["W2"]
        z = Xb @ W1.T + b1
        out = ((1.0 - np.tanh(z) ** 2) * (vb @ W1.T)) @ W2.T
    out = out.reshape(-1, spec.H, spec.m)
    return out[0] if single else out


def operator_norm(spec: ForecasterSpec, n_samples: int = 32, seed: int = 0,
                  with_flag: bool = False):
    """Lipschitz constant ``L_F`` in the Frobenius/Euclidean geometry.

    Exact for affine and selection kinds; for ``tiny_mlp`` the max local
    Jacobian norm over ``n_samples`` standard-normal windows (an estimate).
    """
    if spec.kind == "blackbox":
        raise UnsupportedError("operator norm is unavailable for blackbox forecasters")
    if spec.kind == "linear_ar":
        val, exact = float(np.linalg.norm(spec.params["W"], 2)), True
    elif spec.kind == "seasonal_naive":
        val, exact = float(np.linalg.norm(_selection_matrix(spec), 2)), True
    else:
        rng = np.random.default_rng(seed)
        val = max(float(np.linalg.norm(jacobian(spec, rng.standard_normal((spec.L, spec.d))), 2))
                  for _ in range(n_samples))
        exact = False
    return (val, not exact) if with_flag else val


# ---------------------------------------------------------------- fitting


def fit_backbone(kind: str, X, Y, *, ridge: float = 1e-3, hidden: int = 16, epochs: int = 200,
                 lr: float = 1e-2, batch_size: int = 64, seed: int = 0, period: int | None = None,
                 target_cols=(0,)) -> ForecasterSpec:
    """Fit then freeze a built-in backbone on windows ``X (N, L, d)``, ``Y (N, H, m)``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if kind == "blackbox":
        raise UnsupportedError("blackbox forecasters are given, not fitted")
    if X.ndim != 3 or X.shape[0] == 0:
        raise ValueError("fit_backbone needs at least one (L, d) window")
    n, L, d = X.shape
    _, H, m = Y.shape
    if kind == "seasonal_naive":
        return seasonal_naive(L, d, H, period or min(H, L), target_cols)
    Z = X.reshape(n, -1)
    T = Y.reshape(n, -1)
    if kind == "linear_ar":
        zm, tm = Z.mean(0), T.mean(0)
        Zc, Tc = Z - zm, T - tm
        A = Zc.T @ Zc + ridge * np.eye(Z.shape[1])
        try:
            if np.linalg.cond(A) > 1e12:
                raise np.linalg.LinAlgError("ill-conditioned normal equations")
            B = np.linalg.solve(A, Zc.T @ Tc)
        except np.linalg.LinAlgError:
            warnings.warn("singular normal equations; falling back to pseudo-inverse", RuntimeWarning)
            B = np.linalg.pinv(A) @ (Zc.T @ Tc)
        W = B.T
        b = tm - W @ zm
        return linear_ar(W, b, L, d, H, m, fit_config={"kind": kind, "ridge": ridge, "n": n})
    if kind == "tiny_mlp":
        rng = np.random.default_rng(seed)
        lim1 = np.sqrt(6.0 / (L * d + hidden))
        lim2 = np.sqrt(6.0 / (hidden + H * m))
        P = {"W1": Tensor(rng.uniform(-lim1, lim1, (hidden, L * d)), requires_grad=True),
             "b1": Tensor(np.zeros(hidden), requires_grad=True),
             "W2": Tensor(rng.uniform(-lim2, lim2, (H * m, hidden)), requires_grad=True),
             "b2": Tensor(T.mean(0), requires_grad=True)}
        opt = ad.Adam(P, lr=lr)
        for _ in range(epochs):
            order = rng.permutation(n)
            for s in range(0, n, batch_size):
                idx = order[s:s + batch_size]
                hid = ad.tanh(ad.matmul(Tensor(Z[idx]), P["W1"].T) + P["b1"])
                out = ad.matmul(hid, P["W2"].T) + P["b2"]
                loss = ad.mean(ad.square(out - Tensor(T[idx])))
                opt.zero_grad()
                loss.backward()
                opt.step()
        return tiny_mlp(*(P[k].data for k in ("W1", "b1", "W2", "b2")), L, d, H, m,
                        fit_config={"kind": kind, "hidden": hidden, "epochs": epochs, "lr": lr,
                                    "seed": seed, "n": n})
    raise ValueError(f"unknown forecaster kind {kind!r}")


# ---------------------------------------------------------------- checkpoint


def to_json(spec: ForecasterSpec) -> str:
    if spec.kind == "blackbox":
        raise UnsupportedError("blackbox forecasters cannot be checkpointed")
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": spec.kind,
        "shapes": {"L": spec.L, "d": spec.d, "H": spec.H, "m": spec.m},
        "lipschitz_hint": spec.lipschitz_hint,
        "params": {k: encode_array(v) for k, v in spec.params.items()},
        "target_cols": list(spec.target_cols),
        "period": spec.period,
        "fit_config": spec.fit_config,
        "checksum": spec.checksum(),
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def from_json(text: str) -> ForecasterSpec:
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported forecaster format_version {doc.get('format_version')!r}")
    s = doc["shapes"]
    spec = ForecasterSpec(doc["kind"], s["L"], s["d"], s["H"], s["m"],
                          {k: decode_array(v) for k, v in doc["params"].items()},
                          lipschitz_hint=doc["lipschitz_hint"],
                          target_cols=tuple(doc.get("target_cols") or ()),
                          period=doc.get("period"), fit_config=doc.get("fit_config") or {})
    if "checksum" in doc and doc["checksum"] != spec.checksum():
        raise ValueError("forecaster checkpoint checksum mismatch")
    return spec
