"""Tiny MLP building block and array (de)serialization shared by checkpoints."""

from __future__ import annotations

import base64
import hashlib

import numpy as np

from .autodiff import Tensor, matmul, tanh


class MLP:
    """Dense tanh network; ``depth`` counts weight layers (depth=2 is one hidden layer).

    The last layer starts at zero so a fresh network outputs exactly its final
    bias (zero unless ``out_bias`` is given).
    """

    def __init__(self, in_dim: int, out_dim: int, hidden: int = 128, depth: int = 2,
                 rng: np.random.Generator | None = None, zero_last: bool = True,
                 out_bias: float = 0.0, prefix: str = ""):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        dims = [in_dim] + [hidden] * (depth - 1) + [out_dim]
        self.params: dict[str, Tensor] = {}
        self.n_layers = depth
        self.prefix = prefix
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == depth - 1
            if last and zero_last:
                w = np.zeros((a, b))
            else:
                # Xavier-uniform keeps tanh units out of saturation at init
                lim = np.sqrt(6.0 / (a + b))
                w = rng.uniform(-lim, lim, size=(a, b))
            bias = np.full(b, out_bias if last else 0.0)
            self.params[f"{prefix}W{i}"] = Tensor(w, requires_grad=True)
            self.params[f"{prefix}b{i}"] = Tensor(bias, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for i in range(self.n_layers):
            h = matmul(h, self.params[f"{self.prefix}W{i}"]) + self.params[f"{self.prefix}b{i}"]
            if i < self.n_layers - 1:
                h = tanh(h)
        return h


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(obj["shape"])


def encode_params(params: dict[str, Tensor | np.ndarray]) -> dict:
    return {k: encode_array(v.data if isinstance(v, Tensor) else v) for k, v in params.items()}


def decode_params(obj: dict, requires_grad: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(decode_array(v), requires_grad=requires_grad) for k, v in obj.items()}


def checksum(arrays: dict[str, np.ndarray | Tensor], header: str = "") -> str:
    h = hashlib.sha256(header.encode())
    for k in sorted(arrays):
        v = arrays[k]
        v = v.data if isinstance(v, Tensor) else v
        h.update(k.encode())
        h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return h.hexdigest()
