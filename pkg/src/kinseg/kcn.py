"""Kinematics correction network: an MLP producing a residual on the newest
measured frame of a joint window, and the Adam optimiser that trains it online."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor

HIDDEN_WIDTHS = (32, 64, 128, 128, 64, 32)
_MAGIC = b"KCNW"


def positional_encoding(n: int, d: int) -> np.ndarray:
    """Sinusoidal (n, d) encoding of window positions 0..n-1."""
    if n < 1 or d < 1:
        raise ValueError(f"positional encoding needs n, d >= 1, got {n}, {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    col = np.arange(d)
    rate = 1.0 / np.power(10000.0, (2 * (col // 2)) / d)
    angle = pos * rate[None, :]
    return np.where(col % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class KcnWeights:
    """Layer parameters keyed ``W0, b0, W1, b1, ...``; ``W`` is (out, in)."""

    n: int
    d: int
    widths: tuple[int, ...]
    params: dict[str, np.ndarray]

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1

    def copy(self) -> KcnWeights:
        return KcnWeights(self.n, self.d, self.widths,
                          {k: v.copy() for k, v in self.params.items()})


def init_kcn(n: int, d: int, hidden=HIDDEN_WIDTHS, seed: int = 0) -> KcnWeights:
    """Hidden layers uniform in +-1/sqrt(fan_in); output layer zero, so the
    network starts as the identity on the newest frame."""
    widths = (n * d, *hidden, d)
    rng = np.random.default_rng(seed)
    params = {}
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        if i == len(widths) - 2:
            params[f"W{i}"] = np.zeros((fan_out, fan_in))
            params[f"b{i}"] = np.zeros(fan_out)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            params[f"W{i}"] = rng.uniform(-bound, bound, (fan_out, fan_in))
            params[f"b{i}"] = rng.uniform(-bound, bound, fan_out)
    return KcnWeights(n, d, widths, params)


def kcn_forward(theta: KcnWeights, window, params: dict[str, Tensor] | None = None) -> Tensor:
    """Corrected newest frame: ``window[-1] + MLP(flatten(window + PE))``.

    ``params`` optionally supplies tracked tensors for the weights; otherwise
    the stored arrays are used as constants.
    """
    win = ag.as_tensor(window)
    if win.shape != (theta.n, theta.d):
        raise ShapeError(f"kcn_forward: window shape {win.shape}, network expects "
                         f"({theta.n}, {theta.d})")
    if params is None:
        params = {k: Tensor(v) for k, v in theta.params.items()}
    h = (win + positional_encoding(theta.n, theta.d)).reshape(theta.n * theta.d)
    last = theta.num_layers - 1
    for i in range(theta.num_layers):
        h = params[f"W{i}"] @ h + params[f"b{i}"]
        if i < last:
            h = ag.tanh(h)
    return win[theta.n - 1] + h


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class NonFiniteGradientError(FloatingPointError):
    pass


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float):
    """Bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter block {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"parameter block {name!r}: gradient {g.shape} vs value "
                             f"{params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter block {name!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def save_weights(path, theta: KcnWeights) -> None:
    """Flat little-endian float64 blob preceded by a JSON shape header."""
    names = sorted(theta.params, key=lambda k: (int(k[1:]), k[0]))
    header = {
        "n": theta.n,
        "d": theta.d,
        "widths": list(theta.widths),
        "blocks": [{"name": k, "shape": list(theta.params[k].shape)} for k in names],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(theta.params[k], dtype="<f8").tobytes() for k in names)
    Path(path).write_bytes(_MAGIC + struct.pack("<I", len(raw)) + raw + body)


def load_weights(path) -> KcnWeights:
    blob = Path(path).read_bytes()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not a KCN weight file")
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    offset = 8 + hlen
    params = {}
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape))
        params[block["name"]] = np.frombuffer(blob, dtype="<f8", count=count,
                                              offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes after weight blocks")
    return KcnWeights(header["n"], header["d"], tuple(header["widths"]), params)
