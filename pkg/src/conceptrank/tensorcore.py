"""Minimal reverse-mode autodiff over dense float64 tensors (rank <= 2).

Op set: add/sub/mul, matmul, relu/leaky_relu, stack/concat, row reductions
(sum/mean/max), softmax, cosine, and the triplet hinge — enough for every
graph encoder plus the ranking loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an op contract."""


class ZeroNormError(ValueError):
    """Cosine similarity involving a zero-norm vector."""


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(
        self,
        data,
        _parents: tuple = (),
        _vjp: Callable[[np.ndarray], tuple] | None = None,
    ) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"rank {arr.ndim} tensors are not supported")
        self.data = arr
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != ():
            raise ShapeError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.data.shape != ():
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        order = _topo_order(self)
        self.grad = np.ones(())
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, grad in zip(node._parents, node._vjp(node.grad)):
                if grad is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad = parent.grad + grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return Tensor(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}")
    return Tensor(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; either side may be a scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")

    def vjp(g):
        ga = g * b.data
        gb = g * a.data
        if a.shape == () and g.shape != ():
            ga = np.asarray(np.sum(ga))
        if b.shape == () and g.shape != ():
            gb = np.asarray(np.sum(gb))
        return ga, gb

    return Tensor(a.data * b.data, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise ShapeError("matmul needs rank >= 1 operands")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}: {exc}") from None

    def vjp(g):
        if a.data.ndim == 2 and b.data.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        if a.data.ndim == 1 and b.data.ndim == 2:
            return b.data @ g, np.outer(a.data, g)
        if a.data.ndim == 2 and b.data.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        return g * b.data, g * a.data  # vector . vector

    return Tensor(out, (a, b), vjp)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    slope = np.where(mask, 1.0, alpha)
    return Tensor(x.data * slope, (x,), lambda g: (g * slope,))


def concat(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of an empty sequence")
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError("concat expects 1-D tensors")
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return Tensor(np.concatenate([p.data for p in parts]), tuple(parts), vjp)


def stack(rows: Sequence[Tensor]) -> Tensor:
    rows = [_as_tensor(r) for r in rows]
    if not rows:
        raise ShapeError("stack of an empty sequence")
    shape = rows[0].shape
    for r in rows:
        if r.shape != shape:
            raise ShapeError(f"stack: mixed shapes {shape} vs {r.shape}")

    def vjp(g):
        return tuple(g[i] for i in range(len(rows)))

    return Tensor(np.stack([r.data for r in rows]), tuple(rows), vjp)


def sum_rows(m: Tensor) -> Tensor:
    m = _as_tensor(m)
    if m.data.ndim != 2:
        raise ShapeError("sum_rows expects a 2-D tensor")
    k = m.data.shape[0]
    return Tensor(m.data.sum(axis=0), (m,), lambda g: (np.broadcast_to(g, (k, g.shape[0])),))


def mean_rows(m: Tensor) -> Tensor:
    m = _as_tensor(m)
    if m.data.ndim != 2:
        raise ShapeError("mean_rows expects a 2-D tensor")
    k = m.data.shape[0]
    return Tensor(m.data.mean(axis=0), (m,), lambda g: (np.broadcast_to(g / k, (k, g.shape[0])),))


def max_rows(m: Tensor) -> Tensor:
    """Column-wise max over rows; gradient goes to the lowest maximizing row."""
    m = _as_tensor(m)
    if m.data.ndim != 2:
        raise ShapeError("max_rows expects a 2-D tensor")
    argmax = m.data.argmax(axis=0)  # first occurrence wins

    def vjp(g):
        out = np.zeros_like(m.data)
        out[argmax, np.arange(m.data.shape[1])] = g
        return (out,)

    return Tensor(m.data.max(axis=0), (m,), vjp)


def softmax(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError("softmax expects a 1-D tensor")
    shifted = x.data - x.data.max()
    e = np.exp(shifted)
    y = e / e.sum()
    return Tensor(y, (x,), lambda g: (y * (g - np.dot(g, y)),))


def getitem(x: Tensor, index: int) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError("getitem expects a 1-D tensor")

    def vjp(g):
        out = np.zeros_like(x.data)
        out[index] = g
        return (out,)

    return Tensor(x.data[index], (x,), vjp)


def dot(u: Tensor, v: Tensor) -> Tensor:
    return matmul(u, v)


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """cos(u, v) in [-1, 1]; raises ZeroNormError on a zero vector."""
    u, v = _as_tensor(u), _as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u.data))
    nv = float(np.linalg.norm(v.data))
    if nu == 0.0 or nv == 0.0:
        raise ZeroNormError("cosine of a zero-norm vector")
    c = float(np.dot(u.data, v.data) / (nu * nv))

    def vjp(g):
        gu = g * (v.data / (nu * nv) - c * u.data / (nu * nu))
        gv = g * (u.data / (nu * nv) - c * v.data / (nv * nv))
        return gu, gv

    return Tensor(c, (u, v), vjp)


def triplet_loss(pos_score: Tensor, neg_score: Tensor, margin: float) -> Tensor:
    """max(neg - pos + margin, 0); flat (zero-gradient) when inactive."""
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    return relu(add(sub(_as_tensor(neg_score), _as_tensor(pos_score)), Tensor(margin)))


# ---------------------------------------------------------------------------
# MLPs
# ---------------------------------------------------------------------------


@dataclass
class MlpParams:
    """Affine layers with ReLU between them; the final layer stays linear."""

    weights: list[Tensor]
    biases: list[Tensor]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("an MLP needs matching, non-empty weight/bias lists")
        for w, b in zip(self.weights, self.biases):
            if w.data.ndim != 2 or b.data.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"bad layer shapes {w.shape} / {b.shape}")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ShapeError(f"layer dims do not chain: {prev.shape} -> {nxt.shape}")


def init_mlp(dims: Sequence[int], rng: np.random.Generator) -> MlpParams:
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Tensor(rng.uniform(-limit, limit, size=(fan_out, fan_in))))
        biases.append(Tensor(np.zeros(fan_out)))
    return MlpParams(weights, biases)


def identity_mlp(dim: int) -> MlpParams:
    return MlpParams([Tensor(np.eye(dim))], [Tensor(np.zeros(dim))])


def mlp_forward(params: MlpParams, x: Tensor) -> Tensor:
    h = _as_tensor(x)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = add(matmul(w, h), b)
        if i < last:
            h = relu(h)
    return h


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients after backward(); parameters untouched by the loss get zeros."""
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }


def adam_step(
    params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState
) -> None:
    """One bias-corrected Adam update, in place and deterministic."""
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for name, param in params.items():
        if name not in grads:
            raise KeyError(f"missing gradient for parameter {name!r}")
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != param.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {param.data.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        param.data = param.data - update


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "values": [float(x) for x in arr.ravel()]}


def _decode_array(obj: dict) -> np.ndarray:
    return np.array(obj["values"], dtype=np.float64).reshape(obj["shape"])


def save_checkpoint(
    path: str | Path,
    params: dict[str, Tensor],
    optimizer: AdamState | None = None,
    extra: dict | None = None,
) -> None:
    obj: dict = {
        "version": _CHECKPOINT_VERSION,
        "params": {name: _encode_array(t.data) for name, t in params.items()},
        "extra": extra or {},
    }
    if optimizer is not None:
        obj["optimizer"] = {
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "step": optimizer.step,
            "m": {name: _encode_array(a) for name, a in optimizer.m.items()},
            "v": {name: _encode_array(a) for name, a in optimizer.v.items()},
        }
    else:
        obj["optimizer"] = None
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)


def load_checkpoint(path: str | Path) -> tuple[dict[str, Tensor], AdamState | None, dict]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {obj.get('version')!r}")
    params = {name: Tensor(_decode_array(spec)) for name, spec in obj["params"].items()}
    optimizer = None
    if obj.get("optimizer") is not None:
        o = obj["optimizer"]
        optimizer = AdamState(
            lr=o["lr"],
            beta1=o["beta1"],
            beta2=o["beta2"],
            eps=o["eps"],
            step=o["step"],
            m={name: _decode_array(a) for name, a in o["m"].items()},
            v={name: _decode_array(a) for name, a in o["v"].items()},
        )
    return params, optimizer, obj.get("extra", {})
