"""Small reverse-mode autodiff engine over numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure computing the vector-Jacobian product.  ``Tensor.backward`` walks the
recorded nodes in reverse creation order, so the "tape" is implicit in the
monotonically increasing node ids.

Only what the transformer actor-critic needs is implemented: broadcasting
arithmetic, (batched) matmul, a few pointwise nonlinearities, softmax and
layer norm over the last axis, shape manipulation and reductions.
"""
from __future__ import annotations

import contextlib
import itertools
import json
import math
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

WEIGHTS_FORMAT_VERSION = 1

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (rollouts, evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_id", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self._id = next(_ids)
        self._consumed = False

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic -------------------------------------------------------------
    def _check_broadcast(self, other: "Tensor", op: str) -> None:
        try:
            np.broadcast_shapes(self.shape, other.shape)
        except ValueError:
            raise ValueError(f"{op}: incompatible shapes {self.shape} and {other.shape}") from None

    def __add__(self, other) -> "Tensor":
        other = self._lift(other)
        self._check_broadcast(other, "add")
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = self._lift(other)
        self._check_broadcast(other, "sub")
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), -_unbroadcast(g, b_shape)),
        )

    def __rsub__(self, other) -> "Tensor":
        return self._lift(other) - self

    def __mul__(self, other) -> "Tensor":
        other = self._lift(other)
        self._check_broadcast(other, "mul")
        a, b = self.data, other.data
        return Tensor._make(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._lift(other)
        self._check_broadcast(other, "div")
        a, b = self.data, other.data
        out = a / b
        return Tensor._make(
            out,
            (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape)),
        )

    def __rtruediv__(self, other) -> "Tensor":
        return self._lift(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.data
        return Tensor._make(a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),))

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, idx) -> "Tensor":
        shape, dtype = self.shape, self.dtype

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            if _fancy(idx):
                np.add.at(full, idx, g)
            else:
                full[idx] = g
            return (full,)

        return Tensor._make(self.data[idx], (self,), backward)

    # -- shape ----------------------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    # -- reductions -------------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- pointwise -----------------------------------------------------------------------
    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor._make(self.data * mask, (self,), lambda g: (g * mask,))

    def gelu(self) -> "Tensor":
        # tanh approximation
        x = self.data
        c = math.sqrt(2.0 / math.pi)
        x2 = x * x
        t = np.tanh(c * x * (1.0 + 0.044715 * x2))
        out = 0.5 * x * (1.0 + t)

        def backward(g):
            dinner = c * (1.0 + 3 * 0.044715 * x2)
            return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

        return Tensor._make(out, (self,), backward)

    def clip(self, lo: float, hi: float) -> "Tensor":
        a = self.data
        mask = (a >= lo) & (a <= hi)
        return Tensor._make(np.clip(a, lo, hi), (self,), lambda g: (g * mask,))

    # -- autodiff --------------------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if self._consumed:
            raise RuntimeError("backward called twice on the same graph; rebuild the forward pass")
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in nodes or not node.requires_grad:
                continue
            nodes[node._id] = node
            stack.extend(node._parents)
        grads: dict[int, np.ndarray] = {self._id: grad}
        for nid in sorted(nodes, reverse=True):
            node = nodes[nid]
            g = grads.pop(nid, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad or pg is None:
                    continue
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg
            node._parents = ()
            node._backward = None
        self._consumed = True


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = np.array(data, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr, requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    if B.ndim == 2:
        # (..., n, k) @ (k, m): fold leading axes so BLAS sees one big GEMM
        A2 = A.reshape(-1, A.shape[-1])
        out_shape = A.shape[:-1] + (B.shape[1],)

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ B.T).reshape(A.shape), A2.T @ g2

        return Tensor._make((A2 @ B).reshape(out_shape), (a, b), backward)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(B, -1, -2), A.shape)
        gb = _unbroadcast(np.swapaxes(A, -1, -2) @ g, B.shape)
        return ga, gb

    return Tensor._make(A @ B, (a, b), backward)


def softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._make(s, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine ``gain``/``bias``."""
    X = x.data
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    G = gain.data if gain is not None else None
    out = xhat * G if G is not None else xhat
    if bias is not None:
        out = out + bias.data
    parents = [x] + [t for t in (gain, bias) if t is not None]

    def backward(g):
        dxhat = g * G if G is not None else g
        dx = inv * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        res = [dx]
        if gain is not None:
            res.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            res.append(_unbroadcast(g, bias.shape))
        return tuple(res)

    return Tensor._make(out, parents, backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    ax = axis % datas[0].ndim
    for t in tensors[1:]:
        rest_a = tensors[0].shape[:ax] + tensors[0].shape[ax + 1 :]
        rest_b = t.shape[:ax] + t.shape[ax + 1 :]
        if rest_a != rest_b:
            raise ValueError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    splits = np.cumsum([d.shape[ax] for d in datas])[:-1]
    return Tensor._make(
        np.concatenate(datas, axis=ax),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=ax)),
    )


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    a._check_broadcast(b, "minimum")
    A, B = a.data, b.data
    take_a = A <= B
    return Tensor._make(
        np.where(take_a, A, B),
        (a, b),
        lambda g: (_unbroadcast(g * take_a, A.shape), _unbroadcast(g * ~take_a, B.shape)),
    )


# ---------------------------------------------------------------------------------------
# optimizer


def adam_update(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    m: Sequence[np.ndarray],
    v: Sequence[np.ndarray],
    step: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """In-place AdamW step; ``step`` is 1-based and drives bias correction."""
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for p, g, m_, v_ in zip(params, grads, m, v):
        m_ *= beta1
        m_ += (1.0 - beta1) * g
        v_ *= beta2
        v_ += (1.0 - beta2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * (m_ / bc1) / (np.sqrt(v_ / bc2) + eps)


class AdamW:
    """AdamW with linear warmup over ``warmup`` steps."""

    def __init__(self, params: Sequence[Tensor], lr: float, weight_decay: float = 0.0, warmup: int = 0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.warmup = warmup
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def current_lr(self) -> float:
        if self.warmup <= 0:
            return self.lr
        return self.lr * min(1.0, (self.step_count + 1) / self.warmup)

    def step(self) -> None:
        lr = self.current_lr()
        self.step_count += 1
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_update([p.data for p in self.params], grads, self.m, self.v, self.step_count, lr,
                    self.betas[0], self.betas[1], self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_dict(self) -> dict:
        return {"step_count": self.step_count, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = state["step_count"]
        self.m = [a.copy() for a in state["m"]]
        self.v = [a.copy() for a in state["v"]]


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad = p.grad * scale
    return total


# ---------------------------------------------------------------------------------------
# serialization: JSON manifest + raw little-endian float64 blob


def save_weights(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> tuple[Path, Path]:
    path = Path(path)
    manifest_path = path.with_suffix(".json")
    blob_path = path.with_suffix(".bin")
    entries = []
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    blob_path.write_bytes(b"".join(chunks))
    manifest = {"version": WEIGHTS_FORMAT_VERSION, "dtype": "float64-le", "tensors": entries, "meta": meta or {}}
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path, blob_path


def load_weights(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    if manifest.get("version") != WEIGHTS_FORMAT_VERSION:
        raise ValueError(f"unsupported weights version {manifest.get('version')!r}")
    blob = path.with_suffix(".bin").read_bytes()
    arrays = {}
    for e in manifest["tensors"]:
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return arrays, manifest["meta"]
