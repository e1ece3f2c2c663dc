"""Dense 2D-tensor layers with explicit forward and backward passes.

Everything is float64 and every parameter is a 2D row-major array
(vector parameters are 1 x d), which keeps the checkpoint format
uniform. No autograd: each layer returns a cache from forward and the
matching backward consumes it, accumulating parameter gradients into
the ParamStore.

Checkpoint format (magic VHW1, little-endian):
  u32 tensor count, then per tensor:
  u32 name length, name bytes (utf-8), u32 rows, u32 cols,
  rows*cols f64 payload, row-major.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .kernels import (
    gelu_bwd,
    gelu_fwd,
    layernorm_bwd,
    layernorm_fwd,
    sigmoid_fwd,
    softmax_rows,
    softmax_rows_bwd,
)

CHECKPOINT_MAGIC = b"VHW1"
LAYERNORM_EPS = 1e-5


def as_tensor2d(arr) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"expected a 2D tensor, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError("tensor contains non-finite values")
    return out


class ParamStore:
    """Named 2D parameter tensors with mirrored gradient accumulators."""

    def __init__(self):
        self.tensors: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, arr) -> np.ndarray:
        if name in self.tensors:
            raise ValueError(f"duplicate parameter name: {name}")
        t = as_tensor2d(arr)
        self.tensors[name] = t
        self.grads[name] = np.zeros_like(t)
        return t

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def accumulate(self, name: str, grad) -> None:
        self.grads[name] += grad

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[:] = 0.0

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def sgd_step(self, lr: float) -> None:
        for name, t in self.tensors.items():
            t -= lr * self.grads[name]

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, t in self.tensors.items():
            other.add(name, t.copy())
        return other

    def to_bytes(self) -> bytes:
        chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(self.tensors))]
        for name, t in self.tensors.items():
            raw = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(raw)))
            chunks.append(raw)
            chunks.append(struct.pack("<II", t.shape[0], t.shape[1]))
            chunks.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
        return b"".join(chunks)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamStore":
        if blob[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic: {blob[:4]!r}")
        store = cls()
        off = 4
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            rows, cols = struct.unpack_from("<II", blob, off)
            off += 8
            n = rows * cols
            data = np.frombuffer(blob, dtype="<f8", count=n, offset=off).astype(np.float64)
            off += 8 * n
            store.add(name, data.reshape(rows, cols))
        return store

    @classmethod
    def load(cls, path) -> "ParamStore":
        return cls.from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# initializers


def init_linear(
    store: ParamStore, name: str, d_in: int, d_out: int, rng, style: str = "uniform"
) -> None:
    """style: "uniform" U(-1/sqrt(d_in), 1/sqrt(d_in)); "near_identity"
    eye(d_in, d_out) plus 0.1x uniform noise (lets similarity structure
    survive initialization, which plain SGD needs to train the retriever
    in few steps); "zero" for readouts that must start unbiased."""
    bound = 1.0 / math.sqrt(d_in)
    w = rng.uniform(-bound, bound, size=(d_in, d_out))
    if style == "near_identity":
        w = np.eye(d_in, d_out) + 0.1 * w
    elif style == "zero":
        w = np.zeros((d_in, d_out))
    elif style != "uniform":
        raise ValueError(f"unknown init style: {style}")
    store.add(f"{name}.w", w)
    store.add(f"{name}.b", np.zeros((1, d_out)))


def init_layernorm(store: ParamStore, name: str, d: int) -> None:
    store.add(f"{name}.g", np.ones((1, d)))
    store.add(f"{name}.beta", np.zeros((1, d)))


def init_attention(store: ParamStore, name: str, d: int, rng, style: str = "uniform") -> None:
    for part in ("q", "k", "v", "o"):
        init_linear(store, f"{name}.{part}", d, d, rng, style=style)


def init_mlp(store: ParamStore, name: str, d: int, hidden: int, rng) -> None:
    init_linear(store, f"{name}.fc1", d, hidden, rng)
    init_linear(store, f"{name}.fc2", hidden, d, rng)


def init_block(
    store: ParamStore, name: str, d: int, rng, mlp_ratio: int = 4, attn_style: str = "uniform"
) -> None:
    init_layernorm(store, f"{name}.ln1", d)
    init_attention(store, f"{name}.attn", d, rng, style=attn_style)
    init_layernorm(store, f"{name}.ln2", d)
    init_mlp(store, f"{name}.mlp", d, mlp_ratio * d, rng)


# ---------------------------------------------------------------------------
# primitives


def linear_forward(store: ParamStore, name: str, x: np.ndarray):
    w, b = store[f"{name}.w"], store[f"{name}.b"]
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"{name}: input cols {x.shape[1]} != weight rows {w.shape[0]}")
    return x @ w + b, (x,)


def linear_backward(store: ParamStore, name: str, dy: np.ndarray, cache) -> np.ndarray:
    (x,) = cache
    store.accumulate(f"{name}.w", x.T @ dy)
    store.accumulate(f"{name}.b", dy.sum(axis=0, keepdims=True))
    return dy @ store[f"{name}.w"].T


def gelu_forward(x: np.ndarray):
    return gelu_fwd(x), (x,)


def gelu_backward(dy: np.ndarray, cache) -> np.ndarray:
    (x,) = cache
    return gelu_bwd(x, dy)


def sigmoid_forward(x: np.ndarray):
    y = sigmoid_fwd(x)
    return y, (y,)


def sigmoid_backward(dy: np.ndarray, cache) -> np.ndarray:
    (y,) = cache
    return dy * y * (1.0 - y)


def softmax_forward(x: np.ndarray):
    y = softmax_rows(np.ascontiguousarray(x))
    return y, (y,)


def softmax_backward(dy: np.ndarray, cache) -> np.ndarray:
    (y,) = cache
    return softmax_rows_bwd(y, np.ascontiguousarray(dy))


def layernorm_forward(store: ParamStore, name: str, x: np.ndarray):
    g = store[f"{name}.g"].ravel()
    beta = store[f"{name}.beta"].ravel()
    x = np.ascontiguousarray(x)
    y, mean, rstd = layernorm_fwd(x, g, beta, LAYERNORM_EPS)
    return y, (x, mean, rstd)


def layernorm_backward(store: ParamStore, name: str, dy: np.ndarray, cache) -> np.ndarray:
    x, mean, rstd = cache
    g = store[f"{name}.g"].ravel()
    dx, dgamma, dbeta = layernorm_bwd(x, g, mean, rstd, np.ascontiguousarray(dy))
    store.accumulate(f"{name}.g", dgamma[None, :])
    store.accumulate(f"{name}.beta", dbeta[None, :])
    return dx


def attention_forward(store: ParamStore, name: str, q_in: np.ndarray, kv_in: np.ndarray, n_heads: int = 1):
    """Scaled dot-product attention; q_in K x d attends to kv_in T x d."""
    d = q_in.shape[1]
    if kv_in.shape[1] != d:
        raise ValueError(f"{name}: query dim {d} != key/value dim {kv_in.shape[1]}")
    if d % n_heads != 0:
        raise ValueError(f"{name}: model dim {d} not divisible by {n_heads} heads")
    hd = d // n_heads
    q, cq = linear_forward(store, f"{name}.q", q_in)
    k, ck = linear_forward(store, f"{name}.k", kv_in)
    v, cv = linear_forward(store, f"{name}.v", kv_in)
    scale = 1.0 / math.sqrt(hd)
    heads = []
    atts = []
    for h in range(n_heads):
        sl = slice(h * hd, (h + 1) * hd)
        scores = (q[:, sl] @ k[:, sl].T) * scale
        att = softmax_rows(np.ascontiguousarray(scores))
        heads.append(att @ v[:, sl])
        atts.append(att)
    concat = np.concatenate(heads, axis=1) if n_heads > 1 else heads[0]
    out, co = linear_forward(store, f"{name}.o", concat)
    cache = (q, k, v, atts, cq, ck, cv, co, n_heads, hd, scale)
    return out, cache


def attention_backward(store: ParamStore, name: str, dout: np.ndarray, cache):
    q, k, v, atts, cq, ck, cv, co, n_heads, hd, scale = cache
    dconcat = linear_backward(store, f"{name}.o", dout, co)
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    for h in range(n_heads):
        sl = slice(h * hd, (h + 1) * hd)
        att = atts[h]
        dhead = dconcat[:, sl]
        datt = dhead @ v[:, sl].T
        dv[:, sl] = att.T @ dhead
        dscores = softmax_rows_bwd(att, np.ascontiguousarray(datt)) * scale
        dq[:, sl] = dscores @ k[:, sl]
        dk[:, sl] = dscores.T @ q[:, sl]
    dq_in = linear_backward(store, f"{name}.q", dq, cq)
    dkv_in = linear_backward(store, f"{name}.k", dk, ck)
    dkv_in = dkv_in + linear_backward(store, f"{name}.v", dv, cv)
    return dq_in, dkv_in


def mlp_forward(store: ParamStore, name: str, x: np.ndarray):
    h, c1 = linear_forward(store, f"{name}.fc1", x)
    a, cg = gelu_forward(h)
    y, c2 = linear_forward(store, f"{name}.fc2", a)
    return y, (c1, cg, c2)


def mlp_backward(store: ParamStore, name: str, dy: np.ndarray, cache) -> np.ndarray:
    c1, cg, c2 = cache
    da = linear_backward(store, f"{name}.fc2", dy, c2)
    dh = gelu_backward(da, cg)
    return linear_backward(store, f"{name}.fc1", dh, c1)


def block_forward(store: ParamStore, name: str, x: np.ndarray, context: np.ndarray | None = None, n_heads: int = 1):
    """Pre-LN transformer block. Self-attention when context is None,
    cross-attention to `context` otherwise."""
    normed, cl1 = layernorm_forward(store, f"{name}.ln1", x)
    kv = normed if context is None else context
    att, ca = attention_forward(store, f"{name}.attn", normed, kv, n_heads)
    x1 = x + att
    normed2, cl2 = layernorm_forward(store, f"{name}.ln2", x1)
    m, cm = mlp_forward(store, f"{name}.mlp", normed2)
    out = x1 + m
    return out, (cl1, ca, cl2, cm, context is None)


def block_backward(store: ParamStore, name: str, dout: np.ndarray, cache):
    """Returns (dx, dcontext); dcontext is None for self-attention."""
    cl1, ca, cl2, cm, self_attn = cache
    dm = mlp_backward(store, f"{name}.mlp", dout, cm)
    dx1 = dout + layernorm_backward(store, f"{name}.ln2", dm, cl2)
    dq_in, dkv_in = attention_backward(store, f"{name}.attn", dx1, ca)
    if self_attn:
        dnormed = dq_in + dkv_in
        dx = dx1 + layernorm_backward(store, f"{name}.ln1", dnormed, cl1)
        return dx, None
    dx = dx1 + layernorm_backward(store, f"{name}.ln1", dq_in, cl1)
    return dx, dkv_in


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    loss_fn,
    store: ParamStore,
    eps: float = 1e-5,
    rng=None,
    max_coords_per_tensor: int | None = None,
    names=None,
    atol: float = 1e-9,
) -> float:
    """Max relative error between analytic and central-difference grads.

    loss_fn() must run forward and backward, leaving gradients in
    store.grads, and return the scalar loss. rel err is
    |ga - gn| / max(|ga|, |gn|, 1e-8); absolute differences below
    `atol` count as zero, since central differences at eps=1e-5 carry
    ~1e-11 cancellation noise that would otherwise dominate coordinates
    whose true gradient is identically zero.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    store.zero_grads()
    base = float(loss_fn())
    if not math.isfinite(base):
        raise FloatingPointError("non-finite loss")
    analytic = {n: g.copy() for n, g in store.grads.items()}
    worst = 0.0
    check_names = list(names) if names is not None else list(store.tensors)
    for name in check_names:
        flat = store.tensors[name].ravel()
        idxs = np.arange(flat.size)
        if max_coords_per_tensor is not None and flat.size > max_coords_per_tensor:
            if rng is None:
                raise ValueError("rng required when sampling coordinates")
            idxs = np.sort(rng.choice(flat.size, size=max_coords_per_tensor, replace=False))
        ga_flat = analytic[name].ravel()
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + eps
            lp = float(loss_fn())
            flat[idx] = orig - eps
            lm = float(loss_fn())
            flat[idx] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{idx}]")
            gn = (lp - lm) / (2.0 * eps)
            ga = ga_flat[idx]
            diff = abs(ga - gn)
            if diff > atol:
                worst = max(worst, diff / max(abs(ga), abs(gn), 1e-8))
    store.zero_grads()
    loss_fn()  # restore analytic grads for the unperturbed point
    return worst
