"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tape records primitive ops in creation order while active (via ``with
Tape():``); ``Tape.backward`` replays them once in reverse. Outside any tape,
the same primitives run as plain numpy with zero recording overhead, which is
how inference-only rollouts (greedy baselines, evaluation) are executed.

Gradients are exact analytic expressions; masked softmax treats masked logits
as -inf, so masked probabilities and their gradients are exactly zero. Only
first-order derivatives exist: backward passes compute with raw numpy and are
never themselves recorded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LAYER_NORM_EPS = 1e-5


class no_grad:
    """Suspend recording on the active tape (inference inside a training step)."""

    __slots__ = ("_prev",)

    def __enter__(self):
        global _TAPE
        self._prev = _TAPE
        _TAPE = None
        return self

    def __exit__(self, exc_type, exc, tb):
        global _TAPE
        _TAPE = self._prev
        return False


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class MaskError(ValueError):
    """A softmax row has every entry masked."""


_TAPE = None


class Tensor:
    """Dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered op record; enter to start recording, backward() to differentiate."""

    __slots__ = ("nodes", "_done", "_prev")

    def __init__(self):
        self.nodes = []
        self._done = False
        self._prev = None

    def __enter__(self):
        global _TAPE
        self._prev = _TAPE
        _TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _TAPE
        _TAPE = self._prev
        return False

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)=1 and accumulate gradients into every reachable
        requires_grad tensor. Rejects non-scalar losses and a second call."""
        if self._done:
            raise RuntimeError("backward already ran on this tape; build a new tape")
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        self._done = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def _accum(t: Tensor, g: np.ndarray) -> None:
    # out-of-place accumulation keeps aliased pass-through grads safe
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, rng: np.random.Generator | None = None, scale: float | None = None) -> Tensor:
    """Leaf tensor that collects gradients. With an rng, data is the shape of a
    uniform(-scale, scale) draw; otherwise data is used as given."""
    if rng is not None:
        shape = tuple(data)
        if scale is None:
            scale = 1.0 / np.sqrt(shape[-1] if shape else 1)
        data = rng.uniform(-scale, scale, size=shape)
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def _finish(out: Tensor, backward) -> Tensor:
    out._backward = backward
    _TAPE.nodes.append(out)
    return out


def _recording(*tensors) -> bool:
    if _TAPE is None:
        return False
    return any(t.requires_grad for t in tensors)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    flat = a.ndim > 2 and b.ndim == 2
    if flat:
        # batched activations against a shared weight: one flat GEMM instead
        # of numpy's per-batch loop
        k = a.data.shape[-1]
        data = (a.data.reshape(-1, k) @ b.data).reshape(a.data.shape[:-1] + (b.data.shape[1],))
    else:
        data = a.data @ b.data
    out = Tensor(data)
    if not _recording(a, b):
        return out
    out.requires_grad = True

    def backward(g):
        if a.requires_grad:
            if flat:
                m = g.shape[-1]
                _accum(a, (g.reshape(-1, m) @ b.data.T).reshape(a.data.shape))
            else:
                _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if flat:
                k = a.data.shape[-1]
                m = g.shape[-1]
                _accum(b, a.data.reshape(-1, k).T @ g.reshape(-1, m))
            else:
                _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _finish(out, backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    if not _recording(a, b):
        return out
    out.requires_grad = True

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _finish(out, backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    if not _recording(a, b):
        return out
    out.requires_grad = True

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _finish(out, backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    if not _recording(a, b):
        return out
    out.requires_grad = True

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _finish(out, backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)
    if not _recording(a):
        return out
    out.requires_grad = True

    def backward(g):
        _accum(a, g * c)

    return _finish(out, backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    if not _recording(a):
        return out
    out.requires_grad = True
    y = out.data

    def backward(g):
        _accum(a, g * y)

    return _finish(out, backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data))
    if not _recording(a):
        return out
    out.requires_grad = True

    def backward(g):
        _accum(a, g / a.data)

    return _finish(out, backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))
    if not _recording(a):
        return out
    out.requires_grad = True
    y = out.data

    def backward(g):
        _accum(a, g * (1.0 - y * y))

    return _finish(out, backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    if not _recording(a):
        return out
    out.requires_grad = True

    def backward(g):
        _accum(a, g * (a.data > 0.0))

    return _finish(out, backward)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - primitive name
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    if not _recording(a):
        return out
    out.requires_grad = True

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _finish(out, backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    if not _recording(a):
        return out
    out.requires_grad = True
    denom = a.data.size / out.data.size

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / denom, a.data.shape))

    return _finish(out, backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if not _recording(*tensors):
        return out
    out.requires_grad = True
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                _accum(t, piece)

    return _finish(out, backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    if not _recording(a):
        return out
    out.requires_grad = True

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _finish(out, backward)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.swapaxes(a.data, ax1, ax2))
    if not _recording(a):
        return out
    out.requires_grad = True

    def backward(g):
        _accum(a, np.swapaxes(g, ax1, ax2))

    return _finish(out, backward)


def gather_rows(a, index) -> Tensor:
    """Select rows of a 2D tensor; repeated indices accumulate gradient."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2D tensor, got {a.shape}")
    out = Tensor(a.data[index])
    if not _recording(a):
        return out
    out.requires_grad = True

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, index, g)
        _accum(a, buf)

    return _finish(out, backward)


def take_per_row(a, index) -> Tensor:
    """Pick one entry along the second axis per leading row.

    (B, n) with index (B,) -> (B,);  (B, n, d) with index (B,) -> (B, d).
    Each row is picked once, so the scatter in backward never collides.
    """
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.data.shape[0])
    if index.shape != (a.data.shape[0],):
        raise ShapeError(f"index must be ({a.data.shape[0]},), got {index.shape}")
    out = Tensor(a.data[rows, index])
    if not _recording(a):
        return out
    out.requires_grad = True

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[rows, index] = g
        _accum(a, buf)

    return _finish(out, backward)


def masked_softmax(logits, mask=None, axis: int = -1) -> Tensor:
    """Softmax that assigns exactly zero probability where mask is True.

    Masked logits are -inf analytically, so masked entries receive zero
    gradient as well. A row with every entry masked raises MaskError.
    """
    logits = as_tensor(logits)
    x = logits.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"mask shape {mask.shape} != logits shape {x.shape}")
        if np.any(mask.all(axis=axis)):
            raise MaskError("softmax row with all entries masked")
        x = np.where(mask, -np.inf, x)
    hi = x.max(axis=axis, keepdims=True)
    e = np.exp(x - hi)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p)
    if not _recording(logits):
        return out
    out.requires_grad = True

    def backward(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        _accum(logits, p * (g - inner))

    return _finish(out, backward)


def layer_norm(x, gain, bias) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"gain/bias must be ({d},), got {gain.shape}, {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.einsum("...i,...i->...", xc, xc)[..., None] / d
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)
    if not _recording(x, gain, bias):
        return out
    out.requires_grad = True

    def backward(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (gx - m1 - xhat * m2))

    return _finish(out, backward)


# ---------------------------------------------------------------------------
# fused ops
#
# Single tape nodes for multi-primitive patterns on the policy's hot path.
# Each is mathematically the composition of the primitives above; fusing
# keeps the tape short and the intermediate arrays off it.


def linear(x, w, b=None) -> Tensor:
    """x @ w (+ b) in one node; >2D x runs as one flat GEMM."""
    x, w = as_tensor(x), as_tensor(w)
    bt = None if b is None else as_tensor(b)
    k = x.data.shape[-1]
    if k != w.data.shape[0]:
        raise ShapeError(f"linear inner dims differ: {x.shape} @ {w.shape}")
    x2 = x.data.reshape(-1, k)
    y = x2 @ w.data
    if bt is not None:
        y += bt.data
    out = Tensor(y.reshape(x.data.shape[:-1] + (w.data.shape[1],)))
    if not (_recording(x, w) or (bt is not None and _recording(bt))):
        return out
    out.requires_grad = True

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            _accum(x, (g2 @ w.data.T).reshape(x.data.shape))
        if w.requires_grad:
            _accum(w, x2.T @ g2)
        if bt is not None and bt.requires_grad:
            _accum(bt, g2.sum(axis=0))

    return _finish(out, backward)


def linear_relu(x, w, b) -> Tensor:
    """relu(x @ w + b) in one node."""
    x, w, bt = as_tensor(x), as_tensor(w), as_tensor(b)
    k = x.data.shape[-1]
    x2 = x.data.reshape(-1, k)
    y = x2 @ w.data
    y += bt.data
    np.maximum(y, 0.0, out=y)
    out = Tensor(y.reshape(x.data.shape[:-1] + (w.data.shape[1],)))
    if not _recording(x, w, bt):
        return out
    out.requires_grad = True
    alive = y > 0.0

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1]) * alive
        if x.requires_grad:
            _accum(x, (g2 @ w.data.T).reshape(x.data.shape))
        if w.requires_grad:
            _accum(w, x2.T @ g2)
        if bt.requires_grad:
            _accum(bt, g2.sum(axis=0))

    return _finish(out, backward)


def rows_view(x, start: int, b: int, n: int) -> Tensor:
    """View rows [start, start+b*n) of a (R, d) tensor as (b, n, d)."""
    x = as_tensor(x)
    d = x.data.shape[-1]
    stop = start + b * n
    out = Tensor(x.data[start:stop].reshape(b, n, d))
    if not _recording(x):
        return out
    out.requires_grad = True

    def backward(g):
        buf = np.zeros_like(x.data)
        buf[start:stop] = g.reshape(-1, d)
        _accum(x, buf)

    return _finish(out, backward)


def repeat0(x, k: int) -> Tensor:
    """Repeat each leading row k times (backward sums the copies)."""
    x = as_tensor(x)
    out = Tensor(np.repeat(x.data, k, axis=0))
    if not _recording(x):
        return out
    out.requires_grad = True

    def backward(g):
        _accum(x, g.reshape((x.data.shape[0], k) + x.data.shape[1:]).sum(axis=1))

    return _finish(out, backward)


def add_n(tensors) -> Tensor:
    """Elementwise sum of same-shape tensors in one node."""
    tensors = [as_tensor(t) for t in tensors]
    acc = tensors[0].data.copy()
    for t in tensors[1:]:
        acc += t.data
    out = Tensor(acc)
    if not _recording(*tensors):
        return out
    out.requires_grad = True

    def backward(g):
        for t in tensors:
            if t.requires_grad:
                _accum(t, g)

    return _finish(out, backward)


def block_attention(qkv, bias, blocks, n_heads: int, head_dim: int) -> Tensor:
    """Full (unmasked) multi-head self-attention over a ragged row batch.

    ``qkv`` is (R, 3d) rows holding the merged query/key/value projections of
    several graph stacks laid out contiguously; ``bias`` is (R2, H) per-pair
    head biases in matching order. ``blocks`` lists (start, b, n, dstart)
    spans. Returns mixed heads as (R, d) rows.
    """
    qkv, bias = as_tensor(qkv), as_tensor(bias)
    d = n_heads * head_dim
    inv = 1.0 / np.sqrt(head_dim)
    out_rows = np.empty((qkv.data.shape[0], d))
    saved = []
    for start, b, n, dstart in blocks:
        blk = qkv.data[start : start + b * n]
        q = blk[:, :d].reshape(b, n, n_heads, head_dim).transpose(0, 2, 1, 3)
        k = blk[:, d : 2 * d].reshape(b, n, n_heads, head_dim).transpose(0, 2, 1, 3)
        v = blk[:, 2 * d :].reshape(b, n, n_heads, head_dim).transpose(0, 2, 1, 3)
        s = np.matmul(q, k.swapaxes(-1, -2))
        s *= inv
        s += bias.data[dstart : dstart + b * n * n].reshape(b, n, n, n_heads).transpose(0, 3, 1, 2)
        s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=-1, keepdims=True)
        mixed = np.matmul(s, v)
        out_rows[start : start + b * n] = mixed.transpose(0, 2, 1, 3).reshape(b * n, d)
        saved.append((q, k, v, s))
    out = Tensor(out_rows)
    if not _recording(qkv, bias):
        return out
    out.requires_grad = True

    def backward(g):
        g_qkv = np.zeros_like(qkv.data) if qkv.requires_grad else None
        g_bias = np.zeros_like(bias.data) if bias.requires_grad else None
        for (start, b, n, dstart), (q, k, v, p) in zip(blocks, saved):
            gm = g[start : start + b * n].reshape(b, n, n_heads, head_dim).transpose(0, 2, 1, 3)
            gp = np.matmul(gm, v.swapaxes(-1, -2))
            gv = np.matmul(p.swapaxes(-1, -2), gm)
            gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True))
            if g_bias is not None:
                g_bias[dstart : dstart + b * n * n] += gs.transpose(0, 2, 3, 1).reshape(-1, n_heads)
            gq = np.matmul(gs, k)
            gq *= inv
            gk = np.matmul(gs.swapaxes(-1, -2), q)
            gk *= inv
            if g_qkv is not None:
                rows = slice(start, start + b * n)
                g_qkv[rows, :d] = gq.transpose(0, 2, 1, 3).reshape(-1, d)
                g_qkv[rows, d : 2 * d] = gk.transpose(0, 2, 1, 3).reshape(-1, d)
                g_qkv[rows, 2 * d :] = gv.transpose(0, 2, 1, 3).reshape(-1, d)
        if g_qkv is not None:
            _accum(qkv, g_qkv)
        if g_bias is not None:
            _accum(bias, g_bias)

    return _finish(out, backward)






def mix_matrix(w, kl) -> Tensor:
    """Precomposed pointer map: (d,f) weight against (b,n,f) keys -> (b,d,n)."""
    w, kl = as_tensor(w), as_tensor(kl)
    out = Tensor(np.matmul(w.data, kl.data.swapaxes(1, 2)))
    if not _recording(w, kl):
        return out
    out.requires_grad = True

    def backward(g):
        if w.requires_grad:
            _accum(w, np.matmul(g, kl.data).sum(axis=0))
        if kl.requires_grad:
            _accum(kl, np.matmul(g.swapaxes(1, 2), w.data))

    return _finish(out, backward)






def pointer_probs(q, keys, vals, m, mask, clip: float, inv_scale: float,
                  n_heads: int, head_dim: int) -> Tensor:
    """One decoder pointer step in a single node.

    Composition of glimpse_scores -> masked_softmax -> glimpse_mix ->
    row_dot -> clipped_masked_softmax: the query (b, d) attends over per-head
    keys (b, H, n, hd), the mixed glimpse is scored against the precomposed
    pointer map m (b, d, n), and the clipped logits soft-max with exact-zero
    semantics under mask (b, n). Raises MaskError on an all-masked row.
    """
    q, keys, vals, m = as_tensor(q), as_tensor(keys), as_tensor(vals), as_tensor(m)
    mask = np.asarray(mask, dtype=bool)
    b = q.data.shape[0]
    if mask.shape != (b, keys.data.shape[2]):
        raise ShapeError(f"mask shape {mask.shape} != {(b, keys.data.shape[2])}")
    if np.any(mask.all(axis=-1)):
        raise MaskError("softmax row with all entries masked")
    inv_att = 1.0 / np.sqrt(head_dim)
    q3 = q.data.reshape(b, n_heads, head_dim)
    s = np.einsum("bhd,bhnd->bhn", q3, keys.data)
    s *= inv_att
    s = np.where(mask[:, None, :], -np.inf, s)
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    mix = np.einsum("bhn,bhnd->bhd", s, vals.data).reshape(b, -1)
    u = np.matmul(mix[:, None, :], m.data)[:, 0]
    # center scores over the live candidates: the softmax is invariant to a
    # per-row shift, but the tanh clip is not, and an uncontrolled common
    # offset drifts it into the flat tail where every gradient vanishes
    live = ~mask
    nlive = live.sum(axis=-1, keepdims=True)
    u = u - np.where(live, u, 0.0).sum(axis=-1, keepdims=True) / nlive
    t = np.tanh(u * inv_scale)
    x = np.where(mask, -np.inf, t * clip)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)
    if not _recording(q, keys, vals, m):
        return out
    out.requires_grad = True

    def backward(g):
        gx = p * (g - (g * p).sum(axis=-1, keepdims=True))
        gu = gx * (1.0 - t * t)
        gu *= clip * inv_scale
        # through the centering: gu is zero on masked entries already
        gu = gu - np.where(live, gu.sum(axis=-1, keepdims=True) / nlive, 0.0)
        if m.requires_grad:
            _accum(m, mix[:, :, None] * gu[:, None, :])
        gmix = np.matmul(gu[:, None, :], m.data.swapaxes(1, 2))[:, 0]
        g3 = gmix.reshape(b, n_heads, head_dim)
        if vals.requires_grad:
            _accum(vals, s[..., None] * g3[:, :, None, :])
        ga = np.einsum("bhd,bhnd->bhn", g3, vals.data)
        gs = s * (ga - (ga * s).sum(axis=-1, keepdims=True))
        gs *= inv_att
        if q.requires_grad:
            _accum(q, np.einsum("bhn,bhnd->bhd", gs, keys.data).reshape(b, -1))
        if keys.requires_grad:
            _accum(keys, gs[..., None] * q3[:, :, None, :])

    return _finish(out, backward)


def log_pick(probs, index) -> Tensor:
    """log(probs[i, index_i]) per row in one node."""
    probs = as_tensor(probs)
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(probs.data.shape[0])
    picked = probs.data[rows, index]
    out = Tensor(np.log(picked))
    if not _recording(probs):
        return out
    out.requires_grad = True

    def backward(g):
        buf = np.zeros_like(probs.data)
        buf[rows, index] = g / picked
        _accum(probs, buf)

    return _finish(out, backward)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update with bias correction, in place over named tensors.

    Parameters with a missing or None gradient are treated as zero-gradient
    (their moments still decay).
    """
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        else:
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise ShapeError(f"grad shape {g.shape} != param {name} shape {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.grad = None


def collect_grads(params: dict) -> dict:
    return {k: p.grad for k, p in params.items()}
