"""Minimal reverse-mode automatic differentiation over numpy arrays.

The tape is a DAG of :class:`Tensor` nodes; each op records a closure that
scatters the output gradient back to its parents.  Feature maps use the
channels-last layout ``[batch, height, width, channels]`` throughout, which
keeps every convolution a plain BLAS matmul on contiguous memory.

Convolutions use "same" padding and odd kernels only.  The stride-1 path
multiplies the whole padded input once per kernel tap and accumulates
shifted output windows (no im2col copy); the strided path slices input
windows instead.  Both fall out of the same algebra and are checked against
brute-force loop oracles in the test suite.

A global multiply-accumulate counter can be armed with :func:`count_macs`
to audit analytic FLOPs models against what the ops actually execute.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit

from .errors import NumericError
from .rng import SplitMix64

_GRAD_ENABLED = True
_MAC_COUNTERS: list["MacCounter"] = []


class MacCounter:
    """Accumulates multiply-accumulate counts of conv/linear forwards."""

    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


@contextlib.contextmanager
def count_macs():
    """Context manager yielding a MacCounter armed for its duration."""
    counter = MacCounter()
    _MAC_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _MAC_COUNTERS.remove(counter)


def _record_macs(n: int) -> None:
    for counter in _MAC_COUNTERS:
        counter.add(n)


@contextlib.contextmanager
def no_grad():
    """Disables graph construction; forwards run on bare arrays."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """An array with an optional gradient buffer of identical shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._parents: tuple[Tensor, ...] = ()
        self._bwd: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, parents: tuple[Tensor, ...],
          bwd: Callable[[np.ndarray], None] | None) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._bwd = bwd
    return out


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch {a.data.shape} vs {b.data.shape}")

    def bwd(go):
        _accum(a, go)
        _accum(b, go)

    return _make(a.data + b.data, (a, b), bwd)


def add_n(terms: Iterable[Tensor]) -> Tensor:
    terms = list(terms)
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    def bwd(go):
        _accum(a, go * c)

    return _make(a.data * c, (a,), bwd)


def square(a: Tensor) -> Tensor:
    def bwd(go):
        _accum(a, go * (2.0 * a.data))

    return _make(a.data * a.data, (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bwd(go):
        _accum(a, go.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def concat(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    na = a.data.shape[axis]

    def bwd(go):
        ga, gb = np.split(go, [na], axis=axis)
        _accum(a, ga)
        _accum(b, gb)

    return _make(np.concatenate([a.data, b.data], axis=axis), (a, b), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-d tensor."""
    def bwd(go):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[:, start:stop] = go
            _accum(a, g)

    return _make(np.ascontiguousarray(a.data[:, start:stop]), (a,), bwd)


def broadcast_rows(v: Tensor, n: int) -> Tensor:
    """[D] -> [n, D]; the backward sums over rows."""
    def bwd(go):
        _accum(v, go.sum(axis=0))

    return _make(np.broadcast_to(v.data, (n,) + v.data.shape), (v,), bwd)


def mean(a: Tensor, axes: tuple[int, ...] | None = None,
         keepdims: bool = False) -> Tensor:
    if axes is None:
        axes = tuple(range(a.data.ndim))
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]

    def bwd(go):
        g = go if keepdims else np.expand_dims(go, axes)
        _accum(a, np.broadcast_to(g / count, a.data.shape))

    return _make(a.data.mean(axis=axes, keepdims=keepdims), (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x): smooth, and exactly zero at zero."""
    s = expit(a.data)
    out = a.data * s

    def bwd(go):
        _accum(a, go * (s * (1.0 + a.data * (1.0 - s))))

    return _make(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)

    def bwd(go):
        _accum(a, go * (s * (1.0 - s)))

    return _make(s, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[N,din] @ w[din,dout] + b[dout]."""
    _record_macs(x.data.shape[0] * w.data.shape[0] * w.data.shape[1])
    out = x.data @ w.data + b.data

    def bwd(go):
        _accum(x, go @ w.data.T)
        _accum(w, x.data.T @ go)
        _accum(b, go.sum(axis=0))

    return _make(out, (x, w, b), bwd)


# ---------------------------------------------------------------------------
# convolution ops (NHWC, same padding, odd kernels)
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Shared-kernel convolution: x[N,H,W,C], w[kh,kw,C,Co], b[Co].

    H and W must be divisible by the stride.
    """
    n, h, width, c = x.data.shape
    kh, kw, cin, cout = w.data.shape
    if cin != c:
        raise ValueError(f"conv2d expects {cin} input channels, got {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d kernels must be odd")
    if h % stride or width % stride:
        raise ValueError("spatial dims must be divisible by the stride")
    p = kh // 2
    ho, wo = h // stride, width // stride
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
    _record_macs(n * ho * wo * cout * cin * kh * kw)

    if stride == 1:
        hp, wp = h + 2 * p, width + 2 * p
        xm = xp.reshape(-1, c)
        out = np.zeros((n, h, width, cout), dtype=x.data.dtype)
        for i in range(kh):
            for j in range(kw):
                yp = (xm @ w.data[i, j]).reshape(n, hp, wp, cout)
                out += yp[:, i:i + h, j:j + width, :]
    else:
        out = np.zeros((n, ho, wo, cout), dtype=x.data.dtype)
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, i:i + stride * ho:stride,
                        j:j + stride * wo:stride, :].reshape(-1, c)
                out += (xs @ w.data[i, j]).reshape(n, ho, wo, cout)
    out += b.data

    def bwd(go):
        gom = go.reshape(-1, cout)
        _accum(b, go.sum(axis=(0, 1, 2)))
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for i in range(kh):
                for j in range(kw):
                    xs = xp[:, i:i + stride * ho:stride,
                            j:j + stride * wo:stride, :].reshape(-1, c)
                    gw[i, j] = xs.T @ gom
            _accum(w, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    g = (gom @ w.data[i, j].T).reshape(n, ho, wo, c)
                    gxp[:, i:i + stride * ho:stride,
                        j:j + stride * wo:stride, :] += g
            _accum(x, gxp[:, p:p + h, p:p + width, :])

    return _make(out, (x, w, b), bwd)


def conv2d_per_sample(x: Tensor, w: Tensor, b: Tensor, k: int) -> Tensor:
    """Convolution whose kernel differs per sample (hypernetwork heads).

    x[N,H,W,C]; w[N, k*k*C, Co] with row index (i*k + j)*C + c over kernel
    taps (i, j) and input channel c; b[N, Co].  Stride 1, same padding.
    """
    n, h, width, c = x.data.shape
    _, rows, cout = w.data.shape
    if rows != k * k * c:
        raise ValueError(f"kernel rows {rows} != k*k*C = {k * k * c}")
    if k % 2 == 0:
        raise ValueError("kernel size must be odd")
    p = k // 2
    _record_macs(n * h * width * cout * rows)

    if k == 1:
        cols = x.data.reshape(n, h * width, c)
    else:
        xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
        blocks = [xp[:, i:i + h, j:j + width, :]
                  for i in range(k) for j in range(k)]
        cols = np.concatenate(blocks, axis=-1).reshape(n, h * width, rows)
    out = np.matmul(cols, w.data) + b.data[:, None, :]

    def bwd(go):
        gom = go.reshape(n, h * width, cout)
        _accum(b, gom.sum(axis=1))
        _accum(w, np.matmul(cols.transpose(0, 2, 1), gom))
        if x.requires_grad:
            gcols = np.matmul(gom, w.data.transpose(0, 2, 1))
            if k == 1:
                _accum(x, gcols.reshape(n, h, width, c))
            else:
                gxp = np.zeros((n, h + 2 * p, width + 2 * p, c),
                               dtype=x.data.dtype)
                gview = gcols.reshape(n, h, width, k * k, c)
                for i in range(k):
                    for j in range(k):
                        gxp[:, i:i + h, j:j + width, :] += \
                            gview[:, :, :, i * k + j, :]
                _accum(x, gxp[:, p:p + h, p:p + width, :])

    return _make(out.reshape(n, h, width, cout), (x, w, b), bwd)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour upsampling by 2 along both spatial axes."""
    n, h, w, c = x.data.shape
    out = x.data.repeat(2, axis=1).repeat(2, axis=2)

    def bwd(go):
        _accum(x, go.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)))

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def bce(p: Tensor, target: np.ndarray, clamp: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to
    [clamp, 1-clamp] before the logarithms.  Targets may be soft.
    """
    y = np.asarray(target, dtype=p.data.dtype)
    if y.shape != p.data.shape:
        raise ValueError(f"bce shape mismatch {p.data.shape} vs {y.shape}")
    pc = np.clip(p.data, clamp, 1.0 - clamp)
    n = p.data.size
    loss = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)).mean()

    def bwd(go):
        inside = (p.data > clamp) & (p.data < 1.0 - clamp)
        g = (pc - y) / (pc * (1.0 - pc) * n)
        _accum(p, go * np.where(inside, g, 0.0))

    return _make(np.asarray(loss, dtype=p.data.dtype), (p,), bwd)


def mse_to(a: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared difference against a constant array."""
    t = np.asarray(target, dtype=a.data.dtype)
    if t.shape != a.data.shape:
        raise ValueError(f"mse shape mismatch {a.data.shape} vs {t.shape}")
    d = a.data - t
    n = a.data.size

    def bwd(go):
        _accum(a, go * (2.0 / n) * d)

    return _make(np.asarray((d * d).mean(), dtype=a.data.dtype), (a,), bwd)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[..., Tensor], inputs: list[np.ndarray],
               epsilon: float = 1e-5, max_entries: int = 10_000,
               seed: int = 0) -> float:
    """Max relative error between reverse-mode and central differences.

    `fn` maps Tensors (one per input array) to a scalar Tensor.  Every
    entry of every input is perturbed, unless an input has more than
    `max_entries` entries, in which case a seeded random subsample of that
    size is used.  All arithmetic runs in float64 regardless of the input
    dtypes.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True)
               for a in inputs]
    out = fn(*tensors)
    out.backward()
    analytic = []
    for t in tensors:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite analytic gradient")
        analytic.append(g.reshape(-1).copy())

    def forward() -> float:
        with no_grad():
            return float(fn(*tensors).data)

    rng = SplitMix64(seed)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        size = flat.size
        if size <= max_entries:
            indices = range(size)
        else:
            indices = np.unique(rng.integers(0, size - 1, (max_entries,)))
        for i in indices:
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = forward()
            flat[i] = orig - epsilon
            f_minus = forward()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(g[i] - numeric) / max(abs(g[i]), abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst
