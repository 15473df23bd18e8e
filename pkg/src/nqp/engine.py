"""A small reverse-mode autodiff engine over float64 numpy arrays.

Complex quantities are stored as interleaved real pairs along the last axis,
(Re0, Im0, Re1, Im1, ...), which is exactly numpy's complex128 memory layout;
ops switch between the two with zero-copy views.

Time-indexed tensors put the time axis second to last: (..., T, C).

For a real loss and a complex intermediate z, the gradient carried in the
paired buffer is dL/dRe z + i dL/dIm z. With that convention the backward of
a complex-linear map z -> A z is g -> A^H g.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, parents: Sequence["Tensor"] = (),
                 backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
                 op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, c: float):
        return scale(self, c)

    __rmul__ = __mul__

    def item(self) -> float:
        return float(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, needs, parents if needs else (), backward_fn if needs else None, op)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def to_complex(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] % 2:
        raise ValueError(f"odd channel count {x.shape[-1]} for complex pairs")
    return np.ascontiguousarray(x).view(np.complex128)


def to_pairs(z: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(z, dtype=np.complex128).view(np.float64)


# --------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def gelu(x: Tensor) -> Tensor:
    """Exact GeLU, x * Phi(x)."""
    cdf = ndtr(x.data)

    def backward(g):
        # g * (Phi(x) + x * phi(x)), built in place
        d = np.square(x.data, out=np.empty(x.shape))
        d *= -0.5
        np.exp(d, out=d)
        d *= _INV_SQRT_2PI
        d *= x.data
        d += cdf
        d *= g
        return (d,)

    return _node(x.data * cdf, (x,), backward, "gelu")


def identity(x: Tensor) -> Tensor:
    return x


def sum_all(x: Tensor) -> Tensor:
    return _node(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def sum_sq(x: Tensor) -> Tensor:
    return _node(np.sum(x.data ** 2), (x,), lambda g: (2.0 * g * x.data,), "sum_sq")


# --------------------------------------------------------------------------
# linear maps

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight + bias along the trailing axis."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input has {x.shape[-1]} channels, weight expects {weight.shape[0]}")
    out = x.data @ weight.data
    parents = (x, weight)
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ValueError(f"linear: bias shape {bias.shape}, expected {(weight.shape[1],)}")
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        gx = g @ weight.data.T if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _node(out, parents, backward, "linear")


# Short time axes (often prime lengths, where FFTs fall back to slow
# algorithms) use a cached DFT matrix; long ones use numpy.fft.
DFT_MATRIX_MAX = 256


@lru_cache(maxsize=32)
def dft_matrix(n: int, inverse: bool = False) -> np.ndarray:
    """Unnormalized DFT matrix exp(-+2 pi i j k / n), angles reduced mod n."""
    jk = np.outer(np.arange(n), np.arange(n)) % n
    m = np.exp((2j if inverse else -2j) * np.pi * jk / n)
    m.setflags(write=False)
    return m


def dft_complex(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalized DFT (or inverse without the 1/n factor) along axis -2."""
    n = z.shape[-2]
    if n > DFT_MATRIX_MAX:
        return np.fft.ifft(z, axis=-2) * n if inverse else np.fft.fft(z, axis=-2)
    return dft_matrix(n, inverse) @ z


def dft_time(x: Tensor) -> Tensor:
    """Unnormalized forward DFT along the time axis of complex-paired channels."""
    z = dft_complex(to_complex(x.data), inverse=False)
    return _node(to_pairs(z), (x,),
                 lambda g: (to_pairs(dft_complex(to_complex(g), inverse=True)),), "dft")


def idft_time(x: Tensor) -> Tensor:
    """Inverse DFT (with the 1/T factor) along the time axis."""
    T = x.shape[-2]
    z = dft_complex(to_complex(x.data), inverse=True) / T
    return _node(to_pairs(z), (x,),
                 lambda g: (to_pairs(dft_complex(to_complex(g), inverse=False) / T),), "idft")


def batch_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` of the leading (batch) axis."""
    def backward(g):
        out = np.zeros(x.shape)
        out[start:stop] = g
        return (out,)

    return _node(x.data[start:stop], (x,), backward, "batch_slice")


def take_time(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows ``idx`` along the time axis."""
    def backward(g):
        out = np.zeros(x.shape)
        out[..., idx, :] = g
        return (out,)

    return _node(x.data[..., idx, :], (x,), backward, "take_time")


def put_time(x: Tensor, idx: np.ndarray, length: int) -> Tensor:
    """Scatter rows of ``x`` into a zero tensor of ``length`` time rows."""
    out = np.zeros(x.shape[:-2] + (length, x.shape[-1]))
    out[..., idx, :] = x.data
    return _node(out, (x,), lambda g: (g[..., idx, :],), "put_time")


def complex_pointwise_mul(x: Tensor, w: Tensor) -> Tensor:
    """Per-mode complex matrix product: out[..., n, :] = x[..., n, :] @ W[n].

    ``x`` is (..., T, 2*C_in) and ``w`` is (T, C_in, 2*C_out), both paired.
    """
    if len(w.shape) != 3 or w.shape[0] != x.shape[-2] or 2 * w.shape[1] != x.shape[-1]:
        raise ValueError(f"complex_pointwise_mul: x {x.shape} incompatible with w {w.shape}")
    xc = to_complex(x.data)
    wc = to_complex(w.data)
    lead = xc.shape[:-2]
    # time-major batches: (T, B, C_in) @ (T, C_in, C_out)
    xt = np.moveaxis(xc.reshape((-1,) + xc.shape[-2:]), 1, 0)
    out = np.moveaxis(xt @ wc, 0, 1).reshape(lead + (xc.shape[-2], wc.shape[-1]))

    def backward(g):
        gt = np.moveaxis(to_complex(g).reshape((-1,) + xc.shape[-2:-1] + (wc.shape[-1],)), 1, 0)
        gx = gw = None
        if x.requires_grad:
            gx = to_pairs(np.moveaxis(gt @ wc.conj().transpose(0, 2, 1), 0, 1)
                          .reshape(xc.shape))
        if w.requires_grad:
            gw = to_pairs(xt.conj().transpose(0, 2, 1) @ gt)
        return gx, gw

    return _node(to_pairs(out), (x, w), backward, "cmul")


def complex_matvec(m: np.ndarray, x: Tensor) -> Tensor:
    """out[..., :] = M[...] @ x[...] with a constant complex matrix stack M."""
    xc = to_complex(x.data)
    out = (m @ xc[..., None])[..., 0]
    mh = np.swapaxes(m.conj(), -1, -2)
    return _node(to_pairs(out), (x,),
                 lambda g: (to_pairs((mh @ to_complex(g)[..., None])[..., 0]),), "cmatvec")


def time_stencil(x: Tensor, d: np.ndarray) -> Tensor:
    """Apply a constant (T_out, T_in) matrix along the time axis."""
    return _node(d @ x.data, (x,), lambda g: (d.T @ g,), "stencil")


# --------------------------------------------------------------------------
# losses

def frobenius_mean(x: Tensor, y, denom: float | None = None, squared: bool = False) -> Tensor:
    """Sum over time slices of ||x - y||_F divided by ``denom``.

    Each slice is the trailing (paired) axis; ``denom`` defaults to the number
    of slices, giving a plain mean. The norm's kink at x == y gets gradient 0.
    """
    y = as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"frobenius_mean: shape mismatch {x.shape} vs {y.shape}")
    diff = x.data - y.data
    sq = np.sum(diff ** 2, axis=-1)
    n_slices = sq.size
    denom = float(n_slices if denom is None else denom)
    if squared:
        val = np.sum(sq) / denom

        def backward(g):
            gd = (2.0 * g / denom) * diff
            return gd, -gd
    else:
        norms = np.sqrt(sq)
        val = np.sum(norms) / denom

        def backward(g):
            safe = np.where(norms > 0, norms, 1.0)
            gd = (g / denom) * np.where(norms > 0, 1.0 / safe, 0.0)[..., None] * diff
            return gd, -gd

    return _node(val, (x, y), backward, "frobenius")


# --------------------------------------------------------------------------
# backward pass and optimizer

def topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node.parents, node.backward_fn(g)):
            if gp is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = gp if key not in grads else grads[key] + gp


class Adam:
    """Adam with bias correction."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            p.data -= (self.lr / c1) * m / denom
