"""Dense float32 tensors with reverse-mode automatic differentiation.

Deliberately small: only the operators needed to train the compact
conv/relu/pool/linear classifiers used by the rest of the package.
Dot products accumulate in float64 and store float32 results so that
finite-difference gradient checks behave identically across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "GraphError",
    "backward",
    "linear",
    "conv2d",
    "relu",
    "maxpool2d",
    "flatten",
    "cross_entropy",
    "batchnorm_fold",
    "SgdConfig",
    "SgdState",
    "sgd_step",
    "kaiming_uniform",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Invalid use of the autodiff graph (e.g. backward called twice)."""


def _f32(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float32)


def _mm64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix multiply with 64-bit accumulation, 32-bit result."""
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


class Tensor:
    """N-d float32 array plus optional gradient and graph linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_spent")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), backward_fn=None):
        self.data = _f32(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward_fn = backward_fn
        self._spent = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        g = _f32(g)
        if g.shape != self.data.shape:
            raise DimensionError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def backward(loss: Tensor) -> None:
    """Populate grads of every tensor reachable from a scalar loss.

    Visits each node exactly once in reverse topological order. Running it
    twice on the same graph raises GraphError; rebuild the forward pass
    (and zero parameter grads) between steps.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._spent:
        raise GraphError("backward already ran on this graph; rebuild the forward pass first")
    loss._spent = True

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """out[n, o] = sum_i x[n, i] * w[o, i] + b[o]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise DimensionError("linear expects x[N,I], w[O,I], b[O]")
    n_in = x.data.shape[1]
    if w.data.shape[1] != n_in or b.data.shape[0] != w.data.shape[0]:
        raise DimensionError(
            f"linear shapes disagree: x{x.data.shape} w{w.data.shape} b{b.data.shape}"
        )
    out = _mm64(x.data, w.data.T) + b.data

    def back(g: np.ndarray) -> None:
        x.accumulate_grad(_mm64(g, w.data))
        w.accumulate_grad(_mm64(g.T, x.data))
        b.accumulate_grad(g.sum(axis=0, dtype=np.float64).astype(np.float32))

    return Tensor(out, parents=(x, w, b), backward_fn=back)


def _conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: int) -> tuple[int, int]:
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {h}x{w} (pad={padding})")
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    return (h + 2 * padding - kh) // stride + 1, (w + 2 * padding - kw) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """(N,C,H,W) -> (N, oh, ow, C*kh*kw) patch matrix."""
    n, c, h, w = x.shape
    oh, ow = _conv_geometry(h, w, kh, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (N, C, oh, ow, kh, kw)
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh, ow, c * kh * kw)


def _col2im(cols: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-add (N, oh, ow, C*kh*kw) back to the input shape."""
    n, c, h, w = x_shape
    oh, ow = cols.shape[1], cols.shape[2]
    buf = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    cols = cols.reshape(n, oh, ow, c, kh, kw).astype(np.float64)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if padding:
        buf = buf[:, :, padding:-padding, padding:-padding]
    return buf.astype(np.float32)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[N,C,H,W] with w[F,C,kh,kw] plus per-filter bias."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError("conv2d expects x[N,C,H,W] and w[F,C,kh,kw]")
    n, c, h, wd = x.data.shape
    f, cw, kh, kw = w.data.shape
    if cw != c or b.data.shape != (f,):
        raise DimensionError(f"conv2d shapes disagree: x{x.data.shape} w{w.data.shape}")
    oh, ow = _conv_geometry(h, wd, kh, kw, stride, padding)

    cols = _im2col(x.data, kh, kw, stride, padding)  # (N, oh, ow, C*kh*kw)
    cols_flat = cols.reshape(-1, c * kh * kw)
    wmat = w.data.reshape(f, -1)
    out = _mm64(cols_flat, wmat.T) + b.data
    out = out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)

    def back(g: np.ndarray) -> None:
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, f)
        w.accumulate_grad(_mm64(gmat.T, cols_flat).reshape(w.data.shape))
        b.accumulate_grad(gmat.sum(axis=0, dtype=np.float64).astype(np.float32))
        gcols = _mm64(gmat, wmat).reshape(n, oh, ow, c * kh * kw)
        x.accumulate_grad(_col2im(gcols, x.data.shape, kh, kw, stride, padding))

    return Tensor(out, parents=(x, w, b), backward_fn=back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, np.float32(0.0))

    def back(g: np.ndarray) -> None:
        x.accumulate_grad(np.where(mask, g, np.float32(0.0)))

    return Tensor(out, parents=(x,), backward_fn=back)


def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k max pooling; spatial dims must divide by k."""
    if x.data.ndim != 4:
        raise DimensionError("maxpool2d expects x[N,C,H,W]")
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise DimensionError(f"maxpool2d: {h}x{w} not divisible by {k}")
    oh, ow = h // k, w // k
    tiles = x.data.reshape(n, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
    idx = tiles.argmax(axis=-1)
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def back(g: np.ndarray) -> None:
        gt = np.zeros_like(tiles)
        np.put_along_axis(gt, idx[..., None], g[..., None], axis=-1)
        gx = gt.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        x.accumulate_grad(gx)

    return Tensor(out, parents=(x,), backward_fn=back)


def flatten(x: Tensor) -> Tensor:
    n = x.data.shape[0]
    out = x.data.reshape(n, -1)

    def back(g: np.ndarray) -> None:
        x.accumulate_grad(g.reshape(x.data.shape))

    return Tensor(out, parents=(x,), backward_fn=back)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    if logits.data.ndim != 2:
        raise DimensionError("cross_entropy expects logits[N,K]")
    labels = np.asarray(labels)
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"label out of range [0, {k})")

    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = np.float32(-logp[np.arange(n), labels].mean())

    def back(g: np.ndarray) -> None:
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        logits.accumulate_grad((g.item() * p / n).astype(np.float32))

    return Tensor(loss, parents=(logits,), backward_fn=back)


def batchnorm_fold(gain, scale) -> np.ndarray:
    """Merge per-channel normalization gain with a weight scale factor.

    Returns the effective output scale so inference applies one multiply
    per channel instead of two.
    """
    eff = np.asarray(gain, dtype=np.float32) * np.float32(scale)
    return eff


# ---------------------------------------------------------------------------
# SGD
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SgdConfig:
    """Plain momentum SGD with a multiplicative step schedule."""

    base_lr: float = 0.001
    momentum: float = 0.9
    epochs: int = 15
    lr_schedule: tuple[tuple[int, float], ...] = ((5, 0.1), (10, 0.1))
    seed: int = 0

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        marks = [e for e, _ in self.lr_schedule]
        if marks != sorted(set(marks)):
            raise ValueError("lr_schedule epochs must be strictly increasing")

    def lr_at(self, epoch: int) -> float:
        lr = self.base_lr
        for mark, mult in self.lr_schedule:
            if mark <= epoch:
                lr *= mult
        return lr


class SgdState:
    """Momentum buffers, one per parameter, keyed by position."""

    def __init__(self) -> None:
        self.velocity: dict[int, np.ndarray] = {}

    def buffer_for(self, index: int, like: np.ndarray) -> np.ndarray:
        if index not in self.velocity:
            self.velocity[index] = np.zeros_like(like)
        return self.velocity[index]


def sgd_step(
    params: list[Tensor],
    config: SgdConfig,
    epoch: int,
    state: SgdState,
    lr_scales: list[np.ndarray | None] | None = None,
) -> None:
    """w <- w - lr(epoch) * (momentum-adjusted grad), optionally scaled per weight."""
    lr = np.float32(config.lr_at(epoch))
    mu = np.float32(config.momentum)
    for i, p in enumerate(params):
        if p.grad is None:
            continue
        v = state.buffer_for(i, p.data)
        v *= mu
        v += p.grad
        step = lr * v
        if lr_scales is not None and lr_scales[i] is not None:
            step = step * lr_scales[i]
        p.data = p.data - step


def kaiming_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)
