"""Dense-tensor arithmetic with reverse-mode differentiation.

Just enough machinery to express and train a multi-resolution
encoder-decoder segmentation network on whole images: 2-D convolution,
ReLU, 2x average-pool downsampling, nearest-neighbor upsampling,
channel concatenation, per-channel normalization, elementwise addition
and a scalar sum reduction.

Everything is 64-bit. Each operation records itself on an implicit tape
(the ``parents`` DAG hanging off its output tensor); :func:`backward`
replays the tape in reverse topological order, so every node's gradient
is complete before it is propagated to its inputs. Convolutions run as
im2col + BLAS matmul; the column matrix is kept on the tape node so the
kernel gradient reuses it.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError

Array = np.ndarray


class Tensor:
    """A tape node: cached forward value plus links to its inputs.

    Leaf tensors (parameters, inputs) have no parents. ``grad`` is
    populated by :func:`backward` and always matches ``data`` in shape.
    Data is treated as immutable once the node participates in a tape;
    leaf parameter arrays may be updated in place between tapes.
    """

    __slots__ = ("data", "grad", "op", "parents", "_backward")

    def __init__(
        self,
        data,
        op: str = "leaf",
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[Array], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.op = op
        self.parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"


def _accumulate(t: Tensor, g: Array) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _require_chw(x: Tensor, op: str) -> None:
    if x.data.ndim != 3:
        raise ShapeError(f"{op} expects a (channels, height, width) tensor, got shape {x.data.shape}")


def _im2col(padded: Array, kh: int, kw: int) -> Array:
    """Column matrix (c*kh*kw, h*w) of all kh x kw patches."""
    win = sliding_window_view(padded, (kh, kw), axis=(1, 2))  # (c, h, w, kh, kw)
    c, h, w = win.shape[:3]
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * kh * kw, h * w)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Same-size 2-D convolution with symmetric zero padding.

    ``kernels`` has shape (c_out, c_in, k, k) with k odd (3 for hidden
    layers, 1 for the classifier head). Zero padding produces edge
    effects near the image border; that is the documented trade-off for
    keeping output and input spatially identical.
    """
    _require_chw(x, "conv2d")
    if kernels.data.ndim != 4:
        raise ShapeError(f"conv2d kernels must be 4-D (c_out, c_in, k, k), got shape {kernels.data.shape}")
    c_out, c_in, kh, kw = kernels.data.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d kernels must be square with odd size, got {kh}x{kw}")
    cx, h, w = x.data.shape
    if cx != c_in:
        raise ShapeError(
            f"conv2d channel mismatch: input shape {x.data.shape} has {cx} channels, "
            f"kernels shape {kernels.data.shape} expect {c_in}"
        )
    if h < 1 or w < 1:
        raise ShapeError(f"conv2d needs spatial dims >= 1, got {x.data.shape}")
    if bias.data.shape != (c_out,):
        raise ShapeError(f"conv2d bias must have shape ({c_out},), got {bias.data.shape}")

    p = kh // 2
    padded = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(padded, kh, kw)
    out = (kernels.data.reshape(c_out, -1) @ cols).reshape(c_out, h, w)
    out += bias.data[:, None, None]

    node = Tensor(out, op="conv2d", parents=(x, kernels, bias))

    def bwd(g: Array) -> None:
        gf = g.reshape(c_out, -1)
        _accumulate(kernels, (gf @ cols.T).reshape(kernels.data.shape))
        _accumulate(bias, g.sum(axis=(1, 2)))
        # Adjoint of zero-padded same-size correlation: correlate the
        # upstream gradient with spatially flipped, channel-swapped kernels.
        kt = np.ascontiguousarray(kernels.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gp = np.pad(g, ((0, 0), (p, p), (p, p))) if p else g
        gcols = _im2col(gp, kh, kw)
        _accumulate(x, (kt.reshape(c_in, -1) @ gcols).reshape(c_in, h, w))

    node._backward = bwd
    return node


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x). Subgradient at 0 is taken as 0."""
    out = np.maximum(x.data, 0.0)
    node = Tensor(out, op="relu", parents=(x,))

    def bwd(g: Array) -> None:
        _accumulate(x, g * (x.data > 0.0))

    node._backward = bwd
    return node


def downsample2(x: Tensor) -> Tensor:
    """2x2 average pooling; halves both spatial dims."""
    _require_chw(x, "downsample2")
    c, h, w = x.data.shape
    if h % 2:
        raise ShapeError(f"downsample2 needs even height, got {h} (shape {x.data.shape})")
    if w % 2:
        raise ShapeError(f"downsample2 needs even width, got {w} (shape {x.data.shape})")
    out = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
    node = Tensor(out, op="downsample2", parents=(x,))

    def bwd(g: Array) -> None:
        # Adjoint of block averaging: replicate and scale by 1/4.
        _accumulate(x, np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25)

    node._backward = bwd
    return node


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x replication; doubles both spatial dims."""
    _require_chw(x, "upsample2")
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    node = Tensor(out, op="upsample2", parents=(x,))

    def bwd(g: Array) -> None:
        c, h2, w2 = g.shape
        _accumulate(x, g.reshape(c, h2 // 2, 2, w2 // 2, 2).sum(axis=(2, 4)))

    node._backward = bwd
    return node


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two tensors along the channel axis, ``a`` first."""
    _require_chw(a, "concat_channels")
    _require_chw(b, "concat_channels")
    if a.data.shape[1:] != b.data.shape[1:]:
        raise ShapeError(
            f"concat_channels spatial mismatch: {a.data.shape} vs {b.data.shape}"
        )
    ca = a.data.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)
    node = Tensor(out, op="concat_channels", parents=(a, b))

    def bwd(g: Array) -> None:
        _accumulate(a, g[:ca])
        _accumulate(b, g[ca:])

    node._backward = bwd
    return node


def channel_norm(x: Tensor, scale: Tensor, shift: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Standardize each channel over its spatial positions, then scale/shift."""
    _require_chw(x, "channel_norm")
    c = x.data.shape[0]
    if scale.data.shape != (c,) or shift.data.shape != (c,):
        raise ShapeError(
            f"channel_norm scale/shift must have shape ({c},), got {scale.data.shape} and {shift.data.shape}"
        )
    if not epsilon > 0:
        raise ContractError(f"channel_norm epsilon must be > 0, got {epsilon}")

    m = x.data.shape[1] * x.data.shape[2]
    mean = x.data.mean(axis=(1, 2), keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=(1, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = centered * inv_std
    out = xhat * scale.data[:, None, None] + shift.data[:, None, None]
    node = Tensor(out, op="channel_norm", parents=(x, scale, shift))

    def bwd(g: Array) -> None:
        _accumulate(scale, (g * xhat).sum(axis=(1, 2)))
        _accumulate(shift, g.sum(axis=(1, 2)))
        gh = g * scale.data[:, None, None]
        # Per-channel standardization gradient over m spatial positions.
        gh_sum = gh.sum(axis=(1, 2), keepdims=True)
        ghx_sum = (gh * xhat).sum(axis=(1, 2), keepdims=True)
        _accumulate(x, inv_std * (gh - gh_sum / m - xhat * ghx_sum / m))

    node._backward = bwd
    return node


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    node = Tensor(a.data + b.data, op="add", parents=(a, b))

    def bwd(g: Array) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    node._backward = bwd
    return node


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor."""
    node = Tensor(np.float64(x.data.sum()), op="sum", parents=(x,))

    def bwd(g: Array) -> None:
        _accumulate(x, np.full(x.data.shape, float(g)))

    node._backward = bwd
    return node


def _topo_order(root: Tensor) -> list[Tensor]:
    """Post-order over the DAG; reversed, it visits each node after its consumers."""
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[int, Array]:
    """Reverse-mode sweep from a scalar root.

    Resets gradients of every tensor reachable from ``loss``, seeds the
    root with 1 and propagates. Returns a map from ``id(leaf)`` to the
    leaf's gradient for all leaf tensors in the tape.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {loss.data.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    return {id(n): n.grad for n in order if not n.parents and n.grad is not None}


def finite_diff_check(
    f: Callable[[Array], float],
    point: Array,
    analytic: Array,
    step: float = 1e-5,
    n_samples: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between ``analytic`` and central differences of ``f``.

    Samples ``n_samples`` coordinates of ``point`` (all of them when None)
    and returns max over samples of |analytic - numeric| / max(1, |analytic|).
    """
    if not step > 0:
        raise ContractError(f"finite_diff_check step must be > 0, got {step}")
    flat = np.asarray(point, dtype=np.float64).ravel()
    ana = np.asarray(analytic, dtype=np.float64).ravel()
    if flat.shape != ana.shape:
        raise ShapeError(f"point and analytic gradient differ in size: {flat.shape} vs {ana.shape}")
    n = flat.size
    if n_samples is None or n_samples >= n:
        idx = np.arange(n)
    else:
        idx = np.random.default_rng(seed).choice(n, size=n_samples, replace=False)
    worst = 0.0
    for i in idx:
        xp = flat.copy()
        xp[i] += step
        xm = flat.copy()
        xm[i] -= step
        numeric = (f(xp.reshape(point.shape)) - f(xm.reshape(point.shape))) / (2.0 * step)
        err = abs(ana[i] - numeric) / max(1.0, abs(ana[i]))
        worst = max(worst, err)
    return worst


def leaves(root: Tensor) -> Iterable[Tensor]:
    """All leaf tensors reachable from ``root``."""
    return [n for n in _topo_order(root) if not n.parents]
