"""Numerically stable full and partial cross-entropy over logit maps.

The network always processes the whole image; only the loss and its
gradient restrict to the labeled subset. By default the loss is the
mean over labeled pixels, which keeps its magnitude independent of the
annotation budget (the plain sum is available via ``normalize=False``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _accumulate
from .errors import ContractError, ShapeError
from .labels import LabelImage, PartialLabels


@dataclass(frozen=True)
class LossValue:
    """Scalar loss plus the number of labeled pixels it was computed over."""

    value: float
    n_labeled: int

    @property
    def empty_label_set(self) -> bool:
        return self.n_labeled == 0


def _as_logits(logits) -> np.ndarray:
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"logits must be (n_class, n_z, n_x), got shape {arr.shape}")
    return arr


def log_softmax(logits, pixel: tuple[int, int] | None = None) -> np.ndarray:
    """Log of the softmax over the class axis, computed via max-subtraction.

    With ``pixel=(row, col)`` returns the length-n_class vector at that
    pixel; otherwise the full (n_class, n_z, n_x) map.
    """
    arr = _as_logits(logits)
    if pixel is not None:
        row, col = pixel
        v = arr[:, row, col]
        shifted = v - v.max()
        return shifted - np.log(np.exp(shifted).sum())
    shifted = arr - arr.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def partial_cross_entropy(
    logits, labels: PartialLabels, normalize: bool = True
) -> tuple[LossValue, np.ndarray]:
    """Cross-entropy over the labeled pixels only.

    Returns the loss and its gradient with respect to the logits; the
    gradient is exactly zero outside the labeled set. An empty label set
    yields (0, zeros); LossValue.empty_label_set flags that case.
    """
    arr = _as_logits(logits)
    n_class = arr.shape[0]
    if labels.n_class != n_class:
        raise ShapeError(
            f"labels expect {labels.n_class} classes but logits have {n_class}"
        )
    if (labels.n_z, labels.n_x) != arr.shape[1:]:
        raise ShapeError(
            f"labels cover a {labels.n_z}x{labels.n_x} image but logits are "
            f"{arr.shape[1]}x{arr.shape[2]}"
        )
    grad = np.zeros_like(arr)
    n = len(labels)
    if n == 0:
        return LossValue(0.0, 0), grad

    rows = labels.entries[:, 0]
    cols = labels.entries[:, 1]
    classes = labels.entries[:, 2]
    z = arr[:, rows, cols]  # (n_class, n)
    shifted = z - z.max(axis=0, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    picked = log_probs[classes, np.arange(n)]
    scale = 1.0 / n if normalize else 1.0
    value = -picked.sum() * scale

    p = np.exp(log_probs)
    p[classes, np.arange(n)] -= 1.0
    p *= scale
    # positions are unique by PartialLabels invariant, so plain assignment
    grad[:, rows, cols] = p
    return LossValue(float(value), n), grad


def full_cross_entropy(
    logits, full: LabelImage, normalize: bool = True
) -> tuple[LossValue, np.ndarray]:
    """Cross-entropy with every pixel labeled."""
    arr = _as_logits(logits)
    if (full.n_z, full.n_x) != arr.shape[1:]:
        raise ShapeError(
            f"label image is {full.n_z}x{full.n_x} but logits are "
            f"{arr.shape[1]}x{arr.shape[2]}"
        )
    if full.classes.max(initial=0) >= arr.shape[0]:
        raise ShapeError(
            f"label image contains class {int(full.classes.max())} but logits "
            f"only have {arr.shape[0]} channels"
        )
    n = full.n_z * full.n_x
    log_probs = log_softmax(arr)
    zz, xx = np.indices(full.classes.shape)
    picked = log_probs[full.classes, zz, xx]
    scale = 1.0 / n if normalize else 1.0
    value = -picked.sum() * scale
    grad = np.exp(log_probs)
    grad[full.classes, zz, xx] -= 1.0
    grad *= scale
    return LossValue(float(value), n), grad


def partial_ce_node(
    logits: Tensor, labels: PartialLabels, normalize: bool = True
) -> tuple[Tensor, LossValue]:
    """Attach the partial cross-entropy to the tape as a scalar node."""
    if not isinstance(logits, Tensor):
        raise ContractError("partial_ce_node needs a tape tensor; use partial_cross_entropy for arrays")
    lv, grad = partial_cross_entropy(logits.data, labels, normalize=normalize)
    node = Tensor(np.float64(lv.value), op="partial_cross_entropy", parents=(logits,))

    def bwd(g: np.ndarray) -> None:
        _accumulate(logits, grad * float(g))

    node._backward = bwd
    return node, lv
