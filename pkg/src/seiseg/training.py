"""Stochastic gradient descent on (image, partial-label) pairs.

One whole image per iteration, no patches and no mini-batches. The
learning rate follows a step-decay schedule; each epoch visits every
image exactly once in a seed-determined order. Images are standardized
to zero mean and unit variance before the forward pass, which is what
lets the schedule start at 1.0 without blowing up.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import backward
from .errors import ConfigError, ContractError, FormatError, TrainingDiverged
from .loss import partial_ce_node
from .network import (
    ArchConfig,
    LayerParams,
    NetworkParams,
    build_network,
    load_checkpoint,
    save_checkpoint,
    tape_forward,
)
from .seeding import STREAM_SHUFFLE, mix64

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "lr_schedule",
    "standardize_image",
    "train",
    "save_history",
    "load_history",
    "save_checkpoint",
    "load_checkpoint",
]

HISTORY_HEADER = "epoch,iter,image_id,lr,loss"


@dataclass(frozen=True)
class TrainConfig:
    """Schedule and bookkeeping knobs; defaults give 120 epochs of lr 1.0 -> 0.001."""

    epochs: int = 120
    base_lr: float = 1.0
    decay_factor: float = 10.0
    decay_every: int = 30
    seed: int = 0
    shuffle: bool = True
    checkpoint_every: int = 0  # epochs between periodic checkpoints, 0 disables

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.decay_factor <= 0:
            raise ConfigError(f"decay_factor must be positive, got {self.decay_factor}")
        if self.decay_every < 1:
            raise ConfigError(f"decay_every must be at least 1, got {self.decay_every}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every cannot be negative")


def lr_schedule(cfg: TrainConfig, epoch: int) -> float:
    """base_lr / decay_factor^(epoch // decay_every), exact float arithmetic."""
    if not 0 <= epoch < cfg.epochs:
        raise ContractError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.base_lr / cfg.decay_factor ** (epoch // cfg.decay_every)


def standardize_image(image) -> np.ndarray:
    """Zero-mean unit-variance copy; constant images are only de-meaned."""
    arr = np.asarray(getattr(image, "data", image), dtype=np.float64)
    s = arr.std()
    return (arr - arr.mean()) / (s if s > 0 else 1.0)


@dataclass
class TrainHistory:
    epoch: np.ndarray
    iteration: np.ndarray
    image_id: np.ndarray
    lr: np.ndarray
    loss: np.ndarray

    def __len__(self) -> int:
        return int(self.loss.size)

    def epoch_mean_loss(self) -> np.ndarray:
        n_epochs = int(self.epoch.max()) + 1 if len(self) else 0
        return np.array([self.loss[self.epoch == e].mean() for e in range(n_epochs)])


def _clone_params(params: NetworkParams) -> NetworkParams:
    blocks = []
    for b in params.blocks:
        blocks.append(
            LayerParams(
                kernels=b.kernels.copy(),
                bias=b.bias.copy(),
                scale=None if b.scale is None else b.scale.copy(),
                shift=None if b.shift is None else b.shift.copy(),
            )
        )
    return NetworkParams(cfg=params.cfg, blocks=blocks)


def train(
    dataset,
    cfg: TrainConfig,
    arch: ArchConfig,
    init_seed: int | None = None,
    checkpoint_dir=None,
    on_epoch=None,
):
    """Run SGD over a list of (image, PartialLabels) pairs.

    Returns (NetworkParams, TrainHistory). The parameter update is
    theta <- theta - lr * grad(partial loss on the drawn image), one
    image per iteration. If the loss goes non-finite, training aborts
    with the iteration index and the last parameter snapshot whose
    values were all finite.

    init_seed overrides arch.seed for the fresh initialization;
    on_epoch(epoch, mean_loss, lr) is called after each epoch.
    """
    if not dataset:
        raise ContractError("training needs at least one (image, labels) pair")
    images = [standardize_image(img) for img, _ in dataset]
    labels = [pl for _, pl in dataset]
    n_ex = len(dataset)

    params = build_network(arch, seed=init_seed)
    rng = np.random.default_rng(mix64(cfg.seed, STREAM_SHUFFLE))
    snapshot = _clone_params(params)

    ep_l, it_l, id_l, lr_l, loss_l = [], [], [], [], []
    it = 0
    for epoch in range(cfg.epochs):
        lr = lr_schedule(cfg, epoch)
        order = rng.permutation(n_ex) if cfg.shuffle else np.arange(n_ex)
        for image_id in order:
            image_id = int(image_id)
            logits, handles = tape_forward(params, images[image_id])
            node, _ = partial_ce_node(logits, labels[image_id])
            loss = float(node.data)
            if not np.isfinite(loss):
                raise TrainingDiverged(iteration=it, last_params=snapshot)
            grads = backward(node)
            finite = True
            for blk, handle in zip(params.blocks, handles):
                for arr, t in zip(blk.arrays(), handle):
                    arr -= lr * grads[id(t)]
                    if finite and not np.isfinite(arr).all():
                        finite = False
            ep_l.append(epoch)
            it_l.append(it)
            id_l.append(image_id)
            lr_l.append(lr)
            loss_l.append(loss)
            if finite:
                snapshot = _clone_params(params)
            it += 1
        if checkpoint_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"epoch_{epoch + 1:04d}.ckpt", params)
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(loss_l[-n_ex:])), lr)

    history = TrainHistory(
        epoch=np.array(ep_l, dtype=np.int64),
        iteration=np.array(it_l, dtype=np.int64),
        image_id=np.array(id_l, dtype=np.int64),
        lr=np.array(lr_l, dtype=np.float64),
        loss=np.array(loss_l, dtype=np.float64),
    )
    return params, history


def save_history(path, hist: TrainHistory) -> None:
    # repr round-trips float64 exactly, keeping reruns byte-identical
    lines = [HISTORY_HEADER]
    for e, it, img, lr, ls in zip(hist.epoch, hist.iteration, hist.image_id, hist.lr, hist.loss):
        lines.append(f"{int(e)},{int(it)},{int(img)},{float(lr)!r},{float(ls)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_history(path) -> TrainHistory:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0] != HISTORY_HEADER:
        raise FormatError(f"{path}: expected header {HISTORY_HEADER!r}")
    cols = [[], [], [], [], []]
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise FormatError(f"{path}: bad history row {ln!r}")
        for c, v in zip(cols, parts):
            c.append(v)
    try:
        return TrainHistory(
            epoch=np.array([int(v) for v in cols[0]], dtype=np.int64),
            iteration=np.array([int(v) for v in cols[1]], dtype=np.int64),
            image_id=np.array([int(v) for v in cols[2]], dtype=np.int64),
            lr=np.array([float(v) for v in cols[3]], dtype=np.float64),
            loss=np.array([float(v) for v in cols[4]], dtype=np.float64),
        )
    except ValueError as exc:
        raise FormatError(f"{path}: unparsable history value ({exc})") from exc
