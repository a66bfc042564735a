"""Metrics, rendered maps, and the annotation-budget sweep experiment.

The sweep is the head-to-head: for each (strategy, budget, seed) cell it
samples partial labels on the training images, trains a fresh network,
and scores it against the full rasterized truth of held-out images.
Cells are independent, so they can run in parallel processes.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, ShapeError
from .labels import LabelImage, rasterize, sample_partial, sampling_seed
from .network import ArchConfig, NetworkParams, predict
from .seeding import STREAM_INIT, STREAM_TRAIN, mix64
from .training import TrainConfig, standardize_image, train

IOU_UNDEFINED = float("nan")  # marks classes absent from both truth and prediction


def confusion(pred: LabelImage, truth: LabelImage) -> np.ndarray:
    """Counts[t, p] of pixels with true class t predicted as p."""
    if pred.classes.shape != truth.classes.shape:
        raise ShapeError(f"prediction {pred.classes.shape} vs truth {truth.classes.shape}")
    n = max(pred.n_class, truth.n_class)
    joint = truth.classes.ravel() * n + pred.classes.ravel()
    return np.bincount(joint, minlength=n * n).reshape(n, n)


def pixel_accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    if total <= 0:
        raise ContractError("confusion matrix has no counts")
    return float(np.trace(cm) / total)


def class_iou(cm: np.ndarray) -> np.ndarray:
    """Per-class intersection over union; classes absent everywhere are NaN."""
    diag = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=1) + cm.sum(axis=0) - diag
    out = np.full(cm.shape[0], IOU_UNDEFINED)
    present = denom > 0
    out[present] = diag[present] / denom[present]
    return out


def mean_iou(cm: np.ndarray) -> float:
    iou = class_iou(cm)
    if np.isnan(iou).all():
        raise ContractError("no class present in the confusion matrix")
    return float(np.nanmean(iou))


def mean_class_accuracy(cm: np.ndarray) -> float:
    """Mean per-class recall over classes that appear in the truth."""
    truth_counts = cm.sum(axis=1)
    present = truth_counts > 0
    if not present.any():
        raise ContractError("confusion matrix has no counts")
    recall = np.diag(cm)[present] / truth_counts[present]
    return float(recall.mean())


def error_map(pred: LabelImage, truth: LabelImage) -> np.ndarray:
    """1 where the predicted class disagrees with truth, else 0."""
    if pred.classes.shape != truth.classes.shape:
        raise ShapeError(f"prediction {pred.classes.shape} vs truth {truth.classes.shape}")
    return (pred.classes != truth.classes).astype(np.uint8)


# ---------------------------------------------------------------------------
# budget sweep


@dataclass(frozen=True)
class SweepCell:
    strategy: str
    budget: int
    seed: int
    test_accuracy: float
    mean_iou: float
    mean_class_accuracy: float
    iou: tuple


@dataclass
class ExperimentReport:
    cells: list
    n_class: int

    def aggregate(self) -> dict:
        """(strategy, budget) -> (mean accuracy, std accuracy, n seeds)."""
        groups = {}
        for c in self.cells:
            groups.setdefault((c.strategy, c.budget), []).append(c.test_accuracy)
        return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in sorted(groups.items())}


def evaluate_params(params: NetworkParams, images, horizon_sets) -> np.ndarray:
    """Summed confusion matrix of params over (image, horizons) pairs."""
    n = params.cfg.n_class
    cm = np.zeros((n, n), dtype=np.int64)
    for img, h in zip(images, horizon_sets):
        truth = rasterize(h)
        pred = predict(params, standardize_image(img))
        cm += confusion(pred, truth)
    return cm


def _run_cell(args):
    (strategy, budget, seed, train_images, train_horizons, test_images, test_horizons, arch, train_cfg) = args
    pairs = []
    for i, (img, h) in enumerate(zip(train_images, train_horizons)):
        pl = sample_partial(strategy, h, budget, seed=sampling_seed(seed, strategy, i))
        pairs.append((img, pl))
    cell_cfg = dataclasses.replace(train_cfg, seed=mix64(seed, STREAM_TRAIN))
    params, _ = train(pairs, cell_cfg, arch, init_seed=mix64(seed, STREAM_INIT))
    cm = evaluate_params(params, test_images, test_horizons)
    return SweepCell(
        strategy=strategy,
        budget=int(budget),
        seed=int(seed),
        test_accuracy=pixel_accuracy(cm),
        mean_iou=mean_iou(cm),
        mean_class_accuracy=mean_class_accuracy(cm),
        iou=tuple(class_iou(cm)),
    )


def budget_sweep(
    dataset,
    split,
    strategies,
    budgets,
    seeds,
    arch: ArchConfig,
    train_cfg: TrainConfig,
    jobs: int = 1,
    on_cell=None,
) -> ExperimentReport:
    """Train and score every (strategy, budget, seed) cell.

    split is (train_indices, test_indices), disjoint. Results do not
    depend on jobs; cells are pure functions of their arguments.
    """
    train_idx, test_idx = (list(split[0]), list(split[1]))
    if set(train_idx) & set(test_idx):
        raise ContractError("train/test split overlaps")
    if not train_idx or not test_idx:
        raise ContractError("both split sides need at least one image")
    bad = [i for i in train_idx + test_idx if not 0 <= i < dataset.n_ex]
    if bad:
        raise ContractError(f"split indices {bad} outside dataset of {dataset.n_ex} images")

    train_images = [dataset.images[i].data for i in train_idx]
    train_horizons = [dataset.horizons[i] for i in train_idx]
    test_images = [dataset.images[i].data for i in test_idx]
    test_horizons = [dataset.horizons[i] for i in test_idx]

    tasks = [
        (s, int(b), int(sd), train_images, train_horizons, test_images, test_horizons, arch, train_cfg)
        for s in strategies
        for b in budgets
        for sd in seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = []
            for cell in pool.map(_run_cell, tasks):
                cells.append(cell)
                if on_cell is not None:
                    on_cell(cell)
    else:
        cells = []
        for t in tasks:
            cell = _run_cell(t)
            cells.append(cell)
            if on_cell is not None:
                on_cell(cell)
    return ExperimentReport(cells=cells, n_class=arch.n_class)


def report_header(n_class: int) -> str:
    iou_cols = ",".join(f"iou_{c}" for c in range(n_class))
    return f"strategy,budget,seed,test_accuracy,mean_iou,{iou_cols}"


def save_report(path, report: ExperimentReport) -> None:
    lines = [report_header(report.n_class)]
    for c in report.cells:
        ious = ",".join(repr(float(v)) for v in c.iou)
        lines.append(f"{c.strategy},{c.budget},{c.seed},{c.test_accuracy!r},{c.mean_iou!r},{ious}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_report(path) -> ExperimentReport:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{path}: empty report")
    head = lines[0].split(",")
    if head[:5] != ["strategy", "budget", "seed", "test_accuracy", "mean_iou"]:
        raise FormatError(f"{path}: bad report header {lines[0]!r}")
    n_class = len(head) - 5
    cells = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5 + n_class:
            raise FormatError(f"{path}: bad report row {ln!r}")
        try:
            cells.append(
                SweepCell(
                    strategy=parts[0],
                    budget=int(parts[1]),
                    seed=int(parts[2]),
                    test_accuracy=float(parts[3]),
                    mean_iou=float(parts[4]),
                    mean_class_accuracy=float("nan"),  # not a CSV column
                    iou=tuple(float(v) for v in parts[5:]),
                )
            )
        except ValueError as exc:
            raise FormatError(f"{path}: unparsable report value ({exc})") from exc
    return ExperimentReport(cells=cells, n_class=n_class)


# ---------------------------------------------------------------------------
# PGM rendering: 8-bit for class ids and error masks, 16-bit for amplitudes


def write_pgm8(path, values: np.ndarray, maxval: int) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ShapeError(f"PGM needs a 2-d array, got {arr.shape}")
    if not 1 <= maxval <= 255:
        raise ContractError(f"8-bit PGM maxval {maxval} outside [1, 255]")
    if arr.min() < 0 or arr.max() > maxval:
        raise ContractError(f"values [{arr.min()}, {arr.max()}] exceed maxval {maxval}")
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii"))
        f.write(arr.astype(np.uint8).tobytes())


def write_pgm16(path, data: np.ndarray) -> None:
    """Linear amplitude scaling onto [0, 65535], big-endian per the format."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"PGM needs a 2-d array, got {arr.shape}")
    lo, hi = arr.min(), arr.max()
    scaled = np.zeros(arr.shape) if hi == lo else (arr - lo) / (hi - lo) * 65535.0
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n65535\n".encode("ascii"))
        f.write(np.round(scaled).astype(">u2").tobytes())


def read_pgm(path):
    """(array, maxval) from a binary P5 file, 8- or 16-bit."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM file")
    try:
        n_x, n_z = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    need = n_z * n_x * dtype.itemsize
    if len(parts[3]) != need:
        raise FormatError(f"{path}: expected {need} payload bytes, found {len(parts[3])}")
    arr = np.frombuffer(parts[3], dtype=dtype).reshape(n_z, n_x)
    return arr.astype(np.int64), maxval


def class_map_pgm(path, label_image: LabelImage) -> None:
    write_pgm8(path, label_image.classes, maxval=max(1, label_image.n_class - 1))


def error_map_pgm(path, err: np.ndarray) -> None:
    # errors render white on black
    write_pgm8(path, err.astype(np.uint8) * 255, maxval=255)
