"""Horizon interpretations, full label images, and partial annotations.

A horizon set holds one picked depth per column for each geologic
interface; rasterizing it yields a full class image (class = number of
horizons at or above the pixel). Partial labels are the sparse subset a
human interpreter would actually click: either scattered pixels balanced
across classes, or entire columns obtained by picking every horizon once
in that column.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, FormatError, SamplingError
from .seeding import STREAM_COLUMNS, STREAM_SCATTER, mix64

PARTIAL_LABEL_HEADER = ["row", "column", "class_id"]
HORIZON_PICKS_HEADER = ["image_id", "horizon_id", "column", "depth"]


@dataclass(frozen=True)
class HorizonSet:
    """Ordered, non-crossing depth curves: ``depths[k, x]`` in [0, n_z)."""

    n_z: int
    n_x: int
    depths: np.ndarray  # (n_horizons, n_x) float64

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != self.n_x:
            raise ContractError(
                f"horizon depths must have shape (n_horizons, {self.n_x}), got {d.shape}"
            )
        object.__setattr__(self, "depths", d)

    @property
    def n_horizons(self) -> int:
        return self.depths.shape[0]


@dataclass(frozen=True)
class LabelImage:
    """Dense class ids, one per pixel."""

    classes: np.ndarray  # (n_z, n_x) int64
    n_class: int

    def __post_init__(self):
        c = np.asarray(self.classes)
        if c.ndim != 2:
            raise ContractError(f"label image must be 2-D, got shape {c.shape}")
        object.__setattr__(self, "classes", c.astype(np.int64))

    @property
    def n_z(self) -> int:
        return self.classes.shape[0]

    @property
    def n_x(self) -> int:
        return self.classes.shape[1]


@dataclass(frozen=True)
class PartialLabels:
    """Sparse labeled pixels: rows of (row, column, class_id).

    Positions must be unique and in bounds; an empty entry list is legal
    (the partial loss is then zero).
    """

    entries: np.ndarray  # (n, 3) int64
    n_z: int
    n_x: int
    n_class: int

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "entries", e)
        if e.size:
            rows, cols, classes = e[:, 0], e[:, 1], e[:, 2]
            bad = (rows < 0) | (rows >= self.n_z) | (cols < 0) | (cols >= self.n_x)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise ContractError(
                    f"label entry {i} at ({rows[i]}, {cols[i]}) is outside a "
                    f"{self.n_z}x{self.n_x} image"
                )
            if (classes < 0).any() or (classes >= self.n_class).any():
                i = int(np.flatnonzero((classes < 0) | (classes >= self.n_class))[0])
                raise ContractError(
                    f"label entry {i} has class {classes[i]}, valid range is [0, {self.n_class})"
                )
            flat = rows * self.n_x + cols
            if np.unique(flat).size != flat.size:
                raise ContractError("label entries contain duplicate pixel positions")

    def __len__(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class AnnotationBudget:
    """Number of manual annotation clicks the interpreter may spend."""

    n_samp: int

    def __post_init__(self):
        if self.n_samp < 1:
            raise ConfigError(f"annotation budget must be >= 1, got {self.n_samp}")


@dataclass(frozen=True)
class HorizonViolation:
    kind: str  # "bounds" or "ordering"
    horizon: int
    column: int
    message: str = field(default="")


def _as_budget(budget) -> AnnotationBudget:
    return budget if isinstance(budget, AnnotationBudget) else AnnotationBudget(int(budget))


def round_depth(depths: np.ndarray) -> np.ndarray:
    """Nearest integer row, ties rounded downward in depth (half up)."""
    return np.floor(np.asarray(depths) + 0.5).astype(np.int64)


def validate_horizons(h: HorizonSet) -> HorizonViolation | None:
    """Check bounds and the non-crossing order; None means valid.

    Returns the first violation in (horizon, column) scan order instead
    of raising, so callers can decide how to handle bad picks.
    """
    d = h.depths
    for k in range(h.n_horizons):
        bad = np.flatnonzero((d[k] < 0) | (d[k] >= h.n_z))
        if bad.size:
            x = int(bad[0])
            return HorizonViolation(
                "bounds", k, x, f"horizon {k} depth {d[k, x]} at column {x} outside [0, {h.n_z})"
            )
        if k > 0:
            crossed = np.flatnonzero(d[k] < d[k - 1])
            if crossed.size:
                x = int(crossed[0])
                return HorizonViolation(
                    "ordering",
                    k,
                    x,
                    f"horizon {k} rises above horizon {k - 1} at column {x} "
                    f"({d[k, x]} < {d[k - 1, x]})",
                )
    return None


def rasterize(h: HorizonSet) -> LabelImage:
    """Full class image: pixel class = number of horizons at or above it.

    The pixel at a horizon's rounded depth belongs to the unit below the
    horizon.
    """
    violation = validate_horizons(h)
    if violation is not None:
        raise ContractError(f"invalid horizon set: {violation.message}")
    rounded = round_depth(h.depths)  # (k, n_x)
    z = np.arange(h.n_z, dtype=np.int64)
    classes = (z[:, None, None] >= rounded[None, :, :]).sum(axis=1)
    return LabelImage(classes=classes, n_class=h.n_horizons + 1)


def sample_scattered(full: LabelImage, budget, seed: int) -> PartialLabels:
    """Randomly scattered labeled pixels, balanced across classes.

    Each class receives floor(n_samp / n_class) picks; the remainder goes
    one pick each to the lowest class ids. Sampling is uniform without
    replacement within each class.
    """
    budget = _as_budget(budget)
    n_class = full.n_class
    quotas = np.full(n_class, budget.n_samp // n_class, dtype=np.int64)
    quotas[: budget.n_samp % n_class] += 1
    rng = np.random.default_rng(seed)
    flat = full.classes.ravel()
    picks = []
    for c in range(n_class):
        positions = np.flatnonzero(flat == c)
        if positions.size < quotas[c]:
            raise SamplingError(
                f"class {c} has only {positions.size} pixels, "
                f"cannot sample its quota of {quotas[c]}"
            )
        chosen = positions[rng.choice(positions.size, size=int(quotas[c]), replace=False)]
        rows, cols = np.divmod(chosen, full.n_x)
        picks.append(np.stack([rows, cols, np.full(chosen.size, c, dtype=np.int64)], axis=1))
    entries = np.concatenate(picks, axis=0) if picks else np.empty((0, 3), dtype=np.int64)
    return PartialLabels(entries=entries, n_z=full.n_z, n_x=full.n_x, n_class=n_class)


def sample_columns(h: HorizonSet, budget, seed: int) -> PartialLabels:
    """Fully labeled columns: each column costs one click per horizon.

    The budget must be divisible by the number of horizons; the quotient
    is the number of distinct columns, chosen uniformly at random.
    """
    budget = _as_budget(budget)
    n_h = h.n_horizons
    if n_h < 1:
        raise ConfigError("column-wise annotation needs at least one horizon")
    if budget.n_samp % n_h != 0:
        raise SamplingError(
            f"budget {budget.n_samp} is not divisible by the cost per column "
            f"({n_h} clicks, one per horizon)"
        )
    n_cols = budget.n_samp // n_h
    if n_cols > h.n_x:
        raise SamplingError(
            f"budget {budget.n_samp} asks for {n_cols} columns but the image has only {h.n_x}"
        )
    full = rasterize(h)
    rng = np.random.default_rng(seed)
    cols = rng.choice(h.n_x, size=n_cols, replace=False)
    z = np.arange(h.n_z, dtype=np.int64)
    parts = [
        np.stack([z, np.full(h.n_z, c, dtype=np.int64), full.classes[:, c]], axis=1)
        for c in cols
    ]
    entries = np.concatenate(parts, axis=0)
    return PartialLabels(entries=entries, n_z=h.n_z, n_x=h.n_x, n_class=full.n_class)


# Strategy registry; future samplers (e.g. boundary-weighted scattering)
# plug in here by name.
STRATEGIES = ("scattered", "columns")


def sample_partial(strategy: str, h: HorizonSet, budget, seed: int) -> PartialLabels:
    """Dispatch to the named annotation strategy."""
    if strategy == "scattered":
        return sample_scattered(rasterize(h), budget, seed)
    if strategy == "columns":
        return sample_columns(h, budget, seed)
    raise ConfigError(f"unknown annotation strategy {strategy!r}, expected one of {STRATEGIES}")


def sampling_seed(master_seed: int, strategy: str, index: int) -> int:
    """Per-image sampler seed, distinct across strategies and image indices."""
    if strategy == "scattered":
        stream = STREAM_SCATTER
    elif strategy == "columns":
        stream = STREAM_COLUMNS
    else:
        raise ConfigError(f"unknown annotation strategy {strategy!r}, expected one of {STRATEGIES}")
    return mix64(master_seed, stream, index)


def annotation_yield(strategy: str, budget, h: HorizonSet) -> int:
    """Labeled pixels obtained for a click budget under a strategy."""
    budget = _as_budget(budget)
    if strategy == "scattered":
        return budget.n_samp
    if strategy == "columns":
        n_h = h.n_horizons
        if n_h < 1:
            raise ConfigError("column-wise annotation needs at least one horizon")
        if budget.n_samp % n_h != 0:
            raise SamplingError(
                f"budget {budget.n_samp} is not divisible by the cost per column ({n_h} clicks)"
            )
        n_cols = budget.n_samp // n_h
        if n_cols > h.n_x:
            raise SamplingError(
                f"budget {budget.n_samp} asks for {n_cols} columns but the image has only {h.n_x}"
            )
        return n_cols * h.n_z
    raise ConfigError(f"unknown annotation strategy {strategy!r}, expected one of {STRATEGIES}")


def save_partial_labels(path, labels: PartialLabels) -> None:
    """Write a partial-label CSV: row,column,class_id (UTF-8, LF)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PARTIAL_LABEL_HEADER)
        for row, col, cls in labels.entries:
            writer.writerow([int(row), int(col), int(cls)])


def load_partial_labels(path, n_z: int, n_x: int, n_class: int) -> PartialLabels:
    """Read a partial-label CSV; image geometry comes from the caller."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PARTIAL_LABEL_HEADER:
            raise FormatError(
                f"{path}: bad partial-label header {header!r}, expected {PARTIAL_LABEL_HEADER}"
            )
        try:
            rows = [[int(v) for v in rec] for rec in reader if rec]
        except ValueError as exc:
            raise FormatError(f"{path}: non-integer field in partial labels: {exc}") from exc
    entries = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return PartialLabels(entries=entries, n_z=n_z, n_x=n_x, n_class=n_class)


def save_horizon_picks(path, horizon_sets: list[HorizonSet]) -> None:
    """Write picks for a list of images: image_id,horizon_id,column,depth."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HORIZON_PICKS_HEADER)
        for image_id, h in enumerate(horizon_sets):
            for k in range(h.n_horizons):
                for x in range(h.n_x):
                    writer.writerow([image_id, k, x, repr(float(h.depths[k, x]))])


def load_horizon_picks(path, n_z: int) -> list[HorizonSet]:
    """Read picks back into per-image horizon sets.

    Image ids must be dense starting at 0 and every (horizon, column)
    cell must be present exactly once.
    """
    per_image: dict[int, dict[tuple[int, int], float]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HORIZON_PICKS_HEADER:
            raise FormatError(
                f"{path}: bad horizon-picks header {header!r}, expected {HORIZON_PICKS_HEADER}"
            )
        for rec in reader:
            if not rec:
                continue
            try:
                image_id, horizon_id, column = int(rec[0]), int(rec[1]), int(rec[2])
                depth = float(rec[3])
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}: malformed pick record {rec!r}") from exc
            per_image.setdefault(image_id, {})[(horizon_id, column)] = depth
    if not per_image:
        raise FormatError(f"{path}: no picks found")
    ids = sorted(per_image)
    if ids != list(range(len(ids))):
        raise FormatError(f"{path}: image ids are not dense from 0: {ids}")
    out = []
    for image_id in ids:
        cells = per_image[image_id]
        n_horizons = max(k for k, _ in cells) + 1
        n_x = max(x for _, x in cells) + 1
        if len(cells) != n_horizons * n_x:
            raise FormatError(
                f"{path}: image {image_id} has {len(cells)} picks, "
                f"expected {n_horizons}x{n_x} complete grid"
            )
        depths = np.empty((n_horizons, n_x))
        for (k, x), depth in cells.items():
            depths[k, x] = depth
        out.append(HorizonSet(n_z=n_z, n_x=n_x, depths=depths))
    return out


def dumps_partial_labels(labels: PartialLabels) -> str:
    """Partial labels as CSV text (handy for hashing in tests)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PARTIAL_LABEL_HEADER)
    for row, col, cls in labels.entries:
        writer.writerow([int(row), int(col), int(cls)])
    return buf.getvalue()
