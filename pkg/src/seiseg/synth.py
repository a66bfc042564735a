"""Synthetic stacked-sediment seismic sections with known horizon geometry.

Each image is built from a layered impedance model: horizons are smooth
depth curves (base depth + linear dip + a few sinusoidal folds) rectified
so units keep a minimum thickness, reflectivity spikes sit at the unit
transitions, and every column is convolved with a Ricker wavelet before
adding noise and standardizing. The horizon curves double as exact
ground truth for rasterized class labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError
from .labels import (
    HorizonSet,
    load_horizon_picks,
    rasterize,
    round_depth,
    save_horizon_picks,
    validate_horizons,
)
from .seeding import STREAM_HORIZONS, STREAM_SEISMIC, image_seed, rng_for
from .training import standardize_image

MIN_THICKNESS = 2  # rows per unit, keeps every class sampleable
IMAGE_MAGIC = b"SEIS1\n"


@dataclass(frozen=True)
class GeoModelConfig:
    """Structural and wavelet parameters of the generator.

    base_depths None means per-image random layer positions (drawn
    sorted uniform), which keeps unit thicknesses naturally unequal.
    wavelet_freq is the Ricker peak frequency as a fraction of the
    vertical sampling rate. noise_level is the noise std relative to
    the noise-free signal std.
    """

    n_z: int = 128
    n_x: int = 256
    n_horizons: int = 5
    base_depths: tuple | None = None
    dip_range: tuple = (-0.06, 0.06)
    fold_amplitude: tuple = (1.5, 5.0)
    fold_wavelength: tuple = (48.0, 256.0)
    n_folds: tuple = (2, 4)
    contrast_range: tuple = (0.05, 0.25)
    wavelet_freq: float = 0.18
    noise_level: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.n_z < 4 or self.n_x < 1:
            raise ConfigError(f"image dims {self.n_z}x{self.n_x} too small")
        if self.n_horizons < 1:
            raise ConfigError(f"n_horizons must be at least 1, got {self.n_horizons}")
        if MIN_THICKNESS * (self.n_horizons + 1) > self.n_z:
            raise ConfigError(
                f"{self.n_horizons} horizons at minimum unit thickness {MIN_THICKNESS} "
                f"do not fit in {self.n_z} rows"
            )
        if self.base_depths is not None:
            object.__setattr__(self, "base_depths", tuple(float(d) for d in self.base_depths))
            if len(self.base_depths) != self.n_horizons:
                raise ConfigError("base_depths must list one depth per horizon")
        for name in ("dip_range", "fold_amplitude", "fold_wavelength", "n_folds", "contrast_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ConfigError(f"{name} bounds out of order: {lo} > {hi}")
        if not 0 < self.wavelet_freq < 0.5:
            raise ConfigError(f"wavelet_freq {self.wavelet_freq} outside (0, 0.5)")
        if self.fold_wavelength[0] <= 0:
            raise ConfigError("fold wavelengths must be positive")
        if self.contrast_range[0] <= 0:
            raise ConfigError("contrast_range must be positive so transitions reflect")
        if self.contrast_range[1] >= 1:
            raise ConfigError("contrast magnitudes must stay below 1")
        if self.noise_level < 0:
            raise ConfigError("noise_level cannot be negative")
        if not (1 <= self.n_folds[0] <= self.n_folds[1]):
            raise ConfigError("n_folds bounds must be positive and ordered")

    @property
    def n_class(self) -> int:
        return self.n_horizons + 1


@dataclass
class SeismicImage:
    """One standardized section plus the statistics removed by standardization."""

    data: np.ndarray
    raw_mean: float = 0.0
    raw_std: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ContractError(f"seismic image must be 2-d, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ContractError("seismic image contains non-finite values")

    @property
    def shape(self):
        return self.data.shape


@dataclass
class Dataset:
    images: list
    horizons: list
    cfg: GeoModelConfig
    seed: int

    def __post_init__(self):
        if len(self.images) != len(self.horizons):
            raise ContractError("images and horizon sets must pair up")
        for img, h in zip(self.images, self.horizons):
            if img.shape != (self.cfg.n_z, self.cfg.n_x):
                raise ContractError(f"image shape {img.shape} does not match config")
            if h.n_horizons != self.cfg.n_horizons:
                raise ContractError("horizon count differs from config")

    @property
    def n_ex(self) -> int:
        return len(self.images)

    @property
    def n_class(self) -> int:
        return self.cfg.n_class

    def pairs(self):
        return list(zip(self.images, self.horizons))


def _rectify(depths: np.ndarray, n_z: int) -> np.ndarray:
    """Force ordering with gaps >= MIN_THICKNESS and margins at top/bottom.

    Works on e_k = d_k - t*k, where the gap condition becomes plain
    monotonicity, so one cumulative maximum fixes every column at once.
    """
    k = depths.shape[0]
    t = float(MIN_THICKNESS)
    offs = t * np.arange(k)[:, None]
    # window [t, n_z - t*k] for e keeps margins of t at top and bottom
    e = np.clip(depths - offs, t, n_z - t * k)
    return np.maximum.accumulate(e, axis=0) + offs


def gen_horizons(cfg: GeoModelConfig, seed: int) -> HorizonSet:
    """Smooth per-horizon depth curves, rectified to a valid ordered set."""
    rng = rng_for(seed, STREAM_HORIZONS)
    k, n_x = cfg.n_horizons, cfg.n_x
    x = np.arange(n_x, dtype=np.float64)

    if cfg.base_depths is not None:
        base = np.asarray(cfg.base_depths, dtype=np.float64)
    else:
        # draw unit thicknesses instead of raw depths: a floor on every
        # gap keeps units from vanishing, which would silently shift the
        # class index of everything below the missing interface
        n_units = k + 1
        floor = max(float(MIN_THICKNESS), 0.5 * cfg.n_z / n_units)
        spare = cfg.n_z - floor * n_units
        w = rng.uniform(0.5, 1.5, size=n_units)
        gaps = floor + spare * (w / w.sum())
        base = np.cumsum(gaps)[:-1]
    dips = rng.uniform(*cfg.dip_range, size=k)

    depths = np.empty((k, n_x))
    for i in range(k):
        d = base[i] + dips[i] * (x - n_x / 2.0)
        n_f = int(rng.integers(cfg.n_folds[0], cfg.n_folds[1] + 1))
        for _ in range(n_f):
            amp = rng.uniform(*cfg.fold_amplitude)
            lam = rng.uniform(*cfg.fold_wavelength)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            d = d + amp * np.sin(2.0 * np.pi * x / lam + phase)
        depths[i] = d

    h = HorizonSet(n_z=cfg.n_z, n_x=n_x, depths=_rectify(depths, cfg.n_z))
    violation = validate_horizons(h)
    if violation is not None:
        raise ContractError(f"rectification failed: {violation.message}")
    return h


def ricker_wavelet(freq: float) -> np.ndarray:
    """Ricker wavelet sampled at unit spacing, peak amplitude 1 at the center.

    Half-width ceil(4.5 / (pi f)) puts the truncation below 1e-7 of peak.
    """
    half = int(np.ceil(4.5 / (np.pi * freq)))
    t = np.arange(-half, half + 1, dtype=np.float64)
    a = (np.pi * freq * t) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


def gen_seismic(h: HorizonSet, cfg: GeoModelConfig, seed: int) -> SeismicImage:
    """Column-wise Ricker response of the layered impedance model behind h."""
    if validate_horizons(h) is not None:
        raise ContractError("gen_seismic needs a valid horizon set")
    rng = rng_for(seed, STREAM_SEISMIC)
    k = h.n_horizons

    mags = rng.uniform(*cfg.contrast_range, size=k)
    signs = rng.integers(0, 2, size=k) * 2 - 1
    refl_per_horizon = mags * signs  # normalized impedance contrast per transition

    refl = np.zeros((h.n_z, h.n_x))
    if k:
        rows = round_depth(h.depths)  # spike on the first row of the deeper unit
        refl[rows, np.arange(h.n_x)[None, :]] = refl_per_horizon[:, None]

    wavelet = ricker_wavelet(cfg.wavelet_freq)
    half = (wavelet.size - 1) // 2
    padded = np.pad(refl, ((half, half), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, wavelet.size, axis=0)
    signal = windows @ wavelet[::-1]

    signal_std = signal.std()
    noise = rng.normal(0.0, cfg.noise_level * signal_std, size=signal.shape)
    raw = signal + noise
    return SeismicImage(data=standardize_image(raw), raw_mean=float(raw.mean()), raw_std=float(raw.std()))


def gen_dataset(cfg: GeoModelConfig, n_ex: int, seed: int) -> Dataset:
    """n_ex independent (image, horizons) pairs from per-image derived seeds."""
    if n_ex < 1:
        raise ConfigError(f"n_ex must be at least 1, got {n_ex}")
    images, horizons = [], []
    for i in range(n_ex):
        s = image_seed(seed, i)
        h = gen_horizons(cfg, s)
        images.append(gen_seismic(h, cfg, s))
        horizons.append(h)
    return Dataset(images=images, horizons=horizons, cfg=cfg, seed=seed)


# ---------------------------------------------------------------------------
# persistence: binary image files, horizon CSV, key=value metadata


def save_image(path, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(IMAGE_MAGIC)
        f.write(f"{arr.shape[0]} {arr.shape[1]}\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(len(IMAGE_MAGIC))
        if magic != IMAGE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        dims = f.readline().decode("ascii", errors="replace").split()
        try:
            n_z, n_x = (int(v) for v in dims)
        except ValueError as exc:
            raise FormatError(f"{path}: bad dimension line {dims!r}") from exc
        payload = f.read()
    if len(payload) != n_z * n_x * 8:
        raise FormatError(f"{path}: expected {n_z * n_x} float64 values, found {len(payload) // 8}")
    return np.frombuffer(payload, dtype="<f8").reshape(n_z, n_x).copy()


def _fmt(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_META_FIELDS = (
    "n_z",
    "n_x",
    "n_horizons",
    "base_depths",
    "dip_range",
    "fold_amplitude",
    "fold_wavelength",
    "n_folds",
    "contrast_range",
    "wavelet_freq",
    "noise_level",
    "seed",
)


def _meta_text(ds: Dataset) -> str:
    lines = [f"{name}={_fmt(getattr(ds.cfg, name))}" for name in _META_FIELDS]
    lines.append(f"master_seed={ds.seed}")
    lines.append(f"n_ex={ds.n_ex}")
    return "\n".join(lines) + "\n"


def _parse_meta(text: str, path) -> dict:
    fields = {}
    for ln in text.splitlines():
        if not ln.strip():
            continue
        if "=" not in ln:
            raise FormatError(f"{path}: bad metadata line {ln!r}")
        key, _, val = ln.partition("=")
        fields[key] = val
    need = set(_META_FIELDS) | {"master_seed", "n_ex"}
    if set(fields) != need:
        missing = sorted(need - set(fields))
        extra = sorted(set(fields) - need)
        raise FormatError(f"{path}: metadata keys wrong (missing {missing}, extra {extra})")
    return fields


def config_from_meta(fields: dict) -> GeoModelConfig:
    def pair(v, cast):
        return tuple(cast(p) for p in v.split(","))

    return GeoModelConfig(
        n_z=int(fields["n_z"]),
        n_x=int(fields["n_x"]),
        n_horizons=int(fields["n_horizons"]),
        base_depths=None if fields["base_depths"] == "auto" else pair(fields["base_depths"], float),
        dip_range=pair(fields["dip_range"], float),
        fold_amplitude=pair(fields["fold_amplitude"], float),
        fold_wavelength=pair(fields["fold_wavelength"], float),
        n_folds=pair(fields["n_folds"], int),
        contrast_range=pair(fields["contrast_range"], float),
        wavelet_freq=float(fields["wavelet_freq"]),
        noise_level=float(fields["noise_level"]),
        seed=int(fields["seed"]),
    )


def _image_path(root: Path, i: int) -> Path:
    return root / "images" / f"img_{i:04d}.seis"


def save_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(ds.images):
        save_image(_image_path(root, i), img.data)
    save_horizon_picks(root / "horizons.csv", ds.horizons)
    (root / "meta.txt").write_text(_meta_text(ds))


def load_dataset(root) -> Dataset:
    root = Path(root)
    meta_path = root / "meta.txt"
    if not meta_path.exists():
        raise FormatError(f"{meta_path}: missing metadata file")
    fields = _parse_meta(meta_path.read_text(), meta_path)
    try:
        cfg = config_from_meta(fields)
        master_seed = int(fields["master_seed"])
        n_ex = int(fields["n_ex"])
    except (ValueError, ConfigError) as exc:
        raise FormatError(f"{meta_path}: invalid metadata ({exc})") from exc

    horizons = load_horizon_picks(root / "horizons.csv", n_z=cfg.n_z)
    if len(horizons) != n_ex:
        raise FormatError(f"{root / 'horizons.csv'}: {len(horizons)} horizon sets for {n_ex} images")
    images = []
    for i in range(n_ex):
        p = _image_path(root, i)
        if not p.exists():
            raise FormatError(f"{p}: missing image file")
        images.append(SeismicImage(data=load_image(p)))
    return Dataset(images=images, horizons=horizons, cfg=cfg, seed=master_seed)


def class_fractions(ds: Dataset) -> np.ndarray:
    """Pixel fraction per class over the whole dataset (shows the imbalance)."""
    counts = np.zeros(ds.n_class, dtype=np.int64)
    for h in ds.horizons:
        img = rasterize(h)
        counts += np.bincount(img.classes.ravel(), minlength=ds.n_class)
    return counts / counts.sum()
