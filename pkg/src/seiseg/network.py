"""Multi-resolution encoder-decoder network for per-pixel seismic classification.

The network is fully convolutional: an encoder halves the spatial
resolution between levels while widening the channels, a decoder mirrors
it with nearest-neighbor upsampling and skip concatenations, and a final
1x1 convolution maps the finest features to one logit map per class.
Parameter shapes never depend on the input size, so one set of weights
runs on any image whose sides divide by the resolution factor.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, channel_norm, concat_channels, conv2d, downsample2, relu, upsample2
from .errors import ConfigError, FormatError, ShapeError
from .labels import LabelImage
from .seeding import STREAM_ARCH, mix64

WIDTH_MIN = 6
WIDTH_MAX = 32
TOTAL_WEIGHTED_LAYERS = 37
NORM_EPS = 1e-5

CHECKPOINT_MAGIC = b"SEGNET1\n"


@dataclass(frozen=True)
class ArchConfig:
    """Shape of the encoder-decoder: per-level widths and conv counts.

    ``decoder_convs`` is indexed by level, same as ``level_widths``; the
    decoder executes those counts from the deepest level back to level 0.
    """

    n_class: int
    level_widths: tuple = (6, 12, 24, 32)
    encoder_convs: tuple = (5, 5, 4, 4)
    decoder_convs: tuple = (5, 5, 4, 4)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "level_widths", tuple(int(w) for w in self.level_widths))
        object.__setattr__(self, "encoder_convs", tuple(int(c) for c in self.encoder_convs))
        object.__setattr__(self, "decoder_convs", tuple(int(c) for c in self.decoder_convs))
        if self.n_class < 2:
            raise ConfigError(f"n_class must be at least 2, got {self.n_class}")
        n = len(self.level_widths)
        if n < 2:
            raise ConfigError("need at least two resolution levels")
        if len(self.encoder_convs) != n or len(self.decoder_convs) != n:
            raise ConfigError("encoder_convs and decoder_convs need one entry per level")
        for w in self.level_widths:
            if not WIDTH_MIN <= w <= WIDTH_MAX:
                raise ConfigError(f"channel width {w} outside [{WIDTH_MIN}, {WIDTH_MAX}]")
        for i in range(n - 1):
            if self.level_widths[i] > self.level_widths[i + 1]:
                raise ConfigError("channel widths must be non-decreasing with depth")
        if min(self.encoder_convs) < 1 or min(self.decoder_convs) < 1:
            raise ConfigError("every level needs at least one conv per path")
        total = self.total_weighted_layers
        if total != TOTAL_WEIGHTED_LAYERS:
            raise ConfigError(f"architecture has {total} weighted layers, expected {TOTAL_WEIGHTED_LAYERS}")

    @property
    def n_levels(self) -> int:
        return len(self.level_widths)

    @property
    def divisor(self) -> int:
        return 2 ** (self.n_levels - 1)

    @property
    def total_weighted_layers(self) -> int:
        # hidden convs on both paths plus the 1x1 classifier
        return sum(self.encoder_convs) + sum(self.decoder_convs) + 1


@dataclass
class LayerParams:
    """One weighted layer: conv kernels and bias, plus norm affine if hidden."""

    kernels: np.ndarray
    bias: np.ndarray
    scale: np.ndarray | None = None
    shift: np.ndarray | None = None

    @property
    def normed(self) -> bool:
        return self.scale is not None

    def arrays(self) -> list[np.ndarray]:
        out = [self.kernels, self.bias]
        if self.normed:
            out.extend([self.scale, self.shift])
        return out


@dataclass
class NetworkParams:
    cfg: ArchConfig
    blocks: list

    @property
    def n_parameters(self) -> int:
        return int(sum(a.size for b in self.blocks for a in b.arrays()))


def _layer_plan(cfg: ArchConfig) -> list:
    """(c_in, c_out) per hidden conv, in execution order.

    Encoder runs level 0 down; decoder runs back up, where each
    non-bottom level first sees the upsampled deeper features
    concatenated with that level's skip.
    """
    widths = cfg.level_widths
    n = cfg.n_levels
    plan = []
    c = 1
    for i in range(n):
        for _ in range(cfg.encoder_convs[i]):
            plan.append((c, widths[i]))
            c = widths[i]
    for i in range(n - 1, -1, -1):
        first_in = c if i == n - 1 else c + widths[i]
        for j in range(cfg.decoder_convs[i]):
            plan.append((first_in if j == 0 else widths[i], widths[i]))
        c = widths[i]
    return plan


def build_network(cfg: ArchConfig, seed: int | None = None) -> NetworkParams:
    """Initialize parameters: kernels N(0, 1/sqrt(fan_in)), zero classifier.

    The zero classifier makes the initial logits zero everywhere, so the
    first loss equals ln(n_class) exactly.
    """
    if seed is None:
        seed = cfg.seed
    rng = np.random.default_rng(mix64(seed, STREAM_ARCH))
    blocks = []
    for c_in, c_out in _layer_plan(cfg):
        fan_in = c_in * 9
        blocks.append(
            LayerParams(
                kernels=rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(c_out, c_in, 3, 3)),
                bias=np.zeros(c_out),
                scale=np.ones(c_out),
                shift=np.zeros(c_out),
            )
        )
    w0 = cfg.level_widths[0]
    blocks.append(LayerParams(kernels=np.zeros((cfg.n_class, w0, 1, 1)), bias=np.zeros(cfg.n_class)))
    return NetworkParams(cfg=cfg, blocks=blocks)


def _check_input(cfg: ArchConfig, image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-d image, got shape {arr.shape}")
    d = cfg.divisor
    if arr.shape[0] % d or arr.shape[1] % d:
        raise ShapeError(
            f"image dims {arr.shape[0]}x{arr.shape[1]} must both divide by {d} "
            f"({cfg.n_levels} resolution levels)"
        )
    return arr


def _hidden(x: Tensor, handle) -> Tensor:
    k, b, s, sh = handle
    return relu(channel_norm(conv2d(x, k, b), s, sh, epsilon=NORM_EPS))


def tape_forward(params: NetworkParams, image):
    """Forward pass on the autodiff tape.

    Returns (logits Tensor, handles), where handles[i] is the tuple of
    parameter Tensors for block i, aligned with params.blocks; calling
    backward on a loss built from the logits yields gradients keyed by
    those handle ids.
    """
    cfg = params.cfg
    arr = _check_input(cfg, image)
    handles = [tuple(Tensor(a) for a in blk.arrays()) for blk in params.blocks]
    it = iter(handles)
    x = Tensor(arr[None])
    skips = []
    n = cfg.n_levels
    for i in range(n):
        for _ in range(cfg.encoder_convs[i]):
            x = _hidden(x, next(it))
        if i < n - 1:
            skips.append(x)
            x = downsample2(x)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            x = concat_channels(upsample2(x), skips[i])
        for _ in range(cfg.decoder_convs[i]):
            x = _hidden(x, next(it))
    k, b = next(it)
    logits = conv2d(x, k, b)
    return logits, handles


def forward(params: NetworkParams, image) -> np.ndarray:
    """Logit maps (n_class, n_z, n_x) for a 2-d image, spatial dims preserved."""
    logits, _ = tape_forward(params, image)
    return logits.data


def logits_to_classes(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the class axis; ties go to the lowest class id."""
    return np.argmax(logits, axis=0).astype(np.int64)


def predict(params: NetworkParams, image) -> LabelImage:
    return LabelImage(classes=logits_to_classes(forward(params, image)), n_class=params.cfg.n_class)


def parameter_census(params: NetworkParams) -> dict:
    """Structural summary used by sanity checks and the CLI."""
    hidden_widths = [b.kernels.shape[0] for b in params.blocks if b.normed]
    return {
        "weighted_layers": len(params.blocks),
        "hidden_convs": sum(1 for b in params.blocks if b.normed),
        "min_hidden_width": min(hidden_widths),
        "max_hidden_width": max(hidden_widths),
        "kernel_sizes": sorted({b.kernels.shape[2] for b in params.blocks}),
        "n_parameters": params.n_parameters,
    }


# ---------------------------------------------------------------------------
# checkpoint format: magic line, key=value text header, then the parameter
# arrays as little-endian float64 in build order


def _header_lines(cfg: ArchConfig) -> list:
    return [
        f"n_class={cfg.n_class}",
        "level_widths=" + ",".join(map(str, cfg.level_widths)),
        "encoder_convs=" + ",".join(map(str, cfg.encoder_convs)),
        "decoder_convs=" + ",".join(map(str, cfg.decoder_convs)),
        f"seed={cfg.seed}",
        "end",
    ]


def save_checkpoint(path, params: NetworkParams) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(("\n".join(_header_lines(params.cfg)) + "\n").encode("ascii"))
        for blk in params.blocks:
            for a in blk.arrays():
                f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _parse_header(f: io.BufferedReader, path) -> ArchConfig:
    fields = {}
    while True:
        line = f.readline()
        if not line:
            raise FormatError(f"{path}: truncated header")
        text = line.decode("ascii", errors="replace").strip()
        if text == "end":
            break
        if "=" not in text:
            raise FormatError(f"{path}: bad header line {text!r}")
        key, _, val = text.partition("=")
        fields[key] = val
    expected = {"n_class", "level_widths", "encoder_convs", "decoder_convs", "seed"}
    if set(fields) != expected:
        raise FormatError(f"{path}: header keys {sorted(fields)} do not match {sorted(expected)}")
    try:
        return ArchConfig(
            n_class=int(fields["n_class"]),
            level_widths=tuple(int(v) for v in fields["level_widths"].split(",")),
            encoder_convs=tuple(int(v) for v in fields["encoder_convs"].split(",")),
            decoder_convs=tuple(int(v) for v in fields["decoder_convs"].split(",")),
            seed=int(fields["seed"]),
        )
    except (ValueError, ConfigError) as exc:
        raise FormatError(f"{path}: invalid architecture header ({exc})") from exc


def load_checkpoint(path) -> NetworkParams:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        cfg = _parse_header(f, path)
        payload = f.read()
    shapes = []
    for c_in, c_out in _layer_plan(cfg):
        shapes.append([(c_out, c_in, 3, 3), (c_out,), (c_out,), (c_out,)])
    shapes.append([(cfg.n_class, cfg.level_widths[0], 1, 1), (cfg.n_class,)])
    need = sum(int(np.prod(s)) for group in shapes for s in group)
    if len(payload) % 8:
        raise FormatError(f"{path}: payload not a whole number of float64 values")
    got = len(payload) // 8
    if got != need:
        raise FormatError(f"{path}: expected {need} parameter values, found {got}")
    flat = np.frombuffer(payload, dtype="<f8")
    blocks = []
    pos = 0
    for group in shapes:
        arrs = []
        for s in group:
            n = int(np.prod(s))
            arrs.append(flat[pos : pos + n].reshape(s).copy())
            pos += n
        if len(arrs) == 4:
            blocks.append(LayerParams(*arrs))
        else:
            blocks.append(LayerParams(kernels=arrs[0], bias=arrs[1]))
    return NetworkParams(cfg=cfg, blocks=blocks)
