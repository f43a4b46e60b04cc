"""Synthetic two-domain datasets, sample I/O, resizing, splitting and augmentation."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from .errors import ConfigurationError, DimensionError, UsageError, ValidationError
from .netpbm import read_pgm, read_ppm, to_uint8, write_pgm, write_ppm
from .rng import Rng

if TYPE_CHECKING:
    from collections.abc import Sequence

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
DESCRIPTOR = "dataset.json"
TRAIN_LIST = "train.txt"
TEST_LIST = "test.txt"
SPLIT_PARAMS = "split.json"
MIN_AREA = 0.02
MAX_AREA = 0.60
_MAX_SHAPE_ATTEMPTS = 1000


def worker_count(deterministic: bool = True) -> int:
    """Number of worker threads: ``GMS_THREADS`` if set, else 1 in deterministic mode or the CPU count."""
    value = os.environ.get("GMS_THREADS")
    if value is not None:
        try:
            threads = int(value)
        except ValueError:
            threads = 0
        if threads < 1:
            msg = f"GMS_THREADS must be a positive integer, got {value!r}."
            raise ConfigurationError(msg)
        return threads
    return 1 if deterministic else (os.cpu_count() or 1)


@dataclass
class Sample:
    """An image ``[3, H, W]`` (float32 in [0, 1]) and its binary mask ``[H, W]`` (uint8 in {0, 1})."""

    image: np.ndarray
    mask: np.ndarray
    id: str = ""

    def __post_init__(self) -> None:
        """Check that image and mask agree."""
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            msg = f"Sample {self.id!r}: image must have shape [3, H, W], got {self.image.shape}."
            raise DimensionError(msg)
        if self.mask.shape != self.image.shape[1:]:
            msg = f"Sample {self.id!r}: mask shape {self.mask.shape} differs from image size {self.image.shape[1:]}."
            raise DimensionError(msg)

    @property
    def size(self) -> tuple[int, int]:
        """Height and width."""
        return self.mask.shape[0], self.mask.shape[1]


@dataclass(frozen=True)
class DomainSpec:
    """Appearance model of one synthetic acquisition domain."""

    domain: str
    shape_family: str
    noise: str
    noise_sigma: float
    background: str
    foreground_range: tuple[float, float]
    background_range: tuple[float, float]
    min_area: float = MIN_AREA
    max_area: float = MAX_AREA

    @classmethod
    def for_domain(cls, domain: str) -> DomainSpec:
        """Return the built-in specification of domain ``"A"`` or ``"B"``.

        Domain A draws ellipses over a smooth gradient with additive Gaussian
        noise; domain B draws rounded polygons over a sinusoid texture with
        multiplicative speckle. The foreground is brighter than the background in both.
        """
        if domain == "A":
            return cls("A", "ellipse", "gaussian", 0.05, "gradient", (0.55, 0.85), (0.10, 0.35))
        if domain == "B":
            return cls("B", "rounded_polygon", "speckle", 0.15, "sinusoid", (0.60, 0.90), (0.15, 0.40))
        msg = f"Unknown domain {domain!r}; expected 'A' or 'B'."
        raise ConfigurationError(msg)

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-compatible representation."""
        data = asdict(self)
        data["foreground_range"] = list(self.foreground_range)
        data["background_range"] = list(self.background_range)
        return data


@dataclass
class DatasetManifest:
    """A dataset directory and its ordered sample ids."""

    root: Path
    ids: list[str] = field(default_factory=list)

    def image_path(self, sample_id: str) -> Path:
        """Path of a sample's image."""
        return self.root / "images" / f"{sample_id}.ppm"

    def mask_path(self, sample_id: str) -> Path:
        """Path of a sample's mask."""
        return self.root / "masks" / f"{sample_id}.pgm"

    def __len__(self) -> int:
        """Number of samples."""
        return len(self.ids)


@dataclass(frozen=True)
class Split:
    """Disjoint train and test id lists."""

    train: list[str]
    test: list[str]


# ---------------------------------------------------------------------------
# shapes and appearance


def _pixel_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    centers = np.arange(size, dtype=np.float64) + 0.5
    return np.meshgrid(centers, centers, indexing="ij")


def _ellipse(rng: Rng, size: int) -> np.ndarray:
    ys, xs = _pixel_grid(size)
    cy = rng.uniform_range(0.25, 0.75) * size
    cx = rng.uniform_range(0.25, 0.75) * size
    a = rng.uniform_range(0.08, 0.38) * size
    b = rng.uniform_range(0.08, 0.38) * size
    theta = rng.uniform_range(0.0, math.pi)
    u = (xs - cx) * math.cos(theta) + (ys - cy) * math.sin(theta)
    v = -(xs - cx) * math.sin(theta) + (ys - cy) * math.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _rounded_polygon(rng: Rng, size: int) -> np.ndarray:
    """Minkowski sum of a star-shaped polygon and a disk."""
    ys, xs = _pixel_grid(size)
    cy = rng.uniform_range(0.3, 0.7) * size
    cx = rng.uniform_range(0.3, 0.7) * size
    corners = rng.integers(3, 7)
    angles = sorted(rng.uniform_range(0.0, 2.0 * math.pi) for _ in range(corners))
    radii = [rng.uniform_range(0.12, 0.32) * size for _ in range(corners)]
    px = np.array([cx + r * math.cos(t) for r, t in zip(radii, angles)])
    py = np.array([cy + r * math.sin(t) for r, t in zip(radii, angles)])
    rounding = rng.uniform_range(0.02, 0.07) * size

    inside = np.zeros(xs.shape, dtype=bool)
    distance = np.full(xs.shape, np.inf)
    for i in range(corners):
        x0, y0, x1, y1 = px[i], py[i], px[i - 1], py[i - 1]
        crosses = (y0 > ys) != (y1 > ys)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = (x1 - x0) * (ys - y0) / (y1 - y0) + x0
        inside ^= crosses & (xs < x_at)
        dx, dy = x1 - x0, y1 - y0
        t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        distance = np.minimum(distance, np.hypot(xs - (x0 + t * dx), ys - (y0 + t * dy)))
    return inside | (distance <= rounding)


def _background(spec: DomainSpec, rng: Rng, size: int) -> np.ndarray:
    ys, xs = _pixel_grid(size)
    low, high = spec.background_range
    base = rng.uniform_range(low, high)
    if spec.background == "gradient":
        angle = rng.uniform_range(0.0, 2.0 * math.pi)
        ramp = ((xs * math.cos(angle) + ys * math.sin(angle)) / size + 1.0) / 2.0
        return base + 0.10 * (ramp - 0.5)
    texture = np.zeros_like(xs)
    for _ in range(2):
        fx = rng.uniform_range(2.0, 8.0) / size
        fy = rng.uniform_range(2.0, 8.0) / size
        phase = rng.uniform_range(0.0, 2.0 * math.pi)
        texture += np.sin(2.0 * math.pi * (fx * xs + fy * ys) + phase)
    return base + 0.05 * texture


def _draw_mask(spec: DomainSpec, rng: Rng, size: int) -> np.ndarray:
    draw = _ellipse if spec.shape_family == "ellipse" else _rounded_polygon
    for _ in range(_MAX_SHAPE_ATTEMPTS):
        mask = draw(rng, size)
        if spec.min_area <= mask.mean() <= spec.max_area:
            return mask.astype(np.uint8)
    msg = f"Could not draw a {spec.shape_family} with area in [{spec.min_area}, {spec.max_area}] at size {size}."
    raise ValidationError(msg)


def synthesize_sample(spec: DomainSpec, size: int, rng: Rng, sample_id: str = "") -> Sample:
    """Draw one image/mask pair of the given domain."""
    mask = _draw_mask(spec, rng, size)
    background = _background(spec, rng, size)
    foreground = rng.uniform_range(*spec.foreground_range)
    tint = np.array([rng.uniform_range(0.85, 1.0) for _ in range(3)])
    intensity = np.where(mask > 0, foreground, background)
    image = intensity[None, :, :] * tint[:, None, None]
    noise = rng.numpy().normal(0.0, spec.noise_sigma, size=image.shape)
    image = image + noise if spec.noise == "gaussian" else image * (1.0 + noise)
    image = to_uint8(np.clip(image, 0.0, 1.0)).astype(np.float32) / 255.0
    return Sample(image.astype(np.float32), mask, sample_id)


def generate_synthetic(
    spec: DomainSpec, n: int, size: int, seed: int, root: str | Path, threads: int | None = None
) -> DatasetManifest:
    """Write ``n`` samples of a domain to ``root``.

    The directory receives ``images/<id>.ppm``, ``masks/<id>.pgm``,
    ``manifest.txt`` and a ``dataset.json`` descriptor. Sample ``i`` is drawn
    from ``Rng.derive(seed, i)``, so the output is independent of the number
    of worker threads.

    Returns:
        The manifest of the new dataset.
    """
    if n < 1:
        msg = f"The number of samples must be at least 1, got {n}."
        raise UsageError(msg)
    if size % 8 != 0 or size < 8:
        msg = f"The image size must be a positive multiple of 8, got {size}."
        raise ConfigurationError(msg)
    manifest = DatasetManifest(Path(root), [f"{spec.domain.lower()}{i:05d}" for i in range(n)])
    (manifest.root / "images").mkdir(parents=True, exist_ok=True)
    (manifest.root / "masks").mkdir(parents=True, exist_ok=True)

    def _make(index: int) -> None:
        sample_id = manifest.ids[index]
        sample = synthesize_sample(spec, size, Rng.derive(seed, index), sample_id)
        save_sample(manifest.root, sample)

    with ThreadPoolExecutor(max_workers=threads or worker_count()) as pool:
        list(pool.map(_make, range(n)))

    write_id_list(manifest.root / MANIFEST, manifest.ids)
    descriptor = {"domain": spec.to_dict(), "n": n, "size": size, "seed": seed}
    (manifest.root / DESCRIPTOR).write_text(json.dumps(descriptor, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    log.info("Generated %d domain-%s samples of size %d in %s", n, spec.domain, size, manifest.root)
    return manifest


# ---------------------------------------------------------------------------
# file I/O


def write_id_list(path: Path, ids: Sequence[str]) -> None:
    """Write one id per line (UTF-8)."""
    path.write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def read_id_list(path: Path) -> list[str]:
    """Read an id list written by :func:`write_id_list`."""
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def read_manifest(root: str | Path) -> DatasetManifest:
    """Read ``<root>/manifest.txt``."""
    root = Path(root)
    return DatasetManifest(root, read_id_list(root / MANIFEST))


def read_descriptor(root: str | Path) -> dict[str, Any]:
    """Return ``dataset.json`` of a generated dataset, or an empty dict."""
    path = Path(root) / DESCRIPTOR
    return json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}


def load_image(path: str | Path) -> np.ndarray:
    """Read a P6 image as ``[3, H, W]`` float32 in [0, 1]."""
    return read_ppm(path).transpose(2, 0, 1).astype(np.float32) / np.float32(255.0)


def load_mask(path: str | Path) -> np.ndarray:
    """Read a P5 mask with values {0, 255} as ``[H, W]`` uint8 in {0, 1}."""
    raw = read_pgm(path)
    if not np.isin(raw, (0, 255)).all():
        msg = f"Mask {path} contains values other than 0 and 255."
        raise ValidationError(msg)
    return (raw // 255).astype(np.uint8)


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Write a ``[3, H, W]`` [0, 1] image as P6 (8-bit quantized)."""
    write_ppm(path, to_uint8(image.transpose(1, 2, 0)))


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    """Write a binary ``[H, W]`` mask as P5 with values {0, 255}."""
    write_pgm(path, (np.asarray(mask) > 0).astype(np.uint8) * np.uint8(255))


def save_gray(path: str | Path, gray: np.ndarray) -> None:
    """Write a [0, 1] gray-scale map as P5."""
    write_pgm(path, to_uint8(gray))


def load_sample(root: str | Path, sample_id: str) -> Sample:
    """Load one sample of a dataset directory."""
    manifest = DatasetManifest(Path(root))
    return Sample(load_image(manifest.image_path(sample_id)), load_mask(manifest.mask_path(sample_id)), sample_id)


def save_sample(root: str | Path, sample: Sample) -> None:
    """Write one sample into a dataset directory."""
    manifest = DatasetManifest(Path(root))
    save_image(manifest.image_path(sample.id), sample.image)
    save_mask(manifest.mask_path(sample.id), sample.mask)


def load_dataset(root: str | Path, ids: Sequence[str] | None = None, threads: int | None = None) -> list[Sample]:
    """Load the samples named by ``ids`` (default: the whole manifest), in order."""
    root = Path(root)
    wanted = read_manifest(root).ids if ids is None else list(ids)
    with ThreadPoolExecutor(max_workers=threads or worker_count()) as pool:
        return list(pool.map(lambda sample_id: load_sample(root, sample_id), wanted))


# ---------------------------------------------------------------------------
# resizing


def _bilinear_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear (half-pixel centers) resize of a ``[C, H, W]`` array."""
    lo, hi, w = _bilinear_axis(image.shape[1], height)
    rows = image[:, lo, :] * (1.0 - w)[None, :, None] + image[:, hi, :] * w[None, :, None]
    lo, hi, w = _bilinear_axis(image.shape[2], width)
    out = rows[:, :, lo] * (1.0 - w)[None, None, :] + rows[:, :, hi] * w[None, None, :]
    return out.astype(image.dtype)


def resize_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of an ``[H, W]`` mask."""
    rows = np.minimum(((np.arange(height) + 0.5) * mask.shape[0] / height).astype(np.intp), mask.shape[0] - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * mask.shape[1] / width).astype(np.intp), mask.shape[1] - 1)
    return mask[rows[:, None], cols[None, :]]


def resize(sample: Sample, target: int) -> Sample:
    """Resize a sample to ``target x target``: bilinear image, nearest-neighbour mask."""
    if sample.size == (target, target):
        return Sample(sample.image.copy(), sample.mask.copy(), sample.id)
    return Sample(resize_image(sample.image, target, target), resize_mask(sample.mask, target, target), sample.id)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    """Random flips, right-angle rotations and HSV jitter."""

    p_hflip: float = 0.5
    p_vflip: float = 0.5
    rotations: tuple[int, ...] = (0, 90, 180, 270)
    hue_shift: float = 0.03
    sat_range: tuple[float, float] = (0.8, 1.2)
    val_range: tuple[float, float] = (0.8, 1.2)
    enabled: bool = True

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if not (0.0 <= self.p_hflip <= 1.0 and 0.0 <= self.p_vflip <= 1.0):
            msg = "Flip probabilities must lie in [0, 1]."
            raise ConfigurationError(msg)
        if not self.rotations or any(angle % 90 != 0 for angle in self.rotations):
            msg = f"Rotations must be a non-empty set of right angles, got {self.rotations}."
            raise ConfigurationError(msg)
        object.__setattr__(self, "rotations", tuple(self.rotations))
        object.__setattr__(self, "sat_range", tuple(self.sat_range))
        object.__setattr__(self, "val_range", tuple(self.val_range))

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-compatible representation."""
        data = asdict(self)
        for key in ("rotations", "sat_range", "val_range"):
            data[key] = list(data[key])
        return data


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexcone conversion of a channel-first RGB array; hue is in [0, 1)."""
    r, g, b = rgb[0], rgb[1], rgb[2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1), 0.0)
    d = np.where(delta > 0, delta, 1)
    h = np.where(
        maxc == r,
        np.mod((g - b) / d, 6.0),
        np.where(maxc == g, (b - r) / d + 2.0, (r - g) / d + 4.0),
    )
    h = np.where(delta > 0, h / 6.0, 0.0)
    return np.stack([h, s, maxc]).astype(rgb.dtype)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_hsv`."""
    h, s, v = hsv[0], hsv[1], hsv[2]
    sector = np.floor(h * 6.0)
    f = h * 6.0 - sector
    sector = np.mod(sector, 6).astype(np.intp)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    conditions = [sector == k for k in range(6)]
    r = np.select(conditions, [v, q, p, p, t, v])
    g = np.select(conditions, [t, v, v, q, p, p])
    b = np.select(conditions, [p, p, t, v, v, q])
    return np.stack([r, g, b]).astype(hsv.dtype)


def augment(sample: Sample, cfg: AugmentConfig, rng: Rng) -> Sample:
    """Apply the same random flips and rotation to image and mask, and HSV jitter to the image only."""
    if not cfg.enabled:
        return sample
    hflip = rng.bernoulli(cfg.p_hflip)
    vflip = rng.bernoulli(cfg.p_vflip)
    quarter_turns = (rng.choice(cfg.rotations) // 90) % 4
    hue = rng.uniform_range(-cfg.hue_shift, cfg.hue_shift)
    sat = rng.uniform_range(*cfg.sat_range)
    val = rng.uniform_range(*cfg.val_range)

    image, mask = sample.image, sample.mask
    if hflip:
        image, mask = image[:, :, ::-1], mask[:, ::-1]
    if vflip:
        image, mask = image[:, ::-1, :], mask[::-1, :]
    if quarter_turns:
        image, mask = np.rot90(image, quarter_turns, axes=(1, 2)), np.rot90(mask, quarter_turns)
    if hue != 0.0 or sat != 1.0 or val != 1.0:
        hsv = rgb_to_hsv(image.astype(np.float64))
        hsv[0] = np.mod(hsv[0] + hue, 1.0)
        hsv[1] = np.clip(hsv[1] * sat, 0.0, 1.0)
        hsv[2] = np.clip(hsv[2] * val, 0.0, 1.0)
        image = np.clip(hsv_to_rgb(hsv), 0.0, 1.0).astype(sample.image.dtype)
    return Sample(np.ascontiguousarray(image), np.ascontiguousarray(mask), sample.id)


# ---------------------------------------------------------------------------
# splits


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(ids: Sequence[str] | DatasetManifest, train_fraction: float = 0.8, seed: int = 0) -> Split:
    """Shuffle ids with ``seed`` and cut ``round(train_fraction * n)`` of them off for training."""
    order = list(ids.ids if isinstance(ids, DatasetManifest) else ids)
    if not order:
        msg = "Cannot split an empty manifest."
        raise UsageError(msg)
    Rng.derive(seed, "split").shuffle(order)
    cut = _round_half_up(train_fraction * len(order))
    return Split(order[:cut], order[cut:])


def carve_validation(train: Sequence[str], fraction: float = 0.1, seed: int = 0) -> tuple[list[str], list[str]]:
    """Set aside ``round(fraction * n)`` training ids (at least one when n >= 2) for model selection."""
    order = list(train)
    if len(order) < 2 or fraction <= 0.0:
        return order, []
    Rng.derive(seed, "validation").shuffle(order)
    held_out = min(max(1, _round_half_up(fraction * len(order))), len(order) - 1)
    return order[held_out:], order[:held_out]


def write_split(root: str | Path, parts: Split, seed: int, train_fraction: float) -> None:
    """Store a split as ``train.txt``/``test.txt`` beside the manifest, with its parameters in ``split.json``."""
    root = Path(root)
    write_id_list(root / TRAIN_LIST, parts.train)
    write_id_list(root / TEST_LIST, parts.test)
    params = {"seed": seed, "train_fraction": train_fraction}
    (root / SPLIT_PARAMS).write_text(json.dumps(params, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_split(root: str | Path) -> tuple[Split, dict[str, Any]]:
    """Read a split stored by :func:`write_split` and the parameters it was drawn with.

    The parameters are empty if ``split.json`` is missing.
    """
    root = Path(root)
    parts = Split(read_id_list(root / TRAIN_LIST), read_id_list(root / TEST_LIST))
    params_path = root / SPLIT_PARAMS
    params = json.loads(params_path.read_text(encoding="utf-8")) if params_path.exists() else {}
    return parts, params


def ensure_split(root: str | Path, seed: int = 0, train_fraction: float = 0.8) -> Split:
    """Return the split of a dataset for ``seed`` and ``train_fraction``.

    A stored split is reused only if it was drawn with the same parameters;
    otherwise it is redrawn and overwritten.
    """
    root = Path(root)
    if (root / TRAIN_LIST).exists() and (root / TEST_LIST).exists():
        parts, params = read_split(root)
        if params == {"seed": seed, "train_fraction": train_fraction}:
            return parts
        log.info("Stored split of %s was drawn with %s; redrawing with seed=%d", root, params or "unknown", seed)
    parts = split(read_manifest(root), train_fraction, seed)
    write_split(root, parts, seed, train_fraction)
    log.info("Created %d/%d train/test split for %s", len(parts.train), len(parts.test), root)
    return parts
