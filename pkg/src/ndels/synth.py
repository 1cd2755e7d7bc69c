"""Synthetic training-triplet generation.

From an aligned (bright, dark) fixed-view pair, produce the three training
images: a contrast-enhanced bright target, the bright composite with haze,
and the dark composite with the *same* haze field. A built-in scene renderer
provides stand-in pairs so the whole pipeline runs without external data.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DataError
from .image import check_same_shape, clip01, load_image, resize, save_image, validate_image

BRIGHT_MIX = 0.7  # bright composite keeps 70% of the bright exposure
DEFAULT_CLIP_FRACTION = 0.05
DEFAULT_ATMOSPHERE = (0.9, 0.9, 0.92)
VEIL_RANGE = (0.3, 0.8)
SMOOTHNESS_RANGE = (8.0, 32.0)
TRAIN_RESIZE = (512, 256)  # (width, height)


@dataclass(frozen=True)
class HazeParams:
    """Parametric haze veil: out = img * t + atmosphere * (1 - t), with t a
    smooth pseudo-random transmission field in [1 - veil_strength, 1]."""

    veil_strength: float = 0.5
    field_smoothness: float = 16.0
    atmospheric_color: tuple[float, float, float] = DEFAULT_ATMOSPHERE
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.veil_strength <= 1.0:
            raise ValueError(f"veil_strength must be in [0, 1], got {self.veil_strength}")
        if self.field_smoothness <= 0:
            raise ValueError(f"field_smoothness must be > 0, got {self.field_smoothness}")
        if any(not 0.0 <= c <= 1.0 for c in self.atmospheric_color):
            raise ValueError(f"atmospheric_color must be in [0,1]^3, got {self.atmospheric_color}")

    def to_json_dict(self) -> dict:
        return {
            "veil_strength": self.veil_strength,
            "field_smoothness": self.field_smoothness,
            "atmospheric_color": list(self.atmospheric_color),
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "HazeParams":
        return cls(
            veil_strength=float(d["veil_strength"]),
            field_smoothness=float(d["field_smoothness"]),
            atmospheric_color=tuple(float(c) for c in d["atmospheric_color"]),
            seed=int(d["seed"]),
        )


@dataclass
class ImageTriplet:
    """Aligned (bright, bright-hazy, dark-hazy) training sample.

    `bright` may be None for evaluation-only items lacking ground truth.
    """

    bright: np.ndarray | None
    bright_hazy: np.ndarray
    dark_hazy: np.ndarray
    seed: int = 0
    name: str | None = None

    def __post_init__(self):
        check_same_shape(self.bright_hazy, self.dark_hazy)
        if self.bright is not None:
            check_same_shape(self.bright, self.bright_hazy)


def composite_pair(bright: np.ndarray, dark: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear day/night composites: 0.7*bright + 0.3*dark and its mirror."""
    b = validate_image(bright, "bright")
    d = validate_image(dark, "dark")
    check_same_shape(b, d)
    b_mix = BRIGHT_MIX * b + (1.0 - BRIGHT_MIX) * d
    d_mix = (1.0 - BRIGHT_MIX) * b + BRIGHT_MIX * d
    return clip01(b_mix), clip01(d_mix)


def transmission_field(height: int, width: int, p: HazeParams) -> np.ndarray:
    """Smooth pseudo-random per-pixel transmission, deterministic in (p, dims)."""
    rng = np.random.default_rng(p.seed)
    noise = rng.random((height, width))
    smooth = gaussian_filter(noise, sigma=p.field_smoothness, mode="reflect")
    span = smooth.max() - smooth.min()
    if span < 1e-12:
        unit = np.zeros_like(smooth)
    else:
        unit = (smooth - smooth.min()) / span
    return 1.0 - p.veil_strength * unit


def add_haze(img: np.ndarray, p: HazeParams) -> np.ndarray:
    """Apply the parametric veil; same (p, dims) gives the identical haze field."""
    arr = validate_image(img)
    t = transmission_field(arr.shape[0], arr.shape[1], p)[:, :, None]
    atmosphere = np.asarray(p.atmospheric_color, dtype=np.float64)
    return clip01(arr * t + atmosphere * (1.0 - t))


def enhance_bright(img: np.ndarray, clip_fraction: float = DEFAULT_CLIP_FRACTION) -> np.ndarray:
    """Per-channel percentile clip and affine rescale to [0, 1].

    Constant channels are returned unchanged.
    """
    if not 0.0 <= clip_fraction < 0.5:
        raise ValueError(f"clip_fraction must be in [0, 0.5), got {clip_fraction}")
    arr = validate_image(img)
    out = arr.copy()
    for c in range(3):
        channel = arr[:, :, c]
        lo = np.quantile(channel, clip_fraction)
        hi = np.quantile(channel, 1.0 - clip_fraction)
        if hi - lo < 1e-12:
            continue
        out[:, :, c] = np.clip((channel - lo) / (hi - lo), 0.0, 1.0)
    return out


def make_triplet(bright: np.ndarray, dark: np.ndarray, p: HazeParams) -> ImageTriplet:
    """Build a training triplet from an aligned pair; both hazy members
    receive the same haze field."""
    b_mix, d_mix = composite_pair(bright, dark)
    return ImageTriplet(
        bright=enhance_bright(b_mix),
        bright_hazy=add_haze(b_mix, p),
        dark_hazy=add_haze(d_mix, p),
        seed=p.seed,
    )


def augment(
    t: ImageTriplet,
    crop: int = 256,
    rng_seed: int = 0,
    resize_to: tuple[int, int] = TRAIN_RESIZE,
) -> ImageTriplet:
    """Resize, then apply one random crop / right-angle rotation / horizontal
    flip identically to all three images. Deterministic given rng_seed."""
    width, height = resize_to
    if crop > min(width, height):
        raise ValueError(f"crop {crop} larger than resized image {width}x{height}")
    rng = np.random.default_rng(rng_seed)
    x0 = int(rng.integers(0, width - crop + 1))
    y0 = int(rng.integers(0, height - crop + 1))
    k = int(rng.integers(0, 4))
    flip = bool(rng.random() < 0.5)

    def transform(img):
        out = resize(img, width, height)
        out = out[y0 : y0 + crop, x0 : x0 + crop]
        out = np.rot90(out, k)
        if flip:
            out = np.fliplr(out)
        return np.ascontiguousarray(out)

    return ImageTriplet(
        bright=None if t.bright is None else transform(t.bright),
        bright_hazy=transform(t.bright_hazy),
        dark_hazy=transform(t.dark_hazy),
        seed=t.seed,
        name=t.name,
    )


def render_scene_pair(seed: int, width: int = 128, height: int = 96) -> tuple[np.ndarray, np.ndarray]:
    """Render a stand-in (bright, dark) fixed-view pair: gradient sky, random
    building rectangles, and point lights exposed at day/night levels."""
    rng = np.random.default_rng(seed)
    yy = np.linspace(0.0, 1.0, height)[:, None, None]

    sky_top = rng.uniform(0.45, 0.7, size=3) * np.array([0.8, 0.9, 1.0])
    sky_bottom = rng.uniform(0.7, 0.95, size=3)
    scene = sky_top * (1.0 - yy) + sky_bottom * yy
    scene = np.broadcast_to(scene, (height, width, 3)).copy()

    n_rects = int(rng.integers(6, 13))
    for _ in range(n_rects):
        rw = int(rng.integers(max(2, width // 16), max(3, width // 3)))
        rh = int(rng.integers(max(2, height // 8), max(3, int(height * 0.7))))
        x = int(rng.integers(0, max(1, width - rw)))
        y = int(rng.integers(height // 4, max(height // 4 + 1, height - rh)))
        color = rng.uniform(0.08, 0.7, size=3)
        scene[y : y + rh, x : x + rw] = color

    lights = np.zeros((height, width, 3))
    ys, xs = np.mgrid[0:height, 0:width]
    n_lights = int(rng.integers(3, 8))
    for _ in range(n_lights):
        cx = rng.uniform(0, width - 1)
        cy = rng.uniform(height * 0.3, height - 1)
        sigma = rng.uniform(1.5, 3.5)
        amp = rng.uniform(0.5, 0.9)
        blob = amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma**2))
        warm = np.array([1.0, rng.uniform(0.75, 0.95), rng.uniform(0.45, 0.7)])
        lights += blob[:, :, None] * warm

    night_ambient = rng.uniform(0.08, 0.16)
    bright = clip01(scene + 0.25 * lights)
    dark = clip01(night_ambient * scene + lights)
    return bright, dark


def _child_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def sample_haze_params(seed: int) -> HazeParams:
    """Draw per-triplet haze parameters from the documented default ranges."""
    rng = np.random.default_rng(seed)
    return HazeParams(
        veil_strength=float(rng.uniform(*VEIL_RANGE)),
        field_smoothness=float(rng.uniform(*SMOOTHNESS_RANGE)),
        atmospheric_color=DEFAULT_ATMOSPHERE,
        seed=seed,
    )


@dataclass
class TripletRecord:
    triplet_id: str
    split: str
    seed: int
    haze: HazeParams
    source: str = "builtin"

    def to_json_dict(self) -> dict:
        return {
            "id": self.triplet_id,
            "split": self.split,
            "seed": self.seed,
            "haze": self.haze.to_json_dict(),
            "source": self.source,
        }


TRIPLET_FILES = ("bright.png", "bright_hazy.png", "dark_hazy.png")


def build_dataset(
    out_dir: str | os.PathLike,
    pairs: list[tuple[np.ndarray, np.ndarray, str]] | None = None,
    builtin_count: int = 0,
    seed: int = 0,
    val_fraction: float = 0.0,
    scene_size: tuple[int, int] = (128, 96),
) -> Path:
    """Generate triplets into `<out>/{train,val}/<id>/` plus a manifest.

    `pairs` entries are (bright, dark, source_name); when None, `builtin_count`
    scene pairs are rendered. Returns the manifest path.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    if pairs is None:
        sources = [None] * builtin_count
    else:
        sources = pairs
    n = len(sources)
    n_val = int(round(n * val_fraction))

    records = []
    for i, src in enumerate(sources):
        child = _child_seed(seed, i)
        if src is None:
            w, h = scene_size
            bright, dark = render_scene_pair(child, width=w, height=h)
            source_name = f"builtin:{child}"
        else:
            bright, dark, source_name = src
        haze = sample_haze_params(child)
        triplet = make_triplet(bright, dark, haze)

        split = "val" if i >= n - n_val else "train"
        triplet_id = f"triplet_{i:05d}"
        tdir = root / split / triplet_id
        tdir.mkdir(parents=True, exist_ok=True)
        for fname, img in zip(TRIPLET_FILES, (triplet.bright, triplet.bright_hazy, triplet.dark_hazy)):
            save_image(img, tdir / fname)
        records.append(TripletRecord(triplet_id, split, child, haze, source_name))

    manifest = {
        "seed": seed,
        "count": n,
        "triplets": [r.to_json_dict() for r in records],
    }
    manifest_path = root / "manifest.json"
    _write_json_atomic(manifest_path, manifest)
    return manifest_path


def load_dataset(root: str | os.PathLike, split: str | None = None) -> list[ImageTriplet]:
    """Load triplets recorded in `<root>/manifest.json` (optionally one split)."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DataError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    triplets = []
    for rec in manifest["triplets"]:
        if split is not None and rec["split"] != split:
            continue
        tdir = root / rec["split"] / rec["id"]
        try:
            bright, bright_hazy, dark_hazy = (load_image(tdir / f) for f in TRIPLET_FILES)
        except OSError as exc:
            raise DataError(f"cannot read triplet {rec['id']}: {exc}") from exc
        triplets.append(ImageTriplet(bright, bright_hazy, dark_hazy, seed=rec["seed"], name=rec["id"]))
    return triplets


def load_pairs_dir(pairs_dir: str | os.PathLike) -> list[tuple[np.ndarray, np.ndarray, str]]:
    """Read aligned pairs named `<stem>_bright.<ext>` / `<stem>_dark.<ext>`."""
    pairs_dir = Path(pairs_dir)
    if not pairs_dir.is_dir():
        raise DataError(f"pairs directory not found: {pairs_dir}")
    stems = {}
    for path in sorted(pairs_dir.iterdir()):
        name = path.stem
        for role in ("bright", "dark"):
            suffix = f"_{role}"
            if name.endswith(suffix):
                stems.setdefault(name[: -len(suffix)], {})[role] = path
    pairs = []
    for stem in sorted(stems):
        entry = stems[stem]
        if "bright" not in entry or "dark" not in entry:
            continue
        try:
            bright = load_image(entry["bright"])
            dark = load_image(entry["dark"])
        except OSError as exc:
            raise DataError(f"cannot read pair {stem}: {exc}") from exc
        if bright.shape != dark.shape:
            raise DataError(f"pair {stem}: bright {bright.shape} vs dark {dark.shape}")
        pairs.append((bright, dark, stem))
    if not pairs:
        raise DataError(f"no `<stem>_bright/_dark` pairs found in {pairs_dir}")
    return pairs


def _write_json_atomic(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
