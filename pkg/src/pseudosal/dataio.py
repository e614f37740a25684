"""Dataset ingestion, the seeded synthetic generator and map persistence.

On-disk layout of a dataset root::

    images/<id>.png     8-bit RGB
    masks/<id>.png      8-bit grayscale, binarized at 0.5 when loaded
    manifest.json       {"seed": int, "entries": [{"id", "image", "mask", "split"}]}

Saliency maps are persisted as 16-bit single-channel PNGs with
``code = round(v * 65535)``.
"""
from __future__ import annotations

import colorsys
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .core import SPLITS, BinaryMask, Dataset, Image, SaliencyMap, SampleRecord, resize_array
from .errors import InvalidArgument, LoadError, ValidationError

MAP_SCALE = 65535


@dataclass
class ManifestEntry:
    id: str
    image: str
    mask: str | None = None
    split: str = "train"


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValidationError("manifest ids must be unique")
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValidationError(f"entry {e.id!r}: unknown split {e.split!r}")
            for p in (e.image, e.mask):
                if p is not None and os.path.isabs(p):
                    raise ValidationError(f"entry {e.id!r}: path {p!r} must be relative to the root")

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "entries": [{k: v for k, v in asdict(e).items() if v is not None} for e in self.entries],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetManifest":
        try:
            entries = [
                ManifestEntry(id=str(e["id"]), image=e["image"], mask=e.get("mask"), split=e.get("split", "train"))
                for e in doc.get("entries", [])
            ]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed manifest entry: {exc}") from exc
        return cls(entries=entries, seed=int(doc.get("seed", 0)))

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise LoadError(f"cannot read manifest {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"manifest {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def write(self, path) -> None:
        Path(path).write_text(self.to_json())


# ---------------------------------------------------------------- loading


def read_rgb(path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise LoadError(f"cannot read image {path}: {exc}") from exc
    return arr


def read_mask(path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) / MAP_SCALE
            else:
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise LoadError(f"cannot read mask {path}: {exc}") from exc
    return (arr > 0.5).astype(np.uint8)


def load_dataset(root, manifest: DatasetManifest | None = None, split: str | None = None,
                 image_size: int | None = None) -> Dataset:
    """Load a dataset root; ``split`` restricts to one split.

    ``image_size`` resizes images (bilinear) and masks (nearest via bilinear +
    0.5 threshold) to a square size.
    """
    root = Path(root)
    if not root.is_dir():
        raise LoadError(f"dataset root {root} does not exist")
    if manifest is None:
        manifest = DatasetManifest.read(root / "manifest.json")
    samples = []
    for e in manifest.entries:
        if split is not None and e.split != split:
            continue
        img_path = root / e.image
        if not img_path.is_file():
            raise LoadError(f"missing image file {img_path}")
        px = read_rgb(img_path)
        gt = None
        if e.mask is not None:
            mpath = root / e.mask
            if not mpath.is_file():
                raise LoadError(f"missing mask file {mpath}")
            m = read_mask(mpath)
            if m.shape != px.shape[:2]:
                raise ValidationError(f"sample {e.id!r}: mask {m.shape} does not match image {px.shape[:2]}")
            gt = m
        if image_size is not None and px.shape[:2] != (image_size, image_size):
            px = np.clip(resize_array(px, image_size, image_size), 0, 1)
            if gt is not None:
                gt = (resize_array(gt.astype(np.float32), image_size, image_size) > 0.5).astype(np.uint8)
        samples.append(SampleRecord(
            id=e.id, image=Image(px), gt=BinaryMask(gt) if gt is not None else None, split=e.split,
        ))
    return Dataset(samples, split=split)


# ---------------------------------------------------------------- map files


def encode_map(values: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.round(v * MAP_SCALE).astype(np.uint16)


def save_map(saliency, path) -> None:
    values = saliency.values if isinstance(saliency, SaliencyMap) else saliency
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(encode_map(values)).save(path, format="PNG")


def load_map(path, source: str = "network") -> SaliencyMap:
    try:
        with PILImage.open(path) as im:
            if im.mode not in ("I;16", "I;16B", "I"):
                raise LoadError(f"{path} is not a 16-bit map (mode {im.mode})")
            arr = np.asarray(im, dtype=np.float64)
    except (OSError, ValueError, SyntaxError) as exc:
        raise LoadError(f"cannot read map {path}: {exc}") from exc
    if arr.ndim != 2:
        raise LoadError(f"{path} is not single-channel")
    return SaliencyMap((arr / MAP_SCALE).astype(np.float32), source=source)


def save_mask(mask: BinaryMask, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray((mask.values * 255).astype(np.uint8), mode="L").save(path, format="PNG")


def load_mask(path) -> BinaryMask:
    return BinaryMask(read_mask(path))


def save_preview(values: np.ndarray, path) -> None:
    """8-bit export for viewing only."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.asarray(values, dtype=np.float64), 0, 1)
    PILImage.fromarray(np.round(arr * 255).astype(np.uint8)).save(path, format="PNG")


# ---------------------------------------------------------------- synthetic data


@dataclass
class SyntheticConfig:
    n_images: int = 200
    image_size: int = 64
    shapes_per_image: tuple[int, int] = (1, 3)
    distractor_probability: float = 0.3
    texture_noise_scale: float = 0.12
    seed: int = 7
    n_val: int = 0
    n_test: int = 0

    def validate(self) -> None:
        if self.n_images < 0 or self.n_val < 0 or self.n_test < 0:
            raise InvalidArgument("image counts must be >= 0")
        if self.image_size < 16:
            raise InvalidArgument("image_size must be >= 16")
        lo, hi = self.shapes_per_image
        if not 1 <= lo <= hi:
            raise InvalidArgument(f"invalid shapes_per_image range {self.shapes_per_image}")
        if not 0.0 <= self.distractor_probability <= 1.0:
            raise InvalidArgument("distractor_probability must be in [0, 1]")


def _value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    grid = rng.random((cells + 1, cells + 1))
    return resize_array(grid, size, size).astype(np.float64)


def _hsv(h, s, v) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v))


def _shape_mask(rng: np.random.Generator, size: int, kind: str, cy, cx, ry, rx) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size].astype(np.float64) + 0.5
    if kind == "ellipse":
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    if kind == "rectangle":
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    # smoothed blob: radius modulated by a few low harmonics
    ang = np.arctan2(yy - cy, xx - cx)
    r = np.hypot((yy - cy) / ry, (xx - cx) / rx)
    mod = np.ones_like(ang)
    for k in (2, 3, 5):
        mod += rng.uniform(0.0, 0.18) * np.cos(k * ang + rng.uniform(0, 2 * np.pi))
    return ndimage.gaussian_filter((r <= mod).astype(np.float64), 1.0) > 0.5


def _render_sample(cfg: SyntheticConfig, rng: np.random.Generator):
    n = cfg.image_size
    bg_hue = rng.random()
    bg_sat = rng.uniform(0.15, 0.5)
    bg_val = rng.uniform(0.35, 0.75)
    base = _hsv(bg_hue, bg_sat, bg_val)
    alt = _hsv(bg_hue + rng.uniform(-0.08, 0.08), np.clip(bg_sat + rng.uniform(-0.15, 0.15), 0, 1),
               np.clip(bg_val + rng.uniform(-0.25, 0.25), 0, 1))
    mix = _value_noise(rng, n, 3)
    img = base[None, None, :] * (1 - mix[..., None]) + alt[None, None, :] * mix[..., None]
    img = img + cfg.texture_noise_scale * (_value_noise(rng, n, 8)[..., None] - 0.5)

    gt = np.zeros((n, n), bool)
    lo, hi = cfg.shapes_per_image
    n_shapes = int(rng.integers(lo, hi + 1))
    for i in range(n_shapes):
        kind = ("ellipse", "rectangle", "blob")[int(rng.integers(3))]
        scale = rng.uniform(0.12, 0.26) if i == 0 else rng.uniform(0.07, 0.16)
        ry = scale * n * rng.uniform(0.7, 1.3)
        rx = scale * n * rng.uniform(0.7, 1.3)
        spread = 0.22 if i == 0 else 0.32
        cy = n * (0.5 + rng.uniform(-spread, spread))
        cx = n * (0.5 + rng.uniform(-spread, spread))
        m = _shape_mask(rng, n, kind, cy, cx, ry, rx)
        if not m.any():
            continue
        hue = bg_hue + rng.uniform(0.25, 0.75)
        color = _hsv(hue, rng.uniform(0.45, 1.0), rng.uniform(0.45, 1.0))
        shade = 1.0 + 0.6 * cfg.texture_noise_scale * (_value_noise(rng, n, 4) - 0.5)
        img[m] = np.clip(color[None, :] * shade[m][:, None], 0, 1)
        gt |= m
    if not gt.any():
        gt[n // 2 - 2:n // 2 + 2, n // 2 - 2:n // 2 + 2] = True
        img[gt] = _hsv(bg_hue + 0.5, 0.8, 0.8)

    if rng.random() < cfg.distractor_probability:
        side = int(rng.integers(4))
        depth = rng.uniform(0.08, 0.2) * n
        along = rng.uniform(0.2, 0.8) * n
        length = rng.uniform(0.15, 0.3) * n
        cy, cx, ry, rx = {
            0: (0.0, along, depth, length),
            1: (n, along, depth, length),
            2: (along, 0.0, length, depth),
            3: (along, n, length, depth),
        }[side]
        d = _shape_mask(rng, n, "ellipse", cy, cx, ry, rx) & ~gt
        dcol = _hsv(bg_hue + rng.uniform(-0.05, 0.05), np.clip(bg_sat + 0.25, 0, 1),
                    np.clip(bg_val + rng.choice([-0.3, 0.3]), 0.1, 1.0))
        img[d] = dcol

    img = np.clip(img, 0, 1)
    img8 = np.round(img * 255).astype(np.uint8)
    return img8, gt.astype(np.uint8)


def generate_synthetic(config: SyntheticConfig, out_dir=None) -> Dataset:
    """Render a seeded dataset; writes images, masks and manifest when ``out_dir`` is given.

    Each sample draws from its own child stream of ``SeedSequence(seed)``, so a
    sample's pixels do not depend on how many samples precede it.
    """
    config.validate()
    counts = [("train", config.n_images), ("val", config.n_val), ("test", config.n_test)]
    total = sum(c for _, c in counts)
    children = np.random.SeedSequence(config.seed).spawn(total) if total else []
    samples, entries = [], []
    k = 0
    for split, count in counts:
        for _ in range(count):
            sid = f"syn_{k:05d}"
            img8, gt = _render_sample(config, np.random.default_rng(children[k]))
            samples.append(SampleRecord(id=sid, image=Image(img8.astype(np.float32) / 255.0),
                                        gt=BinaryMask(gt), split=split))
            entries.append(ManifestEntry(id=sid, image=f"images/{sid}.png", mask=f"masks/{sid}.png", split=split))
            if out_dir is not None:
                out = Path(out_dir)
                (out / "images").mkdir(parents=True, exist_ok=True)
                (out / "masks").mkdir(parents=True, exist_ok=True)
                PILImage.fromarray(img8, mode="RGB").save(out / entries[-1].image, format="PNG")
                PILImage.fromarray(gt * 255, mode="L").save(out / entries[-1].mask, format="PNG")
            k += 1
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        DatasetManifest(entries, seed=config.seed).write(Path(out_dir) / "manifest.json")
    return Dataset(samples)
