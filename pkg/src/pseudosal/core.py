"""Domain types and the basic per-image transforms.

Images are stored as ``(H, W, 3)`` float32 arrays in ``[0, 1]``; saliency maps
as ``(H, W)`` float32 arrays in ``[0, 1]``; binary masks as ``(H, W)`` uint8
arrays holding only 0 and 1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .errors import InvalidArgument, ValidationError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] == 0 or px.shape[1] == 0:
            raise InvalidArgument(f"image must be (H, W, 3), got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > 1:
            raise InvalidArgument("image values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    values: np.ndarray
    source: str = "network"
    degenerate: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2 or v.size == 0:
            raise InvalidArgument(f"saliency map must be a non-empty 2-D array, got {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > 1:
            raise InvalidArgument("saliency values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class BinaryMask:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise InvalidArgument(f"mask must be 2-D, got {v.shape}")
        if not np.all((v == 0) | (v == 1)):
            raise InvalidArgument("mask values must be exactly 0 or 1")
        object.__setattr__(self, "values", v.astype(np.uint8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        return isinstance(other, BinaryMask) and np.array_equal(self.values, other.values)


@dataclass
class SampleRecord:
    id: str
    image: Image
    gt: BinaryMask | None = None
    split: str = "train"
    pseudo: dict[str, BinaryMask] = field(default_factory=dict)

    def __post_init__(self):
        if self.gt is not None and self.gt.shape != self.image.shape:
            raise ValidationError(
                f"sample {self.id!r}: mask {self.gt.shape} does not match image {self.image.shape}"
            )


@dataclass
class Dataset:
    samples: list[SampleRecord]
    split: str | None = None

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValidationError("sample ids must be unique")
        self._index = {s.id: s for s in self.samples}

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[SampleRecord]:
        return iter(self.samples)

    def __getitem__(self, sample_id: str) -> SampleRecord:
        return self._index[sample_id]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def has_gt(self) -> bool:
        return bool(self.samples) and all(s.gt is not None for s in self.samples)

    def gts(self) -> dict[str, BinaryMask]:
        return {s.id: s.gt for s in self.samples if s.gt is not None}

    def subset(self, split: str) -> "Dataset":
        return Dataset([s for s in self.samples if s.split == split], split=split)


def _axis_weights(n_in: int, n_out: int):
    # half-pixel-centre alignment
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = (src - lo).astype(np.float64)
    return lo, hi, frac


def resize_array(arr: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Bilinear resize of an ``(H, W)`` or ``(H, W, C)`` array."""
    if target_w <= 0 or target_h <= 0:
        raise InvalidArgument(f"target size must be positive, got {target_w}x{target_h}")
    a = np.asarray(arr, dtype=np.float64)
    h, w = a.shape[:2]
    if (h, w) == (target_h, target_w):
        return np.asarray(arr).copy()
    y0, y1, fy = _axis_weights(h, target_h)
    x0, x1, fx = _axis_weights(w, target_w)
    if a.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bot = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return out.astype(np.float32)


def resize_bilinear(image: Image, target_w: int, target_h: int) -> Image:
    out = resize_array(image.pixels, target_w, target_h)
    return Image(np.clip(out, 0.0, 1.0))


def normalize_minmax(values, source: str = "handcrafted") -> SaliencyMap:
    """Rescale to ``[0, 1]``; a constant input yields zeros flagged degenerate."""
    v = np.asarray(values.values if isinstance(values, SaliencyMap) else values, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgument("cannot normalize an empty map")
    if isinstance(values, SaliencyMap):
        source = values.source
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        return SaliencyMap(np.zeros(v.shape, np.float32), source=source, degenerate=True)
    return SaliencyMap(((v - lo) / (hi - lo)).astype(np.float32), source=source)


def pseudo_label_threshold(values, factor: float = 1.5, mean: float | None = None) -> float:
    v = values.values if isinstance(values, SaliencyMap) else np.asarray(values)
    mu = float(np.mean(v, dtype=np.float64)) if mean is None else mean
    return factor * mu


def binarize_pseudo_label(saliency: SaliencyMap, mean: float | None = None) -> BinaryMask:
    """Foreground where the map exceeds 1.5x its mean (strictly).

    ``mean`` overrides the per-image mean, e.g. with a dataset-wide mean for
    the same method.
    """
    gamma = pseudo_label_threshold(saliency, mean=mean)
    mask = (saliency.values.astype(np.float64) > gamma).astype(np.uint8)
    if not mask.any():
        log.debug("empty pseudo-label (gamma=%.4f, source=%s)", gamma, saliency.source)
    return BinaryMask(mask)


def threshold_mask(values, threshold: float) -> BinaryMask:
    v = values.values if isinstance(values, SaliencyMap) else np.asarray(values)
    return BinaryMask((v > threshold).astype(np.uint8))


def as_map_dict(preds: Mapping[str, object]) -> dict[str, np.ndarray]:
    """Collapse maps/masks/arrays keyed by id to float arrays."""
    out = {}
    for k, v in preds.items():
        if isinstance(v, (SaliencyMap, BinaryMask)):
            out[k] = v.values.astype(np.float32)
        else:
            out[k] = np.asarray(v, dtype=np.float32)
    return out
