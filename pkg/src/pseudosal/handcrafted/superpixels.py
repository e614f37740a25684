"""SLIC superpixels and the region adjacency graph the classical detectors share."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from skimage.color import rgb2lab
from skimage.segmentation import slic

from ..core import Image
from ..errors import InvalidArgument


def to_lab(image: Image) -> np.ndarray:
    """sRGB -> CIE Lab, D65 white point."""
    return rgb2lab(image.pixels.astype(np.float64), illuminant="D65")


def default_superpixel_count(width: int, height: int) -> int:
    return int(np.clip(round(width * height / 1000), 16, 400))


@dataclass
class SuperpixelSegmentation:
    label_map: np.ndarray          # (H, W) int, values in [0, K)
    mean_lab: np.ndarray           # (K, 3)
    mean_pos: np.ndarray           # (K, 2) as (x, y) in [0, 1]
    pixel_count: np.ndarray        # (K,)
    touches_border: np.ndarray     # (K,) bool

    @property
    def K(self) -> int:
        return len(self.pixel_count)

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Symmetric boolean (K, K) matrix of 4-connected neighbouring regions."""
        lm = self.label_map
        a = np.concatenate([lm[:, :-1].ravel(), lm[:-1, :].ravel()])
        b = np.concatenate([lm[:, 1:].ravel(), lm[1:, :].ravel()])
        keep = a != b
        adj = np.zeros((self.K, self.K), bool)
        adj[a[keep], b[keep]] = True
        adj[b[keep], a[keep]] = True
        return adj

    @cached_property
    def color_distance(self) -> np.ndarray:
        d = self.mean_lab[:, None, :] - self.mean_lab[None, :, :]
        return np.sqrt((d ** 2).sum(-1))

    @cached_property
    def position_sqdist(self) -> np.ndarray:
        d = self.mean_pos[:, None, :] - self.mean_pos[None, :, :]
        return (d ** 2).sum(-1)

    def rasterize(self, region_values: np.ndarray) -> np.ndarray:
        return np.asarray(region_values, dtype=np.float64)[self.label_map]

    def adjacency_graph(self) -> sparse.csr_matrix:
        """Adjacency weighted by Lab distance, for geodesic shortest paths."""
        w = np.where(self.adjacency, self.color_distance, 0.0)
        # zero-cost edges would vanish from a sparse graph
        w = np.where(self.adjacency & (w <= 0), 1e-12, w)
        return sparse.csr_matrix(w)


def _merge_to_budget(labels: np.ndarray, K: int) -> np.ndarray:
    """Merge the smallest regions into their largest-border neighbour until at most K remain."""
    labels = labels.copy()
    while True:
        ids, counts = np.unique(labels, return_counts=True)
        if len(ids) <= K:
            return labels
        small = ids[np.argmin(counts)]
        m = labels == small
        a = np.concatenate([labels[:, :-1][m[:, :-1]], labels[:, 1:][m[:, 1:]],
                            labels[:-1, :][m[:-1, :]], labels[1:, :][m[1:, :]]])
        b = np.concatenate([labels[:, 1:][m[:, :-1]], labels[:, :-1][m[:, 1:]],
                            labels[1:, :][m[:-1, :]], labels[:-1, :][m[1:, :]]])
        nbrs = b[(a == small) & (b != small)]
        target = np.bincount(nbrs).argmax()
        labels[m] = target


def segment_superpixels(image: Image, K: int | None = None, compactness: float = 10.0,
                        lab: np.ndarray | None = None) -> SuperpixelSegmentation:
    h, w = image.shape
    if K is None:
        K = default_superpixel_count(w, h)
    if not 4 <= K <= (w * h) // 16:
        raise InvalidArgument(f"superpixel count {K} outside [4, {(w * h) // 16}]")
    if lab is None:
        lab = to_lab(image)
    raw = slic(lab, n_segments=K, compactness=compactness, start_label=0, enforce_connectivity=True,
               convert2lab=False, channel_axis=-1)
    raw = _merge_to_budget(raw, K)
    _, labels = np.unique(raw, return_inverse=True)
    labels = labels.reshape(h, w)
    k = int(labels.max()) + 1
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=k).astype(np.float64)
    mean_lab = np.stack([np.bincount(flat, lab[..., c].ravel(), k) for c in range(3)], 1) / counts[:, None]
    yy, xx = np.mgrid[:h, :w]
    mean_pos = np.stack([
        np.bincount(flat, ((xx + 0.5) / w).ravel(), k),
        np.bincount(flat, ((yy + 0.5) / h).ravel(), k),
    ], 1) / counts[:, None]
    border = np.zeros(k, bool)
    border[np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))] = True
    return SuperpixelSegmentation(labels, mean_lab, mean_pos, counts.astype(np.int64), border)
