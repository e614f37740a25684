"""Four prior-driven saliency detectors on a shared superpixel substrate.

Each is a compact stand-in for a classical method: boundary connectivity
(``rbd``), absorbing Markov chain (``mc``), dense reconstruction error
(``dsr_like``) and global contrast with a centre prior (``contrast_center``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import dijkstra

from ..core import Image, SaliencyMap, normalize_minmax
from ..errors import InvalidArgument, SolverError
from .superpixels import SuperpixelSegmentation, default_superpixel_count, segment_superpixels, to_lab

METHOD_NAMES = ("rbd", "mc", "dsr_like", "contrast_center")


@dataclass
class MethodDescriptor:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise InvalidArgument(f"unknown method {self.name!r}; expected one of {METHOD_NAMES}")


def _check_size(image: Image, minimum: int = 32):
    if image.width < minimum or image.height < minimum:
        raise InvalidArgument(f"image must be at least {minimum}x{minimum}, got {image.width}x{image.height}")


def _segment(image: Image, params: dict) -> SuperpixelSegmentation:
    K = params.get("K") or default_superpixel_count(image.width, image.height)
    return segment_superpixels(image, K=K, compactness=params.get("compactness", 10.0), lab=to_lab(image))


def _finish(seg: SuperpixelSegmentation, region_scores: np.ndarray, name: str) -> SaliencyMap:
    out = normalize_minmax(seg.rasterize(region_scores), source=f"handcrafted:{name}")
    return out


# ------------------------------------------------------------------ rbd


def background_weights(seg: SuperpixelSegmentation, sigma_clr: float = 10.0, sigma_b: float = 1.0):
    """Boundary connectivity per region and the derived background probability."""
    geo = dijkstra(seg.adjacency_graph(), directed=False)
    sim = np.exp(-geo ** 2 / (2 * sigma_clr ** 2))
    area = sim.sum(1)
    length = sim[:, seg.touches_border].sum(1)
    bnd_con = length / np.sqrt(area)
    w_bg = 1.0 - np.exp(-bnd_con ** 2 / (2 * sigma_b ** 2))
    return bnd_con, w_bg


def rbd_saliency(image: Image, sigma_clr: float = 10.0, sigma_b: float = 1.0,
                 sigma_spa: float = 0.25, **params) -> SaliencyMap:
    _check_size(image)
    seg = _segment(image, params)
    _, w_bg = background_weights(seg, sigma_clr, sigma_b)
    w_spa = np.exp(-seg.position_sqdist / (2 * sigma_spa ** 2))
    contrast = (seg.color_distance * w_spa * w_bg[None, :]).sum(1)
    return _finish(seg, contrast, "rbd")


# ------------------------------------------------------------------ mc


def absorption_times(Q: np.ndarray) -> np.ndarray:
    """Expected steps to absorption: row sums of ``(I - Q)^-1``."""
    Q = np.asarray(Q, dtype=np.float64)
    n = Q.shape[0]
    A = np.eye(n) - Q
    try:
        t = np.linalg.solve(A, np.ones(n))
    except np.linalg.LinAlgError as exc:
        raise SolverError("I - Q is singular; the chain has no path to an absorbing state") from exc
    if not np.all(np.isfinite(t)) or np.linalg.cond(A) > 1e12:
        raise SolverError("I - Q is numerically singular")
    return t


def mc_saliency(image: Image, sigma: float = 10.0, **params) -> SaliencyMap:
    _check_size(image)
    seg = _segment(image, params)
    adj = seg.adjacency
    two_hop = (adj.astype(np.int32) @ adj.astype(np.int32)) > 0
    links = (adj | two_hop) & ~np.eye(seg.K, dtype=bool)
    border = seg.touches_border
    transient = ~border
    if not border.any() or not transient.any():
        raise InvalidArgument("need at least one border and one interior superpixel")
    W = np.where(links, np.exp(-seg.color_distance / sigma), 0.0)
    P = W / W.sum(1, keepdims=True)
    Q = P[np.ix_(transient, transient)]
    t = absorption_times(Q)
    scores = np.empty(seg.K)
    scores[transient] = t
    scores[border] = t.min()
    return _finish(seg, scores, "mc")


# ------------------------------------------------------------------ dsr_like


def reconstruction_residuals(dictionary: np.ndarray, features: np.ndarray, ridge: float) -> np.ndarray:
    """Residual norms of ridge reconstructions of ``features`` rows from ``dictionary`` rows."""
    D = np.asarray(dictionary, dtype=np.float64).T          # (d, m)
    F = np.asarray(features, dtype=np.float64).T            # (d, n)
    G = D.T @ D
    coef = np.linalg.solve(G + ridge * np.eye(G.shape[0]), D.T @ F)
    return np.linalg.norm(F - D @ coef, axis=0)


def dsr_like_saliency(image: Image, ridge_fraction: float = 0.01, position_weight: float = 20.0,
                      **params) -> SaliencyMap:
    _check_size(image)
    seg = _segment(image, params)
    if seg.touches_border.sum() < 4:
        raise InvalidArgument("need at least 4 border superpixels for the background dictionary")
    feats = np.concatenate([seg.mean_lab, position_weight * seg.mean_pos], 1)
    dictionary = feats[seg.touches_border]
    if seg.touches_border.all() or np.linalg.matrix_rank(dictionary) == 0:
        return SaliencyMap(np.zeros(image.shape, np.float32), source="handcrafted:dsr_like", degenerate=True)
    gram = dictionary @ dictionary.T
    ridge = ridge_fraction * np.trace(gram) / len(dictionary)
    resid = reconstruction_residuals(dictionary, feats, ridge)
    return _finish(seg, resid, "dsr_like")


# ------------------------------------------------------------------ contrast_center


def contrast_center_saliency(image: Image, sigma_center: float = 0.33, **params) -> SaliencyMap:
    _check_size(image)
    seg = _segment(image, params)
    contrast = seg.color_distance @ seg.pixel_count.astype(np.float64)
    center = np.exp(-((seg.mean_pos - 0.5) ** 2).sum(1) / (2 * sigma_center ** 2))
    return _finish(seg, contrast * center, "contrast_center")


DETECTORS = {
    "rbd": rbd_saliency,
    "mc": mc_saliency,
    "dsr_like": dsr_like_saliency,
    "contrast_center": contrast_center_saliency,
}


def run_detector(method: MethodDescriptor, image: Image) -> SaliencyMap:
    return DETECTORS[method.name](image, **method.params)
