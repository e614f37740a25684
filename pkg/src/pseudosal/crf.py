"""Fully connected two-label CRF refined by synchronous mean-field updates.

Unary energies come from the saliency map, ``-log(s)`` for salient and
``-log(1 - s)`` for background. Pairwise terms are Potts potentials weighted
by a bilateral kernel on (position, RGB) and a spatial Gaussian kernel. Each
kernel is row-normalized (self term included), so a label's message is the
kernel-weighted average of the neighbourhood's disagreement with it; this
keeps the pairwise strength independent of image size and leaves uniform
inputs uniform up to the borders.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import Image, SaliencyMap
from .errors import InvalidArgument
from .lattice import PermutohedralLattice

REFERENCE_SIZE = 432


@dataclass(frozen=True)
class CrfParams:
    iterations: int = 5
    w_bilateral: float = 4.0
    w_gaussian: float = 3.0
    theta_alpha: float | None = None    # None: 30 px scaled by image size / 432
    theta_beta: float = 0.1
    theta_gamma: float = 3.0
    unary_clamp: float = 1e-6
    method: str = "auto"                 # auto | exact | lattice
    exact_max_pixels: int = 1024

    def __post_init__(self):
        if self.iterations < 0:
            raise InvalidArgument("iterations must be >= 0")
        for name in ("w_bilateral", "w_gaussian", "theta_beta", "theta_gamma"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be non-negative")
        if self.theta_alpha is not None and self.theta_alpha <= 0:
            raise InvalidArgument("theta_alpha must be positive")
        if not 0 < self.unary_clamp < 0.5:
            raise InvalidArgument("unary_clamp must be in (0, 0.5)")
        if self.method not in ("auto", "exact", "lattice"):
            raise InvalidArgument(f"unknown CRF method {self.method!r}")

    def spatial_bilateral_std(self, height: int, width: int) -> float:
        if self.theta_alpha is not None:
            return self.theta_alpha
        return 30.0 * max(height, width) / REFERENCE_SIZE


def _gauss_matrix(n: int, sigma: float) -> np.ndarray:
    a = np.arange(n, dtype=np.float64)
    return np.exp(-(a[:, None] - a[None, :]) ** 2 / (2 * sigma ** 2))


def _features(image: Image, params: CrfParams) -> np.ndarray:
    h, w = image.shape
    sa = params.spatial_bilateral_std(h, w)
    yy, xx = np.mgrid[:h, :w]
    pos = np.stack([xx.ravel(), yy.ravel()], 1) / sa
    rgb = image.pixels.reshape(-1, 3).astype(np.float64) / params.theta_beta
    return np.concatenate([pos, rgb], 1)


class PairwiseKernel:
    """Applies ``v -> w_b avg_bilateral(v) + w_g avg_spatial(v)`` for one image.

    ``avg_k(v)_i = sum_j k(i, j) v_j / sum_j k(i, j)`` over all pixels ``j``.
    """

    def __init__(self, image: Image, params: CrfParams, method: str | None = None):
        h, w = image.shape
        self.shape = (h, w)
        self.params = params
        method = method or params.method
        if method == "auto":
            method = "exact" if h * w <= params.exact_max_pixels else "lattice"
        self.method = method
        self._gy = _gauss_matrix(h, params.theta_gamma) if params.w_gaussian else None
        self._gx = _gauss_matrix(w, params.theta_gamma) if params.w_gaussian else None
        self._dense = self._lattice = None
        if params.w_bilateral:
            feats = _features(image, params)
            if method == "exact":
                sq = (feats ** 2).sum(1)
                d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * feats @ feats.T, 0.0)
                k = np.exp(-0.5 * d2)
                self._dense = k / k.sum(1, keepdims=True)
            else:
                self._lattice = PermutohedralLattice(feats)
                self._lattice_norm = np.maximum(self._lattice.filter(np.ones(h * w)), 1e-12)
        if params.w_gaussian:
            self._sp_norm = self._gy.sum(1)[:, None] * self._gx.sum(1)[None, :]

    def bilateral(self, v: np.ndarray) -> np.ndarray:
        flat = v.ravel()
        if self._dense is not None:
            out = self._dense @ flat
        else:
            out = self._lattice.filter(flat) / self._lattice_norm
        return out.reshape(self.shape)

    def spatial(self, v: np.ndarray) -> np.ndarray:
        return (self._gy @ v @ self._gx.T) / self._sp_norm

    @property
    def total_weight(self) -> float:
        return float(self.params.w_bilateral + self.params.w_gaussian)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        p = self.params
        out = np.zeros(self.shape)
        if p.w_bilateral:
            out += p.w_bilateral * self.bilateral(v)
        if p.w_gaussian:
            out += p.w_gaussian * self.spatial(v)
        return out


def mean_field(unary_prob: np.ndarray, kernel: PairwiseKernel, iterations: int,
               history: list | None = None) -> np.ndarray:
    """Run synchronous two-label mean field; returns the salient marginal.

    ``unary_prob`` is the clamped salient probability. When ``history`` is a
    list, the ``(H, W, 2)`` label marginals after every iteration are appended.
    """
    q = unary_prob.astype(np.float64)
    u_sal = -np.log(q)
    u_bg = -np.log1p(-q)
    if history is not None:
        history.append(np.stack([q, 1 - q], -1))
    total = kernel.total_weight
    for _ in range(iterations):
        # Potts: label l pays the kernel mass of neighbours not in l; the
        # kernels are row-normalized, so kernel(1 - q) = total - kernel(q)
        m_bg = kernel(q)
        m_sal = total - m_bg
        e_sal = u_sal + m_sal
        e_bg = u_bg + m_bg
        lo = np.minimum(e_sal, e_bg)
        a = np.exp(-(e_sal - lo))
        b = np.exp(-(e_bg - lo))
        z = a + b
        q = a / z
        if history is not None:
            history.append(np.stack([q, b / z], -1))
    return q


def clamp_map(values: np.ndarray, c: float) -> np.ndarray:
    return np.clip(np.asarray(values, dtype=np.float64), c, 1.0 - c)


def dense_crf_refine(image: Image, saliency: SaliencyMap, params: CrfParams = CrfParams(),
                     kernel: PairwiseKernel | None = None, history: list | None = None) -> SaliencyMap:
    """Refine a saliency map; returns the salient-label marginal.

    Pass a prebuilt ``kernel`` to reuse the per-image filtering structure across calls.
    """
    vals = saliency.values if isinstance(saliency, SaliencyMap) else np.asarray(saliency)
    if vals.shape != image.shape:
        raise InvalidArgument(f"map {vals.shape} does not match image {image.shape}")
    q0 = clamp_map(vals, params.unary_clamp)
    if params.iterations == 0 or (params.w_bilateral == 0 and params.w_gaussian == 0):
        if history is not None:
            history.extend(np.stack([q0, 1 - q0], -1) for _ in range(params.iterations + 1))
        return SaliencyMap(q0.astype(np.float32), source="crf")
    if kernel is None:
        kernel = PairwiseKernel(image, params)
    elif kernel.shape != image.shape:
        raise InvalidArgument("kernel was built for a different image size")
    q = mean_field(q0, kernel, params.iterations, history)
    c = params.unary_clamp
    return SaliencyMap(np.clip(q, c, 1.0 - c).astype(np.float32), source="crf")


class CrfCache:
    """Per-sample cache of pairwise kernels for repeated refinement of the same images."""

    def __init__(self, params: CrfParams, max_items: int | None = None):
        self.params = params
        self.max_items = max_items
        self._kernels: dict[str, PairwiseKernel] = {}

    def refine(self, sample_id: str, image: Image, saliency) -> SaliencyMap:
        k = self._kernels.get(sample_id)
        if k is None:
            k = PairwiseKernel(image, self.params)
            if self.max_items is None or len(self._kernels) < self.max_items:
                self._kernels[sample_id] = k
        return dense_crf_refine(image, saliency, self.params, kernel=k)

    def with_params(self, **changes) -> "CrfCache":
        return CrfCache(replace(self.params, **changes), self.max_items)
