from .methods import (
    DETECTORS,
    METHOD_NAMES,
    MethodDescriptor,
    absorption_times,
    background_weights,
    contrast_center_saliency,
    dsr_like_saliency,
    mc_saliency,
    rbd_saliency,
    reconstruction_residuals,
    run_detector,
)
from .runner import MethodOutputs, raw_dir, run_methods
from .superpixels import SuperpixelSegmentation, default_superpixel_count, segment_superpixels, to_lab

__all__ = [
    "DETECTORS", "METHOD_NAMES", "MethodDescriptor", "MethodOutputs", "SuperpixelSegmentation",
    "absorption_times", "background_weights", "contrast_center_saliency", "default_superpixel_count",
    "dsr_like_saliency", "mc_saliency", "raw_dir", "rbd_saliency", "reconstruction_residuals",
    "run_detector", "run_methods", "segment_superpixels", "to_lab",
]
