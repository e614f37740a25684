"""Run the detectors over a dataset and persist raw maps and pseudo-labels."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import BinaryMask, Dataset, SaliencyMap, binarize_pseudo_label
from ..dataio import save_map, save_mask
from ..errors import InvalidArgument
from .methods import MethodDescriptor, run_detector

log = logging.getLogger(__name__)


@dataclass
class MethodOutputs:
    maps: dict[str, dict[str, SaliencyMap]] = field(default_factory=dict)
    labels: dict[str, dict[str, BinaryMask]] = field(default_factory=dict)
    failures: dict[str, dict[str, str]] = field(default_factory=dict)


def raw_dir(artifacts, method: str) -> Path:
    return Path(artifacts) / method / "raw"


def run_methods(dataset: Dataset, methods: Sequence[MethodDescriptor], artifacts=None,
                gamma_mode: str = "per_image") -> MethodOutputs:
    """Compute every method on every sample, binarize, and optionally persist.

    A sample that fails for a method is dropped from that method's label set
    only; the error text is kept in ``failures``.
    """
    if not methods:
        raise InvalidArgument("at least one method is required")
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise InvalidArgument("method names must be unique within a run")
    if gamma_mode not in ("per_image", "dataset"):
        raise InvalidArgument(f"unknown gamma_mode {gamma_mode!r}")
    out = MethodOutputs()
    for m in methods:
        maps, fails = {}, {}
        for s in dataset:
            try:
                maps[s.id] = run_detector(m, s.image)
            except Exception as exc:  # recorded, not fatal
                log.warning("method %s failed on %s: %s", m.name, s.id, exc)
                fails[s.id] = f"{type(exc).__name__}: {exc}"
        mean = None
        if gamma_mode == "dataset" and maps:
            mean = float(np.mean([v.values.mean(dtype=np.float64) for v in maps.values()]))
        labels = {k: binarize_pseudo_label(v, mean=mean) for k, v in maps.items()}
        out.maps[m.name], out.labels[m.name], out.failures[m.name] = maps, labels, fails
        if artifacts is not None:
            d = raw_dir(artifacts, m.name)
            for k in maps:
                save_map(maps[k], d / "maps" / f"{k}.png")
                save_mask(labels[k], d / "labels" / f"{k}.png")
            (d / "failures.txt").parent.mkdir(parents=True, exist_ok=True)
            (d / "failures.txt").write_text("".join(f"{k}\t{v}\n" for k, v in sorted(fails.items())))
        log.info("method %s: %d maps, %d failures", m.name, len(maps), len(fails))
    return out
