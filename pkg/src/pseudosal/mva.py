"""Per-sample exponential moving averages of CRF-smoothed predictions."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BinaryMask, SaliencyMap, binarize_pseudo_label
from .dataio import load_map, save_map, save_mask
from .errors import InvalidArgument


@dataclass
class MvaEntry:
    values: np.ndarray
    k: int = 1


@dataclass
class MvaState:
    alpha: float = 0.7
    entries: dict[str, MvaEntry] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise InvalidArgument("alpha must be in [0, 1)")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self.entries

    def map(self, sample_id: str) -> SaliencyMap:
        return SaliencyMap(self.entries[sample_id].values.astype(np.float32), source="mva")

    def copy(self) -> "MvaState":
        return MvaState(self.alpha, {k: MvaEntry(e.values.copy(), e.k) for k, e in self.entries.items()})

    def seed(self, sample_id: str, values) -> None:
        """Initialize an entry from an arbitrary map (e.g. the stage's input labels)."""
        v = np.asarray(values.values if isinstance(values, (SaliencyMap, BinaryMask)) else values, dtype=np.float64)
        self.entries[sample_id] = MvaEntry(np.clip(v, 0, 1), 1)


def update_mva(state: MvaState, sample_id: str, crf_out) -> MvaState:
    """Fold one CRF output into the average in place; returns ``state``.

    The first update for an id stores the CRF output itself.
    """
    v = np.asarray(crf_out.values if isinstance(crf_out, SaliencyMap) else crf_out, dtype=np.float64)
    if v.min() < 0 or v.max() > 1:
        raise InvalidArgument("CRF output must lie in [0, 1]")
    entry = state.entries.get(sample_id)
    if entry is None:
        state.entries[sample_id] = MvaEntry(v.copy(), 1)
        return state
    if entry.values.shape != v.shape:
        raise InvalidArgument(f"sample {sample_id!r}: shape {v.shape} differs from stored {entry.values.shape}")
    entry.values = (1.0 - state.alpha) * v + state.alpha * entry.values
    entry.k += 1
    return state


def snapshot_labels(state: MvaState, threshold: float | None = 0.5) -> dict[str, BinaryMask]:
    """Binarize every average; ``threshold=None`` uses the 1.5x-mean pseudo-label rule instead."""
    if not state.entries:
        raise InvalidArgument("MVA state is empty")
    out = {}
    for k, e in state.entries.items():
        if threshold is None:
            out[k] = binarize_pseudo_label(SaliencyMap(e.values.astype(np.float32), source="mva"))
        else:
            out[k] = BinaryMask((e.values > threshold).astype(np.uint8))
    return out


def stability_delta(prev: MvaState, curr: MvaState) -> float:
    """Mean over samples of the mean absolute per-pixel change."""
    if set(prev.entries) != set(curr.entries):
        raise InvalidArgument("MVA states cover different sample ids")
    if not curr.entries:
        return 0.0
    return float(np.mean([np.mean(np.abs(curr.entries[k].values - prev.entries[k].values)) for k in sorted(curr.entries)]))


def save_state(state: MvaState, directory, labels: dict[str, BinaryMask] | None = None) -> None:
    d = Path(directory)
    for k in sorted(state.entries):
        save_map(state.entries[k].values, d / "maps" / f"{k}.png")
    if labels is not None:
        for k in sorted(labels):
            save_mask(labels[k], d / "labels" / f"{k}.png")


def load_state(directory, alpha: float = 0.7) -> MvaState:
    d = Path(directory) / "maps"
    state = MvaState(alpha)
    for p in sorted(d.glob("*.png")):
        state.entries[p.stem] = MvaEntry(load_map(p).values.astype(np.float64), 1)
    return state
