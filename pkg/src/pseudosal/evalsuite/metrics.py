"""Saliency metrics: MAE and adaptive-threshold F-beta, plus label-quality curves and oracle fusion."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..core import BinaryMask, as_map_dict
from ..errors import InvalidArgument
from ..objective import ContingencyTotals, f_beta_from_pr, precision_recall

EPS = 1e-7
MAX_F_THRESHOLDS = np.linspace(0.0, 1.0, 256, endpoint=False)


@dataclass
class MetricsRow:
    name: str
    dataset: str
    f_score: float
    mae: float
    precision: float
    recall: float
    max_f: float | None = None
    n_runs: int = 1
    std: dict | None = None
    n_images: int = 0
    stage: int | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class MetricsReport:
    rows: list[MetricsRow] = field(default_factory=list)

    def add(self, row: MetricsRow) -> None:
        self.rows.append(row)

    def row(self, name: str, dataset: str | None = None) -> MetricsRow:
        for r in self.rows:
            if r.name == name and (dataset is None or r.dataset == dataset):
                return r
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps({"rows": [r.as_dict() for r in self.rows]}, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        return cls([MetricsRow(**r) for r in doc["rows"]])


def adaptive_threshold(pred: np.ndarray) -> float:
    return min(2.0 * float(np.mean(pred, dtype=np.float64)), 0.98)


def _totals(binary: np.ndarray, gt: np.ndarray) -> ContingencyTotals:
    b = binary.astype(np.float64).ravel()
    g = gt.astype(np.float64).ravel()
    return ContingencyTotals(tp=float(b @ g), fp=float(b @ (1 - g)), fn=float((1 - b) @ g))


def _check_ids(preds, gts):
    if set(preds) != set(gts):
        raise InvalidArgument(
            f"prediction ids and ground-truth ids differ ({len(set(preds) ^ set(gts))} mismatched)"
        )
    if not preds:
        raise InvalidArgument("nothing to evaluate")


def per_image_scores(preds: Mapping, gts: Mapping, beta_sq: float = 0.3) -> dict[str, dict]:
    """Per-image F, precision, recall (adaptive threshold) and MAE, all as fractions."""
    P, G = as_map_dict(preds), as_map_dict(gts)
    _check_ids(P, G)
    out = {}
    for k in sorted(P):
        p, g = P[k].astype(np.float64), G[k].astype(np.float64)
        if p.shape != g.shape:
            raise InvalidArgument(f"sample {k!r}: prediction {p.shape} vs ground truth {g.shape}")
        binary = p > adaptive_threshold(p)
        t = _totals(binary, g)
        prec, rec = precision_recall(t, EPS)
        out[k] = {"f": f_beta_from_pr(prec, rec, beta_sq), "precision": prec, "recall": rec,
                  "mae": float(np.mean(np.abs(p - g))), "totals": t}
    return out


def max_f_score(preds: Mapping, gts: Mapping, beta_sq: float = 0.3) -> float:
    """Best dataset-mean F over a fixed grid of global thresholds."""
    P, G = as_map_dict(preds), as_map_dict(gts)
    best = 0.0
    keys = sorted(P)
    fs = np.zeros(len(MAX_F_THRESHOLDS))
    for k in keys:
        p = P[k].astype(np.float64).ravel()
        g = G[k].astype(np.float64).ravel()
        b = p[None, :] > MAX_F_THRESHOLDS[:, None]
        tp = b @ g
        fp = b.sum(1) - tp
        fn = g.sum() - tp
        prec = (tp + EPS) / (tp + fp + EPS)
        rec = (tp + EPS) / (tp + fn + EPS)
        fs += (1 + beta_sq) * prec * rec / (beta_sq * prec + rec)
    best = float(fs.max() / len(keys))
    return best


def evaluate(preds: Mapping, gts: Mapping, beta_sq: float = 0.3, name: str = "model",
             dataset: str = "test", pooling: str = "per_image", with_max_f: bool = True) -> MetricsRow:
    """Score predictions against ground truth; F, MAE, precision and recall in percent.

    ``pooling="pooled"`` sums contingency totals over the dataset before
    computing precision and recall instead of averaging per-image scores.
    """
    scores = per_image_scores(preds, gts, beta_sq)
    vals = list(scores.values())
    mae = float(np.mean([v["mae"] for v in vals]))
    if pooling == "per_image":
        f = float(np.mean([v["f"] for v in vals]))
        prec = float(np.mean([v["precision"] for v in vals]))
        rec = float(np.mean([v["recall"] for v in vals]))
    elif pooling == "pooled":
        t = ContingencyTotals(*(sum(getattr(v["totals"], a) for v in vals) for a in ("tp", "fp", "fn")))
        prec, rec = precision_recall(t, EPS)
        f = f_beta_from_pr(prec, rec, beta_sq)
    else:
        raise InvalidArgument(f"unknown pooling {pooling!r}")
    mf = 100 * max_f_score(preds, gts, beta_sq) if with_max_f else None
    return MetricsRow(name=name, dataset=dataset, f_score=100 * f, mae=100 * mae, precision=100 * prec,
                      recall=100 * rec, max_f=mf, n_images=len(vals))


def combine_runs(rows: Sequence[MetricsRow]) -> MetricsRow:
    """Mean over repeated runs with per-metric standard deviation."""
    if not rows:
        raise InvalidArgument("no runs to combine")
    if len(rows) == 1:
        return rows[0]
    keys = ("f_score", "mae", "precision", "recall")
    mean = {k: float(np.mean([getattr(r, k) for r in rows])) for k in keys}
    std = {k: float(np.std([getattr(r, k) for r in rows], ddof=1)) for k in keys}
    return MetricsRow(name=rows[0].name, dataset=rows[0].dataset, n_runs=len(rows), std=std,
                      n_images=rows[0].n_images, **mean)


def label_quality_curve(stages: Sequence[tuple[str, Mapping]], gts: Mapping, beta_sq: float = 0.3,
                        dataset: str = "train") -> list[MetricsRow]:
    """One metrics row per pipeline stage, ordered by stage index (0 = handcrafted)."""
    rows = []
    for idx, (name, labels) in enumerate(stages):
        common = {k: labels[k] for k in labels}
        row = evaluate(common, {k: gts[k] for k in common}, beta_sq, name=name, dataset=dataset,
                       with_max_f=False)
        row.stage = idx
        rows.append(row)
    return rows


def oracle_label_fusion(label_sets: Sequence[Mapping[str, BinaryMask]], gts: Mapping[str, BinaryMask]
                        ) -> dict[str, BinaryMask]:
    """Per pixel: the GT value if any set matches it, else the majority vote (ties to 0)."""
    if not label_sets:
        raise InvalidArgument("need at least one label set")
    ids = set(label_sets[0])
    for s in label_sets[1:]:
        if set(s) != ids:
            raise InvalidArgument("label sets cover different ids")
    if not ids <= set(gts):
        raise InvalidArgument("ground truth missing for some ids")
    out = {}
    for k in sorted(ids):
        stack = np.stack([s[k].values for s in label_sets]).astype(np.int32)
        g = gts[k].values.astype(np.int32)
        match = (stack == g[None]).any(0)
        majority = (2 * stack.sum(0) > len(label_sets)).astype(np.int32)
        out[k] = BinaryMask(np.where(match, g, majority).astype(np.uint8))
    return out


def rank_correlation(a: Sequence[float], b: Sequence[float]) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(a, b).statistic)
