"""Markdown summary, metrics JSON and matplotlib figures for a finished run."""
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import MetricsReport, MetricsRow, rank_correlation  # noqa: E402

log = logging.getLogger(__name__)

REFERENCE_FOOTER = (
    "Published full-scale reference on MSRA-B (pretrained backbone, 432x432 inputs, multi-GPU): "
    "F-score 90.31, MAE 03.96. Not reproducible at desk scale; listed for orientation only."
)

# deterministic SVG/PNG output
plt.rcParams.update({"svg.hashsalt": "pseudosal", "figure.dpi": 100, "savefig.dpi": 100,
                     "font.size": 9, "axes.grid": True, "grid.alpha": 0.3})
PNG_META = {"Software": None}
SVG_META = {"Date": None, "Creator": None}


def _table(rows: Sequence[MetricsRow]) -> list[str]:
    lines = ["| Model | Dataset | F (%) | MAE (%) | Precision (%) | Recall (%) | max-F (%) |",
             "|---|---|---:|---:|---:|---:|---:|"]
    for r in rows:
        def cell(key):
            v = getattr(r, key)
            if v is None:
                return "-"
            s = f"{v:05.2f}"
            if r.std and key in r.std:
                s += f" ± {r.std[key]:.2f}"
            return s
        lines.append(f"| {r.name} | {r.dataset} | {cell('f_score')} | {cell('mae')} | {cell('precision')} | "
                     f"{cell('recall')} | {cell('max_f')} |")
    return lines


def plot_curves(curves: Mapping[str, Sequence[MetricsRow]], path) -> None:
    fig, axes = plt.subplots(1, 4, figsize=(13, 3.2))
    for ax, (key, label) in zip(axes, [("f_score", "F-score (%)"), ("mae", "MAE (%)"),
                                       ("precision", "Precision (%)"), ("recall", "Recall (%)")]):
        for method, rows in curves.items():
            xs = [r.stage for r in rows]
            ax.plot(xs, [getattr(r, key) for r in rows], marker="o", label=method)
        ax.set_xlabel("pipeline stage")
        ax.set_title(label)
        ax.set_xticks(range(max(len(r) for r in curves.values())))
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path, Path(path).with_suffix(".png"))


def plot_scatter(mae_a: Sequence[float], mae_b: Sequence[float], label_a: str, label_b: str, path) -> float:
    rho = rank_correlation(mae_a, mae_b) if len(mae_a) > 1 else float("nan")
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(np.asarray(mae_b) * 100, np.asarray(mae_a) * 100, s=10, gid="per_image_mae")
    hi = max(max(mae_a, default=0), max(mae_b, default=0)) * 100 * 1.05 + 1e-3
    ax.plot([0, hi], [0, hi], "k--", lw=0.8)
    ax.set_xlabel(f"{label_b} MAE (%)")
    ax.set_ylabel(f"{label_a} MAE (%)")
    ax.set_title(f"per-image MAE, Spearman {rho:.2f}")
    fig.tight_layout()
    _save(fig, path)
    return rho


def save_failure_panel(image: np.ndarray, gt: np.ndarray, pred: np.ndarray, title: str, path) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(6, 2.2))
    for ax, arr, name in zip(axes, (image, gt, pred), ("image", "ground truth", "prediction")):
        ax.imshow(arr, cmap=None if arr.ndim == 3 else "gray", vmin=0, vmax=1)
        ax.set_title(name)
        ax.axis("off")
    fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def _save(fig, *paths) -> None:
    for path in map(Path, paths):
        fig.savefig(path, metadata=SVG_META if path.suffix == ".svg" else PNG_META)
    plt.close(fig)


def emit_report(report: MetricsReport, curves: Mapping[str, Sequence[MetricsRow]], out_dir,
                per_image: Mapping | None = None, failure_k: int = 8) -> dict[str, Path]:
    """Write ``report.md``, ``metrics.json``, ``curves.{svg,png}``, ``scatter.svg`` and ``failures/``.

    ``per_image`` may hold ``"pipeline"`` and ``"oracle_gt_training"``
    prediction dicts plus ``"images"`` and ``"gts"`` keyed by sample id.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"{out} is not writable")
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    written: dict[str, Path] = {}
    lines = ["# Saliency pipeline report", "", "## Models", ""]
    lines += _table(report.rows) if report.rows else ["(no model rows)"]

    all_rows = MetricsReport(list(report.rows))
    if curves:
        lines += ["", "## Pseudo-label quality by stage", "",
                  "Stage 0 = handcrafted labels, 1 = first training stage, 2+ = self-supervision iterations.", ""]
        for method, rows in curves.items():
            lines += [f"### {method}", ""] + _table(rows) + [""]
            all_rows.rows.extend(rows)
        plot_curves(curves, out / "curves.svg")
        written["curves"] = out / "curves.svg"
    else:
        lines += ["", "_No label-quality curves supplied; curve plot skipped._"]
        log.info("no curves given; skipping curve plot")

    per_image = per_image or {}
    gts, images = per_image.get("gts"), per_image.get("images")
    pipe = per_image.get("pipeline")
    if pipe is not None and gts is not None:
        ids = sorted(pipe)
        mae_p = [float(np.mean(np.abs(pipe[i] - gts[i]))) for i in ids]
        oracle = per_image.get("oracle_gt_training")
        if oracle is not None:
            mae_o = [float(np.mean(np.abs(oracle[i] - gts[i]))) for i in ids]
            rho = plot_scatter(mae_p, mae_o, "pipeline", "trained on GT", out / "scatter.svg")
            written["scatter"] = out / "scatter.svg"
            lines += ["", "## Per-image MAE: pipeline vs GT-trained", "",
                      f"{len(ids)} test images, Spearman rank correlation {rho:.3f}."]
        if images is not None and failure_k > 0:
            fdir = out / "failures"
            fdir.mkdir(exist_ok=True)
            for old in fdir.glob("*.png"):
                old.unlink()
            worst = sorted(range(len(ids)), key=lambda j: (-mae_p[j], ids[j]))[:failure_k]
            lines += ["", "## Failure cases (highest MAE)", ""]
            for rank, j in enumerate(worst):
                sid = ids[j]
                p = fdir / f"{rank:02d}_{sid}.png"
                save_failure_panel(images[sid], gts[sid], pipe[sid], f"{sid}  MAE {100 * mae_p[j]:.1f}%", p)
                lines.append(f"- `{p.relative_to(out)}`: MAE {100 * mae_p[j]:.2f}%")
            written["failures"] = fdir
    lines += ["", "---", "", REFERENCE_FOOTER, ""]
    (out / "report.md").write_text("\n".join(lines))
    (out / "metrics.json").write_text(all_rows.to_json())
    written["report"] = out / "report.md"
    written["metrics"] = out / "metrics.json"
    return written
