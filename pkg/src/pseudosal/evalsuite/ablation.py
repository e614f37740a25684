"""Ablation matrix over pipeline components, scored on the test split."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import Dataset
from ..errors import InvalidArgument
from ..handcrafted import METHOD_NAMES, MethodDescriptor
from ..model import OptimConfig, SaliencyNet, predict_batch
from ..pipeline import PipelineState, StagePlan, fuse_and_train, run_full_pipeline
from .metrics import MetricsReport, MetricsRow, evaluate, oracle_label_fusion

log = logging.getLogger(__name__)

FLAGS = ("direct_fusion", "no_self_supervision", "no_crf", "oracle_gt_training", "oracle_label_fusion")


@dataclass
class AblationPlan:
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.flags:
            raise InvalidArgument("an ablation plan needs at least one flag")
        for f in self.flags:
            if f in FLAGS:
                continue
            if f.startswith("single_method:") and (f.split(":", 1)[1] in METHOD_NAMES + ("all",)):
                continue
            raise InvalidArgument(f"unknown ablation flag {f!r}")

    def expanded(self, methods: Sequence[str]) -> list[str]:
        out = []
        for f in self.flags:
            if f == "single_method:all":
                out.extend(f"single_method:{m}" for m in methods)
            else:
                out.append(f)
        return list(dict.fromkeys(out))

    @property
    def needs_gt(self) -> bool:
        return any(f.startswith("oracle") for f in self.flags)


@dataclass
class AblationResult:
    report: MetricsReport
    predictions: dict[str, dict[str, np.ndarray]]


def predict_split(net: SaliencyNet, dataset: Dataset) -> dict[str, np.ndarray]:
    preds = predict_batch(net, [s.image for s in dataset])
    return dict(zip(dataset.ids, preds))


def run_ablations(plan: AblationPlan, train: Dataset, test: Dataset, state: PipelineState,
                  stage_plan: StagePlan, optim: OptimConfig, out_dir=None, beta_sq: float = 0.3,
                  methods: Sequence[MethodDescriptor] | None = None) -> AblationResult:
    """Train each flagged variant with shared seeds and score it next to the default pipeline."""
    if plan.needs_gt and not (train.has_gt() and test.has_gt()):
        raise InvalidArgument("oracle ablations need ground-truth masks for every train and test sample")
    if not test.has_gt():
        raise InvalidArgument("scoring ablations needs ground truth on the test split")
    gts = test.gts()
    report = MetricsReport()
    preds: dict[str, dict[str, np.ndarray]] = {}

    def score(name: str, net: SaliencyNet) -> None:
        preds[name] = predict_split(net, test)
        report.add(evaluate(preds[name], gts, beta_sq, name=name, dataset=test.split or "test"))
        log.info("ablation %s: F %.2f MAE %.2f", name, report.rows[-1].f_score, report.rows[-1].mae)

    if state.final_net is None:
        raise InvalidArgument("pipeline state has no final network")
    score("pipeline", state.final_net)
    method_names = list(state.refined)
    ids = [i for i in train.ids if all(i in state.raw_labels[m] for m in method_names)]
    fusion_ds = Dataset([train[i] for i in ids], split="train")

    def sub(labels):
        return {i: labels[i] for i in ids}

    for flag in plan.expanded(method_names):
        tag = f"ablation/{flag}"
        if flag == "direct_fusion":
            sets = [(m, sub(state.raw_labels[m])) for m in method_names]
            score(flag, fuse_and_train(sets, fusion_ds, stage_plan, optim, tag=tag))
        elif flag == "no_self_supervision":
            sets = [(m, sub(state.refined[m].snapshots[0])) for m in method_names]
            score(flag, fuse_and_train(sets, fusion_ds, stage_plan, optim, tag=tag))
        elif flag.startswith("single_method:"):
            m = flag.split(":", 1)[1]
            if m not in state.refined:
                raise InvalidArgument(f"method {m!r} was not part of the pipeline run")
            score(flag, fuse_and_train([(m, sub(state.refined[m].labels))], fusion_ds, stage_plan, optim, tag=tag))
        elif flag == "oracle_gt_training":
            score(flag, fuse_and_train([("gt", sub(train.gts()))], fusion_ds, stage_plan, optim, tag=tag))
        elif flag == "oracle_label_fusion":
            fused = oracle_label_fusion([sub(state.refined[m].labels) for m in method_names], train.gts())
            score(flag, fuse_and_train([("oracle", fused)], fusion_ds, stage_plan, optim, tag=tag))
        elif flag == "no_crf":
            if methods is None:
                methods = [MethodDescriptor(m) for m in method_names]
            target = Path(out_dir) / "ablations" / "no_crf" if out_dir is not None else None
            if target is None:
                raise InvalidArgument("the no_crf ablation needs an output directory")
            sub_state = run_full_pipeline(train, methods, replace(stage_plan, crf_enabled=False), optim, target)
            score(flag, sub_state.final_net)
    return AblationResult(report, preds)
