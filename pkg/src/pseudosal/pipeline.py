"""The three-stage curriculum: per-method refinement, self-supervision, fusion.

Artifacts under ``<out>/artifacts``::

    <method>/raw/{maps,labels}/<id>.png
    <method>/mva/iter<k>/{maps,labels}/<id>.png     k = 0 is the first training stage
    <method>/checkpoints/iter<k>.pt
    fusion/checkpoints/final.pt
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import BinaryMask, Dataset, Image, SaliencyMap
from .crf import CrfCache, CrfParams
from .dataio import load_mask
from .errors import InvalidArgument, MissingArtifact
from .handcrafted import MethodDescriptor, run_methods
from .model import (
    NetConfig,
    OptimConfig,
    SaliencyNet,
    forward,
    init_network,
    load_checkpoint,
    save_checkpoint,
    train_epochs,
)
from .mva import MvaState, save_state, snapshot_labels, stability_delta, update_mva

log = logging.getLogger(__name__)

Labels = Mapping[str, BinaryMask]


@dataclass(frozen=True)
class StagePlan:
    stage_a_epochs: int = 25
    self_sup_max_iters: int = 2
    stability_threshold: float = 0.01
    fusion_epochs: int = 200
    crf: CrfParams = field(default_factory=CrfParams)
    mva_alpha: float = 0.7
    crf_enabled: bool = True
    mva_init: str = "crf"              # crf | labels
    mva_reset: bool = True
    snapshot_threshold: float | None = 0.5   # None: 1.5x-mean rule
    fusion_lr_multiplier: float = 1.0
    net: NetConfig = field(default_factory=NetConfig)
    seed: int = 0

    def validate(self) -> None:
        if self.stage_a_epochs < 0 or self.fusion_epochs < 0:
            raise InvalidArgument("epoch counts must be >= 0")
        if self.self_sup_max_iters < 0:
            raise InvalidArgument("self_sup_max_iters must be >= 0")
        if self.mva_init not in ("crf", "labels"):
            raise InvalidArgument(f"unknown mva_init {self.mva_init!r}")


def lr_for_iteration(base_lr: float, iteration: int) -> float:
    """Learning rate doubles with every self-supervision iteration (0 = first stage)."""
    if iteration < 0:
        raise InvalidArgument("iteration must be >= 0")
    return base_lr * 2.0 ** iteration


def derive_seed(base: int, *tags) -> int:
    """Stable 31-bit seed from a base seed and string tags."""
    text = "/".join([str(base), *map(str, tags)])
    return zlib.crc32(text.encode()) & 0x7FFFFFFF


def method_dir(artifacts, method: str) -> Path:
    return Path(artifacts) / method


def mva_dir(artifacts, method: str, iteration: int) -> Path:
    return method_dir(artifacts, method) / "mva" / f"iter{iteration}"


def load_labels(directory, ids: Sequence[str] | None = None) -> dict[str, BinaryMask]:
    d = Path(directory)
    if not d.is_dir():
        raise MissingArtifact(f"missing artifact directory {d}")
    if ids is None:
        return {p.stem: load_mask(p) for p in sorted(d.glob("*.png"))}
    out = {}
    for i in ids:
        p = d / f"{i}.png"
        if not p.is_file():
            raise MissingArtifact(f"missing label file {p}")
        out[i] = load_mask(p)
    return out


@dataclass
class RefineResult:
    method: str
    snapshots: list[dict[str, BinaryMask]]
    states: list[MvaState]
    loss_histories: list[list[float]]
    deltas: list[float] = field(default_factory=list)

    @property
    def labels(self) -> dict[str, BinaryMask]:
        return self.snapshots[-1]

    @property
    def n_runs(self) -> int:
        return len(self.snapshots)


def _train_stage(method: str, iteration: int, labels: Labels, dataset: Dataset, plan: StagePlan,
                 optim: OptimConfig, crf_cache: CrfCache | None, artifacts) -> tuple[MvaState, list, SaliencyNet]:
    net = init_network(replace(plan.net, seed=derive_seed(plan.seed, method, iteration, "init")))
    state = MvaState(plan.mva_alpha)
    if plan.mva_init == "labels":
        for i in dataset.ids:
            state.seed(i, labels[i])

    def hook(sample_id: str, pred: SaliencyMap) -> None:
        out = crf_cache.refine(sample_id, dataset[sample_id].image, pred) if plan.crf_enabled else pred
        update_mva(state, sample_id, out)

    run_optim = replace(optim, lr_multiplier=optim.lr_multiplier * 2.0 ** iteration,
                        seed=derive_seed(plan.seed, method, iteration, "shuffle"))
    history: list[float] = []
    train_epochs(net, dataset, labels, run_optim, plan.stage_a_epochs, on_forward=hook, history=history)
    if artifacts is not None:
        save_checkpoint(method_dir(artifacts, method) / "checkpoints" / f"iter{iteration}.pt", net,
                        epoch=plan.stage_a_epochs, extra={"method": method, "iteration": iteration,
                                                          "lr": run_optim.lr, "shuffle_seed": run_optim.seed})
    return state, history, net


def refine_method(method: str, labels: Labels, dataset: Dataset, plan: StagePlan, optim: OptimConfig,
                  artifacts=None, crf_cache: CrfCache | None = None) -> RefineResult:
    """Refine one method's pseudo-labels in isolation.

    The first stage trains on the binarized handcrafted labels; each
    self-supervision iteration reinitializes the network and trains on the
    previous moving-average snapshot with the learning rate doubled. Stops
    early once the moving averages change by less than
    ``plan.stability_threshold`` between iterations.
    """
    plan.validate()
    ids = dataset.ids
    if not ids:
        raise InvalidArgument("dataset is empty")
    missing = [i for i in ids if i not in labels]
    if missing:
        raise InvalidArgument(f"method {method!r}: no labels for {len(missing)} samples, e.g. {missing[0]!r}")
    if plan.crf_enabled and crf_cache is None:
        crf_cache = CrfCache(plan.crf)
    result = RefineResult(method, [], [], [])
    current = {i: labels[i] for i in ids}
    for it in range(plan.self_sup_max_iters + 1):
        t0 = time.perf_counter()
        state, history, _ = _train_stage(method, it, current, dataset, plan, optim, crf_cache, artifacts)
        snap = snapshot_labels(state, plan.snapshot_threshold)
        if artifacts is not None:
            save_state(state, mva_dir(artifacts, method, it), snap)
        result.snapshots.append(snap)
        result.states.append(state)
        result.loss_histories.append(history)
        log.info("%s iter %d: final loss %.4f (%.1fs)", method, it, history[-1] if history else float("nan"),
                 time.perf_counter() - t0)
        if it > 0:
            delta = stability_delta(result.states[-2], state)
            result.deltas.append(delta)
            if delta < plan.stability_threshold:
                log.info("%s: moving averages stable (delta %.4f), stopping", method, delta)
                break
        current = snap
    return result


def fuse_and_train(refined_sets: Sequence[tuple[str, Labels]], dataset: Dataset, plan: StagePlan,
                   optim: OptimConfig, tag: str = "fusion", history: list | None = None) -> SaliencyNet:
    """Train a fresh network on the mean F-beta loss over all refined label sets."""
    if not refined_sets:
        raise InvalidArgument("need at least one refined label set")
    ids = dataset.ids
    for name, labels in refined_sets:
        if set(labels) != set(ids):
            raise InvalidArgument(f"label set {name!r} does not cover exactly the training ids")
    targets = {i: [labels[i] for _, labels in refined_sets] for i in ids}
    net = init_network(replace(plan.net, seed=derive_seed(plan.seed, tag, "init")))
    run_optim = replace(optim, lr_multiplier=optim.lr_multiplier * plan.fusion_lr_multiplier,
                        seed=derive_seed(plan.seed, tag, "shuffle"))
    train_epochs(net, dataset, targets, run_optim, plan.fusion_epochs, history=history)
    return net


def predict(net: SaliencyNet, image: Image, crf: CrfParams | None = None) -> SaliencyMap:
    """Network prediction; CRF post-processing only when ``crf`` is given."""
    out = forward(net, image)
    if crf is not None:
        from .crf import dense_crf_refine

        out = dense_crf_refine(image, out, crf)
    return out


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def artifact_hashes(artifacts) -> dict[str, str]:
    root = Path(artifacts)
    return {str(p.relative_to(root)): file_digest(p) for p in sorted(root.rglob("*")) if p.is_file()}


@dataclass
class PipelineState:
    raw_labels: dict[str, dict[str, BinaryMask]]
    refined: dict[str, RefineResult]
    final_net: SaliencyNet | None
    manifest: dict

    def refined_sets(self, iteration: int | None = None) -> list[tuple[str, dict[str, BinaryMask]]]:
        out = []
        for m, r in self.refined.items():
            snaps = r.snapshots
            out.append((m, snaps[-1] if iteration is None else snaps[min(iteration, len(snaps) - 1)]))
        return out


def run_full_pipeline(dataset: Dataset, methods: Sequence[MethodDescriptor], plan: StagePlan,
                      optim: OptimConfig, out_dir, config_echo: dict | None = None) -> PipelineState:
    """Detectors, per-method refinement, fusion; every intermediate persisted under ``out_dir/artifacts``."""
    train = dataset if dataset.split == "train" else dataset.subset("train")
    if len(train) == 0:
        raise InvalidArgument("training split is empty")
    out = Path(out_dir)
    artifacts = out / "artifacts"
    timings: dict[str, float] = {}
    marker = out / "FAILED"
    marker.unlink(missing_ok=True)
    try:
        t0 = time.perf_counter()
        hc = run_methods(train, methods, artifacts)
        timings["handcrafted"] = time.perf_counter() - t0
        cache = CrfCache(plan.crf)
        refined = {}
        for m in methods:
            t0 = time.perf_counter()
            labels = hc.labels[m.name]
            covered = Dataset([s for s in train if s.id in labels], split="train")
            refined[m.name] = refine_method(m.name, labels, covered, plan, optim, artifacts, cache)
            timings[f"refine/{m.name}"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        common = set(train.ids)
        for r in refined.values():
            common &= set(r.labels)
        fusion_ds = Dataset([s for s in train if s.id in common], split="train")
        sets = [(m, {i: r.labels[i] for i in fusion_ds.ids}) for m, r in refined.items()]
        net = fuse_and_train(sets, fusion_ds, plan, optim)
        save_checkpoint(artifacts / "fusion" / "checkpoints" / "final.pt", net, epoch=plan.fusion_epochs,
                        extra={"shuffle_seed": derive_seed(plan.seed, "fusion", "shuffle")})
        timings["fusion"] = time.perf_counter() - t0
    except Exception as exc:
        out.mkdir(parents=True, exist_ok=True)
        marker.write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    manifest = {
        "config": config_echo or {},
        "seeds": {"plan": plan.seed, "optim": optim.seed, "net": plan.net.seed},
        "methods": [m.name for m in methods],
        "iterations": {m: r.n_runs for m, r in refined.items()},
        "stability_deltas": {m: r.deltas for m, r in refined.items()},
        "failures": {m: hc.failures[m] for m in hc.failures},
        "hashes": artifact_hashes(artifacts),
        "timings": timings,
    }
    write_manifest(out, manifest)
    return PipelineState({m: dict(v) for m, v in hc.labels.items()}, refined, net, manifest)


def write_manifest(out_dir, manifest: dict, name: str = "run_manifest.json") -> None:
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def load_pipeline_state(out_dir, methods: Sequence[str], ids: Sequence[str], alpha: float = 0.7) -> PipelineState:
    """Rebuild label sets and the final network from persisted artifacts."""
    artifacts = Path(out_dir) / "artifacts"
    raw = {m: load_labels(method_dir(artifacts, m) / "raw" / "labels") for m in methods}
    refined = {}
    for m in methods:
        snaps = []
        k = 0
        while (mva_dir(artifacts, m, k) / "labels").is_dir():
            snaps.append(load_labels(mva_dir(artifacts, m, k) / "labels", ids))
            k += 1
        if not snaps:
            raise MissingArtifact(f"missing refined labels under {method_dir(artifacts, m) / 'mva'}")
        refined[m] = RefineResult(m, snaps, [], [])
    ckpt = artifacts / "fusion" / "checkpoints" / "final.pt"
    net = load_checkpoint(ckpt)[0] if ckpt.is_file() else None
    manifest_path = Path(out_dir) / "run_manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.is_file() else {}
    return PipelineState(raw, refined, net, manifest)
