"""Command-line entry points, one per pipeline stage plus ``run-all``.

Layout under the output directory::

    data/                      synthetic dataset (generate)
    artifacts/                 raw labels, moving-average snapshots, checkpoints
    eval/                      evaluation rows, ablation rows, saved predictions
    report.md metrics.json curves.svg scatter.svg failures/
    run_manifest.json          config echo plus one entry per executed stage
    logs/events.jsonl          structured log, one JSON object per event

Exit codes: 0 ok, 1 runtime failure, 2 configuration error, 3 missing upstream artifact.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import time
import traceback
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, config_from_dict, load_config
from .core import Dataset
from .crf import CrfCache
from .dataio import generate_synthetic, load_dataset, load_map, save_map
from .errors import ConfigError, MissingArtifact
from .evalsuite import AblationPlan, MetricsReport, MetricsRow, emit_report, evaluate, label_quality_curve
from .evalsuite.ablation import predict_split, run_ablations
from .handcrafted import run_methods
from .model import save_checkpoint
from .pipeline import (
    artifact_hashes,
    derive_seed,
    fuse_and_train,
    load_labels,
    load_pipeline_state,
    method_dir,
    refine_method,
    write_manifest,
)

log = logging.getLogger("pseudosal")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3
ENV_OUT = "USPS_ARTIFACTS"


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        doc = {"ts": round(record.created, 3), "level": record.levelname.lower(), "logger": record.name,
               "event": record.getMessage()}
        doc.update(getattr(record, "fields", {}))
        return json.dumps(doc, sort_keys=True, default=str)


class HumanFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        fields = getattr(record, "fields", {})
        return line + "".join(f" {k}={v}" for k, v in fields.items())


def _setup_logging(out: Path | None, level: str) -> None:
    root = logging.getLogger()
    for h in list(root.handlers):
        if getattr(h, "_pseudosal", False):
            root.removeHandler(h)
            h.close()
    root.setLevel(level.upper())
    err = logging.StreamHandler(sys.stderr)
    err.setFormatter(HumanFormatter("%(asctime)s %(levelname)s %(message)s", "%H:%M:%S"))
    err._pseudosal = True
    root.addHandler(err)
    if out is not None:
        (out / "logs").mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(out / "logs" / "events.jsonl")
        fh.setFormatter(JsonFormatter())
        fh._pseudosal = True
        root.addHandler(fh)


def _event(msg: str, **fields) -> None:
    log.info(msg, extra={"fields": fields})


# ------------------------------------------------------------------ helpers

class Context:
    """Resolved config and output paths shared by every command."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.artifacts = out / "artifacts"
        self.eval_dir = out / "eval"
        self._data: Dataset | None = None

    @property
    def methods(self) -> list[str]:
        return list(self.cfg.methods.names)

    def dataset(self) -> Dataset:
        if self._data is None:
            d = self.cfg.data
            if d.synthetic:
                root = self.out / "data"
                if not (root / "manifest.json").is_file():
                    raise MissingArtifact(f"missing upstream artifact {root / 'manifest.json'} (run `generate`)")
                self._data = load_dataset(root)
            else:
                self._data = load_dataset(d.root, image_size=d.image_size)
        return self._data

    def split(self, name: str) -> Dataset:
        return self.dataset().subset(name)

    def record(self, stage: str, seconds: float, outputs: dict | None = None) -> None:
        path = self.out / "run_manifest.json"
        doc = json.loads(path.read_text()) if path.is_file() else {}
        doc["config"] = self.cfg.to_dict()
        doc["seed"] = self.cfg.seed
        doc.setdefault("stages", {})[stage] = {"seconds": round(seconds, 3), "outputs": outputs or {}}
        doc["total_seconds"] = round(sum(s["seconds"] for s in doc["stages"].values()), 3)
        write_manifest(self.out, doc)


def _resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config, args.profile)
    else:
        cfg = config_from_dict({}, args.profile)
    out = args.out or os.environ.get(ENV_OUT) or cfg.out_dir
    return replace(cfg, out_dir=str(out))


def _hashes(root: Path) -> dict[str, str]:
    return artifact_hashes(root) if root.is_dir() else {}


def _raw_labels(ctx: Context, method: str):
    d = method_dir(ctx.artifacts, method) / "raw"
    if not (d / "labels").is_dir():
        raise MissingArtifact(f"missing upstream artifact artifacts/{method}/raw/ (run `handcrafted` first)")
    return load_labels(d / "labels")


def _save_predictions(preds: dict, directory: Path) -> None:
    if directory.exists():
        shutil.rmtree(directory)
    for i, v in preds.items():
        save_map(v, directory / f"{i}.png")


def _load_predictions(directory: Path) -> dict:
    return {p.stem: load_map(p).values for p in sorted(directory.glob("*.png"))}


def _require_gt(ds: Dataset, what: str) -> None:
    missing = [s.id for s in ds if s.gt is None]
    if missing or len(ds) == 0:
        raise MissingArtifact(f"missing ground-truth masks for {what} "
                              f"({len(missing)} samples without GT, e.g. {missing[:1] or 'empty split'})")


# ----------------------------------------------------------------- commands

def cmd_generate(ctx: Context, args) -> None:
    if not ctx.cfg.data.synthetic:
        _event("dataset is external; nothing to generate", root=ctx.cfg.data.root)
        return
    out = ctx.out / "data"
    if out.exists():
        shutil.rmtree(out)
    ds = generate_synthetic(ctx.cfg.synthetic_config(), out)
    _event("synthetic dataset written", n=len(ds), path=str(out))


def cmd_handcrafted(ctx: Context, args) -> None:
    train = ctx.split("train")
    methods = [m for m in ctx.cfg.method_descriptors() if args.method in (None, "all", m.name)]
    for m in methods:
        raw = method_dir(ctx.artifacts, m.name) / "raw"
        if raw.exists():
            shutil.rmtree(raw)
    res = run_methods(train, methods, ctx.artifacts, gamma_mode=ctx.cfg.methods.gamma_mode)
    for m in methods:
        _event("handcrafted labels written", method=m.name, n=len(res.labels[m.name]),
               failures=len(res.failures[m.name]))


def cmd_refine(ctx: Context, args) -> None:
    plan = ctx.cfg.stage_plan()
    if args.iters is not None:
        plan = replace(plan, self_sup_max_iters=args.iters)
    if args.no_crf:
        plan = replace(plan, crf_enabled=False)
    names = ctx.methods if args.method in (None, "all") else [args.method]
    unknown = [n for n in names if n not in ctx.methods]
    if unknown:
        raise ConfigError(f"method {unknown[0]!r} is not listed in [methods] names")
    labels = {m: _raw_labels(ctx, m) for m in names}
    train = ctx.split("train")
    cache = CrfCache(plan.crf) if plan.crf_enabled else None
    for m in names:
        for sub in ("mva", "checkpoints"):
            d = method_dir(ctx.artifacts, m) / sub
            if d.exists():
                shutil.rmtree(d)
        covered = Dataset([s for s in train if s.id in labels[m]], split="train")
        t0 = time.perf_counter()
        res = refine_method(m, labels[m], covered, plan, ctx.cfg.optim_config(), ctx.artifacts, cache)
        summary = {"iterations": res.n_runs, "stability_deltas": res.deltas,
                   "final_losses": [h[-1] if h else None for h in res.loss_histories]}
        (method_dir(ctx.artifacts, m) / "refine.json").write_text(json.dumps(summary, indent=2) + "\n")
        _event("method refined", method=m, seconds=round(time.perf_counter() - t0, 1), **summary)


def _state(ctx: Context):
    for m in ctx.methods:
        if not (method_dir(ctx.artifacts, m) / "mva" / "iter0" / "labels").is_dir():
            raise MissingArtifact(f"missing upstream artifact artifacts/{m}/mva/iter0/ (run `refine` first)")
    return load_pipeline_state(ctx.out, ctx.methods, None, ctx.cfg.mva.alpha)


def cmd_fuse(ctx: Context, args) -> None:
    state = _state(ctx)
    train = ctx.split("train")
    common = set(train.ids)
    for r in state.refined.values():
        common &= set(r.labels)
    fusion_ds = Dataset([s for s in train if s.id in common], split="train")
    sets = [(m, {i: r.labels[i] for i in fusion_ds.ids}) for m, r in state.refined.items()]
    plan = ctx.cfg.stage_plan()
    history: list[float] = []
    net = fuse_and_train(sets, fusion_ds, plan, ctx.cfg.optim_config(), history=history)
    save_checkpoint(ctx.artifacts / "fusion" / "checkpoints" / "final.pt", net, epoch=plan.fusion_epochs,
                    extra={"methods": ctx.methods, "shuffle_seed": derive_seed(plan.seed, "fusion", "shuffle")})
    _event("fusion network trained", n=len(fusion_ds), final_loss=history[-1] if history else None)


def _final_state(ctx: Context):
    state = _state(ctx)
    if state.final_net is None:
        raise MissingArtifact("missing upstream artifact artifacts/fusion/checkpoints/final.pt (run `fuse` first)")
    return state


def cmd_evaluate(ctx: Context, args) -> None:
    state = _final_state(ctx)
    test, train = ctx.split("test"), ctx.split("train")
    _require_gt(test, "the test split")
    beta_sq, pooling = ctx.cfg.eval.beta_sq, ctx.cfg.eval.pooling
    preds = predict_split(state.final_net, test)
    row = evaluate(preds, test.gts(), beta_sq, name="pipeline", dataset="test", pooling=pooling)
    curves = {}
    if train.has_gt():
        gts = train.gts()
        for m, r in state.refined.items():
            stages = [(f"{m}/raw", state.raw_labels[m])]
            stages += [(f"{m}/iter{k}", snap) for k, snap in enumerate(r.snapshots)]
            curves[m] = [x.as_dict() for x in label_quality_curve(stages, gts, beta_sq)]
    ctx.eval_dir.mkdir(parents=True, exist_ok=True)
    doc = {"rows": [row.as_dict()], "curves": curves}
    (ctx.eval_dir / "evaluation.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _save_predictions(preds, ctx.eval_dir / "predictions" / "pipeline")
    _event("evaluated", f_score=round(row.f_score, 4), mae=round(row.mae, 4))


def cmd_ablate(ctx: Context, args) -> None:
    flags = list(args.flags or ctx.cfg.eval.ablations)
    if args.oracle:
        flags += [f for f in ("oracle_gt_training", "oracle_label_fusion") if f not in flags]
    plan = AblationPlan(flags)
    train, test = ctx.split("train"), ctx.split("test")
    if plan.needs_gt:
        _require_gt(train, "oracle ablations on the train split")
    _require_gt(test, "the test split")
    state = _final_state(ctx)
    res = run_ablations(plan, train, test, state, ctx.cfg.stage_plan(), ctx.cfg.optim_config(), ctx.out,
                        ctx.cfg.eval.beta_sq, ctx.cfg.method_descriptors())
    ctx.eval_dir.mkdir(parents=True, exist_ok=True)
    (ctx.eval_dir / "ablations.json").write_text(res.report.to_json())
    for name, preds in res.predictions.items():
        if name != "pipeline":
            _save_predictions(preds, ctx.eval_dir / "predictions" / name.replace(":", "_"))
    for r in res.report.rows:
        _event("ablation scored", name=r.name, f_score=round(r.f_score, 4), mae=round(r.mae, 4))


def cmd_report(ctx: Context, args) -> None:
    ev = ctx.eval_dir / "evaluation.json"
    if not ev.is_file():
        raise MissingArtifact(f"missing upstream artifact {ev.relative_to(ctx.out)} (run `evaluate` first)")
    doc = json.loads(ev.read_text())
    report = MetricsReport([MetricsRow(**r) for r in doc["rows"]])
    abl = ctx.eval_dir / "ablations.json"
    if abl.is_file():
        report.rows += [r for r in MetricsReport.from_json(abl.read_text()).rows if r.name != "pipeline"]
    curves = {m: [MetricsRow(**r) for r in rows] for m, rows in doc.get("curves", {}).items()}
    test = ctx.split("test")
    per_image = {"images": {s.id: s.image.pixels for s in test}, "gts": {s.id: s.gt.values for s in test}}
    pdir = ctx.eval_dir / "predictions"
    for name in ("pipeline", "oracle_gt_training"):
        if (pdir / name).is_dir():
            per_image[name] = _load_predictions(pdir / name)
    written = emit_report(report, curves, ctx.out, per_image, ctx.cfg.eval.failure_k)
    _event("report written", files=sorted(str(p.relative_to(ctx.out)) for p in written.values()))


def cmd_run_all(ctx: Context, args) -> None:
    stages = [("generate", cmd_generate), ("handcrafted", cmd_handcrafted), ("refine", cmd_refine),
              ("fuse", cmd_fuse), ("evaluate", cmd_evaluate)]
    if ctx.cfg.eval.ablations:
        stages.append(("ablate", cmd_ablate))
    stages.append(("report", cmd_report))
    for name, fn in stages:
        _run_stage(ctx, name, fn, args)


COMMANDS = {
    "generate": (cmd_generate, "render the synthetic dataset"),
    "handcrafted": (cmd_handcrafted, "run the handcrafted detectors and binarize their maps"),
    "refine": (cmd_refine, "per-method refinement with moving averages and self-supervision"),
    "fuse": (cmd_fuse, "train the fusion network on all refined label sets"),
    "evaluate": (cmd_evaluate, "score the fusion network and the label-quality curves"),
    "ablate": (cmd_ablate, "train and score ablation variants"),
    "report": (cmd_report, "write report.md, metrics.json and figures"),
    "run-all": (cmd_run_all, "every stage in order"),
}

STAGE_OUTPUTS = {
    "generate": "data", "handcrafted": "artifacts", "refine": "artifacts", "fuse": "artifacts/fusion",
    "evaluate": "eval", "ablate": "eval",
}


def _run_stage(ctx: Context, name: str, fn, args) -> None:
    _event("stage started", stage=name)
    t0 = time.perf_counter()
    try:
        fn(ctx, args)
    except Exception as exc:
        exc.stage = getattr(exc, "stage", name)
        raise
    seconds = time.perf_counter() - t0
    if name != "run-all":
        outputs = _hashes(ctx.out / STAGE_OUTPUTS[name]) if name in STAGE_OUTPUTS else {}
        if name == "report":
            outputs = {"metrics.json": _hashes(ctx.out).get("metrics.json", "")}
        ctx.record(name, seconds, {"n_files": len(outputs), "digest": _digest(outputs)})
    _event("stage finished", stage=name, seconds=round(seconds, 2))


def _digest(hashes: dict) -> str:
    import hashlib

    return hashlib.sha256(json.dumps(hashes, sort_keys=True).encode()).hexdigest()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pseudosal", description=__doc__.split("\n")[0])
    p.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML run configuration (defaults apply when omitted)")
        sp.add_argument("--out", help=f"output directory (overrides ${ENV_OUT} and the config out_dir)")
        sp.add_argument("--profile", choices=["desk", "full"], help="override the config profile")
        if name in ("handcrafted", "refine"):
            sp.add_argument("--method", default="all", help="method name or 'all'")
        if name == "refine":
            sp.add_argument("--iters", type=int, help="maximum self-supervision iterations")
            sp.add_argument("--no-crf", action="store_true", help="feed raw predictions into the moving averages")
        if name == "ablate":
            sp.add_argument("--flags", nargs="+", help="ablation flags (default: [eval] ablations)")
            sp.add_argument("--oracle", action="store_true", help="add the two oracle rows")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(None, args.log_level)
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _setup_logging(out, args.log_level)
    ctx = Context(cfg, out)
    fn = COMMANDS[args.command][0]
    if args.command == "run-all":
        for attr, default in (("method", "all"), ("iters", None), ("no_crf", False), ("flags", None),
                              ("oracle", False)):
            setattr(args, attr, default)
    try:
        _run_stage(ctx, args.command, fn, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"[{getattr(exc, 'stage', args.command)}] {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:
        stage = getattr(exc, "stage", args.command)
        bundle = out / "diagnostics" / f"{stage}.json"
        bundle.parent.mkdir(parents=True, exist_ok=True)
        bundle.write_text(json.dumps({
            "stage": stage, "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc(),
            "diagnostics": getattr(exc, "diagnostics", None), "config": cfg.to_dict(),
        }, indent=2, default=str) + "\n")
        print(f"[{stage}] failed: {type(exc).__name__}: {exc}\ndiagnostics: {bundle}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
