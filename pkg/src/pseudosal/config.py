"""TOML run configuration with ``desk`` and ``full`` profiles.

Sections: ``[data] [methods] [crf] [mva] [optim] [plan] [eval]`` plus the
top-level keys ``profile``, ``out_dir`` and ``seed``. Unknown keys are rejected.
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .crf import CrfParams
from .dataio import SyntheticConfig
from .errors import ConfigError
from .handcrafted import METHOD_NAMES, MethodDescriptor
from .model import NetConfig, OptimConfig
from .pipeline import StagePlan

PROFILES = ("desk", "full")


@dataclass
class DataSection:
    root: str | None = None
    synthetic: bool = True
    n_train: int = 200
    n_val: int = 0
    n_test: int = 50
    image_size: int = 64
    shapes_min: int = 1
    shapes_max: int = 3
    distractor_probability: float = 0.3
    texture_noise_scale: float = 0.12


@dataclass
class MethodsSection:
    names: list = field(default_factory=lambda: list(METHOD_NAMES))
    gamma_mode: str = "per_image"


@dataclass
class CrfSection:
    iterations: int = 5
    w_bilateral: float = 4.0
    w_gaussian: float = 3.0
    theta_alpha: float | None = None
    theta_beta: float = 0.1
    theta_gamma: float = 3.0
    unary_clamp: float = 1e-6
    method: str = "auto"
    exact_max_pixels: int = 1024


@dataclass
class MvaSection:
    alpha: float = 0.7
    init: str = "crf"
    reset_each_iteration: bool = True
    snapshot_threshold: float | None = 0.5


@dataclass
class OptimSection:
    base_lr: float = 1e-3
    first_moment_decay: float = 0.9
    second_moment_decay: float = 0.999
    batch_size: int = 20


@dataclass
class PlanSection:
    stage_a_epochs: int = 25
    self_sup_max_iters: int = 2
    stability_threshold: float = 0.01
    fusion_epochs: int = 50
    crf_enabled: bool = True
    fusion_lr_multiplier: float = 1.0
    base_width: int = 8
    encoder_depth: int = 3
    dilated_blocks: int = 2


@dataclass
class EvalSection:
    beta_sq: float = 0.3
    pooling: str = "per_image"
    failure_k: int = 8
    ablations: list = field(default_factory=lambda: [
        "direct_fusion", "no_self_supervision", "single_method:all", "oracle_gt_training",
    ])


FULL_OVERRIDES = {
    "data": {"image_size": 432, "synthetic": False},
    "optim": {"base_lr": 1e-6},
    "plan": {"fusion_epochs": 200, "base_width": 16},
}

SECTIONS = {
    "data": DataSection, "methods": MethodsSection, "crf": CrfSection, "mva": MvaSection,
    "optim": OptimSection, "plan": PlanSection, "eval": EvalSection,
}


@dataclass
class RunConfig:
    profile: str = "desk"
    out_dir: str = "runs/desk"
    seed: int = 7
    data: DataSection = field(default_factory=DataSection)
    methods: MethodsSection = field(default_factory=MethodsSection)
    crf: CrfSection = field(default_factory=CrfSection)
    mva: MvaSection = field(default_factory=MvaSection)
    optim: OptimSection = field(default_factory=OptimSection)
    plan: PlanSection = field(default_factory=PlanSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # ---------------------------------------------------------- derived objects

    def crf_params(self) -> CrfParams:
        return CrfParams(**asdict(self.crf))

    def net_config(self) -> NetConfig:
        p = self.plan
        return NetConfig(base_width=p.base_width, encoder_depth=p.encoder_depth, dilated_blocks=p.dilated_blocks,
                         seed=self.seed, input_size=self.data.image_size)

    def stage_plan(self) -> StagePlan:
        p, m = self.plan, self.mva
        return StagePlan(
            stage_a_epochs=p.stage_a_epochs, self_sup_max_iters=p.self_sup_max_iters,
            stability_threshold=p.stability_threshold, fusion_epochs=p.fusion_epochs, crf=self.crf_params(),
            mva_alpha=m.alpha, crf_enabled=p.crf_enabled, mva_init=m.init, mva_reset=m.reset_each_iteration,
            snapshot_threshold=m.snapshot_threshold, fusion_lr_multiplier=p.fusion_lr_multiplier,
            net=self.net_config(), seed=self.seed,
        )

    def optim_config(self) -> OptimConfig:
        o = self.optim
        return OptimConfig(base_lr=o.base_lr, first_moment_decay=o.first_moment_decay,
                           second_moment_decay=o.second_moment_decay, batch_size=o.batch_size, seed=self.seed,
                           loss_beta_sq=self.eval.beta_sq)

    def method_descriptors(self) -> list[MethodDescriptor]:
        return [MethodDescriptor(n) for n in self.methods.names]

    def synthetic_config(self) -> SyntheticConfig:
        d = self.data
        return SyntheticConfig(n_images=d.n_train, image_size=d.image_size, shapes_per_image=(d.shapes_min, d.shapes_max),
                               distractor_probability=d.distractor_probability,
                               texture_noise_scale=d.texture_noise_scale, seed=self.seed,
                               n_val=d.n_val, n_test=d.n_test)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; expected one of {PROFILES}")
        if self.profile == "full" and not self.data.root:
            raise ConfigError("the full profile needs [data] root pointing at an existing dataset")
        for n in self.methods.names:
            if n not in METHOD_NAMES:
                raise ConfigError(f"unknown method {n!r}")
        try:
            self.crf_params()
            self.stage_plan().validate()
            self.optim_config().validate()
            self.net_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _apply(section_obj, values: dict, section: str):
    known = {f.name for f in fields(section_obj)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    return replace(section_obj, **values)


def config_from_dict(doc: dict, profile: str | None = None) -> RunConfig:
    doc = dict(doc)
    top_known = {"profile", "out_dir", "seed", *SECTIONS}
    unknown = set(doc) - top_known
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    prof = profile or doc.get("profile", "desk")
    cfg = RunConfig(profile=prof)
    if prof == "full":
        for sec, vals in FULL_OVERRIDES.items():
            setattr(cfg, sec, _apply(getattr(cfg, sec), vals, sec))
        cfg.out_dir = "runs/full"
    for key in ("out_dir", "seed"):
        if key in doc:
            setattr(cfg, key, doc[key])
    for sec in SECTIONS:
        if sec in doc:
            if not isinstance(doc[sec], dict):
                raise ConfigError(f"[{sec}] must be a table")
            setattr(cfg, sec, _apply(getattr(cfg, sec), doc[sec], sec))
    cfg.validate()
    return cfg


def load_config(path, profile: str | None = None) -> RunConfig:
    """Parse a TOML config; syntax errors become ``ConfigError`` with the line number."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: malformed TOML: {exc}") from exc
    return config_from_dict(doc, profile)


def dump_toml(cfg: RunConfig) -> str:
    """Serialize a config (None-valued keys are omitted, as TOML has no null)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    d = cfg.to_dict()
    lines = [f"{k} = {fmt(d[k])}" for k in ("profile", "out_dir", "seed")]
    for sec in SECTIONS:
        lines.append(f"\n[{sec}]")
        lines.extend(f"{k} = {fmt(v)}" for k, v in d[sec].items() if v is not None)
    return "\n".join(lines) + "\n"
