"""Run configuration: one YAML tree drives every pipeline command."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import UsageError
from .nn import TrainConfig

# Reference-scale values (production setting) vs desk-scale defaults:
# resolution 128 -> 32, triplane p 5 -> 3, n 12 -> 4, solver steps 50/25 kept,
# schedule T=1000 betas 1e-4..0.02 kept, alpha_tv 0.01 kept, conditioning
# dropout 50% (normals) / 20% (all) kept.


@dataclass
class DatasetSpec:
    families: list = field(
        default_factory=lambda: ["box", "cup", "cup-handle", "ell", "sphere"]
    )
    objects: int = 12
    views_per_object: int = 6
    holdout_views: int = 2
    resolution: int = 32
    fov_deg: float = 40.0
    scale_range: tuple = (0.2, 0.3)
    supervision_points: int = 20000
    uniform_mix: float = 0.5


@dataclass
class TriplaneSpec:
    p: int = 3
    n: int = 4
    alpha_tv: float = 0.01
    decoder_widths: list | None = None
    points_per_epoch: int = 5000
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            peak_lr=0.01, warmup_steps=50, total_steps=400, batch_size=1, seed=11
        )
    )


@dataclass
class StageSpec:
    hidden: int = 32
    solver_steps: int = 50
    cfg_weight: float = 0.0
    drop_normals_prob: float = 0.0
    drop_all_prob: float = 0.0
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            peak_lr=0.002, warmup_steps=100, total_steps=1500, batch_size=8, seed=21
        )
    )


@dataclass
class DiffusionSpec:
    T: int = 1000
    beta_start: float = 0.0001
    beta_end: float = 0.02
    stage1: StageSpec = field(
        default_factory=lambda: StageSpec(
            hidden=32, solver_steps=50, drop_normals_prob=0.5,
            train=TrainConfig(peak_lr=0.002, warmup_steps=100, total_steps=1500,
                              batch_size=8, seed=21),
        )
    )
    stage2: StageSpec = field(
        default_factory=lambda: StageSpec(
            hidden=48, solver_steps=25, drop_all_prob=0.2,
            train=TrainConfig(peak_lr=0.002, warmup_steps=100, total_steps=1200,
                              batch_size=16, seed=22),
        )
    )


@dataclass
class EvalSpec:
    n_points: int = 2048
    f_threshold: float = 0.02
    n_hypotheses: int = 8
    lod: int = 5
    ransac_threshold_frac: float = 0.02
    ransac_iterations: int = 256


@dataclass
class RunConfig:
    seed: int
    output_dir: Path
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    triplane: TriplaneSpec = field(default_factory=TriplaneSpec)
    diffusion: DiffusionSpec = field(default_factory=DiffusionSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)

    # directory layout helpers
    @property
    def dataset_dir(self):
        return self.output_dir / "dataset"

    @property
    def checkpoint_dir(self):
        return self.output_dir / "checkpoints"

    @property
    def estimate_dir(self):
        return self.output_dir / "estimates"

    @property
    def report_dir(self):
        return self.output_dir / "reports"


def _train_config(d, default: TrainConfig):
    if d is None:
        return default
    merged = {
        "peak_lr": default.peak_lr,
        "warmup_steps": default.warmup_steps,
        "total_steps": default.total_steps,
        "batch_size": default.batch_size,
        "seed": default.seed,
    }
    merged.update(d)
    return TrainConfig(**merged)


def _stage_spec(d, default: StageSpec):
    if d is None:
        return default
    train = _train_config(d.pop("train", None), default.train)
    merged = {
        "hidden": default.hidden,
        "solver_steps": default.solver_steps,
        "cfg_weight": default.cfg_weight,
        "drop_normals_prob": default.drop_normals_prob,
        "drop_all_prob": default.drop_all_prob,
    }
    merged.update(d)
    return StageSpec(train=train, **merged)


def load_config(path):
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    if "seed" not in raw:
        raise UsageError("config must set a seed")
    if "output_dir" not in raw:
        raise UsageError("config must set output_dir")
    ds = DatasetSpec(**(raw.get("dataset") or {}))
    tp_raw = dict(raw.get("triplane") or {})
    tp_train = _train_config(tp_raw.pop("train", None), TriplaneSpec().train)
    tp = TriplaneSpec(train=tp_train, **tp_raw)
    df_raw = dict(raw.get("diffusion") or {})
    default_diff = DiffusionSpec()
    s1 = _stage_spec(dict(df_raw.pop("stage1", None) or {}) or None, default_diff.stage1)
    s2 = _stage_spec(dict(df_raw.pop("stage2", None) or {}) or None, default_diff.stage2)
    df = DiffusionSpec(stage1=s1, stage2=s2, **df_raw)
    ev = EvalSpec(**(raw.get("eval") or {}))
    return RunConfig(
        seed=int(raw["seed"]),
        output_dir=Path(raw["output_dir"]),
        dataset=ds,
        triplane=tp,
        diffusion=df,
        eval=ev,
    )
