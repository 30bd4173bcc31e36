"""Run configuration documents for ``groupclip train``."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .clipping import CLIP_FUNCTIONS, ClipConfig, GroupingPlan, PlanError, parse_plan_spec
from .engine import ArchitectureSpec, load_arch
from .schedule import OPTIMIZERS
from .tasks import SyntheticTask, load_csv_dataset


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


_KEYS = {"arch", "task", "data_csv", "plans", "epochs", "steps", "batch_size",
         "virtual_batch_size", "lr", "optimizer", "weight_decay", "sigma", "target_eps",
         "delta", "clip", "gamma", "seeds", "output_dir", "grad_norm", "plan"}


@dataclass
class RunConfig:
    plans: list = field(default_factory=lambda: ["all-layer"])
    arch: str | None = None
    task: dict | None = None
    data_csv: str | None = None
    epochs: int = 1
    steps: int | None = None
    batch_size: int = 32
    virtual_batch_size: int | None = None
    lr: float = 0.1
    optimizer: str = "sgd"
    weight_decay: float = 0.0
    sigma: float | None = None
    target_eps: float | None = None
    delta: float = 1e-5
    clip: str = "auto"
    gamma: float = 0.01
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str | None = None
    grad_norm: str = "batch"
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def __post_init__(self):
        if (self.sigma is None) == (self.target_eps is None):
            raise ConfigError("privacy: set exactly one of 'sigma' and 'target_eps'")
        if self.sigma is not None and self.sigma < 0:
            raise ConfigError("sigma: must be non-negative")
        if self.target_eps is not None and not self.target_eps > 0:
            raise ConfigError("target_eps: must be positive")
        if not 0 < self.delta < 1:
            raise ConfigError("delta: must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be positive")
        v = self.virtual_batch_size
        if v is not None and (v < 1 or self.batch_size % v):
            raise ConfigError(f"virtual_batch_size: {v} does not divide batch_size "
                              f"{self.batch_size}")
        if self.epochs < 1 or (self.steps is not None and self.steps < 1):
            raise ConfigError("epochs/steps: must be positive")
        if not self.lr > 0:
            raise ConfigError("lr: must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer: expected one of {sorted(OPTIMIZERS)}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay: must be non-negative")
        if self.clip not in CLIP_FUNCTIONS:
            raise ConfigError(f"clip: expected one of {list(CLIP_FUNCTIONS)}")
        if self.clip == "none" and (self.target_eps is not None or self.sigma):
            raise ConfigError("clip: 'none' is only valid with sigma 0")
        if not self.gamma > 0:
            raise ConfigError("gamma: must be positive")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: need a non-empty list of distinct integers")
        if not self.plans:
            raise ConfigError("plans: need at least one plan")
        labels = [plan_label(p, i) for i, p in enumerate(self.plans)]
        if len(set(labels)) != len(labels):
            raise ConfigError("plans: duplicate plan entries")
        if self.grad_norm not in ("batch", "full"):
            raise ConfigError("grad_norm: expected 'batch' or 'full'")
        if self.task is not None and self.data_csv is not None:
            raise ConfigError("data: set at most one of 'task' and 'data_csv'")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | str = ".") -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config: expected a JSON object")
        unknown = sorted(set(doc) - _KEYS)
        if unknown:
            raise ConfigError(f"config: unknown keys {unknown}")
        doc = dict(doc)
        if "plan" in doc:
            if "plans" in doc:
                raise ConfigError("plans: set at most one of 'plan' and 'plans'")
            doc["plans"] = [doc.pop("plan")]
        try:
            return cls(**doc, base_dir=Path(base_dir))
        except TypeError as exc:
            raise ConfigError(f"config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config: no such file {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {path} is not valid JSON ({exc})") from exc
        return cls.from_dict(doc, path.parent)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("base_dir")
        doc.pop("output_dir")
        return doc

    @property
    def clip_config(self) -> ClipConfig:
        return ClipConfig(self.clip, self.gamma)

    def _resolve(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.base_dir / p

    def dataset(self):
        if self.data_csv is not None:
            try:
                return load_csv_dataset(self._resolve(self.data_csv))
            except (OSError, ValueError) as exc:
                raise ConfigError(f"data_csv: {exc}") from exc
        return self.synthetic_task().generate()

    def synthetic_task(self) -> SyntheticTask:
        try:
            return SyntheticTask.from_dict(self.task or {})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"task: {exc}") from exc

    def architecture(self, dataset) -> ArchitectureSpec:
        if self.arch is not None:
            try:
                return load_arch(self._resolve(self.arch))
            except (OSError, ValueError, KeyError) as exc:
                raise ConfigError(f"arch: {exc}") from exc
        if self.data_csv is not None:
            X, Y = dataset
            classes = max(int(np.max(Y)) + 1, 2)
            return ArchitectureSpec.from_dims([(X.shape[-1], classes)],
                                              loss="softmax-cross-entropy")
        return self.synthetic_task().arch()

    def grouping_plans(self, arch: ArchitectureSpec) -> list[tuple[str, GroupingPlan]]:
        out = []
        for i, spec in enumerate(self.plans):
            try:
                plan = parse_plan_spec(spec, arch.num_layers)
                plan.check(arch)
            except (PlanError, ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"plans[{i}]: {exc}") from exc
            out.append((plan_label(spec, i), plan))
        return out


def plan_label(spec, index: int) -> str:
    """File-name-safe label for a plan entry."""
    if isinstance(spec, str):
        return spec.replace(":", "-").replace(",", "_")
    return f"plan{index}"
