"""Experiment configuration: one JSON document with dataset, model, unlearn,
eval, sweep and output sections."""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .datasets import MixtureConfig
from .encoder import TOY_DIMS, TrainConfig
from .unlearning import UnlearnConfig

REGIMES = ("standard", "zero_shot")
MODES = ("class", "random")


@dataclass(frozen=True)
class ModelSection:
    dims: tuple = TOY_DIMS
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        if len(self.dims) < 3 or min(self.dims) < 1:
            raise ValueError(f"bad layer dims {self.dims}")
        self.train.validate()


@dataclass(frozen=True)
class UnlearnSection:
    mode: str = "class"
    forget_classes: tuple = (0,)
    fraction: float = 0.1
    regime: str = "standard"
    finetune_epochs: int = 10
    config: UnlearnConfig = field(default_factory=UnlearnConfig)

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.mode == "class" and not self.forget_classes:
            raise ValueError("class mode needs forget_classes")
        if self.mode == "random" and not 0 < self.fraction < 1:
            raise ValueError("random mode needs 0 < fraction < 1")
        if self.finetune_epochs < 0:
            raise ValueError("finetune_epochs must be non-negative")
        self.config.validate()


@dataclass(frozen=True)
class EvalSection:
    mia_thresholds: int = 1000
    seeds: tuple = (0, 1, 2, 3, 4)

    def validate(self):
        if not self.seeds:
            raise ValueError("eval.seeds must be non-empty")
        if self.mia_thresholds < 1:
            raise ValueError("mia_thresholds must be positive")


@dataclass(frozen=True)
class SweepGrid:
    betas: tuple = (1e-4, 1e-3, 1e-2, 1e-1)
    depths: tuple = (0, 1, 2)
    seeds: tuple = (0, 1, 2, 3, 4)

    def validate(self):
        if not (self.betas and self.depths and self.seeds):
            raise ValueError("sweep axes must be non-empty")
        if any(b < 0 for b in self.betas) or any(d not in (0, 1, 2) for d in self.depths):
            raise ValueError("betas must be >= 0 and depths in {0, 1, 2}")

    def cells(self):
        """``(cell_index, beta, depth)`` in a fixed order."""
        out = []
        for b in self.betas:
            for d in self.depths:
                out.append((len(out), b, d))
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: MixtureConfig = field(default_factory=MixtureConfig)
    model: ModelSection = field(default_factory=ModelSection)
    unlearn: UnlearnSection = field(default_factory=UnlearnSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepGrid = field(default_factory=SweepGrid)
    output: str = "runs/default"

    def validate(self):
        self.dataset.validate()
        self.model.validate()
        self.unlearn.validate()
        self.eval.validate()
        self.sweep.validate()
        if self.model.dims[0] != self.dataset.d or self.model.dims[-1] != self.dataset.C:
            raise ValueError("model dims must start at d and end at C")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {"dataset", "model", "unlearn", "eval", "sweep", "output"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        m = d.get("model", {})
        u = dict(d.get("unlearn", {}))
        ucfg = UnlearnConfig(**u.pop("config", {}))
        return cls(
            dataset=MixtureConfig(**d.get("dataset", {})),
            model=ModelSection(dims=tuple(m.get("dims", TOY_DIMS)),
                               train=TrainConfig(**m.get("train", {}))),
            unlearn=UnlearnSection(config=ucfg, **_tuples(u, "forget_classes")),
            eval=EvalSection(**_tuples(d.get("eval", {}), "seeds")),
            sweep=SweepGrid(**_tuples(d.get("sweep", {}), "betas", "depths", "seeds")),
            output=d.get("output", "runs/default"),
        ).validate()


def _tuples(d, *keys):
    d = dict(d)
    for k in keys:
        if k in d:
            d[k] = tuple(d[k])
    return d


def load_config(path=None):
    if path is None:
        return ExperimentConfig().validate()
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def dump_config(cfg):
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
