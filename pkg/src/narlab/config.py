"""Run configuration: one YAML file with sections binding the task, model,
training, data, distillation and decoding knobs, plus the output directory.

Every command resolves its config (file -> dotted-key overrides -> env
output root) and writes the resolved snapshot next to its outputs; rerunning
from a snapshot reproduces every artifact byte for byte.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .lengths import RANK_MODES
from .tasks import TaskSpec
from .training import TrainConfig
from .transformer import AR, NAR, ModelConfig
from .vocab import N_RESERVED

#: environment variable holding the default output root for relative
#: output_dir values
OUTPUT_ROOT_ENV = "NARLAB_RUNS"


@dataclass(frozen=True)
class ModelSection:
    """ModelConfig minus vocab_size (derived from the task) and flavor
    (decided by the command)."""

    num_layers: int = 2
    num_heads: int = 4
    model_dim: int = 64
    hidden_dim: int = 256
    max_len: int = 64
    dropout_rate: float = 0.0
    weight_tying: bool = True
    per_layer_pos_tables: bool = False
    kernel_normalize: bool = True


@dataclass(frozen=True)
class DataConfig:
    n_pairs: int = 8000
    mono_ratio: float = 4.0
    seed: int = 1

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be positive")
        if self.mono_ratio < 0:
            raise ValueError("mono_ratio must be nonnegative")


@dataclass(frozen=True)
class DistillSection:
    mono_fraction: float = 1.0
    mix_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mono_fraction <= 1.0:
            raise ValueError(
                f"mono_fraction must be in [0, 1], got {self.mono_fraction}"
            )


@dataclass(frozen=True)
class DecodeSection:
    C: int | None = None  # None: use the offset stored in the student checkpoint
    B: int = 0
    rank_mode: str = "sum_logprob"
    dedup: bool = False

    def __post_init__(self):
        if self.B < 0:
            raise ValueError("half-width B must be nonnegative")
        if self.rank_mode not in RANK_MODES:
            raise ValueError(
                f"rank_mode must be one of {RANK_MODES}, got {self.rank_mode!r}"
            )


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec = field(default_factory=lambda: TaskSpec(kind="mapped_reversal"))
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    distill: DistillSection = field(default_factory=DistillSection)
    length: DecodeSection = field(default_factory=DecodeSection)
    output_dir: str = "run"

    def model_config(self, flavor: str = AR) -> ModelConfig:
        return ModelConfig(
            vocab_size=self.task.n_content + N_RESERVED,
            flavor=flavor,
            **asdict(self.model),
        )

    def to_dict(self) -> dict:
        return {
            "task": self.task.to_dict(),
            "model": asdict(self.model),
            "train": self.train.to_dict(),
            "data": asdict(self.data),
            "distill": asdict(self.distill),
            "length": asdict(self.length),
            "output_dir": self.output_dir,
        }

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        sections = {
            "task": TaskSpec,
            "model": ModelSection,
            "train": TrainConfig,
            "data": DataConfig,
            "distill": DistillSection,
            "length": DecodeSection,
        }
        unknown = set(d) - set(sections) - {"output_dir"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, cls in sections.items():
            if name not in d:
                continue
            body = d[name]
            if not isinstance(body, dict):
                raise ValueError(f"section {name!r} must be a mapping")
            allowed = {f.name for f in fields(cls)}
            bad = set(body) - allowed
            if bad:
                raise ValueError(f"unknown keys in section {name!r}: {sorted(bad)}")
            defaults = asdict(getattr(RunConfig(), name))
            kwargs[name] = cls(**{**defaults, **body})
        if "output_dir" in d:
            kwargs["output_dir"] = str(d["output_dir"])
        return RunConfig(**kwargs)


def apply_overrides(d: dict, overrides) -> dict:
    """Apply dotted-path overrides like ``train.peak_lr=0.01`` to a config
    dict; values are parsed as YAML scalars so types come out right."""
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        if not all(keys):
            raise ValueError(f"override {item!r} has an empty key component")
        node = d
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ValueError(f"override {item!r} descends into a scalar")
        node[keys[-1]] = yaml.safe_load(raw)
    return d


def load_config(path, overrides=()) -> RunConfig:
    with open(path) as fh:
        d = yaml.safe_load(fh) or {}
    if not isinstance(d, dict):
        raise ValueError(f"config root of {path} must be a mapping")
    return RunConfig.from_dict(apply_overrides(d, overrides))


def default_config(overrides=()) -> RunConfig:
    return RunConfig.from_dict(apply_overrides({}, overrides))


def run_dir(config: RunConfig) -> Path:
    """Output directory, rooted at $NARLAB_RUNS for relative paths."""
    p = Path(config.output_dir)
    if p.is_absolute():
        return p
    return Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / p


def write_resolved(config: RunConfig, directory) -> Path:
    """The reproducibility snapshot: sorted-key YAML of the full config."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "resolved.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)
    return path


class RunLock:
    """Directory lock so concurrent runs cannot share an output directory."""

    def __init__(self, directory):
        self.path = Path(directory) / ".lock"
        self._fd = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory {self.path.parent} is locked by another run "
                f"(stale lock? remove {self.path})"
            ) from None
        os.write(self._fd, f"{os.getpid()}\n".encode())
        return self

    def __exit__(self, *exc):
        if self._fd is not None:
            os.close(self._fd)
            self.path.unlink(missing_ok=True)
        return False
