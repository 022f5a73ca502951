"""Experiment configuration: a JSON file with sections mirroring the run
modes, plus command-line overrides. Unknown keys are rejected so typos fail
loudly instead of silently using defaults."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import DTWConfig
from .errors import ConfigError
from .network import ArchSpec
from .training import FineTuneConfig, MetaConfig

MODES = ("meta-train", "evaluate", "baseline", "report", "class-split")
VARIANTS = ("fs1", "fs2")

_TOP_LEVEL_KEYS = {
    "mode", "data_root", "split_manifest", "out_dir", "seed", "k", "k_prime",
    "tasks_per_dataset", "methods", "variant", "arch", "meta", "finetune",
    "dtw", "checkpoints", "records", "dataset",
}


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    data_root: Path | None = None
    split_manifest: Path | None = None
    out_dir: Path = Path("runs/latest")
    seed: int = 0
    k: int = 5
    k_prime: int = 5
    tasks_per_dataset: int = 100
    methods: tuple[str, ...] = ("fs1",)
    variant: str = "fs1"
    arch: ArchSpec = ArchSpec()
    meta: MetaConfig = MetaConfig()
    finetune: dict[str, FineTuneConfig] = field(default_factory=dict)
    dtw: DTWConfig = DTWConfig()
    checkpoints: dict[str, Path] = field(default_factory=dict)
    records: Path | None = None
    dataset: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        # Triplet loss needs two instances of some class, so one-shot
        # support sets cannot be fine-tuned.
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.k_prime < 1:
            raise ConfigError("k_prime must be >= 1")
        if self.tasks_per_dataset < 1:
            raise ConfigError("tasks_per_dataset must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {', '.join(VARIANTS)}")
        if not self.methods:
            raise ConfigError("methods must not be empty")

    def require(self, name: str) -> object:
        value = getattr(self, name)
        if value is None:
            raise ConfigError(f"mode {self.mode!r} needs {name!r} (config key or flag)")
        return value


def _existing_path(value, key: str) -> Path:
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"{key} does not exist: {path}")
    return path


def load_experiment_config(
    config_path: Path | str | None,
    overrides: dict | None = None,
) -> ExperimentConfig:
    """Build an ExperimentConfig from an optional JSON file plus overrides.

    Override values of None mean "not given on the command line"."""
    raw: dict = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value

    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "mode" not in raw:
        raise ConfigError("mode is required (config key or subcommand)")

    kwargs: dict = {"mode": raw["mode"]}
    for key in ("seed", "k", "k_prime", "tasks_per_dataset", "variant", "dataset"):
        if key in raw:
            kwargs[key] = raw[key]
    if "out_dir" in raw:
        kwargs["out_dir"] = Path(raw["out_dir"])
    if "methods" in raw:
        methods = raw["methods"]
        if isinstance(methods, str):
            methods = [methods]
        kwargs["methods"] = tuple(methods)
    for key in ("data_root", "split_manifest", "records"):
        if raw.get(key) is not None:
            kwargs[key] = _existing_path(raw[key], key)
    if "arch" in raw:
        kwargs["arch"] = ArchSpec.from_dict(raw["arch"])
    if "meta" in raw:
        try:
            kwargs["meta"] = MetaConfig(**raw["meta"])
        except TypeError as exc:
            raise ConfigError(f"bad meta section: {exc}") from exc
    if "finetune" in raw:
        section = raw["finetune"]
        if not isinstance(section, dict):
            raise ConfigError("finetune section must map method names to settings")
        out = {}
        for method, settings in section.items():
            try:
                out[method] = FineTuneConfig(**settings)
            except TypeError as exc:
                raise ConfigError(f"bad finetune settings for {method!r}: {exc}") from exc
        kwargs["finetune"] = out
    if "dtw" in raw:
        fractions = raw["dtw"].get("fractions") if isinstance(raw["dtw"], dict) else None
        if fractions is None:
            raise ConfigError("dtw section needs a 'fractions' list")
        kwargs["dtw"] = DTWConfig(fractions=tuple(fractions))
    if "checkpoints" in raw:
        section = raw["checkpoints"]
        if not isinstance(section, dict):
            raise ConfigError("checkpoints section must map method names to paths")
        kwargs["checkpoints"] = {
            m: _existing_path(p, f"checkpoint for {m!r}") for m, p in section.items()
        }
    return ExperimentConfig(**kwargs)
