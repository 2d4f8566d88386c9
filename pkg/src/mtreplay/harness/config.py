"""Experiment configuration: defaults, TOML files, CLI overrides.

Defaults are desk scale: 200k steps with a 20k-capacity buffer keeps the
buffer at 10% of the run, so the agent can never store its whole history.
Config files are flat TOML key-value tables; CLI flags override file
values and the merged result is echoed to config.json in the run directory.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from mtreplay import __version__
from mtreplay.envsim import EVAL_GRAVITIES, SCHEDULE_KINDS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUFFER_KINDS = ("fifo", "reservoir", "half", "mtr", "mtr_irm")


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    buffer_kind: str = "mtr"
    schedule_kind: str = "fixed"
    total_steps: int = 200_000
    buffer_capacity: int = 20_000
    n_sub: int = 20
    beta_mtr: float = 0.85
    lambda_irm: float = 0.1
    batch_size: int = 64
    hidden_width: int = 32
    n_hidden: int = 2
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    gamma: float = 0.99
    tau: float = 0.005
    initial_alpha: float = 1.0
    train_frequency: int = 1
    warmup_steps: int = 1_000
    eval_every_episodes: int = 100
    episodes_per_eval: int = 1
    eval_gravities: tuple[float, ...] = EVAL_GRAVITIES
    sine_cycles: int = 3
    adjustment_period: int = 1_000
    seeds: tuple[int, ...] = (0, 1, 2)
    out_dir: str | None = None

    def validate(self) -> None:
        if self.buffer_kind not in BUFFER_KINDS:
            raise ValueError(f"buffer_kind must be one of {BUFFER_KINDS}")
        if self.schedule_kind not in SCHEDULE_KINDS:
            raise ValueError(f"schedule_kind must be one of {SCHEDULE_KINDS}")
        positive = ["buffer_capacity", "n_sub", "batch_size", "hidden_width",
                    "n_hidden", "learning_rate", "train_frequency",
                    "eval_every_episodes", "episodes_per_eval", "tau",
                    "adjustment_period", "initial_alpha"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be nonnegative")
        if not 0.0 <= self.beta_mtr <= 1.0:
            raise ValueError("beta_mtr must lie in [0, 1]")
        if self.lambda_irm < 0.0:
            raise ValueError("lambda_irm must be nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.buffer_kind in ("mtr", "mtr_irm"):
            if self.buffer_capacity % self.n_sub != 0:
                raise ValueError("buffer_capacity must be divisible by n_sub")
        if self.buffer_kind == "half" and self.buffer_capacity % 2 != 0:
            raise ValueError("half buffer needs an even capacity")
        if self.schedule_kind == "sine" and self.total_steps % self.sine_cycles:
            raise ValueError(
                "sine runs must cover whole cycles: total_steps must be "
                f"divisible by {self.sine_cycles}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        for g in self.eval_gravities:
            if not -17.0 <= g <= -7.0:
                raise ValueError(f"eval gravity {g} outside [-17, -7]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval_gravities"] = list(self.eval_gravities)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        clean = dict(data)
        if "eval_gravities" in clean:
            clean["eval_gravities"] = tuple(float(g) for g in clean["eval_gravities"])
        if "seeds" in clean:
            clean["seeds"] = tuple(int(s) for s in clean["seeds"])
        return cls(**clean)

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        if "eval_gravities" in kwargs:
            kwargs["eval_gravities"] = tuple(kwargs["eval_gravities"])
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(kwargs["seeds"])
        return replace(self, **kwargs)


def load_config_file(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return ExperimentConfig.from_dict(data)


def default_out_root() -> Path:
    return Path(os.environ.get("MTR_OUT_DIR", "runs"))


def build_identifier() -> str:
    """git-describe style identifier, falling back to the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).parent, capture_output=True, text=True,
            timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"mtreplay-{__version__}"


def write_config_json(config: ExperimentConfig, path: str | Path) -> None:
    payload = config.to_dict()
    payload["build"] = build_identifier()
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
