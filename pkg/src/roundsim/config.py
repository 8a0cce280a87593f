"""Run configuration shared by every command-line workflow.

A RunConfig pins everything an offline run depends on: the layout, the
planning parameters, the reward weights, the estimator mode, where models
live, where outputs go, and the master seed. Configs load from a JSON file
and individual fields can be overridden afterwards (command-line flags win
over the file). Every artifact a command writes embeds the fully resolved
config so it can be reproduced from its own header.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace

from .geometry import RoundaboutLayout, layout_from_dict, layout_to_dict, make_layout
from .kinematics import SimParams
from .reward import DEFAULT_WEIGHTS


class ConfigError(ValueError):
    """A configuration file or flag combination that cannot be used."""


_ESTIMATORS = ("exact", "nn")
MODEL_FILES = ("nn_a.npz", "nn_b.npz", "nn_c.npz")


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one command invocation."""

    layout_path: str | None = None
    dt: float = 0.25
    horizon_n: int = 4
    lam: float = 0.8
    beta: float = 0.6
    v_max: float = 7.0
    weights: tuple[float, ...] = DEFAULT_WEIGHTS
    estimator: str = "exact"
    model_dir: str | None = None
    output_dir: str = "runs"
    seed: int = 0

    def __post_init__(self):
        if self.estimator not in _ESTIMATORS:
            raise ConfigError(f"estimator must be one of {_ESTIMATORS}, got {self.estimator!r}")
        if len(self.weights) != 6:
            raise ConfigError(f"weights needs 6 entries, got {len(self.weights)}")
        if self.layout_path is not None and not os.path.exists(self.layout_path):
            raise ConfigError(f"layout file not found: {self.layout_path}")

    def sim_params(self) -> SimParams:
        return SimParams(
            dt=self.dt, horizon_n=self.horizon_n, lam=self.lam,
            beta=self.beta, v_max=self.v_max,
        )

    def load_layout(self) -> RoundaboutLayout:
        if self.layout_path is None:
            return make_layout()
        with open(self.layout_path) as f:
            return layout_from_dict(json.load(f))

    def require_models(self) -> str:
        """Path of the model directory, verified to hold all three nets."""
        if self.model_dir is None:
            raise ConfigError("estimator 'nn' needs --model-dir (or model_dir in the config)")
        missing = [
            name for name in MODEL_FILES
            if not os.path.exists(os.path.join(self.model_dir, name))
        ]
        if missing:
            raise ConfigError(f"model directory {self.model_dir} is missing {', '.join(missing)}")
        return self.model_dir

    def to_dict(self) -> dict:
        return {
            "layout_path": self.layout_path,
            "dt": self.dt,
            "horizon_n": self.horizon_n,
            "lam": self.lam,
            "beta": self.beta,
            "v_max": self.v_max,
            "weights": list(self.weights),
            "estimator": self.estimator,
            "model_dir": self.model_dir,
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    def header(self) -> dict:
        """The provenance block embedded in every output artifact."""
        return {"run_config": self.to_dict(), "layout": layout_to_dict(self.load_layout())}


def config_from_dict(data: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "weights" in data:
        data = {**data, "weights": tuple(float(x) for x in data["weights"])}
    return RunConfig(**data)


def load_config(path: str | None) -> RunConfig:
    """RunConfig from a JSON file, or the defaults when path is None."""
    if path is None:
        return RunConfig()
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_dict(data)


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """A copy of cfg with every non-None override applied (flags win)."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    if "weights" in changes:
        changes["weights"] = tuple(float(x) for x in changes["weights"])
    return replace(cfg, **changes) if changes else cfg


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2)
        f.write("\n")
