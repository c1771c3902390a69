"""Experiment specifications and their YAML form.

Unknown keys are rejected everywhere; errors point at the offending line.
"""

from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from disprod.baselines import ShootingConfig
from disprod.envs import CATALOG, env_parameters
from disprod.errors import ArgumentError
from disprod.optimizer import PlannerConfig

PLANNER_KINDS = ("disprod", "cem", "mppi")
AXES = ("alpha", "depth", "beta", "n_redundant", "restarts", "map", "none")

_DISPROD_KEYS = {f.name for f in fields(PlannerConfig)} - {"rng_seed"}
_SHOOTING_KEYS = {f.name for f in fields(ShootingConfig)} - {"rng_seed"}


class ConfigError(ArgumentError):
    """Malformed or invalid experiment configuration."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EnvSection(_Strict):
    name: str
    params: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in CATALOG:
            raise ValueError(f"unknown environment {v!r}; expected one of {', '.join(CATALOG)}")
        return v

    @model_validator(mode="after")
    def _params(self):
        allowed = env_parameters(self.name)
        for key in self.params:
            if key not in allowed:
                raise ValueError(f"unknown parameter '{key}' for {self.name}")
        return self


class PlannerSection(_Strict):
    kind: Literal["disprod", "cem", "mppi"]
    settings: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _settings(self):
        allowed = _DISPROD_KEYS if self.kind == "disprod" else _SHOOTING_KEYS
        for key in self.settings:
            if key not in allowed:
                raise ValueError(f"unknown {self.kind} setting '{key}'")
        self.build(seed=0)
        return self

    def build(self, seed, **overrides):
        values = {**self.settings, **overrides, "rng_seed": seed}
        try:
            if self.kind == "disprod":
                return PlannerConfig(**values)
            return ShootingConfig(**values)
        except (TypeError, ArgumentError) as exc:
            raise ValueError(str(exc)) from exc


class SweepSection(_Strict):
    axis: Literal["alpha", "depth", "beta", "n_redundant", "restarts", "map", "none"] = "none"
    values: List[Union[float, int, str]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _values(self):
        if self.axis != "none" and not self.values:
            raise ValueError("sweep values must be nonempty")
        return self


class ExperimentSpec(_Strict):
    id: str = "experiment"
    env: EnvSection
    planner: PlannerSection
    sweep: SweepSection = Field(default_factory=SweepSection)
    repetitions: int = Field(1, ge=1)
    runs_per_repetition: int = Field(1, ge=1)
    seed: int = 0
    episode_cap: Optional[int] = Field(None, ge=0)
    stop_on_success: bool = False
    record_wall_time: bool = True

    def axis_values(self):
        return list(self.sweep.values) if self.sweep.axis != "none" else [None]

    def to_dict(self):
        return self.model_dump(mode="json")

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _key_lines(node, prefix=(), out=None):
    """Map each key path of a composed YAML document to its 1-based line."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = prefix + (key.value,)
            out[path] = key.start_mark.line + 1
            _key_lines(value, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            out[prefix + (i,)] = item.start_mark.line + 1
            _key_lines(item, prefix + (i,), out)
    return out


def _line_for(loc, lines):
    loc = tuple(p for p in loc if not (isinstance(p, str) and p.startswith("function-")))
    while loc:
        if loc in lines:
            return lines[loc]
        loc = loc[:-1]
    return None


def parse_config_text(text, source="<config>"):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(f"{source}: malformed YAML: {exc.problem}", mark.line + 1 if mark else None) from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: configuration must be a mapping", 1)
    lines = _key_lines(node)
    try:
        return ExperimentSpec.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = tuple(err["loc"])
        where = ".".join(str(p) for p in loc) or "<root>"
        if err["type"] == "missing":
            message = f"{source}: missing required key '{where}'"
            line = _line_for(loc[:-1], lines) or 1
        elif err["type"] == "extra_forbidden":
            message = f"{source}: unknown key '{where}'"
            line = _line_for(loc, lines)
        else:
            message = f"{source}: invalid '{where}': {err['msg']}"
            line = _line_for(loc, lines)
        raise ConfigError(message, line) from None


def parse_config(path):
    """Read an experiment YAML file into a validated :class:`ExperimentSpec`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config_text(text, str(path))


def write_config(spec, path):
    Path(path).write_text(spec.to_yaml())
