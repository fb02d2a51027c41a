"""Run configuration: one YAML file per experiment, parsed strictly."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..attack.baselines import ATTACK_NAMES, DEFAULT_PARAMS, REQUIRED
from ..watermarks.keys import PAYLOAD_LENGTHS

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """All problems with a config, reported together."""

    def __init__(self, problems: List[str]):
        self.problems = problems
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in problems))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BackendCfg(_Strict):
    name: str = "tiny"
    weights_path: Optional[str] = None
    steps: int = Field(50, ge=1)
    guidance: float = 2.5
    noising_mode: Literal["stochastic", "ddim-inversion"] = "stochastic"
    inversion_refine: int = Field(1, ge=0)


class DataCfg(_Strict):
    source: Literal["toy", "dir"] = "toy"
    images_dir: Optional[str] = None
    n_images: int = Field(8, ge=1)
    size: int = Field(64, ge=8)
    null_source: Literal["toy", "dir"] = "toy"
    null_dir: Optional[str] = None
    n_null: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _dirs(self):
        if self.source == "dir" and not self.images_dir:
            raise ValueError("data.images_dir is required when data.source is 'dir'")
        if self.null_source == "dir" and not self.null_dir:
            raise ValueError("data.null_dir is required when data.null_source is 'dir'")
        return self


class SchemeCfg(_Strict):
    scheme: Literal["dwt_dct", "dwt_dct_svd", "fourier_ring", "external"]
    n_bits: int = 32
    strength: Optional[float] = None
    command: Optional[List[str]] = None

    @field_validator("n_bits")
    @classmethod
    def _bits(cls, v):
        if v not in PAYLOAD_LENGTHS:
            raise ValueError(f"n_bits must be one of {PAYLOAD_LENGTHS}")
        return v

    @model_validator(mode="after")
    def _cmd(self):
        if self.scheme == "external" and not self.command:
            raise ValueError("external schemes need a command")
        return self


class AttackCfg(_Strict):
    name: str
    params: Dict[str, Any] = Field(default_factory=dict)
    label: Optional[str] = None

    @model_validator(mode="after")
    def _known(self):
        if self.name not in ATTACK_NAMES:
            raise ValueError(f"unknown attack {self.name!r}; expected one of {list(ATTACK_NAMES)}")
        if self.name == "raven":
            from ..attack.raven import RavenConfig

            allowed = set(RavenConfig.__dataclass_fields__) - {"seed"}
            unknown = set(self.params) - allowed
        else:
            allowed = set(DEFAULT_PARAMS[self.name]) | set(REQUIRED[self.name])
            unknown = set(self.params) - allowed
        if unknown:
            raise ValueError(f"attack {self.name!r} got unknown params {sorted(unknown)}; allowed {sorted(allowed)}")
        return self


class EvaluationCfg(_Strict):
    fpr: float = Field(0.01, gt=0, lt=1)
    feature_extractor: str = "random_projection"
    generation_size: int = Field(64, ge=8)


class RunConfig(_Strict):
    config_version: Literal[1] = CONFIG_VERSION
    root_seed: int = 0
    workers: int = Field(1, ge=1)
    backend: BackendCfg = Field(default_factory=BackendCfg)
    data: DataCfg = Field(default_factory=DataCfg)
    schemes: List[SchemeCfg] = Field(min_length=1)
    attacks: List[AttackCfg] = Field(default_factory=list)
    evaluation: EvaluationCfg = Field(default_factory=EvaluationCfg)

    @model_validator(mode="after")
    def _unique(self):
        names = [s.scheme for s in self.schemes]
        if len(set(names)) != len(names):
            raise ValueError("each scheme may appear once")
        labels = [a.label or a.name for a in self.attacks]
        if len(set(labels)) != len(labels):
            raise ValueError("attack labels must be unique; set 'label' to disambiguate")
        return self

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()).hexdigest()


def _format(err: ValidationError) -> List[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"].removeprefix("Value error, ")
        out.append(f"{loc}: {msg}")
    return out


def _coerce(value: str):
    return yaml.safe_load(value)


def apply_overrides(raw: dict, overrides: List[str]) -> dict:
    """``a.b=value`` overrides; only scalar leaves may be replaced."""
    problems = []
    for ov in overrides or []:
        if "=" not in ov:
            problems.append(f"override {ov!r} is not key=value")
            continue
        path, value = ov.split("=", 1)
        parts = path.split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                problems.append(f"override {path!r} does not address a mapping")
                break
        else:
            current = node.get(parts[-1])
            new = _coerce(value)
            if isinstance(current, (dict, list)) or isinstance(new, (dict, list)):
                problems.append(f"override {path!r}: only scalar fields can be overridden")
            else:
                node[parts[-1]] = new
    if problems:
        raise ConfigError(problems)
    return raw


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a mapping"])
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format(e)) from None


def load_config(path, overrides: Optional[List[str]] = None) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError([f"cannot read {path}: {e}"]) from None
    return parse_config(apply_overrides(raw, overrides or []))


DEMO_CONFIG = {
    "config_version": 1,
    "root_seed": 0,
    "data": {"source": "toy", "n_images": 6, "size": 64, "n_null": 100},
    "schemes": [{"scheme": "dwt_dct"}, {"scheme": "dwt_dct_svd"}],
    "attacks": [
        {"name": "jpeg", "params": {"quality": 25}},
        {"name": "gaussian_blur", "params": {"sigma": 1.0}},
        {"name": "regen", "params": {"strength": 0.15}},
        {"name": "raven", "params": {"strength": 0.15}},
    ],
}
