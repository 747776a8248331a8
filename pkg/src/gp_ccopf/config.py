"""Run configuration.

A run config is one JSON document. It is merged over :data:`DEFAULTS`,
patched with ``key.path=value`` overrides and validated against
:data:`CONFIG_SCHEMA` before a :class:`RunConfig` is built from it.
"""

import copy
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import jsonschema

from gp_ccopf.dataset import SamplingConfig
from gp_ccopf.errors import ConfigError, ParseError
from gp_ccopf.grid.case import GridCase
from gp_ccopf.grid.caseio import load_builtin_case, load_case
from gp_ccopf.propagation import METHODS

logger = logging.getLogger("gp_ccopf.config")

LOG_LEVEL_ENV = "GP_CCOPF_LOG_LEVEL"
EFFECTIVE_CONFIG_NAME = "effective_config.json"

_LOGNORMAL = {
    "type": "object",
    "required": ["mu", "sigma"],
    "properties": {"mu": {"type": "number"}, "sigma": {"type": "number", "minimum": 0}},
    "additionalProperties": False,
}
_EPS = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5}
_SEED = {"type": "integer", "minimum": 0}
_FRACTION = {"type": "number", "minimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["case", "output_dir"],
    "properties": {
        "case": {"type": "string", "minLength": 1},
        "output_dir": {"type": "string", "minLength": 1},
        "workers": {"type": "integer", "minimum": 1},
        "sampling": {
            "type": "object",
            "properties": {
                "load_corr": _LOGNORMAL,
                "load_uncorr": _LOGNORMAL,
                "res_corr": _LOGNORMAL,
                "res_uncorr": _LOGNORMAL,
                "psi_range": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                              "minItems": 2, "maxItems": 2},
                "loss_factor": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "seed": _SEED,
            },
            "additionalProperties": False,
        },
        "dataset": {
            "type": "object",
            "properties": {
                "n_samples": {"type": "integer", "minimum": 1},
                "n_train": {"type": "integer", "minimum": 1},
                "noise_sigma": _FRACTION,
                "split_seed": _SEED,
                "include_slack_voltage": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "training": {
            "type": "object",
            "properties": {
                "restarts": {"type": "integer", "minimum": 1},
                "max_evals": {"type": "integer", "minimum": 1},
                "init_spread": _FRACTION,
                "seed": _SEED,
            },
            "additionalProperties": False,
        },
        "uncertainty": {
            "type": "object",
            "properties": {"sigma_load": _FRACTION, "sigma_res": _FRACTION},
            "additionalProperties": False,
        },
        "ccopf": {
            "type": "object",
            "properties": {
                "eps_u": _EPS,
                "eps_y": _EPS,
                "method": {"enum": list(METHODS)},
                "balance": {"enum": ["losses", "lossless", "none"]},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "validation": {
            "type": "object",
            "properties": {"n_samples": {"type": "integer", "minimum": 1}, "seed": _SEED},
            "additionalProperties": False,
        },
        "baselines": {
            "type": "object",
            "properties": {
                "base_case": {"type": "boolean"},
                "full_recourse": {"type": "boolean"},
                "full_recourse_samples": {"type": "integer", "minimum": 1},
                "scenarios": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "scenario_seed": _SEED,
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULTS: dict[str, Any] = {
    "workers": 1,
    "sampling": SamplingConfig().to_document(),
    "dataset": {"n_samples": 100, "n_train": 75, "noise_sigma": 1e-4, "split_seed": 0,
                "include_slack_voltage": False},
    "training": {"restarts": 5, "max_evals": 500, "init_spread": 1.0, "seed": 0},
    "uncertainty": {"sigma_load": 0.15, "sigma_res": 0.30},
    "ccopf": {"eps_u": 0.001, "eps_y": 0.025, "method": "ta1", "balance": "losses", "tol": 1e-6, "max_iter": 200},
    "validation": {"n_samples": 1000, "seed": 1},
    "baselines": {"base_case": True, "full_recourse": True, "full_recourse_samples": 100,
                  "scenarios": [20, 50, 100], "scenario_seed": 2},
}


def _merge(base: dict, patch: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in patch.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_override(document: dict, assignment: str) -> dict:
    """
    Apply one ``key.path=value`` override; ``value`` is parsed as JSON when
    possible and kept as a string otherwise.

    Raises:
        ConfigError: the assignment has no ``=`` or an empty key
    """
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"Override must look like key.path=value, got '{assignment}'")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = copy.deepcopy(document)
    node = out
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"Override path '{key}' crosses a non-object value", {"key": key})
    node[parts[-1]] = value
    return out


def validate_document(document: dict) -> None:
    """
    Raises:
        ConfigError: the document violates the schema; details name the path
    """
    try:
        jsonschema.validate(instance=document, schema=CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(
            f"Invalid config at {path}: {e.message}",
            {"path": path, "validator": e.validator, "message": e.message},
        ) from e
    n_samples = document["dataset"]["n_samples"]
    n_train = document["dataset"]["n_train"]
    if n_train > n_samples:
        raise ConfigError("dataset.n_train exceeds dataset.n_samples", {"n_train": n_train, "n_samples": n_samples})


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; sections stay plain dicts keyed like the document."""

    document: dict

    @classmethod
    def from_document(cls, document: dict, overrides: Iterable[str] = ()) -> "RunConfig":
        merged = _merge(DEFAULTS, document)
        for assignment in overrides:
            merged = apply_override(merged, assignment)
        validate_document(merged)
        return cls(merged)

    @classmethod
    def load(cls, path: Union[str, Path], overrides: Iterable[str] = ()) -> "RunConfig":
        """
        Raises:
            ConfigError: the file is missing, not JSON, or invalid
        """
        path = Path(path)
        try:
            document = json.loads(path.read_text())
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}", {"path": str(path)}) from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config is not valid JSON: {e.msg}", {"line": e.lineno, "column": e.colno}) from e
        return cls.from_document(document, overrides)

    def section(self, name: str) -> dict:
        return self.document[name]

    @property
    def output_dir(self) -> Path:
        return Path(self.document["output_dir"])

    @property
    def workers(self) -> int:
        return int(self.document["workers"])

    @property
    def sampling(self) -> SamplingConfig:
        return SamplingConfig.from_document(self.document["sampling"])

    def resolve_case(self) -> GridCase:
        """
        Load the case from a file path or a bundled case name, with the
        configured fluctuation std-devs applied.

        Raises:
            ConfigError: neither a readable file nor a bundled case
        """
        ref = self.document["case"]
        path = Path(ref)
        if path.exists():
            case = load_case(path)
        else:
            try:
                case = load_builtin_case(ref)
            except ParseError as e:
                raise ConfigError(f"Case '{ref}' is neither a file nor a bundled case", {"case": ref}) from e
        sigma = self.document["uncertainty"]
        return case.with_sigma(sigma["sigma_load"], sigma["sigma_res"])

    def write_effective(self, directory: Optional[Union[str, Path]] = None) -> Path:
        directory = Path(directory) if directory is not None else self.output_dir
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / EFFECTIVE_CONFIG_NAME
        path.write_text(json.dumps(self.document, indent=2, sort_keys=True))
        return path


def log_level(verbose: int = 0) -> int:
    """``-v`` gives INFO, ``-vv`` DEBUG; ``GP_CCOPF_LOG_LEVEL`` overrides both."""
    env = os.environ.get(LOG_LEVEL_ENV)
    if env:
        level = logging.getLevelName(env.upper())
        if isinstance(level, int):
            return level
    return {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
