"""Run configuration: one declarative JSON document per deployment.

The config names the backend (mock script or HTTP endpoint), the token
budgets, and the pipeline toggles.  CLI flags override individual
fields per invocation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .chunking import DEFAULT_CHUNK_BUDGET, DEFAULT_CONTEXT_TAIL, TokenEstimator
from .gateway import (
    API_KEY_ENV_VAR,
    DEFAULT_MAX_REPAIRS,
    Gateway,
    HttpChatBackend,
    ScriptedMockBackend,
)
from .model import RetentionPolicy
from .pipeline import RunSettings

__all__ = ["AppConfig", "ConfigError", "build_gateway", "load_config", "make_settings"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AppConfig:
    backend: Mapping[str, Any]
    base_dir: Path
    policy_name: str = "default"
    verification: bool = True
    refinement: bool = True
    grouping_llm: bool = False
    max_repairs: int = DEFAULT_MAX_REPAIRS
    chunk_budget: int = DEFAULT_CHUNK_BUDGET
    context_tail: int = DEFAULT_CONTEXT_TAIL
    chars_per_token: float = 4.0
    workers: int = 1


def _expect(payload: Mapping[str, Any], key: str, kind: type, default: Any) -> Any:
    value = payload.get(key, default)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ConfigError(f"config field {key!r} must be {kind.__name__}, got {value!r}")
    return value


def _number(payload: Mapping[str, Any], key: str, default: float) -> float:
    value = payload.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"config field {key!r} must be a number, got {value!r}")
    return float(value)


def load_config(path: str | Path) -> AppConfig:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"config file cannot be read: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(payload, Mapping):
        raise ConfigError("config must be a JSON object")

    backend = payload.get("backend")
    if not isinstance(backend, Mapping) or backend.get("kind") not in ("mock", "http"):
        raise ConfigError('config requires a "backend" object with "kind" of "mock" or "http"')

    policy_name = _expect(payload, "policy", str, "default")
    try:
        RetentionPolicy.from_name(policy_name)
    except ValueError as err:
        raise ConfigError(str(err)) from err

    config = AppConfig(
        backend=dict(backend),
        base_dir=path.resolve().parent,
        policy_name=policy_name,
        verification=_expect(payload, "verification", bool, True),
        refinement=_expect(payload, "refinement", bool, True),
        grouping_llm=_expect(payload, "grouping_llm", bool, False),
        max_repairs=_expect(payload, "max_repairs", int, DEFAULT_MAX_REPAIRS),
        chunk_budget=_expect(payload, "chunk_budget", int, DEFAULT_CHUNK_BUDGET),
        context_tail=_expect(payload, "context_tail", int, DEFAULT_CONTEXT_TAIL),
        chars_per_token=_number(payload, "chars_per_token", 4.0),
        workers=_expect(payload, "workers", int, 1),
    )
    if config.chunk_budget <= 0 or config.context_tail < 0:
        raise ConfigError("chunk_budget must be positive and context_tail non-negative")
    if config.chars_per_token <= 0:
        raise ConfigError("chars_per_token must be positive")
    if config.max_repairs < 0 or config.workers < 1:
        raise ConfigError("max_repairs must be >= 0 and workers >= 1")
    return config


def build_gateway(config: AppConfig) -> Gateway:
    """A fresh gateway for one run, so usage and mock state never leak between runs."""
    estimator = TokenEstimator(chars_per_token=config.chars_per_token)
    kind = config.backend["kind"]
    if kind == "mock":
        script = config.backend.get("script")
        if not script:
            raise ConfigError('mock backend requires a "script" file path')
        script_path = Path(script)
        if not script_path.is_absolute():
            script_path = config.base_dir / script_path
        if not script_path.exists():
            raise ConfigError(f"mock script not found: {script_path}")
        return Gateway(ScriptedMockBackend.from_file(script_path), estimator=estimator)
    base_url = config.backend.get("base_url")
    model_name = config.backend.get("model_name")
    if not base_url or not model_name:
        raise ConfigError('http backend requires "base_url" and "model_name"')
    return Gateway(
        HttpChatBackend(
            base_url=str(base_url),
            model_name=str(model_name),
            api_key=os.environ.get(API_KEY_ENV_VAR, ""),
            timeout_ms=int(config.backend.get("timeout_ms", 60_000)),
        ),
        estimator=estimator,
    )


def make_settings(
    config: AppConfig,
    policy_name: str | None = None,
    no_verify: bool = False,
    no_refine: bool = False,
) -> RunSettings:
    return RunSettings(
        policy=RetentionPolicy.from_name(policy_name or config.policy_name),
        verification=config.verification and not no_verify,
        refinement=config.refinement and not no_refine,
        grouping_llm=config.grouping_llm,
        max_repairs=config.max_repairs,
        chunk_budget=config.chunk_budget,
        context_tail=config.context_tail,
        estimator=TokenEstimator(chars_per_token=config.chars_per_token),
    )
