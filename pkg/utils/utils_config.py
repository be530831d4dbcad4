"""
utils_config.py - pipeline configuration.

Values are resolved in layers, later layers winning:
    built-in defaults -> named preset -> environment / .env -> --config JSON -> CLI flags

Environment keys (all optional):
    HEM_EVENTS, HEM_SOURCE, HEM_SCHEME, HEM_GLOBAL_MEMORY_CAP, HEM_SEED,
    HEM_DIM, HEM_PATCHES, HEM_QUERIES, HEM_HEADS, HEM_CLASSES, HEM_OUTPUT_DIR
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import json
import os
import pathlib
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Optional

# Import external packages
from dotenv import load_dotenv

# Import functions from local modules
from hem.errors import ConfigError
from hem.memory import DEFAULT_GLOBAL_MEMORY_CAP
from hem.qformer import DEFAULT_CLASSES, DEFAULT_DIM, DEFAULT_HEADS, DEFAULT_PATCHES, DEFAULT_QUERIES
from hem.sampler import SamplingScheme
from hem.segmentation import SimilaritySource
from utils.utils_logger import logger

#####################################
# Load Environment Variables
#####################################

load_dotenv()

#####################################
# Presets
#####################################

# Event counts per task family
PRESETS: dict[str, dict[str, Any]] = {
    "vqa": {"num_events": 2},
    "caption": {"num_events": 3},
    "coin": {"num_events": 3},
    "breakfast": {"num_events": 4},
}

DEFAULT_OUTPUT_DIR = "output"

#####################################
# Config Type
#####################################


@dataclass(frozen=True)
class PipelineConfig:
    num_events: int = 4
    source: SimilaritySource = SimilaritySource.RAW_AVGPOOL
    scheme: SamplingScheme = SamplingScheme.SCHEME1
    global_memory_cap: Optional[int] = DEFAULT_GLOBAL_MEMORY_CAP
    dim: int = DEFAULT_DIM
    patches: int = DEFAULT_PATCHES
    queries: int = DEFAULT_QUERIES
    heads: int = DEFAULT_HEADS
    classes: int = DEFAULT_CLASSES
    seed: int = 0
    inputs: tuple[str, ...] = field(default_factory=tuple)
    output: str = DEFAULT_OUTPUT_DIR
    features: Optional[str] = None
    target: Optional[int] = None
    plot: Optional[str] = None
    use_local_memory: bool = True
    use_global_memory: bool = True
    use_adaptive_segmentation: bool = True
    workers: int = 4

    def validate(self) -> "PipelineConfig":
        """Raise ConfigError on the first invalid value; return self otherwise."""
        problems = []
        if self.num_events < 1:
            problems.append(f"num_events must be >= 1, got {self.num_events}")
        for name in ("dim", "patches", "queries", "heads", "workers"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.classes < 2:
            problems.append(f"classes must be >= 2, got {self.classes}")
        if self.dim % self.heads:
            problems.append(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.global_memory_cap is not None and self.global_memory_cap < 0:
            problems.append(f"global_memory_cap must be >= 0 or inf, got {self.global_memory_cap}")
        if self.target is not None and not 0 <= self.target < self.classes:
            problems.append(f"target must be in [0, {self.classes}), got {self.target}")
        if not str(self.output).strip():
            problems.append("output path must be non-empty")
        if any(not str(p).strip() for p in self.inputs):
            problems.append("input paths must be non-empty")
        if problems:
            msg = "Invalid configuration: " + "; ".join(problems)
            logger.error(msg)
            raise ConfigError(msg)
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["source"] = self.source.value
        out["scheme"] = self.scheme.value
        out["inputs"] = list(self.inputs)
        return out


#####################################
# Value Parsing
#####################################


def parse_cap(value: Any) -> Optional[int]:
    """Integer cap, or None for 'inf'/'none'/'unbounded'."""
    if value is None:
        return None
    text = str(value).strip().lower()
    if text in {"inf", "none", "unbounded", "infinity"}:
        return None
    try:
        return int(text)
    except ValueError:
        msg = f"global_memory_cap must be an integer or 'inf', got {value!r}."
        logger.error(msg)
        raise ConfigError(msg) from None


_INT_KEYS = {"num_events", "dim", "patches", "queries", "heads", "classes", "seed", "workers"}
_BOOL_KEYS = {"use_local_memory", "use_global_memory", "use_adaptive_segmentation"}


def _as_int(value: Any) -> int:
    """Whole numbers only: 3, "3" and 3.0 pass; 2.9 and booleans do not."""
    if isinstance(value, bool):
        raise TypeError("expected an integer, got a boolean")
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError("expected an integer, got a fractional number")
        return int(value)
    return int(value)


def _coerce(key: str, value: Any) -> Any:
    try:
        if key == "source":
            return SimilaritySource.parse(value)
        if key == "scheme":
            return SamplingScheme.parse(value)
        if key == "global_memory_cap":
            return parse_cap(value)
        if key == "target":
            return None if value is None else _as_int(value)
        if key == "inputs":
            return tuple(str(p) for p in ([value] if isinstance(value, str) else value))
        if key in _INT_KEYS:
            return _as_int(value)
        if key in _BOOL_KEYS:
            if isinstance(value, str):
                return value.strip().lower() in {"1", "true", "yes", "on"}
            return bool(value)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        msg = f"Bad value for {key}: {value!r} ({e})."
        logger.error(msg)
        raise ConfigError(msg) from None
    return value


def apply_overrides(config: PipelineConfig, overrides: dict[str, Any], origin: str) -> PipelineConfig:
    """Return config with the non-None overrides applied; unknown keys are rejected."""
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        msg = f"Unknown configuration keys from {origin}: {unknown}."
        logger.error(msg)
        raise ConfigError(msg)
    changes = {k: _coerce(k, v) for k, v in overrides.items() if v is not None}
    if changes:
        logger.debug(f"Config overrides from {origin}: {changes}")
    return replace(config, **changes)


#####################################
# Getter Functions for .env Variables
#####################################

_ENV_KEYS = {
    "num_events": "HEM_EVENTS",
    "source": "HEM_SOURCE",
    "scheme": "HEM_SCHEME",
    "global_memory_cap": "HEM_GLOBAL_MEMORY_CAP",
    "seed": "HEM_SEED",
    "dim": "HEM_DIM",
    "patches": "HEM_PATCHES",
    "queries": "HEM_QUERIES",
    "heads": "HEM_HEADS",
    "classes": "HEM_CLASSES",
    "output": "HEM_OUTPUT_DIR",
}


def get_env_overrides() -> dict[str, str]:
    """Fetch every HEM_* configuration variable that is set."""
    found = {key: os.getenv(env) for key, env in _ENV_KEYS.items() if os.getenv(env)}
    if found:
        logger.info(f"Configuration from environment: {found}")
    return found


def get_preset(name: Optional[str]) -> dict[str, Any]:
    """Fetch a named preset or an empty mapping."""
    if not name:
        return {}
    key = name.strip().lower()
    if key not in PRESETS:
        msg = f"Unknown preset '{name}'. Choose from {sorted(PRESETS)}."
        logger.error(msg)
        raise ConfigError(msg)
    logger.info(f"Using preset '{key}': {PRESETS[key]}")
    return PRESETS[key]


def load_config_file(path: Optional[str]) -> dict[str, Any]:
    """Read a JSON object of config keys."""
    if not path:
        return {}
    file_path = pathlib.Path(path)
    try:
        doc = json.loads(file_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        msg = f"Config file not found: {file_path}"
        logger.error(msg)
        raise ConfigError(msg) from None
    except json.JSONDecodeError as e:
        msg = f"Config file {file_path} is not valid JSON: {e}"
        logger.error(msg)
        raise ConfigError(msg) from None
    if not isinstance(doc, dict):
        msg = f"Config file {file_path} must hold a JSON object."
        logger.error(msg)
        raise ConfigError(msg)
    logger.info(f"Loaded config file: {file_path}")
    return doc


def resolve_config(
    preset: Optional[str] = None,
    config_path: Optional[str] = None,
    cli_overrides: Optional[dict[str, Any]] = None,
    use_env: bool = True,
    base: Optional[dict[str, Any]] = None,
) -> PipelineConfig:
    """Build a validated PipelineConfig from all layers; `base` replaces built-in defaults."""
    config = apply_overrides(PipelineConfig(), base or {}, "command defaults")
    config = apply_overrides(config, get_preset(preset), "preset")
    if use_env:
        config = apply_overrides(config, get_env_overrides(), "environment")
    config = apply_overrides(config, load_config_file(config_path), "config file")
    config = apply_overrides(config, cli_overrides or {}, "command line")
    return config.validate()
