"""
Centralized configuration loader and accessors for socialav.

Loads YAML (or JSON, which YAML parses as well) from `config/config.yaml` or a
run-config file, validates it against the typed `RunConfig` schema and provides
dot-path getters (layout.*, dynamics.*, drivers.*, env.*, dpl.*, policy.*, ppo.*,
social.*, experiment.*, logging.*).
"""
from __future__ import annotations

import dataclasses
import math
import os
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import yaml

from .error_handler import ConfigurationError
from .logging_utils import setup_logger
from .utils import get_config_path

logger = setup_logger("socialav.config")

_CONFIG_PATH = str(get_config_path())
_CFG: Dict[str, Any] = {}
_LOADED = False

_BOOL_TRUE_VALUES = frozenset({"true", "1", "yes", "y", "on"})
_BOOL_FALSE_VALUES = frozenset({"false", "0", "no", "n", "off"})

OUTPUT_ROOT_ENV = "SOCIALAV_OUTPUT_ROOT"

ARMS = ("N", "E", "S", "W")
MOVEMENTS = ("Left", "Straight", "Right")


# ---------------------------------------------------------------------------
# Typed schema
# ---------------------------------------------------------------------------

@dataclass
class LayoutConfig:
    arm_length: float = 60.0
    lane_width: float = 4.0
    intersection_half: float = 8.0
    v_max: float = 9.0
    left_turn_radius: float = 9.0
    right_turn_radius: float = 5.0
    arc_resolution: float = 0.5


@dataclass
class DynamicsConfig:
    dt: float = 0.1
    wheelbase: float = 2.5
    length: float = 5.0
    width: float = 2.0
    max_steer: float = 0.6
    max_accel: float = 5.0
    max_decel: float = -6.0
    kp: float = 1.2
    ki: float = 0.1
    kd: float = 0.0
    integral_limit: float = 5.0
    lookahead: float = 5.0


@dataclass
class StyleConfig:
    d0: float
    T: float
    a0: float
    b0: float
    v0: float


def _default_styles() -> Dict[str, StyleConfig]:
    return {
        "Aggressive": StyleConfig(d0=2.0, T=1.0, a0=5.0, b0=5.0, v0=10.0),
        "Moderate": StyleConfig(d0=5.0, T=1.5, a0=2.5, b0=4.0, v0=8.0),
        "Conservative": StyleConfig(d0=8.0, T=2.0, a0=1.5, b0=2.0, v0=6.0),
    }


@dataclass
class DriversConfig:
    styles: Dict[str, StyleConfig] = field(default_factory=_default_styles)
    delta_exp: float = 4.0
    politeness: float = 0.3
    accel_gain_threshold: float = 0.2
    safe_braking: float = 4.0
    horizon: float = 3.0
    sample_dt: float = 0.5
    conflict_radius: float = 3.0


@dataclass
class EnvConfig:
    n_max: int = 6
    perception_radius: float = 50.0
    decision_substeps: int = 5
    max_steps: int = 120
    hv_count_min: int = 3
    hv_count_max: int = 6
    spawn_spacing: float = 10.0
    spawn_attempts: int = 100
    spawn_max_s: float = 35.0
    spawn_speed_min: float = 3.0
    av_entry: str = "S"
    av_movement: str = "Left"
    av_initial_speed: float = 5.0
    speed_step: float = 1.5
    collision_penalty: float = -10.0
    efficiency_scale: float = 0.1
    arrival_reward: float = 10.0
    arrival_margin: float = 1.0
    ttc_threshold: float = 1.5


@dataclass
class DplConfig:
    window: int = 20
    stride: int = 5
    embed_dim: int = 128
    gru_hidden: int = 256
    latent_dim: int = 16
    lr: float = 5e-4
    batch: int = 1024
    epochs: int = 50
    kl_beta: float = 0.001
    log_std_min: float = -6.0
    log_std_max: float = 2.0
    val_fraction: float = 0.1


@dataclass
class PolicyConfig:
    encoder_widths: List[int] = field(default_factory=lambda: [64, 64])
    att_dim: int = 128
    heads: int = 2
    att_out: int = 64
    decoder_widths: List[int] = field(default_factory=lambda: [64, 64])
    n_actions: int = 3
    use_prior: bool = True
    dpl_checkpoint: str = ""


@dataclass
class PpoConfig:
    total_steps: int = 30000
    forward_steps: int = 30
    clip: float = 0.2
    lr: float = 1e-4
    gamma: float = 0.95
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    buffer_cap: int = 960
    minibatch: int = 64
    update_epochs: int = 4
    target_update_rate: float = 0.01
    checkpoint_every: int = 10


@dataclass
class SocialConfig:
    phi: float = 0.0
    alpha: float = 0.5
    distance_decay: float = 0.05
    w_c: float = 1.0
    w_e: float = 1.0
    w_a: float = 1.0


def _default_phis() -> List[float]:
    return [k * math.pi / 12.0 for k in range(7)]


@dataclass
class ExperimentConfig:
    dataset_episodes: int = 500
    dataset_steps: int = 60
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    phis: List[float] = field(default_factory=_default_phis)
    steps_per_run: int = 30000
    eval_episodes: int = 50
    workers: int = 1
    smoothing_window: int = 0


@dataclass
class LoggingConfig:
    level: str = "INFO"
    structured: bool = False


@dataclass
class RunConfig:
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    drivers: DriversConfig = field(default_factory=DriversConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    dpl: DplConfig = field(default_factory=DplConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    social: SocialConfig = field(default_factory=SocialConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **sections: Any) -> "RunConfig":
        return dataclasses.replace(self, **sections)


# ---------------------------------------------------------------------------
# Building / validation
# ---------------------------------------------------------------------------

def build_run_config(data: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Build a validated RunConfig from a (possibly partial) nested mapping.

    Raises ConfigurationError listing every problem as a ``section.key`` path.
    """
    errors: List[str] = []
    cfg = _build_dataclass(RunConfig, data or {}, "", errors)
    if not errors:
        _validate_config(cfg, errors)
    if errors:
        error_msg = "Configuration validation failed:\n" + "\n".join(f"  - {error}" for error in errors)
        raise ConfigurationError(error_msg, component="config", operation="build_run_config", errors=errors)
    return cfg


def _build_dataclass(cls: type, data: Any, path: str, errors: List[str]) -> Any:
    if not isinstance(data, Mapping):
        errors.append(f"{path or '<root>'} must be a mapping")
        return cls() if _all_defaulted(cls) else None

    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            errors.append(f"{_join(path, str(key))} is not a known setting")

    kwargs: Dict[str, Any] = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        kwargs[f.name] = _coerce(data[f.name], hints[f.name], _join(path, f.name), errors)

    try:
        return cls(**kwargs)
    except TypeError as e:
        errors.append(f"{path or '<root>'}: {e}")
        return None


def _all_defaulted(cls: type) -> bool:
    return all(
        f.default is not dataclasses.MISSING or f.default_factory is not dataclasses.MISSING  # type: ignore[misc]
        for f in dataclasses.fields(cls)
    )


def _coerce(value: Any, typ: Any, path: str, errors: List[str]) -> Any:
    origin = typing.get_origin(typ)
    if dataclasses.is_dataclass(typ):
        return _build_dataclass(typ, value, path, errors)
    if origin in (list, List):
        (item_type,) = typing.get_args(typ)
        if not isinstance(value, (list, tuple)):
            errors.append(f"{path} must be a list")
            return value
        return [_coerce(v, item_type, f"{path}[{i}]", errors) for i, v in enumerate(value)]
    if origin in (dict, Dict):
        _, value_type = typing.get_args(typ)
        if not isinstance(value, Mapping):
            errors.append(f"{path} must be a mapping")
            return value
        return {str(k): _coerce(v, value_type, _join(path, str(k)), errors) for k, v in value.items()}
    if typ is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in _BOOL_TRUE_VALUES:
            return True
        if isinstance(value, str) and value.strip().lower() in _BOOL_FALSE_VALUES:
            return False
        errors.append(f"{path} must be a boolean")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            errors.append(f"{path} must be an integer")
            return value
        return int(value)
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path} must be a number")
            return value
        if not math.isfinite(float(value)):
            errors.append(f"{path} must be finite")
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            errors.append(f"{path} must be a string")
        return value
    return value


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _validate_config(cfg: RunConfig, errors: List[str]) -> None:
    """Range checks; every violation is reported with its field path."""
    warnings: List[str] = []

    def positive(path: str, value: float) -> None:
        if not value > 0:
            errors.append(f"{path} must be positive")

    def nonneg(path: str, value: float) -> None:
        if value < 0:
            errors.append(f"{path} must be non-negative")

    lay = cfg.layout
    for name in ("arm_length", "lane_width", "intersection_half", "v_max", "left_turn_radius",
                 "right_turn_radius", "arc_resolution"):
        positive(f"layout.{name}", getattr(lay, name))
    if lay.left_turn_radius <= lay.lane_width / 2 or lay.right_turn_radius <= lay.lane_width / 2:
        errors.append("layout turn radii must exceed half the lane width")
    if lay.left_turn_radius - lay.lane_width / 2 > lay.intersection_half:
        errors.append("layout.left_turn_radius does not fit inside the conflict box")
    if lay.right_turn_radius + lay.lane_width / 2 > lay.intersection_half:
        errors.append("layout.right_turn_radius does not fit inside the conflict box")
    if lay.arm_length <= lay.intersection_half:
        errors.append("layout.arm_length must exceed layout.intersection_half")

    dyn = cfg.dynamics
    for name in ("dt", "wheelbase", "length", "width", "max_steer", "max_accel", "integral_limit", "lookahead"):
        positive(f"dynamics.{name}", getattr(dyn, name))
    if dyn.max_steer >= math.pi / 2:
        errors.append("dynamics.max_steer must be below pi/2")
    if dyn.max_decel >= 0:
        errors.append("dynamics.max_decel must be negative")
    for name in ("kp", "ki", "kd"):
        nonneg(f"dynamics.{name}", getattr(dyn, name))

    drv = cfg.drivers
    if not drv.styles:
        errors.append("drivers.styles must define at least one style")
    for style_name, style in drv.styles.items():
        for name in ("d0", "T", "a0", "b0", "v0"):
            positive(f"drivers.styles.{style_name}.{name}", getattr(style, name))
    positive("drivers.delta_exp", drv.delta_exp)
    if not 0.0 <= drv.politeness <= 1.0:
        errors.append("drivers.politeness must be in [0, 1]")
    positive("drivers.accel_gain_threshold", drv.accel_gain_threshold)
    positive("drivers.safe_braking", drv.safe_braking)
    positive("drivers.horizon", drv.horizon)
    positive("drivers.sample_dt", drv.sample_dt)
    positive("drivers.conflict_radius", drv.conflict_radius)
    if drv.sample_dt > 0:
        ratio = drv.horizon / drv.sample_dt
        if abs(ratio - round(ratio)) > 1e-9:
            errors.append("drivers.sample_dt must divide drivers.horizon")

    env = cfg.env
    for name in ("n_max", "decision_substeps", "max_steps", "spawn_attempts"):
        positive(f"env.{name}", getattr(env, name))
    for name in ("perception_radius", "spawn_spacing", "spawn_max_s", "speed_step", "ttc_threshold"):
        positive(f"env.{name}", getattr(env, name))
    nonneg("env.hv_count_min", env.hv_count_min)
    if env.hv_count_max < env.hv_count_min:
        errors.append("env.hv_count_max must be >= env.hv_count_min")
    if env.av_entry not in ARMS:
        errors.append(f"env.av_entry must be one of {list(ARMS)}")
    if env.av_movement not in MOVEMENTS:
        errors.append(f"env.av_movement must be one of {list(MOVEMENTS)}")
    if not 0.0 <= env.av_initial_speed <= lay.v_max:
        errors.append("env.av_initial_speed must be in [0, layout.v_max]")
    nonneg("env.spawn_speed_min", env.spawn_speed_min)
    if env.collision_penalty > 0:
        errors.append("env.collision_penalty must be <= 0")

    dpl = cfg.dpl
    if dpl.window < 2:
        errors.append("dpl.window must be >= 2")
    for name in ("stride", "embed_dim", "gru_hidden", "latent_dim", "batch", "epochs"):
        positive(f"dpl.{name}", getattr(dpl, name))
    nonneg("dpl.lr", dpl.lr)
    nonneg("dpl.kl_beta", dpl.kl_beta)
    if dpl.log_std_min >= dpl.log_std_max:
        errors.append("dpl.log_std_min must be below dpl.log_std_max")
    if not 0.0 < dpl.val_fraction < 1.0:
        errors.append("dpl.val_fraction must be in (0, 1)")
    if dpl.batch > 1024:
        warnings.append("dpl.batch above the 1024 used for the reference runs")

    pol = cfg.policy
    for i, w in enumerate(pol.encoder_widths):
        positive(f"policy.encoder_widths[{i}]", w)
    for i, w in enumerate(pol.decoder_widths):
        positive(f"policy.decoder_widths[{i}]", w)
    if not pol.encoder_widths:
        errors.append("policy.encoder_widths must not be empty")
    for name in ("att_dim", "heads", "att_out", "n_actions"):
        positive(f"policy.{name}", getattr(pol, name))
    if pol.heads > 0 and pol.att_dim % pol.heads != 0:
        errors.append("policy.att_dim must be divisible by policy.heads")
    if pol.n_actions != 3:
        errors.append("policy.n_actions must be 3 (SlowDown, Cruise, SpeedUp)")

    ppo = cfg.ppo
    for name in ("total_steps", "forward_steps", "buffer_cap", "minibatch", "update_epochs", "checkpoint_every"):
        positive(f"ppo.{name}", getattr(ppo, name))
    if not 0.0 < ppo.clip < 1.0:
        errors.append("ppo.clip must be in (0, 1)")
    if not 0.0 < ppo.gamma <= 1.0:
        errors.append("ppo.gamma must be in (0, 1]")
    if not 0.0 <= ppo.gae_lambda <= 1.0:
        errors.append("ppo.gae_lambda must be in [0, 1]")
    nonneg("ppo.lr", ppo.lr)
    nonneg("ppo.value_coef", ppo.value_coef)
    nonneg("ppo.entropy_coef", ppo.entropy_coef)
    if ppo.minibatch > ppo.buffer_cap:
        errors.append("ppo.minibatch must not exceed ppo.buffer_cap")

    soc = cfg.social
    if not 0.0 <= soc.phi <= math.pi / 2 + 1e-12:
        errors.append("social.phi must be in [0, pi/2]")
    nonneg("social.alpha", soc.alpha)
    nonneg("social.distance_decay", soc.distance_decay)

    exp = cfg.experiment
    positive("experiment.dataset_episodes", exp.dataset_episodes)
    positive("experiment.dataset_steps", exp.dataset_steps)
    positive("experiment.steps_per_run", exp.steps_per_run)
    nonneg("experiment.eval_episodes", exp.eval_episodes)
    positive("experiment.workers", exp.workers)
    nonneg("experiment.smoothing_window", exp.smoothing_window)
    if not exp.seeds:
        errors.append("experiment.seeds must not be empty")
    for i, phi in enumerate(exp.phis):
        if not 0.0 <= phi <= math.pi / 2 + 1e-12:
            errors.append(f"experiment.phis[{i}] must be in [0, pi/2]")

    if cfg.logging.level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        errors.append("logging.level must be a standard logging level name")

    for warning in warnings:
        logger.warning(f"Config warning: {warning}")


# ---------------------------------------------------------------------------
# Overrides and file loading
# ---------------------------------------------------------------------------

def parse_override(expr: str) -> Tuple[List[str], Any]:
    """Parse ``section.key=value``; the value is read as YAML so lists/numbers keep their type."""
    if "=" not in expr:
        raise ConfigurationError(f"override {expr!r} must look like section.key=value",
                                 component="config", operation="parse_override")
    key, raw = expr.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigurationError(f"override {expr!r} has an empty key", component="config", operation="parse_override")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as e:
        raise ConfigurationError(f"override {expr!r}: {e}", component="config", operation="parse_override")
    return parts, value


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Return a copy of ``data`` with every override applied in order."""
    merged = _deep_copy(data)
    for expr in overrides:
        parts, value = parse_override(expr)
        cur = merged
        for part in parts[:-1]:
            nxt = cur.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                cur[part] = nxt
            cur = nxt
        cur[parts[-1]] = value
    return merged


def _deep_copy(data: Any) -> Any:
    if isinstance(data, Mapping):
        return {k: _deep_copy(v) for k, v in data.items()}
    if isinstance(data, list):
        return [_deep_copy(v) for v in data]
    return data


def read_config_file(path: str) -> Dict[str, Any]:
    """Read a YAML or JSON configuration file into a dict."""
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}", component="config", operation="read")
    except yaml.YAMLError as e:
        raise ConfigurationError(f"cannot parse config file {path}: {e}", component="config", operation="read")
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must contain a mapping", component="config", operation="read")
    # snapshots written by the CLI carry bookkeeping next to the sections
    data.pop("_run", None)
    return data


def load_run_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Load a run configuration: file (or defaults) + ``--set`` overrides, validated."""
    data = read_config_file(path) if path else {}
    return build_run_config(apply_overrides(data, overrides))


def default_output_root() -> str:
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


# ---------------------------------------------------------------------------
# Global dot-path accessors over config/config.yaml
# ---------------------------------------------------------------------------

def _load() -> None:
    global _CFG, _LOADED
    if _LOADED:
        return
    if os.path.exists(_CONFIG_PATH):
        with open(_CONFIG_PATH, "r") as f:
            _CFG = yaml.safe_load(f) or {}
    else:
        _CFG = {}
    build_run_config(_CFG)
    _LOADED = True


def get(path: str, default: Any = None) -> Any:
    """Dot-path getter from loaded config.

    Example: get("ppo.clip", 0.2)
    """
    _load()
    cur: Any = _CFG
    for part in path.split("."):
        if isinstance(cur, dict) and part in cur:
            cur = cur[part]
        else:
            return default
    return cur


def get_typed(path: str, default: Any, cast_type: type) -> Any:
    """Get a configuration value with type casting and default fallback."""
    val = get(path, default)

    if cast_type is bool:
        if isinstance(val, bool):
            return val
        if isinstance(val, str):
            normalized = val.strip().lower()
            if normalized in _BOOL_TRUE_VALUES:
                return True
            if normalized in _BOOL_FALSE_VALUES:
                return False
            return default
        try:
            return bool(val)
        except (TypeError, ValueError):
            return default

    if isinstance(val, cast_type):
        return val

    try:
        return cast_type(val)
    except (TypeError, ValueError):
        return default


def get_default_run_config() -> RunConfig:
    """The RunConfig described by config/config.yaml (dataclass defaults when absent)."""
    _load()
    return build_run_config(_CFG)


def get_log_level() -> str:
    return str(get("logging.level", "INFO")).upper()


def get_structured_logging() -> bool:
    return get_typed("logging.structured", False, bool)


def validate_config_silent() -> Tuple[bool, List[str]]:
    """Validate configuration without raising exceptions

    Returns:
        tuple: (is_valid, list_of_problems)
    """
    try:
        if not _LOADED:
            _load()
        build_run_config(_CFG)
        return True, []
    except ConfigurationError as e:
        return False, [str(e)]
    except Exception as e:
        return False, [f"Validation error: {e}"]


def get_all() -> Dict[str, Any]:
    """Get the entire configuration dictionary"""
    _load()
    return _CFG.copy()


def reload_config() -> None:
    """Reload configuration from file"""
    global _CFG, _LOADED
    _LOADED = False
    _CFG = {}
    _load()
