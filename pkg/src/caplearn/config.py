"""Scenario configuration: nested dataclasses loaded from YAML with strict validation.

Effective values are layered: dataclass defaults, then the preset file
(the robot rows of the parameter table), then the user's file. With
``preset: custom`` the robot-specific fields have no defaults and must be
given explicitly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from . import __version__
from .env import DisturbanceSpec, ResidualGroundTruth, RewardWeights, SurrogateEnv, TorsoModel
from .gp import GpHyper
from .lipm import LipmParams, StepTiming
from .ppo import ActionConfig, PolicyBundle, TrainConfig
from .safety import FilterConfig
from .tvr import TvrGains

PRESETS = ("draco_walking", "atlas_walking", "atlas_turning")
REQUIRED = object()


class ConfigError(ValueError):
    """Schema violation; ``path`` names the offending field, e.g. ``lipm.h``."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _req():
    return field(default=REQUIRED, metadata={"required": True})


@dataclass(frozen=True)
class LipmSection:
    h: float = _req()
    l_max: float = _req()
    g: float = 9.81


@dataclass(frozen=True)
class TimingSection:
    t_land: float = _req()
    t_lift: float = _req()
    t_ds: float = 0.0


@dataclass(frozen=True)
class TvrSection:
    t_xprime: float = _req()
    t_yprime: float = _req()
    kappa_x: float = _req()
    kappa_y: float = _req()


@dataclass(frozen=True)
class PolicySection:
    layers: tuple[int, ...] = _req()
    init_std: float = 0.1


@dataclass(frozen=True)
class SafetySection:
    k_eps: float = _req()
    eta: float = _req()
    capture_steps: int = 1
    literal_exponent: bool = False
    box_half_width: typing.Optional[float] = None  # None: l_max / sqrt(2)
    slack_tol: float = 1e-7


@dataclass(frozen=True)
class RewardSection:
    r_a: float = _req()
    w_b: float = _req()
    w_t: float = _req()
    w_s: float = _req()
    w_c: float = _req()


@dataclass(frozen=True)
class BehaviorSection:
    xd_des: float = _req()
    wz_des: float = _req()


@dataclass(frozen=True)
class ResidualSection:
    kind: str = "zero"
    magnitude: tuple[float, ...] = (0.0,) * 6
    rng_seed: int = 0
    tilt_deg: float = 10.0
    wavelength: float = 2.0


@dataclass(frozen=True)
class DisturbanceSection:
    force: float = 0.0
    duration: float = 0.01
    mass: float = 40.0
    timing: str = "random"
    probability: float = 0.0


@dataclass(frozen=True)
class TorsoSection:
    natural_freq: float = 2.0 * math.pi
    damping: float = 0.7
    kick_gain: float = 1.0
    yaw_noise: float = 0.01


@dataclass(frozen=True)
class EnvSection:
    horizon: int = 50
    fall_margin: float = 0.1
    init_pos_sd: float = 0.02
    init_vel_sd: float = 0.05


@dataclass(frozen=True)
class GpSection:
    lengthscales: tuple[float, ...] = (0.5,) * 6
    signal_var: float = 1e-3
    noise_var: float = 1e-6
    k_delta: float = 2.0
    capacity: int = 2000
    subsample: bool = False


@dataclass(frozen=True)
class ActionsSection:
    use_tvr: bool = True
    use_nn: bool = True
    use_sf: bool = True
    nn_clip: float = 0.25


@dataclass(frozen=True)
class TrainSection:
    episodes: int = 200
    samples_per_episode: int = 1024
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch: int = 64
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    ent_coef: float = 1e-3
    value_coef: float = 0.5
    n_envs: int = 0
    update_policy: bool = True
    checkpoint_every: int = 50
    trajectory_every: int = 0


@dataclass(frozen=True)
class EvalSection:
    episodes: int = 10
    push_duration: float = 0.04  # s; 600 N then changes the CoM velocity by 0.6 m/s on each axis
    push_step: int = 5  # footstep at which the named push cases strike


@dataclass(frozen=True)
class ScenarioConfig:
    preset: str = "custom"
    seed: int = 0
    lipm: LipmSection = field(default_factory=LipmSection)
    timing: TimingSection = field(default_factory=TimingSection)
    tvr: TvrSection = field(default_factory=TvrSection)
    policy: PolicySection = field(default_factory=PolicySection)
    safety: SafetySection = field(default_factory=SafetySection)
    reward: RewardSection = field(default_factory=RewardSection)
    behavior: BehaviorSection = field(default_factory=BehaviorSection)
    residual: ResidualSection = field(default_factory=ResidualSection)
    disturbance: DisturbanceSection = field(default_factory=DisturbanceSection)
    torso: TorsoSection = field(default_factory=TorsoSection)
    env: EnvSection = field(default_factory=EnvSection)
    gp: GpSection = field(default_factory=GpSection)
    actions: ActionsSection = field(default_factory=ActionsSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return _to_plain(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **overrides) -> "ScenarioConfig":
        """Return a copy with nested overrides such as ``{"train": {"episodes": 3}}``."""
        return from_dict(_merge(self.to_dict(), overrides))


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _coerce(value, tp, path: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        (item_tp, _) = typing.get_args(tp)
        return tuple(_coerce(v, item_tp, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(path, f"expected a finite number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {tp}")


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        sub = f"{path}.{f.name}" if path else f.name
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, data.get(f.name), sub)
        elif f.name in data:
            kwargs[f.name] = _coerce(data[f.name], tp, sub)
        elif f.metadata.get("required"):
            raise ConfigError(sub, "missing required field")
    return cls(**kwargs)


def from_dict(data: dict) -> ScenarioConfig:
    cfg = _build(ScenarioConfig, data, "")
    _validate(cfg)
    return cfg


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)} or custom")
    text = resources.files("caplearn.presets").joinpath(f"{name}.yaml").read_text()
    return yaml.safe_load(text)


def resolve(data: dict | None, preset: str | None = None) -> ScenarioConfig:
    """Layer a user mapping over its preset (``preset`` argument wins over the file's key)."""
    data = dict(data or {})
    name = preset or data.get("preset", "custom")
    if not isinstance(name, str):
        raise ConfigError("preset", f"expected a preset name, got {name!r}")
    data["preset"] = name
    if name != "custom":
        data = _merge(preset_dict(name), data)
    return from_dict(data)


def load(path=None, preset: str | None = None) -> ScenarioConfig:
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    elif preset is None:
        raise ConfigError("preset", "give a config file or a preset")
    return resolve(data, preset)


def _validate(cfg: ScenarioConfig) -> None:
    checks = [
        ("lipm.h", cfg.lipm.h > 0, "must be positive"),
        ("lipm.l_max", cfg.lipm.l_max > 0, "must be positive"),
        ("lipm.g", cfg.lipm.g > 0, "must be positive"),
        ("timing.t_land", cfg.timing.t_land >= 0, "must be nonnegative"),
        ("timing.t_lift", cfg.timing.t_lift >= 0, "must be nonnegative"),
        ("timing.t_ds", cfg.timing.t_ds >= 0, "must be nonnegative"),
        ("tvr.t_xprime", cfg.tvr.t_xprime >= 1e-3, "must be at least 1e-3 s"),
        ("tvr.t_yprime", cfg.tvr.t_yprime >= 1e-3, "must be at least 1e-3 s"),
        ("tvr.kappa_x", -1 < cfg.tvr.kappa_x < 1, "must lie in (-1, 1)"),
        ("tvr.kappa_y", -1 < cfg.tvr.kappa_y < 1, "must lie in (-1, 1)"),
        ("policy.layers", len(cfg.policy.layers) >= 1 and min(cfg.policy.layers) > 0, "needs positive widths"),
        ("policy.init_std", 1e-4 <= cfg.policy.init_std <= 1.0, "must lie in [1e-4, 1]"),
        ("safety.k_eps", cfg.safety.k_eps > 0, "must be positive"),
        ("safety.eta", 0 <= cfg.safety.eta <= 1, "must lie in [0, 1]"),
        ("safety.capture_steps", cfg.safety.capture_steps in (1, 2), "must be 1 or 2"),
        ("residual.kind", cfg.residual.kind in ("zero", "constant_bias", "smooth_field", "tilt_preset"), "unknown kind"),
        ("residual.magnitude", len(cfg.residual.magnitude) == 6, "needs 6 entries"),
        ("disturbance.timing", cfg.disturbance.timing in ("pre_apex", "post_apex", "random"), "unknown timing"),
        ("disturbance.probability", 0 <= cfg.disturbance.probability <= 1, "must lie in [0, 1]"),
        ("gp.lengthscales", len(cfg.gp.lengthscales) == 6 and min(cfg.gp.lengthscales) > 0, "needs 6 positive entries"),
        ("gp.capacity", cfg.gp.capacity >= 1, "must be positive"),
        ("env.horizon", cfg.env.horizon >= 1, "must be positive"),
        ("env.fall_margin", cfg.env.fall_margin >= 0, "must be nonnegative"),
        ("train.gamma", 0 < cfg.train.gamma < 1, "must lie in (0, 1)"),
        ("train.clip_eps", 0 < cfg.train.clip_eps <= 0.5, "must lie in (0, 0.5]"),
        ("train.episodes", cfg.train.episodes >= 0, "must be nonnegative"),
        ("train.samples_per_episode", cfg.train.samples_per_episode >= 1, "must be positive"),
        ("eval.episodes", cfg.eval.episodes >= 0, "must be nonnegative"),
        ("eval.push_duration", cfg.eval.push_duration > 0, "must be positive"),
        ("eval.push_step", 0 <= cfg.eval.push_step < cfg.env.horizon, "must lie inside the horizon"),
    ]
    for path, ok, msg in checks:
        if not ok:
            raise ConfigError(path, msg)
    if cfg.preset not in PRESETS + ("custom",):
        raise ConfigError("preset", f"unknown preset {cfg.preset!r}")


def manifest(cfg: ScenarioConfig, command: str, argv: list[str] | None = None) -> dict:
    return {
        "command": command,
        "argv": list(argv or []),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "code_version": __version__,
        "config": cfg.to_dict(),
    }


# -- builders -----------------------------------------------------------------

def lipm_params(cfg: ScenarioConfig) -> LipmParams:
    return LipmParams(cfg.lipm.h, cfg.lipm.l_max, cfg.lipm.g)


def step_timing(cfg: ScenarioConfig) -> StepTiming:
    return StepTiming(cfg.timing.t_land, cfg.timing.t_lift, cfg.timing.t_ds)


def tvr_gains(cfg: ScenarioConfig) -> TvrGains:
    t = cfg.tvr
    return TvrGains(t.t_xprime, t.t_yprime, t.kappa_x, t.kappa_y)


def filter_config(cfg: ScenarioConfig) -> FilterConfig:
    params = lipm_params(cfg)
    half = cfg.safety.box_half_width
    if half is None:
        half = params.l_max / math.sqrt(2.0)
    return FilterConfig(cfg.safety.k_eps, cfg.safety.eta, (-half, -half), (half, half), cfg.safety.slack_tol)


def gp_hyper(cfg: ScenarioConfig) -> GpHyper:
    g = cfg.gp
    return GpHyper(g.lengthscales, g.signal_var, g.noise_var, g.k_delta, g.capacity)


def train_config(cfg: ScenarioConfig) -> TrainConfig:
    return TrainConfig(**dataclasses.asdict(cfg.train))


def action_config(cfg: ScenarioConfig) -> ActionConfig:
    return ActionConfig(**dataclasses.asdict(cfg.actions))


def residual(cfg: ScenarioConfig) -> ResidualGroundTruth:
    r = cfg.residual
    return ResidualGroundTruth(r.kind, r.magnitude, r.rng_seed, r.tilt_deg, r.wavelength)


def disturbance(cfg: ScenarioConfig) -> DisturbanceSpec:
    d = cfg.disturbance
    return DisturbanceSpec(d.force, d.duration, d.mass, d.timing, d.probability)


def env_factory(cfg: ScenarioConfig, disturbance_spec: DisturbanceSpec | None = None):
    """Return ``rng -> SurrogateEnv`` for this scenario."""
    params, timing = lipm_params(cfg), step_timing(cfg)
    weights = RewardWeights(**dataclasses.asdict(cfg.reward))
    res = residual(cfg)
    dist = disturbance_spec or disturbance(cfg)
    torso = TorsoModel(**dataclasses.asdict(cfg.torso))
    e = cfg.env

    def make(rng):
        return SurrogateEnv(params, timing, weights, cfg.behavior.xd_des, cfg.behavior.wz_des, res, dist, torso,
                            e.horizon, e.fall_margin, (e.init_pos_sd, e.init_vel_sd), seed=rng)

    return make


def policy_bundle(cfg: ScenarioConfig) -> PolicyBundle:
    return PolicyBundle.create(
        lipm_params(cfg), step_timing(cfg), tvr_gains(cfg), filter_config(cfg),
        capture_steps=cfg.safety.capture_steps, actions=action_config(cfg), hidden=cfg.policy.layers,
        init_std=cfg.policy.init_std, seed=cfg.seed, literal_exponent=cfg.safety.literal_exponent,
    )
