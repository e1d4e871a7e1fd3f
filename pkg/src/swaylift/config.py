"""Typed configuration tree with YAML overrides.

Every tunable lives here with its default; YAML files only override fields
they name.  Unknown keys are rejected so typos fail loudly.  The canonical
JSON dump of a config (and its sha256) identifies experiment artifacts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass

import numpy as np
import yaml

from .chain import KinematicChain, default_chain


@dataclass
class PlantConfig:
    dt: float = 0.01
    actuator_gain: float = 8.0
    pendulum_friction: float = 0.05
    hook_eps: float = 0.04
    hook_theta_deg: float = 3.0
    attach_extra_length: float = 0.9


@dataclass
class AdmittanceConfig:
    k_p: float = 80.0
    k_v: float = 40.0
    k_i: float = 5.0
    m_d: float = 10.0
    d_d: float = 60.0
    k_d: float = 20.0
    v_max: float = 1.0
    e_i_max: float = 0.5


@dataclass
class AntiSwingConfig:
    zeta: float = 0.5
    omega_n: float = 3.6
    w_s: float = 2.0
    alpha: float = 0.2


@dataclass
class IKConfig:
    lambda_d: float = 0.05
    k_ns: float = 0.5


@dataclass
class AblationConfig:
    anti_sway: bool = True
    integral: bool = True


@dataclass
class ControllerConfig:
    admittance: AdmittanceConfig = field(default_factory=AdmittanceConfig)
    anti_swing: AntiSwingConfig = field(default_factory=AntiSwingConfig)
    ik: IKConfig = field(default_factory=IKConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)


@dataclass
class WorkspaceConfig:
    radius_range: tuple[float, float] = (5.0, 8.0)
    angle_range_deg: tuple[float, float] = (40.0, 140.0)
    yaw_limit_deg: float = 30.0
    container_height: float = 1.8
    ring_separation: float = 0.8
    cube_half_xy: float = 1.0
    cube_z_range: tuple[float, float] = (1.1, 2.1)   # above the hook pose


@dataclass
class TrajectoryConfig:
    n_points: int = 60
    tube_radius: float = 0.2
    advance_radius: float = 0.15
    settle_radius: float = 0.08
    hook_dwell_steps: int = 250   # pause at the hook before the attach attempt
    cruise_speed: float = 0.8
    approach_height: float = 0.8
    lift_height: float = 1.2


@dataclass
class RewardConfig:
    sigma: float = 0.5
    theta_max_deg: float = 20.0
    z_min: float = 0.5
    c1: float = 0.5    # coarse target
    c2: float = 1.0    # fine target
    c3: float = 0.5    # tube
    c4: float = 0.3    # progress
    c7: float = 0.5    # oscillation
    c8: float = 2.0    # lifting
    c9: float = 0.01   # residual smoothness


@dataclass
class TerminationConfig:
    d_max: float = 1.5
    tube_violation_limit: int = 50
    theta_max_deg: float = 20.0
    horizon: int = 1500


@dataclass
class RandomizationSection:
    scale_range: tuple[float, float] = (0.5, 1.5)
    mass_range: tuple[float, float] = (100.0, 700.0)
    com_jitter: float = 0.05


@dataclass
class ObservationConfig:
    # Table-literal default: observe the fixed discharge-unit actuator pair.
    passive_swing: bool = False


@dataclass
class ResidualConfig:
    mode: str = "additive"        # "additive" | "blend"
    u_res_max: float = 0.2
    lambda_scale: float = 0.5
    lambda_max: float = 0.9


@dataclass
class PPOConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    epochs: int = 5
    minibatch_size: int = 256
    rollout_steps: int = 512
    n_envs: int = 16
    entropy_coef: float = 0.003
    value_coef: float = 0.5
    max_grad_norm: float = 1.0
    iterations: int = 60
    log_std_init: float = -2.3
    hidden_sizes: tuple[int, ...] = (128, 64, 32)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.clip_eps < 1.0):
            raise ValueError("clip_eps must be in (0, 1)")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gae_lambda must be in [0, 1]")


@dataclass
class MetricsConfig:
    window: tuple[int, int] = (700, 1200)
    window_reference_horizon: int = 1500


@dataclass
class EvalConfig:
    episodes: int = 50


@dataclass
class Config:
    chain: dict = field(default_factory=lambda: default_chain().to_dict())
    rod_length: float = 1.5
    plant: PlantConfig = field(default_factory=PlantConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    workspace: WorkspaceConfig = field(default_factory=WorkspaceConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    termination: TerminationConfig = field(default_factory=TerminationConfig)
    randomization: RandomizationSection = field(default_factory=RandomizationSection)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    residual: ResidualConfig = field(default_factory=ResidualConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def build_chain(self) -> KinematicChain:
        data = dict(self.chain)
        data["tool_offset"] = [0.0, 0.0, -float(self.rod_length)]
        return KinematicChain.from_dict(data)


def _merge_into(obj, data: dict, path: str = ""):
    valid = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in valid:
            raise KeyError(f"unknown config key {path + key!r}")
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, dict):
            _merge_into(current, value, path + key + ".")
        elif isinstance(current, tuple) and isinstance(value, (list, tuple)):
            setattr(obj, key, tuple(value))
        else:
            setattr(obj, key, value)
    return obj


def _revalidate(obj):
    for f in fields(obj):
        v = getattr(obj, f.name)
        if is_dataclass(v):
            _revalidate(v)
    post = getattr(obj, "__post_init__", None)
    if post is not None:
        post()


def config_from_dict(data: dict | None) -> Config:
    cfg = Config()
    if data:
        _merge_into(cfg, data)
        _revalidate(cfg)
    return cfg


def load_config(path: str | None) -> Config:
    if path is None:
        return Config()
    with open(path, "r") as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data)


def _plain(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_to_dict(cfg: Config) -> dict:
    return _plain(cfg)


def canonical_json(cfg: Config) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: Config) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def dump_default_yaml() -> str:
    """Full default configuration as YAML (documents every field)."""
    return yaml.safe_dump(config_to_dict(Config()), sort_keys=False)
