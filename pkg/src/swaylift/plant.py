"""Time-stepped plant: actuator lag, joint integration, pendulum swing, payload.

The discharge unit hangs from the TCP as a rigid rod.  Each horizontal axis
follows the small-angle pendulum law driven by TCP acceleration,

    theta_dd = (-a_tcp_axis - g * theta - friction * L * theta_d) / L,

integrated with semi-implicit Euler.  Joint velocity commands pass through a
first-order lag modelling the compliant low-level actuator loops.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .chain import JointState, KinematicChain, Pose
from .transforms import quat_from_matrix

GRAVITY = 9.81


class SimulationDiverged(RuntimeError):
    """Raised when the plant state stops being finite or physically valid."""


@dataclass
class PendulumState:
    theta: np.ndarray          # rad, deflection toward world x and y
    dtheta: np.ndarray         # rad/s
    length: float              # rod length, m
    friction: float            # 1/s
    extra_length: float = 0.0  # added below the tip once a payload hangs on

    @property
    def dynamic_length(self) -> float:
        return self.length + self.extra_length

    def copy(self) -> "PendulumState":
        return PendulumState(self.theta.copy(), self.dtheta.copy(),
                             self.length, self.friction, self.extra_length)


@dataclass
class PayloadState:
    """Container state; ``position`` is the bottom-centre (ground contact z=0)."""

    position: np.ndarray
    yaw: float
    mass: float
    com_offset: np.ndarray
    height: float = 1.8
    ring_separation: float = 0.8
    attached: bool = False
    hang_offset: np.ndarray | None = None

    def __post_init__(self):
        if not 100.0 <= self.mass <= 700.0:
            raise ValueError(f"container mass {self.mass} kg outside [100, 700]")

    @property
    def ring_midpoint(self) -> np.ndarray:
        return self.position + np.array([0.0, 0.0, self.height])

    @property
    def ring_positions(self) -> np.ndarray:
        half = 0.5 * self.ring_separation
        along = np.array([np.cos(self.yaw), np.sin(self.yaw), 0.0])
        mid = self.ring_midpoint
        return np.stack([mid + half * along, mid - half * along])

    def copy(self) -> "PayloadState":
        return PayloadState(self.position.copy(), self.yaw, self.mass,
                            self.com_offset.copy(), self.height, self.ring_separation,
                            self.attached,
                            None if self.hang_offset is None else self.hang_offset.copy())


@dataclass
class ActuatorParams:
    gains: np.ndarray          # per-joint velocity-tracking bandwidth, 1/s
    gain_scale: float = 1.0

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        if np.any(self.gains <= 0):
            raise ValueError("actuator gains must be positive")


@dataclass
class RandomizationConfig:
    scale_range: tuple[float, float] = (0.5, 1.5)
    mass_range: tuple[float, float] = (100.0, 700.0)
    com_jitter: float = 0.05

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi):
            raise ValueError(f"invalid scale_range {self.scale_range}")


def sample_randomization(config: RandomizationConfig, rng: np.random.Generator) -> dict:
    """Per-episode parameter draw; deterministic given the generator state."""
    lo, hi = config.scale_range
    j = config.com_jitter
    return {
        "mass": float(rng.uniform(*config.mass_range)),
        "com_offset": rng.uniform(-j, j, size=3),
        "actuator_scale": float(rng.uniform(lo, hi)),
        "friction_scale": float(rng.uniform(lo, hi)),
        "admittance_scale": float(rng.uniform(lo, hi)),
    }


@dataclass
class SimState:
    joints: JointState
    pendulum: PendulumState
    payload: PayloadState
    tcp_pose: Pose
    tcp_vel: np.ndarray
    tcp_acc: np.ndarray
    step_index: int
    dt: float
    jacobian: np.ndarray | None = None   # cached positional Jacobian at joints.q


def pendulum_direction(theta: np.ndarray) -> np.ndarray:
    """Unit vector from the TCP to the tip for deflection angles theta."""
    sx, sy = np.sin(theta[0]), np.sin(theta[1])
    sq = sx * sx + sy * sy
    if sq >= 1.0:
        raise SimulationDiverged("pendulum deflection beyond model validity")
    return np.array([sx, sy, -np.sqrt(1.0 - sq)])


class Plant:
    """Steps SimState under joint-velocity commands."""

    def __init__(self, chain: KinematicChain, actuator: ActuatorParams, dt: float,
                 pendulum_friction: float = 0.12, hook_eps: float = 0.05,
                 hook_theta: float = np.deg2rad(5.0), attach_extra_length: float = 0.9,
                 gravity: float = GRAVITY):
        self.chain = chain
        self.actuator = actuator
        self.dt = float(dt)
        self.pendulum_friction = float(pendulum_friction)
        self.hook_eps = float(hook_eps)
        self.hook_theta = float(hook_theta)
        self.attach_extra_length = float(attach_extra_length)
        self.gravity = float(gravity)

    def initial_state(self, q0: np.ndarray, payload: PayloadState,
                      friction_scale: float = 1.0) -> SimState:
        q0 = self.chain.clamp_positions(np.asarray(q0, dtype=float))
        p, R, J = self.chain.fk_with_jacobian(q0)
        pend = PendulumState(theta=np.zeros(2), dtheta=np.zeros(2),
                             length=self.chain.rod_length,
                             friction=self.pendulum_friction * friction_scale)
        return SimState(
            joints=JointState(q0, np.zeros(self.chain.N_ACTUATED)),
            pendulum=pend, payload=payload,
            tcp_pose=Pose(p, quat_from_matrix(R)),
            tcp_vel=np.zeros(3), tcp_acc=np.zeros(3),
            step_index=0, dt=self.dt, jacobian=J,
        )

    def step(self, state: SimState, u: np.ndarray) -> SimState:
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            raise SimulationDiverged("non-finite joint-velocity command")
        chain = self.chain
        dt = self.dt
        u = chain.clamp_velocities(u)

        k = self.actuator.gains * self.actuator.gain_scale
        dq = state.joints.dq + dt * k * (u - state.joints.dq)
        dq = chain.clamp_velocities(dq)
        q = chain.clamp_positions(state.joints.q + dt * dq)

        p, R, J = chain.fk_with_jacobian(q)
        v = (p - state.tcp_pose.position) / dt
        a = (v - state.tcp_vel) / dt

        pend = state.pendulum.copy()
        L = pend.dynamic_length
        theta_dd = (-a[:2] - self.gravity * pend.theta
                    - pend.friction * L * pend.dtheta) / L
        pend.dtheta = pend.dtheta + dt * theta_dd
        pend.theta = pend.theta + dt * pend.dtheta

        payload = state.payload.copy()
        if payload.attached:
            tip = p + chain.rod_length * pendulum_direction(pend.theta)
            payload.position = tip + payload.hang_offset

        new = SimState(
            joints=JointState(q, dq), pendulum=pend, payload=payload,
            tcp_pose=Pose(p, quat_from_matrix(R)), tcp_vel=v, tcp_acc=a,
            step_index=state.step_index + 1, dt=dt, jacobian=J,
        )
        if (not np.all(np.isfinite(q)) or not np.all(np.isfinite(pend.theta))
                or np.any(np.abs(pend.theta) >= np.pi / 2)):
            raise SimulationDiverged("simulation diverged")
        return new

    def tip_position(self, state: SimState) -> np.ndarray:
        return state.tcp_pose.position + self.chain.rod_length * pendulum_direction(state.pendulum.theta)

    def swing_angle(self, state: SimState) -> float:
        """Angle between the TCP->tip vector and gravity, in [0, pi]."""
        if self.chain.rod_length == 0.0:
            raise ValueError("discharge-unit tip coincides with the TCP")
        d = pendulum_direction(state.pendulum.theta)
        # gravity direction is -z; both norms divide out
        return float(np.arccos(min(max(-d[2], -1.0), 1.0)))

    def try_attach(self, state: SimState, lift_waypoint: np.ndarray) -> tuple[SimState, bool]:
        """One-shot hook-ring engagement check at the lift waypoint.

        Closed tolerances: equality on either bound still attaches.
        """
        err = float(np.linalg.norm(state.tcp_pose.position - np.asarray(lift_waypoint, dtype=float)))
        swing = self.swing_angle(state)
        ok = err <= self.hook_eps and swing <= self.hook_theta
        if not ok:
            return state, False
        payload = state.payload.copy()
        pend = state.pendulum.copy()
        tip = self.tip_position(state)
        payload.attached = True
        payload.hang_offset = (payload.position - tip) + payload.com_offset
        pend.extra_length = self.attach_extra_length
        return replace(state, payload=payload, pendulum=pend), True
