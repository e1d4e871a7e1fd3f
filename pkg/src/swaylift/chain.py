"""Kinematic description of the 7-DoF crane and its passive tool joints.

The crane is a serial chain of 3 revolute + 4 prismatic actuated joints.
Two passive revolute joints at the TCP model the hanging discharge unit;
they are described here for bookkeeping but integrated separately by the
plant as a small-angle pendulum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transforms import axis_angle_matrix, quat_from_matrix, quat_normalize, quat_to_matrix

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


@dataclass(frozen=True)
class JointSpec:
    """One joint: motion axis in the local frame plus a rigid parent offset."""

    kind: str
    axis: np.ndarray
    offset_pos: np.ndarray
    offset_quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    pos_limits: tuple[float, float] = (-np.pi, np.pi)
    vel_limit: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        axis = np.asarray(self.axis, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise ValueError(f"joint axis must have unit norm, got {axis}")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "offset_pos", np.asarray(self.offset_pos, dtype=float))
        object.__setattr__(self, "offset_quat", quat_normalize(self.offset_quat))
        lo, hi = self.pos_limits
        if not lo < hi:
            raise ValueError(f"pos_limits must satisfy lower < upper, got {self.pos_limits}")
        if not self.vel_limit > 0:
            raise ValueError("vel_limit must be positive")


@dataclass(frozen=True)
class Pose:
    """Position plus unit quaternion orientation."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        q = np.asarray(self.orientation, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("orientation must be a unit quaternion")
        object.__setattr__(self, "orientation", q)


@dataclass
class JointState:
    q: np.ndarray
    dq: np.ndarray

    def copy(self) -> "JointState":
        return JointState(self.q.copy(), self.dq.copy())


class KinematicChain:
    """Seven actuated joints, two passive swing joints, and a tool offset.

    ``tool_offset_pos`` points from the TCP to the discharge-unit tip at
    zero swing (straight down by the rod length).
    """

    N_ACTUATED = 7

    def __init__(self, joints: list[JointSpec], passive_joints: list[JointSpec],
                 tool_offset_pos: np.ndarray, outreach: float):
        if len(joints) != self.N_ACTUATED:
            raise ValueError(f"expected {self.N_ACTUATED} actuated joints, got {len(joints)}")
        n_rev = sum(1 for j in joints if j.kind == REVOLUTE)
        n_pri = sum(1 for j in joints if j.kind == PRISMATIC)
        if (n_rev, n_pri) != (3, 4):
            raise ValueError(f"chain must have 3 revolute + 4 prismatic actuated joints, got {n_rev}R/{n_pri}P")
        if len(passive_joints) != 2:
            raise ValueError("expected exactly 2 passive swing joints")
        self.joints = list(joints)
        self.passive_joints = list(passive_joints)
        self.tool_offset_pos = np.asarray(tool_offset_pos, dtype=float)
        self.outreach = float(outreach)

        # flat arrays for the FK/Jacobian hot path
        self._revolute = np.array([j.kind == REVOLUTE for j in joints])
        self._axes = np.array([j.axis for j in joints])
        self._off_pos = np.array([j.offset_pos for j in joints])
        self._off_rot = np.array([quat_to_matrix(j.offset_quat) for j in joints])
        self._off_is_identity = np.array(
            [np.allclose(R, np.eye(3), atol=0.0) for R in self._off_rot])
        self.pos_limits = np.array([j.pos_limits for j in joints])
        self.vel_limits = np.array([j.vel_limit for j in joints])
        self._check_reach()

    def _check_reach(self):
        """Fully extended reach, measured from the boom pivot (joint 2 origin)."""
        q_ext = np.where(self._revolute, 0.0, self.pos_limits[:, 1])
        p_tcp, _, origins, _ = self._fk_pass(q_ext)
        reach = float(np.linalg.norm(p_tcp - origins[1]))
        if reach > self.outreach + 1e-9:
            raise ValueError(f"fully extended reach {reach:.3f} m exceeds outreach {self.outreach} m")

    @property
    def rod_length(self) -> float:
        return float(np.linalg.norm(self.tool_offset_pos))

    def mid_posture(self) -> np.ndarray:
        return self.pos_limits.mean(axis=1)

    def clamp_positions(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.pos_limits[:, 0], self.pos_limits[:, 1])

    def clamp_velocities(self, dq: np.ndarray) -> np.ndarray:
        return np.clip(dq, -self.vel_limits, self.vel_limits)

    def _fk_pass(self, q: np.ndarray):
        """One sweep over the actuated joints.

        Returns (tcp position, tcp rotation, per-joint world origins,
        per-joint world axes).
        """
        p = np.zeros(3)
        R = np.eye(3)
        origins = np.empty((self.N_ACTUATED, 3))
        axes_w = np.empty((self.N_ACTUATED, 3))
        for i in range(self.N_ACTUATED):
            p = p + R @ self._off_pos[i]
            if not self._off_is_identity[i]:
                R = R @ self._off_rot[i]
            origins[i] = p
            axis_w = R @ self._axes[i]
            axes_w[i] = axis_w
            if self._revolute[i]:
                R = R @ axis_angle_matrix(self._axes[i], q[i])
            else:
                p = p + axis_w * q[i]
        return p, R, origins, axes_w

    def fk_with_jacobian(self, q: np.ndarray):
        """TCP position, rotation matrix and 3x7 positional Jacobian."""
        p_tcp, R, origins, axes_w = self._fk_pass(q)
        r = p_tcp - origins
        a = axes_w
        cross = np.empty_like(a)
        cross[:, 0] = a[:, 1] * r[:, 2] - a[:, 2] * r[:, 1]
        cross[:, 1] = a[:, 2] * r[:, 0] - a[:, 0] * r[:, 2]
        cross[:, 2] = a[:, 0] * r[:, 1] - a[:, 1] * r[:, 0]
        J = np.where(self._revolute[:, None], cross, a).T
        return p_tcp, R, J

    def to_dict(self) -> dict:
        def joint_dict(j: JointSpec) -> dict:
            return {
                "name": j.name,
                "kind": j.kind,
                "axis": [float(v) for v in j.axis],
                "offset": [float(v) for v in j.offset_pos],
                "offset_quat": [float(v) for v in j.offset_quat],
                "limits": [float(j.pos_limits[0]), float(j.pos_limits[1])],
                "vel_limit": float(j.vel_limit),
            }
        return {
            "outreach": self.outreach,
            "tool_offset": [float(v) for v in self.tool_offset_pos],
            "joints": [joint_dict(j) for j in self.joints],
            "passive_joints": [joint_dict(j) for j in self.passive_joints],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KinematicChain":
        def parse(jd: dict) -> JointSpec:
            return JointSpec(
                kind=jd["kind"],
                axis=np.asarray(jd["axis"], dtype=float),
                offset_pos=np.asarray(jd["offset"], dtype=float),
                offset_quat=np.asarray(jd.get("offset_quat", [1.0, 0.0, 0.0, 0.0]), dtype=float),
                pos_limits=(float(jd["limits"][0]), float(jd["limits"][1])),
                vel_limit=float(jd["vel_limit"]),
                name=jd.get("name", ""),
            )
        return cls(
            joints=[parse(jd) for jd in data["joints"]],
            passive_joints=[parse(jd) for jd in data["passive_joints"]],
            tool_offset_pos=np.asarray(data["tool_offset"], dtype=float),
            outreach=float(data["outreach"]),
        )


def forward_kinematics(chain: KinematicChain, q: np.ndarray) -> Pose:
    """TCP pose from the 7 actuated joint positions."""
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.N_ACTUATED,) or not np.all(np.isfinite(q)):
        raise ValueError("invalid joint state")
    p, R, _, _ = chain._fk_pass(q)
    return Pose(p, quat_from_matrix(R))


def positional_jacobian(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """3x7 matrix of TCP-position sensitivities to each joint."""
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.N_ACTUATED,) or not np.all(np.isfinite(q)):
        raise ValueError("invalid joint state")
    _, _, J = chain.fk_with_jacobian(q)
    return J


def solve_position_ik(chain: KinematicChain, target: np.ndarray, q0: np.ndarray,
                      tol: float = 1e-3, max_iters: int = 200,
                      damping: float = 0.05, step_cap: float = 0.5):
    """Iterative damped-least-squares IK to a 3-D TCP target.

    Returns (q, converged). Joint limits are enforced every iteration.
    """
    q = np.asarray(q0, dtype=float).copy()
    lam2 = damping * damping
    eye3 = np.eye(3)
    for _ in range(max_iters):
        p, _, J = chain.fk_with_jacobian(q)
        err = target - p
        if np.linalg.norm(err) <= tol:
            return q, True
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * eye3, err)
        biggest = np.max(np.abs(dq))
        if biggest > step_cap:
            dq *= step_cap / biggest
        q = chain.clamp_positions(q + dq)
    p, _, _ = chain.fk_with_jacobian(q)
    return q, bool(np.linalg.norm(target - p) <= tol)


def default_chain(rod_length: float = 1.5) -> KinematicChain:
    """Loader-crane layout: slew, boom pitch, 4 telescope stages, wrist.

    Base column 2.0 m, boom pivot offset (0.5, 0, 0.5), boom base segment
    4.0 m, telescope strokes 2.25 m each (reach from the pivot = 13.0 m).
    """
    joints = [
        JointSpec(REVOLUTE, np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 2.0]),
                  pos_limits=(-np.pi, np.pi), vel_limit=0.5, name="slew"),
        JointSpec(REVOLUTE, np.array([0.0, 1.0, 0.0]), np.array([0.5, 0.0, 0.5]),
                  pos_limits=(-1.35, 0.2), vel_limit=0.4, name="boom_pitch"),
        JointSpec(PRISMATIC, np.array([1.0, 0.0, 0.0]), np.array([4.0, 0.0, 0.0]),
                  pos_limits=(0.0, 2.25), vel_limit=0.5, name="telescope_1"),
        JointSpec(PRISMATIC, np.array([1.0, 0.0, 0.0]), np.zeros(3),
                  pos_limits=(0.0, 2.25), vel_limit=0.5, name="telescope_2"),
        JointSpec(PRISMATIC, np.array([1.0, 0.0, 0.0]), np.zeros(3),
                  pos_limits=(0.0, 2.25), vel_limit=0.5, name="telescope_3"),
        JointSpec(PRISMATIC, np.array([1.0, 0.0, 0.0]), np.zeros(3),
                  pos_limits=(0.0, 2.25), vel_limit=0.5, name="telescope_4"),
        JointSpec(REVOLUTE, np.array([0.0, 0.0, 1.0]), np.zeros(3),
                  pos_limits=(-np.pi, np.pi), vel_limit=1.0, name="wrist"),
    ]
    passive = [
        JointSpec(REVOLUTE, np.array([1.0, 0.0, 0.0]), np.zeros(3),
                  pos_limits=(-np.pi / 2, np.pi / 2), vel_limit=10.0, name="swing_x"),
        JointSpec(REVOLUTE, np.array([0.0, 1.0, 0.0]), np.zeros(3),
                  pos_limits=(-np.pi / 2, np.pi / 2), vel_limit=10.0, name="swing_y"),
    ]
    return KinematicChain(joints, passive, np.array([0.0, 0.0, -rod_length]), outreach=13.0)
