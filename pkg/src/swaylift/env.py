"""RL task environment for the container-lifting phase.

Episodes sample a container left or right of the truck, initialize the TCP in
a cube above it, build the three-segment reference trajectory and then track
it with the nominal controller.  A residual joint-velocity correction is
accepted every step but only applied while the current control point lies in
segment B.  Observations follow the 78-dimensional layout: three-step history
of crane/discharge-unit joint states and reference points, the tube margin,
and the previous nominal and residual actions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .chain import solve_position_ik
from .config import Config
from .controller import (AdmittanceGains, AntiSwingParams, ControllerInputs,
                         IKParams, NominalController)
from .plant import (ActuatorParams, PayloadState, Plant, RandomizationConfig,
                    SimulationDiverged, sample_randomization)
from .trajectory import TrajectorySpec, build_trajectory, tube_delta

N_JOINTS = 7
FRAME_DIM = N_JOINTS + N_JOINTS + 2 + 2 + 3
OBS_DIM = 3 * FRAME_DIM + 1 + N_JOINTS + N_JOINTS    # 78

EVENT_NONE = "none"
EVENT_DISTANCE = "distance_exceeded"
EVENT_TUBE = "tube_violations"
EVENT_TILT = "tilt_exceeded"
EVENT_HORIZON = "horizon"
EVENT_SUCCESS_END = "success_end"
EVENT_DIVERGED = "diverged"


class EpisodeFinished(RuntimeError):
    """step() was called after the episode terminated."""


@dataclass
class ObservationFrame:
    q_crane: np.ndarray
    dq_crane: np.ndarray
    q_du: np.ndarray
    dq_du: np.ndarray
    ref_point: np.ndarray


def flatten_observation(frames: list[ObservationFrame], tube_val: float,
                        prev_nominal: np.ndarray, prev_residual: np.ndarray) -> np.ndarray:
    """Concatenate per Table-layout: each block holds (t, t-1, t-2)."""
    parts = []
    for attr in ("q_crane", "dq_crane", "q_du", "dq_du", "ref_point"):
        for fr in frames:
            parts.append(getattr(fr, attr))
    parts.append(np.array([tube_val]))
    parts.append(prev_nominal)
    parts.append(prev_residual)
    return np.concatenate(parts)


def reward_components(d_m: float, delta: float, tube_inside: bool, m: int, M: int,
                      swing: float, container_z: float, u_res: np.ndarray,
                      sigma: float, theta_max: float, z_min: float) -> dict:
    """The seven per-step reward terms.

    The oscillation term can reach 1 + tanh(1) at zero swing; the swing angle
    is computed against the normalized gravity direction.
    """
    return {
        "target_coarse": -max(0.0, d_m - sigma) / sigma,
        "target_fine": 1.0 - np.tanh(d_m / sigma),
        "tube": 1.0 if (delta >= 0.0 and tube_inside) else 0.0,
        "progress": m / M,
        "oscillation": 1.0 - np.tanh((swing - theta_max) / theta_max),
        "lifting": 1.0 if container_z > z_min else 0.0,
        "smooth": -float(np.sum(np.square(u_res))),
    }


class TaskEnv:
    """Single container-lifting episode environment."""

    def __init__(self, config: Config, seed: int = 0, log_steps: bool = True,
                 log_observations: bool = False):
        self.cfg = config
        self.chain = config.build_chain()
        self.rng = np.random.default_rng(seed)
        self.log_steps = log_steps
        self.log_observations = log_observations

        pc = config.plant
        self.plant = Plant(
            self.chain,
            ActuatorParams(np.full(N_JOINTS, pc.actuator_gain)),
            dt=pc.dt,
            pendulum_friction=pc.pendulum_friction,
            hook_eps=pc.hook_eps,
            hook_theta=np.deg2rad(pc.hook_theta_deg),
            attach_extra_length=pc.attach_extra_length,
        )
        self._base_gains = self._make_gains()
        self.controller = NominalController(
            self._base_gains,
            AntiSwingParams(zeta=config.controller.anti_swing.zeta,
                            omega_n=config.controller.anti_swing.omega_n,
                            w_s=config.controller.anti_swing.w_s,
                            alpha=config.controller.anti_swing.alpha),
            IKParams(lambda_d=config.controller.ik.lambda_d,
                     k_ns=config.controller.ik.k_ns,
                     q_c=self.chain.mid_posture()),
            dt=pc.dt,
            vel_limits=self.chain.vel_limits,
            anti_sway_enabled=config.controller.ablation.anti_sway,
            integral_enabled=config.controller.ablation.integral,
        )
        self.rand_cfg = RandomizationConfig(
            scale_range=tuple(config.randomization.scale_range),
            mass_range=tuple(config.randomization.mass_range),
            com_jitter=config.randomization.com_jitter,
        )
        self.theta_max = np.deg2rad(config.termination.theta_max_deg)
        self.reward_theta_max = np.deg2rad(config.reward.theta_max_deg)
        self.state = None
        self.traj: TrajectorySpec | None = None
        self.done = True
        self.obs_dim = OBS_DIM
        self.act_dim = N_JOINTS
        self.u_res_max = config.residual.u_res_max

    def _make_gains(self) -> AdmittanceGains:
        a = self.cfg.controller.admittance
        return AdmittanceGains(a.k_p, a.k_v, a.k_i, a.m_d, a.d_d, a.k_d,
                               v_max=a.v_max, e_i_max=a.e_i_max)

    # ------------------------------------------------------------------ reset

    def _sample_container(self, rng: np.random.Generator, side: str):
        ws = self.cfg.workspace
        radius = rng.uniform(*ws.radius_range)
        angle = np.deg2rad(rng.uniform(*ws.angle_range_deg))
        if side == "right":
            angle = -angle
        yaw_lim = np.deg2rad(ws.yaw_limit_deg)
        yaw = rng.uniform(-yaw_lim, yaw_lim)
        pos = np.array([radius * np.cos(angle), radius * np.sin(angle), 0.0])
        return pos, yaw

    def reset(self, seed: int | None = None, side: str | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        rng = self.rng
        ws = self.cfg.workspace
        tj = self.cfg.trajectory

        draws = sample_randomization(self.rand_cfg, rng)
        ep_side = side if side in ("left", "right") else ("left" if rng.random() < 0.5 else "right")
        container_pos, yaw = self._sample_container(rng, ep_side)
        payload = PayloadState(position=container_pos, yaw=yaw, mass=draws["mass"],
                               com_offset=draws["com_offset"], height=ws.container_height,
                               ring_separation=ws.ring_separation)
        hook = payload.ring_midpoint + np.array([0.0, 0.0, self.chain.rod_length])

        q0 = None
        tcp0 = None
        for _ in range(10):
            off_xy = rng.uniform(-ws.cube_half_xy, ws.cube_half_xy, size=2)
            off_z = rng.uniform(*ws.cube_z_range)
            tcp0 = hook + np.array([off_xy[0], off_xy[1], off_z])
            q_try, ok = solve_position_ik(self.chain, tcp0, self.chain.mid_posture(),
                                          tol=1e-3, max_iters=200,
                                          damping=self.cfg.controller.ik.lambda_d)
            if ok:
                q0 = q_try
                break
        if q0 is None:
            raise RuntimeError("initial IK failed for 10 sampled start poses")

        self.traj = build_trajectory(tcp0, hook, tj.n_points, tj.tube_radius,
                                     tj.advance_radius,
                                     approach_height=tj.approach_height,
                                     lift_height=tj.lift_height)
        self.plant.actuator.gain_scale = draws["actuator_scale"]
        self.controller.gains = self._base_gains.scaled(draws["admittance_scale"])
        self.state = self.plant.initial_state(q0, payload,
                                              friction_scale=draws["friction_scale"])
        self.controller.reset(self.state.tcp_pose.position)

        self._j = 1                      # current target control-point index
        self._tube_violations = 0
        self._dwell = 0
        self._finished = False
        self._lift_step = None
        self._attached_at_lift = False
        self._err_at_lift = None
        self._swing_at_lift = None
        self._prev_nominal = np.zeros(N_JOINTS)
        self._prev_residual = np.zeros(N_JOINTS)
        self.done = False
        self._episode_side = ep_side
        self._draws = draws

        delta = self._tube_delta()
        frame = self._make_frame()
        self._frames = deque([frame, frame, frame], maxlen=3)
        self._last_delta = delta

        self.steps = []
        self.summary = None
        if self.log_steps:
            self.log_meta = {
                "side": ep_side,
                "container": [float(v) for v in container_pos],
                "yaw": float(yaw),
                "draws": {k: (float(v) if np.isscalar(v) else [float(x) for x in v])
                          for k, v in draws.items()},
                "n_points": int(self.traj.n_points),
            }
        return self.observe()

    # ------------------------------------------------------------- observation

    def _du_observation(self) -> tuple[np.ndarray, np.ndarray]:
        if self.cfg.observation.passive_swing:
            return self.state.pendulum.theta.copy(), self.state.pendulum.dtheta.copy()
        # discharge-unit actuated pair (rotation, hook) is held fixed
        return np.zeros(2), np.zeros(2)

    def _make_frame(self) -> ObservationFrame:
        q_du, dq_du = self._du_observation()
        ref_rel = self.traj.points[self._j] - self.state.tcp_pose.position
        return ObservationFrame(self.state.joints.q.copy(), self.state.joints.dq.copy(),
                                q_du, dq_du, ref_rel)

    def observe(self) -> np.ndarray:
        frames = list(self._frames)   # deque holds [t, t-1, t-2]
        return flatten_observation(frames, self._last_delta,
                                   self._prev_nominal, self._prev_residual)

    @property
    def residual_active(self) -> bool:
        """True while the current control point lies in segment B."""
        return not self.done and self.traj.labels[self._j] == "B"

    # ------------------------------------------------------------------- step

    def _tube_delta(self) -> float:
        return tube_delta(self.state.tcp_pose.position,
                          self.traj.points[self._j - 1], self.traj.points[self._j],
                          self.traj.tube_radius)

    def _tube_inside_brackets(self) -> bool:
        p = self.state.tcp_pose.position
        p1 = self.traj.points[self._j - 1]
        p2 = self.traj.points[self._j]
        seg = p2 - p1
        return bool(np.dot(p - p1, seg) >= 0.0 and np.dot(p - p2, seg) <= 0.0)

    def _reference(self) -> tuple[np.ndarray, np.ndarray]:
        j = self._j
        x_ref = self.traj.points[j]
        if self.traj.is_segment_boundary(j):
            v_ref = np.zeros(3)
        else:
            seg = x_ref - self.traj.points[j - 1]
            v_ref = self.cfg.trajectory.cruise_speed * seg / np.linalg.norm(seg)
        return x_ref, v_ref

    def _combine(self, u_nor: np.ndarray, u_res: np.ndarray, e_p_norm: float) -> np.ndarray:
        rc = self.cfg.residual
        if rc.mode == "blend":
            lam = min(max(e_p_norm / rc.lambda_scale, 0.0), rc.lambda_max)
            return (1.0 - lam) * u_nor + lam * u_res
        return u_nor + u_res

    def _advance(self) -> str | None:
        """Move the target index at most one point forward; returns a crossed
        segment boundary label pair like "BC" when one is passed.

        Segment-boundary waypoints require settling inside ``settle_radius``;
        the hook waypoint additionally holds for ``hook_dwell_steps`` so the
        system stabilizes before the one-shot attach attempt."""
        j = self._j
        traj = self.traj
        if j >= traj.n_points - 1:
            if np.linalg.norm(traj.points[j] - self.state.tcp_pose.position) \
                    <= self.cfg.trajectory.settle_radius:
                self._finished = True
            return None
        d = float(np.linalg.norm(traj.points[j] - self.state.tcp_pose.position))
        if traj.is_segment_boundary(j):
            ok = d <= self.cfg.trajectory.settle_radius
            if ok and traj.labels[j] == "B":
                self._dwell += 1
                ok = self._dwell >= self.cfg.trajectory.hook_dwell_steps
            elif traj.labels[j] == "B":
                self._dwell = 0
        else:
            p1 = traj.points[j - 1]
            seg = traj.points[j] - p1
            proj = np.dot(self.state.tcp_pose.position - p1, seg) / np.dot(seg, seg)
            ok = d < traj.advance_radius or proj >= 1.0
        if not ok:
            return None
        crossing = traj.labels[j] + traj.labels[j + 1]
        self._j = j + 1
        return crossing if crossing[0] != crossing[1] else None

    def check_termination(self) -> str:
        if self._finished:
            return EVENT_SUCCESS_END
        d = float(np.linalg.norm(self.traj.points[self._j] - self.state.tcp_pose.position))
        if d > self.cfg.termination.d_max:
            return EVENT_DISTANCE
        if self._tube_violations >= self.cfg.termination.tube_violation_limit:
            return EVENT_TUBE
        if self.plant.swing_angle(self.state) > self.theta_max:
            return EVENT_TILT
        if self.state.step_index >= self.cfg.termination.horizon:
            return EVENT_HORIZON
        return EVENT_NONE

    def step(self, u_res: np.ndarray | None = None):
        if self.done:
            raise EpisodeFinished("episode finished")
        rcfg = self.cfg.residual
        if u_res is None:
            u_res = np.zeros(N_JOINTS)
        else:
            u_res = np.clip(np.asarray(u_res, dtype=float), -rcfg.u_res_max, rcfg.u_res_max)

        x_ref, v_ref = self._reference()
        pend_len = self.state.pendulum.dynamic_length
        jac = self.state.jacobian
        if jac is None:
            jac = self.chain.fk_with_jacobian(self.state.joints.q)[2]
        inputs = ControllerInputs(
            x=self.state.tcp_pose.position, v=self.state.tcp_vel,
            q=self.state.joints.q, jacobian=jac,
            theta=self.state.pendulum.theta, pendulum_length=pend_len,
        )
        u_nor = self.controller.action(inputs, x_ref, v_ref)

        active = self.traj.labels[self._j] == "B"
        u_res_applied = u_res if active else np.zeros(N_JOINTS)
        if active:
            e_p_norm = float(np.linalg.norm(x_ref - inputs.x))
            u = self._combine(u_nor, u_res_applied, e_p_norm)
        else:
            u = u_nor

        event = EVENT_NONE
        try:
            self.state = self.plant.step(self.state, u)
        except SimulationDiverged:
            event = EVENT_DIVERGED

        if event == EVENT_NONE:
            crossing = self._advance()
            if crossing == "BC":
                lift_wp = self.traj.points[self._j - 1]
                self._err_at_lift = float(np.linalg.norm(
                    self.state.tcp_pose.position - lift_wp))
                self._swing_at_lift = self.plant.swing_angle(self.state)
                self.state, attached = self.plant.try_attach(self.state, lift_wp)
                self._attached_at_lift = attached
                self._lift_step = self.state.step_index

        if event == EVENT_NONE:
            delta = self._tube_delta()
            if delta < 0.0:
                self._tube_violations += 1
            swing = self.plant.swing_angle(self.state)
            rcomp = reward_components(
                d_m=float(np.linalg.norm(self.traj.points[self._j] - self.state.tcp_pose.position)),
                delta=delta, tube_inside=self._tube_inside_brackets(),
                m=self._j + 1, M=self.traj.n_points,
                swing=swing, container_z=float(self.state.payload.position[2]),
                u_res=u_res_applied,
                sigma=self.cfg.reward.sigma, theta_max=self.reward_theta_max,
                z_min=self.cfg.reward.z_min,
            )
            rw = self.cfg.reward
            reward = (rw.c1 * rcomp["target_coarse"] + rw.c2 * rcomp["target_fine"]
                      + rw.c3 * rcomp["tube"] + rw.c4 * rcomp["progress"]
                      + rw.c7 * rcomp["oscillation"] + rw.c8 * rcomp["lifting"]
                      + rw.c9 * rcomp["smooth"])
            event = self.check_termination()
        else:
            delta = self._last_delta
            swing = float("nan")
            rcomp = {k: 0.0 for k in ("target_coarse", "target_fine", "tube",
                                      "progress", "oscillation", "lifting", "smooth")}
            reward = 0.0

        self._last_delta = delta
        self._frames.appendleft(self._make_frame())
        self._prev_nominal = u_nor
        self._prev_residual = u_res_applied

        self.done = event != EVENT_NONE
        success = False
        if self.done:
            success = bool(self.state.payload.position[2] > self.cfg.reward.z_min)

        info = {
            "event": event, "success": success, "m": self._j + 1,
            "segment": self.traj.labels[self._j], "tube_delta": delta,
            "swing": swing, "u_nor": u_nor, "u_res": u_res_applied,
            "attached": self.state.payload.attached, "lift_step": self._lift_step,
            "reward_components": rcomp,
        }
        if self.log_steps:
            rec = {
                "step": int(self.state.step_index),
                "p_tcp": [float(v) for v in self.state.tcp_pose.position],
                "p_ref": [float(v) for v in self.traj.points[self._j]],
                "m": int(self._j + 1),
                "segment": self.traj.labels[self._j],
                "tube_delta": float(delta),
                "swing_angle": float(swing),
                "reward": float(reward),
                "reward_components": {k: float(v) for k, v in rcomp.items()},
                "u_nor": [float(v) for v in u_nor],
                "u_res": [float(v) for v in u_res_applied],
                "termination_event": event,
            }
            if self.log_observations:
                rec["observation"] = [float(v) for v in self.observe()]
            self.steps.append(rec)
            if self.done:
                self.summary = {
                    "success": success,
                    "steps": int(self.state.step_index),
                    "lift_step": None if self._lift_step is None else int(self._lift_step),
                    "event": event,
                    "attached": bool(self.state.payload.attached),
                    "err_at_lift": self._err_at_lift,
                    "swing_at_lift": self._swing_at_lift,
                    "final_container_z": float(self.state.payload.position[2]),
                    "side": self._episode_side,
                }
        return self.observe(), float(reward), self.done, info


class VectorEnv:
    """Lockstep vector of TaskEnvs with per-env seed streams and auto-reset."""

    def __init__(self, config: Config, n_envs: int, base_seed: int,
                 log_steps: bool = False):
        self.envs = [TaskEnv(config, seed=base_seed + i, log_steps=log_steps)
                     for i in range(n_envs)]
        self.n_envs = n_envs

    def reset(self) -> np.ndarray:
        return np.stack([env.reset() for env in self.envs])

    @property
    def residual_mask(self) -> np.ndarray:
        return np.array([env.residual_active for env in self.envs])

    def step(self, actions: np.ndarray):
        obs, rewards, dones, infos = [], [], [], []
        for env, act in zip(self.envs, actions):
            o, r, d, i = env.step(act)
            if d:
                i = dict(i)
                o = env.reset()
            obs.append(o)
            rewards.append(r)
            dones.append(d)
            infos.append(i)
        return np.stack(obs), np.array(rewards), np.array(dones), infos
