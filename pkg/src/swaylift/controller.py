"""Nominal Cartesian controller: admittance tracking, anti-sway, DLS IK.

The pipeline turns a reference TCP point into a joint-velocity command:

1. tracking errors  e_p, e_v, e_i
2. anti-sway acceleration  a_xy = w_s [k_th*th_hat + k_om*th_hat_dot; ...; 0]
3. virtual force  F = Kp e_p + Kv e_v + Ki e_i + Md a_xy
4. admittance     Md dv_d + Dd v_d + Kd (x_d - x_ref) = F
5. damped least-squares IK with a nullspace posture term.

The anti-sway gains place the closed-loop swing poles at (zeta, omega_n):
k_theta(L) = L*omega_n^2 - g,  k_omega(L) = 2*zeta*L*omega_n.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .plant import GRAVITY


@dataclass
class AdmittanceGains:
    k_p: np.ndarray
    k_v: np.ndarray
    k_i: np.ndarray
    m_d: np.ndarray
    d_d: np.ndarray
    k_d: np.ndarray
    v_max: float = 1.0
    gain_scale: float = 1.0
    e_i_max: float = 0.5

    def __post_init__(self):
        for name in ("k_p", "k_v", "k_i", "m_d", "d_d", "k_d"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim == 0:
                v = np.full(3, float(v))
            setattr(self, name, v)
        if np.any(self.m_d <= 0) or np.any(self.d_d <= 0) or np.any(self.k_d < 0):
            raise ValueError("admittance M_d, D_d must be positive")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")

    def scaled(self, gain_scale: float) -> "AdmittanceGains":
        return AdmittanceGains(self.k_p, self.k_v, self.k_i, self.m_d, self.d_d,
                               self.k_d, self.v_max, gain_scale, self.e_i_max)


@dataclass
class AdmittanceState:
    x_d: np.ndarray
    v_d: np.ndarray
    e_i: np.ndarray

    @classmethod
    def at_rest(cls, x0: np.ndarray) -> "AdmittanceState":
        return cls(np.asarray(x0, dtype=float).copy(), np.zeros(3), np.zeros(3))


@dataclass
class AntiSwingParams:
    zeta: float = 0.7
    omega_n: float = 1.5
    w_s: float = 1.0
    alpha: float = 0.2
    theta_hat: np.ndarray = field(default_factory=lambda: np.zeros(2))
    dtheta_hat: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if self.zeta <= 0 or self.omega_n <= 0:
            raise ValueError("zeta and omega_n must be positive")

    def reset(self):
        self.theta_hat = np.zeros(2)
        self.dtheta_hat = np.zeros(2)


@dataclass
class IKParams:
    lambda_d: float = 0.05
    k_ns: float = 0.5
    q_c: np.ndarray = field(default_factory=lambda: np.zeros(7))

    def __post_init__(self):
        if self.lambda_d < 0 or self.k_ns < 0:
            raise ValueError("lambda_d and k_ns must be non-negative")
        self.q_c = np.asarray(self.q_c, dtype=float)


def tracking_errors(x, v, x_ref, v_ref, e_i_prev, dt, e_i_max: float = 0.5):
    """Position/velocity errors and the clamped error integral."""
    e_p = np.asarray(x_ref, dtype=float) - np.asarray(x, dtype=float)
    e_v = np.asarray(v_ref, dtype=float) - np.asarray(v, dtype=float)
    e_i = np.clip(np.asarray(e_i_prev, dtype=float) + dt * e_p, -e_i_max, e_i_max)
    return e_p, e_v, e_i


def virtual_force(e_p, e_v, e_i, a_xy, gains: AdmittanceGains) -> np.ndarray:
    F = gains.k_p * e_p + gains.k_v * e_v + gains.k_i * e_i + gains.m_d * a_xy
    return gains.gain_scale * F


def integrate_admittance(state: AdmittanceState, f_cmd, x_ref, dt,
                         gains: AdmittanceGains) -> AdmittanceState:
    """One explicit-Euler step of Md dv_d + Dd v_d + Kd (x_d - x_ref) = F."""
    dv_d = (np.asarray(f_cmd, dtype=float) - gains.d_d * state.v_d
            - gains.k_d * (state.x_d - np.asarray(x_ref, dtype=float))) / gains.m_d
    v_d = np.clip(state.v_d + dt * dv_d, -gains.v_max, gains.v_max)
    x_d = state.x_d + dt * v_d
    return AdmittanceState(x_d, v_d, state.e_i)


def anti_swing_gains(length: float, zeta: float, omega_n: float,
                     gravity: float = GRAVITY) -> tuple[float, float]:
    if length <= 0:
        raise ValueError("pendulum length must be positive")
    k_theta = length * omega_n ** 2 - gravity
    k_omega = 2.0 * zeta * length * omega_n
    return k_theta, k_omega


def anti_swing_accel(params: AntiSwingParams, theta_meas, dtheta_meas,
                     length: float) -> np.ndarray:
    """Low-pass the swing estimates, then map them to a horizontal acceleration."""
    a = params.alpha
    params.theta_hat = (1.0 - a) * params.theta_hat + a * np.asarray(theta_meas, dtype=float)
    params.dtheta_hat = (1.0 - a) * params.dtheta_hat + a * np.asarray(dtheta_meas, dtype=float)
    k_theta, k_omega = anti_swing_gains(length, params.zeta, params.omega_n)
    axy = params.w_s * (k_theta * params.theta_hat + k_omega * params.dtheta_hat)
    return np.array([axy[0], axy[1], 0.0])


def dls_ik(J: np.ndarray, v_d: np.ndarray, params: IKParams, q: np.ndarray,
           vel_limits: np.ndarray | None = None) -> np.ndarray:
    """u = J+_lam v_d + (I - J+_lam J) k_ns (q_c - q), clamped to joint limits."""
    J = np.asarray(J, dtype=float)
    n = J.shape[1]
    A = J @ J.T + params.lambda_d ** 2 * np.eye(J.shape[0])
    try:
        core = np.linalg.solve(A, np.column_stack([np.asarray(v_d, dtype=float), J]))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular IK; increase damping") from exc
    J_pinv_v = J.T @ core[:, 0]
    J_pinv_J = J.T @ core[:, 1:]
    u = J_pinv_v + (np.eye(n) - J_pinv_J) @ (params.k_ns * (params.q_c - np.asarray(q, dtype=float)))
    if vel_limits is not None:
        u = np.clip(u, -vel_limits, vel_limits)
    return u


@dataclass
class ControllerInputs:
    """Plant quantities the controller consumes at one step."""
    x: np.ndarray
    v: np.ndarray
    q: np.ndarray
    jacobian: np.ndarray
    theta: np.ndarray
    pendulum_length: float


class NominalController:
    """Stateful wrapper composing the five pipeline operations.

    Swing rate is measured by finite-differencing theta; both estimates go
    through the same low-pass inside :func:`anti_swing_accel`.
    """

    def __init__(self, gains: AdmittanceGains, anti_swing: AntiSwingParams,
                 ik: IKParams, dt: float, vel_limits: np.ndarray | None = None,
                 anti_sway_enabled: bool = True, integral_enabled: bool = True):
        self.gains = gains
        self.anti_swing = anti_swing
        self.ik = ik
        self.dt = float(dt)
        self.vel_limits = vel_limits
        self.anti_sway_enabled = anti_sway_enabled
        self.integral_enabled = integral_enabled
        self.admittance = AdmittanceState.at_rest(np.zeros(3))
        self._theta_prev: np.ndarray | None = None

    def reset(self, x0: np.ndarray):
        self.admittance = AdmittanceState.at_rest(x0)
        self.anti_swing.reset()
        self._theta_prev = None

    def action(self, inputs: ControllerInputs, x_ref, v_ref) -> np.ndarray:
        e_p, e_v, e_i = tracking_errors(inputs.x, inputs.v, x_ref, v_ref,
                                        self.admittance.e_i, self.dt, self.gains.e_i_max)
        if not self.integral_enabled:
            e_i = np.zeros(3)
        if self._theta_prev is None:
            dtheta_meas = np.zeros(2)
        else:
            dtheta_meas = (inputs.theta - self._theta_prev) / self.dt
        self._theta_prev = inputs.theta.copy()
        if self.anti_sway_enabled:
            a_xy = anti_swing_accel(self.anti_swing, inputs.theta, dtheta_meas,
                                    inputs.pendulum_length)
        else:
            a_xy = np.zeros(3)
        f_cmd = virtual_force(e_p, e_v, e_i, a_xy, self.gains)
        adm = integrate_admittance(self.admittance, f_cmd, x_ref, self.dt, self.gains)
        adm.e_i = e_i
        self.admittance = adm
        return dls_ik(inputs.jacobian, adm.v_d, self.ik, inputs.q, self.vel_limits)
