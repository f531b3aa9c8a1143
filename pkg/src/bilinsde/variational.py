"""Linearized flow along a frozen trajectory.

Everything here is the exact derivative of the discrete scheme used to
produce the trajectory. The per-step propagator is

    semi_implicit:  P_m = (I + dt nu A)^{-1} (I - dt grad B(U_m))
    explicit_em:    P_m = I - dt nu A - dt grad B(U_m)

with ``grad B(U) rho = B(U, rho) + B(rho, U)``. ``J_{s,t}`` is the ordered
product ``P_{t-1} ... P_s`` and the adjoint is its transpose, so duality
holds to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridError, PreconditionError
from .sde import Trajectory

MATERIALIZE_MAX_DIM = 128


def trapezoid_weights(M: int, dt: float) -> np.ndarray:
    """Weights on the M+1 grid nodes of [0, M dt]."""
    w = np.full(M + 1, float(dt))
    w[0] = w[-1] = 0.5 * dt
    return w


class Linearization:
    """Step propagators of a trajectory, cached on first use.

    For N above ``MATERIALIZE_MAX_DIM`` the matrices are not stored; each
    application rebuilds ``P_m`` from the stored states, which act as the
    checkpoints.
    """

    def __init__(self, traj: Trajectory):
        self.traj = traj
        self.stepper = traj.stepper()
        self.M = traj.steps
        self.N = traj.model.dim
        self._mats = None
        if self.N <= MATERIALIZE_MAX_DIM:
            self._mats = np.stack([self.stepper.step_matrix(u) for u in traj.states[:-1]]) \
                if self.M else np.zeros((0, self.N, self.N))

    def P(self, m: int) -> np.ndarray:
        if self._mats is not None:
            return self._mats[m]
        return self.stepper.step_matrix(self.traj.states[m])

    def check(self, s, t):
        if not (0 <= s <= t <= self.M):
            raise IndexError(f"need 0 <= s <= t <= {self.M}, got s={s}, t={t}")

    def forward(self, X, s, t):
        """J_{s,t} X for a vector or matrix X (columns)."""
        self.check(s, t)
        X = np.array(X, dtype=float)
        for m in range(s, t):
            X = self.P(m) @ X
        return X

    def backward(self, Y, s, t):
        """J_{s,t}^T Y."""
        self.check(s, t)
        Y = np.array(Y, dtype=float)
        for m in range(t - 1, s - 1, -1):
            Y = self.P(m).T @ Y
        return Y


def linearization(traj: Trajectory) -> Linearization:
    cache = getattr(traj, "_linearization", None)
    if cache is None:
        cache = Linearization(traj)
        traj._linearization = cache
    return cache


@dataclass
class FlowOperator:
    s: int
    t: int
    matrix: np.ndarray
    traj: Trajectory
    direction: str = "forward"

    def apply(self, v):
        return self.matrix @ np.asarray(v, dtype=float)

    def then(self, other: "FlowOperator") -> "FlowOperator":
        """Composition: ``self`` on [s, r] followed by ``other`` on [r, t]."""
        if self.direction != "forward" or other.direction != "forward" or other.s != self.t:
            raise ValueError("can only chain forward flows on adjacent intervals")
        return FlowOperator(self.s, other.t, other.matrix @ self.matrix, self.traj)


def jacobian_flow(traj: Trajectory, s_index: int, t_index: int) -> FlowOperator:
    lin = linearization(traj)
    J = lin.forward(np.eye(lin.N), s_index, t_index)
    return FlowOperator(s_index, t_index, J, traj, "forward")


def adjoint_flow(traj: Trajectory, s_index: int, t_index: int) -> FlowOperator:
    lin = linearization(traj)
    Jt = lin.backward(np.eye(lin.N), s_index, t_index)
    return FlowOperator(s_index, t_index, Jt, traj, "adjoint")


def second_variation(traj: Trajectory, s_index: int, t_index: int, xi, xi2) -> np.ndarray:
    """Second derivative of the discrete flow in directions (xi, xi2).

    Solves the linearized equation with forcing
    ``-(B(J xi, J xi2) + B(J xi2, J xi))`` from zero initial data, stepped
    with the same scheme as the trajectory.
    """
    lin = linearization(traj)
    lin.check(s_index, t_index)
    model = traj.model
    dt = traj.dt
    a = np.array(xi, dtype=float)
    b = np.array(xi2, dtype=float)
    rho = np.zeros(lin.N)
    for m in range(s_index, t_index):
        Pm = lin.P(m)
        f = model.bilinear(a, b) + model.bilinear(b, a)
        rho = Pm @ rho - dt * lin.stepper.apply_resolvent(f)
        a = Pm @ a
        b = Pm @ b
    return rho


def _check_control(traj: Trajectory, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    expect = (traj.steps + 1, traj.model.noise_dim)
    if v.shape != expect:
        raise GridError(f"control must have shape {expect} (grid nodes x noise dim), got {v.shape}")
    return v


def controlled_response(traj: Trajectory, v) -> np.ndarray:
    """Response of the linearized system to the noise-space control ``v``.

    ``v`` holds values on the M+1 grid nodes. The result is the trapezoidal
    sum ``sum_m w_m J_{t_m,T} sigma v_m``, obtained by the recursion
    ``R_0 = w_0 sigma v_0``, ``R_{m+1} = P_m R_m + w_{m+1} sigma v_{m+1}``.
    """
    v = _check_control(traj, v)
    lin = linearization(traj)
    w = trapezoid_weights(traj.steps, traj.dt)
    sigma = traj.model.sigma
    R = w[0] * (sigma @ v[0])
    for m in range(traj.steps):
        R = lin.P(m) @ R + w[m + 1] * (sigma @ v[m + 1])
    return R


def jacobian_growth_bound(traj: Trajectory) -> float:
    """Upper bound on log ||J_{0,T}|| from the energy argument.

    Uses ||P_m|| <= ||(I + dt nu A)^{-1}|| (1 + 2 dt |B|_F |U_m|) for the
    semi-implicit scheme; requires symmetric A.
    """
    model = traj.model
    if traj.scheme != "semi_implicit":
        raise PreconditionError("bound implemented for the semi-implicit scheme")
    if not np.allclose(model.A, model.A.T):
        raise PreconditionError("bound requires symmetric A")
    lam = np.linalg.eigvalsh(model.nu * model.A)[0]
    dt = traj.dt
    norms = np.linalg.norm(traj.states[:-1], axis=1)
    return float(np.sum(np.log1p(2.0 * dt * model.B_norm * norms)) - traj.steps * np.log1p(dt * lam))
