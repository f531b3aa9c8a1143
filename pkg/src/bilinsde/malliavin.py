"""Malliavin covariance matrix, its spectrum, and the smoothing control.

On a trajectory with grid nodes t_0..t_M the response operator is

    A v = sum_m w_m J_{t_m,T} sigma v_m       (trapezoidal weights w_m)

and its adjoint with respect to the weighted inner product
``<v, u> = sum_m w_m v_m . u_m`` is ``(A* eta)_m = sigma^T J_{t_m,T}^T eta``.
The Malliavin matrix is ``M = A A*``; the control
``v = A* (M + beta I)^{-1} J_{0,T} xi`` then satisfies ``A v = J_{0,T} xi``
exactly when beta = 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .brackets import build_W_ladder
from .errors import BilinsdeError, PreconditionError, SingularityError
from .model import BilinearModel
from .sde import Trajectory, map_chunks, n_steps, simulate_batch
from .noise import NoisePath
from .variational import controlled_response, linearization, trapezoid_weights

INVERTIBLE_RATIO = 1e-10


@dataclass
class MalliavinMatrix:
    matrix: np.ndarray
    t: float
    quadrature: tuple  # ("trapezoid", dt)
    traj: Trajectory = field(repr=False)
    J0T: np.ndarray = field(repr=False)
    _spectrum: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def spectrum(self) -> np.ndarray:
        if self._spectrum is None:
            self._spectrum = np.linalg.eigvalsh(self.matrix)
        return self._spectrum

    @property
    def lambda_min(self) -> float:
        return float(self.spectrum[0])

    @property
    def lambda_max(self) -> float:
        return float(self.spectrum[-1])

    @property
    def condition(self) -> float:
        lo = self.lambda_min
        return float("inf") if lo <= 0 else self.lambda_max / lo


def assemble_malliavin(traj: Trajectory) -> MalliavinMatrix:
    """Backward sweep ``X_M = I, X_m = P_m^T X_{m+1}`` accumulating
    ``w_m (X_m^T sigma)(X_m^T sigma)^T``. Cost O(M N^3)."""
    lin = linearization(traj)
    sigma = traj.model.sigma
    M = traj.steps
    w = trapezoid_weights(M, traj.dt)
    X = np.eye(lin.N)
    cols = np.empty((M + 1, lin.N, sigma.shape[1]))
    cols[M] = np.sqrt(w[M]) * sigma
    for m in range(M - 1, -1, -1):
        X = lin.P(m).T @ X
        cols[m] = np.sqrt(w[m]) * (X.T @ sigma)
    K = cols.transpose(1, 0, 2).reshape(lin.N, -1)
    Mat = K @ K.T
    Mat = 0.5 * (Mat + Mat.T)
    return MalliavinMatrix(Mat, traj.T, ("trapezoid", traj.dt), traj, X.T)


def spectrum(M: MalliavinMatrix) -> np.ndarray:
    """Eigenvalues in ascending order; the first is inf <M eta, eta> / |eta|^2."""
    return M.spectrum


def gram_quadratic_form(traj: Trajectory, eta) -> float:
    """sum_m w_m |sigma^T J_{t_m,T}^T eta|^2, computed independently of the matrix."""
    lin = linearization(traj)
    sigma = traj.model.sigma
    w = trapezoid_weights(traj.steps, traj.dt)
    z = np.array(eta, dtype=float)
    total = w[-1] * np.sum((sigma.T @ z) ** 2)
    for m in range(traj.steps - 1, -1, -1):
        z = lin.P(m).T @ z
        total += w[m] * np.sum((sigma.T @ z) ** 2)
    return float(total)


# ---------------------------------------------------------------------------
# control


@dataclass
class ControlPath:
    values: np.ndarray  # (M+1, d) on grid nodes
    xi: np.ndarray
    beta: float
    weights: np.ndarray = field(repr=False)
    target: np.ndarray = field(repr=False)  # J_{0,T} xi
    regularized_inverse_norm: float = float("nan")


def build_control(traj: Trajectory, xi, beta: float = 0.0, M: Optional[MalliavinMatrix] = None) -> ControlPath:
    """Control ``v_m = sigma^T J_{t_m,T}^T (M + beta I)^{-1} J_{0,T} xi``.

    With beta = 0 the matrix must satisfy lambda_min > 1e-10 lambda_max,
    otherwise :class:`SingularityError` is raised naming lambda_min.
    """
    if beta < 0:
        raise PreconditionError("beta must be nonnegative")
    M = M or assemble_malliavin(traj)
    xi = np.asarray(xi, dtype=float)
    lam = M.spectrum
    if beta == 0.0 and not lam[0] > INVERTIBLE_RATIO * lam[-1]:
        raise SingularityError(
            f"Malliavin matrix is singular: lambda_min = {lam[0]:.3e}, lambda_max = {lam[-1]:.3e}; "
            f"try beta = {1e-8 * lam[-1]:.3e}",
            lambda_min=float(lam[0]),
            lambda_max=float(lam[-1]),
        )
    target = M.J0T @ xi
    reg = M.matrix + beta * np.eye(M.matrix.shape[0])
    # eigen-solve of the symmetric system keeps the solve well defined near singularity
    evals, evecs = np.linalg.eigh(reg)
    y = evecs @ ((evecs.T @ target) / evals)
    lin = linearization(traj)
    sigma = traj.model.sigma
    v = np.empty((traj.steps + 1, sigma.shape[1]))
    z = y
    v[-1] = sigma.T @ z
    for m in range(traj.steps - 1, -1, -1):
        z = lin.P(m).T @ z
        v[m] = sigma.T @ z
    return ControlPath(v, xi, float(beta), trapezoid_weights(traj.steps, traj.dt), target,
                       float(1.0 / evals[0]))


def verify_control(traj: Trajectory, xi, v) -> float:
    """|rho(T)| / |xi| for the controlled linearization started at xi.

    Integrates ``rho_{m+1} = P_m rho_m - w_{m+1} sigma v_{m+1}`` from
    ``rho_0 = xi - w_0 sigma v_0``, which equals ``J_{0,T} xi - A v``.
    """
    xi = np.asarray(xi, dtype=float)
    vals = v.values if isinstance(v, ControlPath) else np.asarray(v, dtype=float)
    nx = np.linalg.norm(xi)
    if nx == 0:
        return float(np.linalg.norm(controlled_response(traj, vals)))
    lin = linearization(traj)
    sigma = traj.model.sigma
    w = trapezoid_weights(traj.steps, traj.dt)
    if vals.shape != (traj.steps + 1, sigma.shape[1]):
        from .errors import GridError

        raise GridError(f"control shape {vals.shape} does not match the trajectory grid")
    rho = xi - w[0] * (sigma @ vals[0])
    for m in range(traj.steps):
        rho = lin.P(m) @ rho - w[m + 1] * (sigma @ vals[m + 1])
    return float(np.linalg.norm(rho) / nx)


def tikhonov_residual_bound(control: ControlPath) -> float:
    """beta |(M + beta I)^{-1}| |J xi| / |xi|: the residual left by regularization."""
    nx = np.linalg.norm(control.xi)
    if nx == 0:
        return 0.0
    return float(control.beta * control.regularized_inverse_norm * np.linalg.norm(control.target) / nx)


def control_cost(v) -> float:
    """Discrete L^2(0, T) norm squared of the control (trapezoidal rule)."""
    if isinstance(v, ControlPath):
        return float(np.sum(v.weights * np.sum(v.values**2, axis=1)))
    raise TypeError("control_cost expects a ControlPath")


# ---------------------------------------------------------------------------
# Monte Carlo spectral tail


@dataclass
class SpectralTail:
    eps: np.ndarray
    prob: np.ndarray  # empirical P(lambda_min >= eps)
    lambda_min: np.ndarray
    lambda_max: np.ndarray
    n_paths: int
    n_failed: int
    tail_exponent: float  # slope of log(1 - P) against log eps
    warnings: list
    path_ids: np.ndarray = field(default=None, repr=False)  # stream ids of the kept paths

    @property
    def condition(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.lambda_min > 0, self.lambda_max / self.lambda_min, np.inf)


def _path_spectra(model, U0, T, dt, scheme, seed, ids):
    res = simulate_batch(model, U0, T, dt, scheme, seed, ids, store_states=True, store_noise=True)
    out = np.empty((len(ids), 2))
    times = np.arange(res.states.shape[1]) * dt
    for p, sid in enumerate(ids):
        noise = NoisePath(dt, res.increments.shape[1], res.increments[p], seed, sid)
        traj = Trajectory(times, res.states[p], noise, scheme, model)
        lam = assemble_malliavin(traj).spectrum
        out[p] = lam[0], lam[-1]
    return out


def spectral_tail(
    model: BilinearModel,
    U0,
    T: float,
    dt: float,
    n_paths: int,
    eps_grid,
    seed: int = 0,
    scheme: str = "semi_implicit",
    workers: int = 1,
) -> SpectralTail:
    """Monte Carlo estimate of P(lambda_min(M_{0,T}) >= eps) for each eps.

    Paths that fail to integrate are dropped and counted. A warning is
    attached (and emitted) when the constant bracket ladder does not span.
    """
    notes = []
    if build_W_ladder(model, 4 * model.dim).spanning_level is None:
        msg = "bracket ladder does not span; lambda_min is expected to vanish"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    n_steps(T, dt)
    eps = np.asarray(eps_grid, dtype=float)

    def run(ids):
        try:
            return _path_spectra(model, U0, T, dt, scheme, seed, ids)
        except BilinsdeError:
            # retry one by one so a single bad path does not sink the chunk
            rows = []
            for sid in ids:
                try:
                    rows.append(_path_spectra(model, U0, T, dt, scheme, seed, [sid])[0])
                except BilinsdeError:
                    rows.append([np.nan, np.nan])
            return np.array(rows)

    lam = np.concatenate(map_chunks(run, int(n_paths), workers), axis=0)
    ok = np.isfinite(lam[:, 0])
    lmin, lmax = lam[ok, 0], lam[ok, 1]
    n_ok = int(ok.sum())
    prob = np.array([(lmin >= e).mean() if n_ok else np.nan for e in eps])
    q = 1.0 - prob
    use = (q > 0) & (q < 1) & (eps > 0)
    if use.sum() >= 2:
        slope = float(np.polyfit(np.log(eps[use]), np.log(q[use]), 1)[0])
    else:
        slope = float("nan")
    return SpectralTail(eps, prob, lmin, lmax, int(n_paths), int(n_paths) - n_ok, slope, notes,
                        np.nonzero(ok)[0])
