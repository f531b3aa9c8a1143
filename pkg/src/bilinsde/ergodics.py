"""Occupation measures, long-time averages and statistical probes.

Standard errors of time series use non-overlapping batch means (32
batches by default) because consecutive samples of a trajectory are
strongly correlated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import PreconditionError
from .model import BilinearModel
from .observables import Observable
from .sde import Stepper, Trajectory, map_chunks, n_steps, simulate_batch

N_BATCHES = 32
MAX_SAMPLES = 100_000


def batch_means(x, n_batches: int = N_BATCHES):
    """Mean of a correlated series and its batch-means standard error.

    The series is cut into ``n_batches`` equal batches (a remainder at the
    end is dropped for the error estimate only). Series shorter than
    ``2 * n_batches`` fall back to the i.i.d. formula.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n == 0:
        raise ValueError("empty series")
    mean = float(x.mean())
    if n < 2:
        return mean, float("nan")
    if n < 2 * n_batches:
        return mean, float(x.std(ddof=1) / np.sqrt(n))
    b = n // n_batches
    bm = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return mean, float(bm.std(ddof=1) / np.sqrt(n_batches))


@dataclass
class OccupationMeasure:
    """Uniformly weighted post-burn-in samples.

    ``samples`` has shape (n_paths, n_times, N) so that time correlation
    within a path can be accounted for; ``flat`` is the pooled (n, N) view.
    """

    samples: np.ndarray
    weights: np.ndarray
    burn_in: float
    thinning: int
    T_effective: float
    model: BilinearModel
    source: dict = field(default_factory=dict)

    @property
    def flat(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[-1])

    def expect(self, f):
        """Weighted mean of ``f(U)`` and its standard error.

        Per-path batch-means errors are combined as for an average of
        independent paths.
        """
        vals = np.asarray(f(self.samples), dtype=float)
        mean = float(np.sum(vals.ravel() * self.weights))
        ses = np.array([batch_means(row)[1] for row in vals])
        P = vals.shape[0]
        if P > 1 and vals.shape[1] == 1:
            se = float(vals.std(ddof=1) / np.sqrt(P))
        else:
            se = float(np.sqrt(np.sum(ses**2)) / P)
        return mean, se

    def ball_mass(self, R: float):
        """mu_T(B(0, R)) and its standard error."""
        return self.expect(lambda U: (np.sum(U * U, axis=-1) < R * R).astype(float))


def _as_paths(source):
    if isinstance(source, Trajectory):
        return source.states[None], source.dt, source.model, {"kind": "trajectory", "stream": source.noise.stream_id}
    if isinstance(source, (list, tuple)) and source and isinstance(source[0], Trajectory):
        st = np.stack([t.states for t in source])
        return st, source[0].dt, source[0].model, {"kind": "ensemble", "n_paths": len(source)}
    raise TypeError("occupation_measure expects a Trajectory or a list of Trajectories")


def occupation_measure(source, burn_in=None, thinning=None, max_samples=MAX_SAMPLES) -> OccupationMeasure:
    """Empirical time-averaged law after discarding ``burn_in`` time units.

    Defaults: burn-in is 10% of T; the thinning stride keeps at most
    ``max_samples`` stored samples.
    """
    states, dt, model, meta = _as_paths(source)
    P, M1, N = states.shape
    T = (M1 - 1) * dt
    burn_in = 0.1 * T if burn_in is None else float(burn_in)
    if not 0 <= burn_in < T:
        raise PreconditionError(f"burn_in must lie in [0, T), got {burn_in} with T={T}")
    start = int(np.ceil(burn_in / dt - 1e-9))
    avail = M1 - start
    if thinning is None:
        thinning = max(1, int(np.ceil(P * avail / max_samples)))
    thinning = int(thinning)
    if thinning < 1:
        raise PreconditionError("thinning must be >= 1")
    kept = states[:, start::thinning]
    if kept.shape[1] == 0:
        raise PreconditionError("no samples left after burn-in and thinning")
    n = kept.shape[0] * kept.shape[1]
    w = np.full(n, 1.0 / n)
    meta = dict(meta, dt=dt, T=T)
    return OccupationMeasure(kept, w, burn_in, thinning, T - start * dt, model, meta)


def ball_mass_bound(model: BilinearModel, U0, T: float, R: float) -> float:
    """Lower bound 1 - (|sigma|^2 + |U0|^2 / T) / (2 alpha R^2) from the energy estimate."""
    U0 = np.asarray(U0, dtype=float)
    return 1.0 - (model.sigma_norm2 + float(U0 @ U0) / T) / (2.0 * model.alpha * R * R)


@dataclass
class ErgodicAverage:
    times: np.ndarray
    running: np.ndarray
    final: float
    se: float
    name: str


def ergodic_average(traj: Trajectory, phi: Observable, burn_in: float = 0.0) -> ErgodicAverage:
    """Running trapezoidal average (1/t) int_{burn_in}^{t} phi(U) ds."""
    dt = traj.dt
    start = int(np.ceil(burn_in / dt - 1e-9))
    if start >= traj.steps:
        raise PreconditionError("trajectory is not longer than the burn-in")
    vals = np.asarray(phi(traj.states[start:]), dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (vals[1:] + vals[:-1]))])
    # same summation for the elapsed time, so phi = const averages to const exactly
    span = np.concatenate([[0.0], np.cumsum(np.full(len(vals) - 1, 0.5 * dt * 2.0))])
    running = np.empty_like(cum)
    running[0] = vals[0]
    running[1:] = cum[1:] / span[1:]
    _, se = batch_means(vals)
    return ErgodicAverage(traj.times[start:], running, float(running[-1]), se, phi.name)


# ---------------------------------------------------------------------------
# generator


def generator_apply(model: BilinearModel, phi: Observable, U):
    """L phi(U) = <drift(U), grad phi(U)> + 1/2 tr(sigma sigma^T hess phi(U)); batched over U."""
    U = np.asarray(U, dtype=float)
    g = phi.grad(U)
    H = phi.hess(U)
    S = model.sigma @ model.sigma.T
    return np.sum(model.drift(U) * g, axis=-1) + 0.5 * np.einsum("ij,...ji->...", S, H)


def stationarity_residual(measure: OccupationMeasure, phi: Observable):
    """Mean of L phi under the measure, with standard error; ~0 at stationarity."""
    return measure.expect(lambda U: generator_apply(measure.model, phi, U))


# ---------------------------------------------------------------------------
# mixing and irreducibility


@dataclass
class MixingResult:
    means: np.ndarray  # E phi(U(T, U0_i))
    gaps: np.ndarray  # |mean_i - mean_j|
    se: np.ndarray  # standard error of each gap
    T: float
    common_noise: bool


def _terminal_values(model, U0, T, dt, scheme, seed, n_paths, phi, workers, offset=0):
    def run(ids):
        return phi(simulate_batch(model, U0, T, dt, scheme, seed, [i + offset for i in ids]).terminal)

    return np.concatenate(map_chunks(run, n_paths, workers))


def mixing_probe(
    model: BilinearModel,
    u0_list,
    T: float,
    phi: Observable,
    n_paths: int,
    dt: float = 0.01,
    seed: int = 0,
    scheme: str = "semi_implicit",
    common_noise: bool = True,
    workers: int = 1,
) -> MixingResult:
    """Pairwise gaps |E phi(U(T, U0_i)) - E phi(U(T, U0_j))|.

    With ``common_noise`` all initial conditions share the streams
    0..n_paths-1 and the gap error comes from paired differences;
    otherwise initial condition i uses streams offset by ``i * n_paths``.
    """
    u0s = [np.asarray(u, dtype=float) for u in u0_list]
    if len(u0s) < 2:
        raise PreconditionError("need at least two initial conditions")
    n_steps(T, dt)
    vals = np.stack([
        _terminal_values(model, u, T, dt, scheme, seed, n_paths, phi, workers,
                         0 if common_noise else i * n_paths)
        for i, u in enumerate(u0s)
    ])
    means = vals.mean(axis=1)
    k = len(u0s)
    gaps = np.abs(means[:, None] - means[None, :])
    se = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if common_noise:
                se[i, j] = np.std(vals[i] - vals[j], ddof=1) / np.sqrt(n_paths)
            else:
                se[i, j] = np.sqrt(vals[i].var(ddof=1) / n_paths + vals[j].var(ddof=1) / n_paths)
    return MixingResult(means, gaps, se, float(T), common_noise)


def ball_grid(N: int, R: float, n: int) -> np.ndarray:
    """Deterministic low-discrepancy points in the closed ball B(0, R), origin first.

    Halton points in [0, 1]^(N+1) give a direction (through the normal
    quantile) and a radius R u^(1/N).
    """
    pts = [np.zeros(N)]
    if n <= 1:
        return np.array(pts[:n])
    h = qmc.Halton(d=N + 1, scramble=False).random(n)[1:]  # first Halton point is 0
    g = ndtri(h[:, :N])
    r = R * h[:, N] ** (1.0 / N)
    dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    pts.extend(dirs * r[:, None])
    return np.array(pts)


@dataclass
class IrreducibilityResult:
    min_prob: float
    probs: np.ndarray
    initial_conditions: np.ndarray
    zero_hit: np.ndarray  # indices of initial conditions with no hit


def irreducibility_probe(
    model: BilinearModel,
    R: float,
    eps: float,
    T: float,
    n_paths: int,
    n_init: int = 20,
    dt: float = 0.01,
    seed: int = 0,
    scheme: str = "semi_implicit",
    workers: int = 1,
) -> IrreducibilityResult:
    """min over a ball grid of the empirical P(|U(T, U0)| < eps)."""
    if eps <= 0 or T <= 0:
        raise PreconditionError("eps and T must be positive")
    pts = ball_grid(model.dim, R, n_init)

    def hit(U):
        return (np.sum(U * U, axis=-1) < eps * eps).astype(float)

    ob = Observable("hit", hit)
    probs = np.array([
        _terminal_values(model, u, T, dt, scheme, seed, n_paths, ob, workers).mean() for u in pts
    ])
    return IrreducibilityResult(float(probs.min()), probs, pts, np.nonzero(probs == 0)[0])


# ---------------------------------------------------------------------------
# gradient of the Markov semigroup


@dataclass
class GradientProbe:
    jacobian_estimate: float
    finite_difference_estimate: float
    gap: float
    se: float  # combined: sqrt(se_jac^2 + se_fd^2)
    se_jacobian: float
    se_fd: float
    se_paired: float
    n_paths: int


def gradient_probe(
    model: BilinearModel,
    U0,
    T: float,
    dt: float,
    phi: Observable,
    xi,
    n_paths: int,
    eps_fd: float = 1e-5,
    seed: int = 0,
    scheme: str = "semi_implicit",
    workers: int = 1,
) -> GradientProbe:
    """Two estimates of grad P_T phi(U0) xi.

    The first averages <grad phi(U_T), J_{0,T} xi>; the second is the forward
    difference (E phi(U_T from U0 + eps xi) - E phi(U_T from U0)) / eps using
    the same noise streams for both arms.
    """
    U0 = np.asarray(U0, dtype=float)
    xi = np.asarray(xi, dtype=float)
    nx = np.linalg.norm(xi)
    if not np.isclose(nx, 1.0, rtol=1e-9):
        raise PreconditionError(f"xi must be a unit vector, |xi| = {nx}")
    M = n_steps(T, dt)
    stepper = Stepper(model, dt, scheme)

    def run(ids):
        P = len(ids)
        tan = {"R": np.broadcast_to(xi, (P, model.dim)).copy()}

        def obs(m, U):
            if m < M:
                tan["R"] = stepper.tangent(U, tan["R"])

        base = simulate_batch(model, U0, T, dt, scheme, seed, ids, observer=obs).terminal
        pert = simulate_batch(model, U0 + eps_fd * xi, T, dt, scheme, seed, ids).terminal
        jac = np.sum(phi.grad(base) * tan["R"], axis=-1)
        fd = (phi(pert) - phi(base)) / eps_fd
        return np.stack([jac, fd], axis=1)

    res = np.concatenate(map_chunks(run, int(n_paths), workers), axis=0)
    jac, fd = res[:, 0], res[:, 1]
    n = len(jac)
    se_j = float(jac.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    se_f = float(fd.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    se_p = float((jac - fd).std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    gap = float(jac.mean() - fd.mean())
    return GradientProbe(float(jac.mean()), float(fd.mean()), gap, float(np.hypot(se_j, se_f)),
                         se_j, se_f, se_p, n)


def time_average_identity(measure: OccupationMeasure):
    """Occupation-measure mean of 2 <nu A U, U> (with SE) next to |sigma|^2."""
    model = measure.model
    mean, se = measure.expect(lambda U: 2.0 * np.sum(model.linear(U) * U, axis=-1))
    return mean, se, model.sigma_norm2


__all__ = [
    "batch_means",
    "OccupationMeasure",
    "occupation_measure",
    "ball_mass_bound",
    "ergodic_average",
    "generator_apply",
    "stationarity_residual",
    "mixing_probe",
    "irreducibility_probe",
    "gradient_probe",
    "time_average_identity",
]
