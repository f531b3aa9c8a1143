"""Time stepping for ``dU = -(nu A U + B(U, U)) dt + sigma dW``.

Two schemes share one code path:

* ``semi_implicit`` (default): ``(I + dt nu A) U_{m+1} = U_m - dt B(U_m, U_m) + sigma dW_m``
* ``explicit_em``: ``U_{m+1} = U_m + dt drift(U_m) + sigma dW_m``

Ensembles are processed in fixed-size chunks of consecutive stream ids, so
the floating-point work done for a given path never depends on the number
of worker threads.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import IntegrationError, NumericalError, PreconditionError
from .model import BilinearModel
from .noise import NoisePath, StreamBank
from .observables import Observable, energy

SCHEMES = ("semi_implicit", "explicit_em")
DEFAULT_BLOWUP = 1.0e8
CHUNK = 256
NOISE_BLOCK = 512


def n_steps(T, dt) -> int:
    if not (dt > 0 and math.isfinite(dt)):
        raise PreconditionError(f"dt must be positive and finite, got {dt}")
    if not T >= dt:
        raise PreconditionError(f"T must be at least dt (T={T}, dt={dt})")
    M = int(round(T / dt))
    if abs(M * dt - T) > 1e-9 * max(T, 1.0):
        raise PreconditionError(f"T={T} is not an integer multiple of dt={dt}")
    return M


class Stepper:
    """One step of the chosen scheme and its exact derivative."""

    def __init__(self, model: BilinearModel, dt: float, scheme: str = "semi_implicit"):
        if scheme not in SCHEMES:
            raise PreconditionError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
        self.model = model
        self.dt = float(dt)
        self.scheme = scheme
        N = model.dim
        self._I = np.eye(N)
        if scheme == "semi_implicit":
            L = self._I + self.dt * model.nu * model.A
            try:
                Linv = np.linalg.inv(L)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"I + dt nu A is singular: {exc}") from None
            if not np.all(np.isfinite(Linv)) or np.linalg.cond(L) > 1e14:
                raise NumericalError("I + dt nu A is numerically singular")
            self.Linv = Linv
        else:
            self.Linv = None
            opnorm = float(np.linalg.norm(model.nu * model.A, 2))
            if self.dt * opnorm >= 2.0:
                warnings.warn(
                    f"explicit_em with dt*||nu A|| = {self.dt * opnorm:.3g} >= 2 is unstable",
                    RuntimeWarning,
                    stacklevel=3,
                )

    def step(self, U, dW):
        """Advance states ``U`` (P, N) with increments ``dW`` (P, d)."""
        m = self.model
        forcing = dW @ m.sigma.T
        if self.Linv is not None:
            return (U - self.dt * m.quadratic(U) + forcing) @ self.Linv.T
        return U + self.dt * m.drift(U) + forcing

    def step_matrix(self, U):
        """Derivative of one step with respect to the state, at a single ``U``."""
        G = self.model.grad_bilinear(U)
        if self.Linv is not None:
            return self.Linv @ (self._I - self.dt * G)
        return self._I - self.dt * (self.model.nu * self.model.A + G)

    def tangent(self, U, R):
        """Apply the step derivative at states ``U`` (P, N) to tangents ``R`` (P, N)."""
        m = self.model
        g = m.bilinear(U, R) + m.bilinear(R, U)
        if self.Linv is not None:
            return (R - self.dt * g) @ self.Linv.T
        return R - self.dt * (m.linear(R) + g)

    def apply_resolvent(self, f):
        """Map an explicit forcing term through the implicit part (identity for EM)."""
        if self.Linv is None:
            return f
        return f @ self.Linv.T


def _check_blowup(U, m, bound, stream_ids):
    norms = np.sqrt(np.sum(U * U, axis=-1))
    bad = ~np.isfinite(norms) | (norms > bound)
    if np.any(bad):
        p = int(np.argmax(bad))
        raise IntegrationError(
            f"state left the bound {bound:.3g} at step {m} on path {stream_ids[p]}; reduce dt",
            step=m,
            path=stream_ids[p],
        )


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (M+1, N)
    noise: NoisePath
    scheme: str
    model: BilinearModel

    @property
    def dt(self) -> float:
        return self.noise.dt

    @property
    def steps(self) -> int:
        return self.noise.steps

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def stepper(self) -> Stepper:
        return Stepper(self.model, self.dt, self.scheme)


def integrate(model, U0, increments, dt, scheme="semi_implicit", blowup=DEFAULT_BLOWUP,
              stream_ids=None, stepper=None):
    """Run the scheme on given increments; ``increments`` is (P, M, d), returns (P, M+1, N)."""
    inc = np.asarray(increments, dtype=float)
    P, M, _ = inc.shape
    stepper = stepper or Stepper(model, dt, scheme)
    U = np.broadcast_to(np.asarray(U0, dtype=float), (P, model.dim)).copy()
    ids = list(range(P)) if stream_ids is None else list(stream_ids)
    out = np.empty((P, M + 1, model.dim))
    out[:, 0] = U
    for m in range(M):
        U = stepper.step(U, inc[:, m])
        _check_blowup(U, m + 1, blowup, ids)
        out[:, m + 1] = U
    return out


def simulate(
    model: BilinearModel,
    U0,
    T: float,
    dt: float,
    scheme: str = "semi_implicit",
    seed: int = 0,
    stream_id: int = 0,
    noise: Optional[NoisePath] = None,
    blowup: float = DEFAULT_BLOWUP,
) -> Trajectory:
    """Single trajectory driven by the Philox stream ``(seed, stream_id)``.

    Passing ``noise`` reuses an existing path (common random numbers).
    """
    M = n_steps(T, dt)
    U0 = np.asarray(U0, dtype=float)
    if U0.shape != (model.dim,):
        raise PreconditionError(f"U0 must have shape ({model.dim},), got {U0.shape}")
    if noise is None:
        noise = NoisePath.generate(seed, stream_id, M, dt, model.noise_dim)
    elif noise.steps != M or not math.isclose(noise.dt, dt, rel_tol=1e-12):
        raise PreconditionError("supplied noise path does not match (T, dt)")
    states = integrate(model, U0, noise.increments[None], dt, scheme, blowup, [noise.stream_id])[0]
    times = np.arange(M + 1) * float(dt)
    return Trajectory(times, states, noise, scheme, model)


# ---------------------------------------------------------------------------
# batches and ensembles


@dataclass
class BatchResult:
    stream_ids: np.ndarray
    terminal: np.ndarray  # (P, N)
    states: Optional[np.ndarray] = None  # (P, M+1, N)
    increments: Optional[np.ndarray] = None  # (P, M, d)


def simulate_batch(
    model: BilinearModel,
    U0,
    T: float,
    dt: float,
    scheme: str = "semi_implicit",
    seed: int = 0,
    stream_ids: Sequence[int] = (0,),
    store_states: bool = False,
    store_noise: bool = False,
    observer: Optional[Callable] = None,
    blowup: float = DEFAULT_BLOWUP,
) -> BatchResult:
    """Advance several independent streams together.

    ``U0`` is (N,) or (P, N). ``observer(m, U)`` is called with the (P, N)
    state at every grid index m = 0..M.
    """
    M = n_steps(T, dt)
    ids = [int(s) for s in stream_ids]
    P = len(ids)
    stepper = Stepper(model, dt, scheme)
    bank = StreamBank(seed, ids, dt, model.noise_dim)
    U = np.broadcast_to(np.asarray(U0, dtype=float), (P, model.dim)).copy()
    states = np.empty((P, M + 1, model.dim)) if store_states else None
    incs = np.empty((P, M, model.noise_dim)) if store_noise else None
    if states is not None:
        states[:, 0] = U
    if observer is not None:
        observer(0, U)
    m = 0
    while m < M:
        nb = min(NOISE_BLOCK, M - m)
        block = bank.block(nb)
        if incs is not None:
            incs[:, m:m + nb] = block
        for b in range(nb):
            U = stepper.step(U, block[:, b])
            m += 1
            _check_blowup(U, m, blowup, ids)
            if states is not None:
                states[:, m] = U
            if observer is not None:
                observer(m, U)
    return BatchResult(np.array(ids), U, states, incs)


def map_chunks(fn, n_paths: int, workers: int = 1, chunk: int = CHUNK):
    """Apply ``fn(stream_ids)`` over fixed consecutive chunks and return results in order."""
    if n_paths < 1:
        raise PreconditionError("n_paths must be >= 1")
    chunks = [list(range(a, min(a + chunk, n_paths))) for a in range(0, n_paths, chunk)]
    if workers is None or workers <= 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


@dataclass
class EnsembleStats:
    names: list
    mean: np.ndarray
    var: np.ndarray
    se: np.ndarray
    quantiles: dict
    n_paths: int
    terminal: np.ndarray = field(repr=False)

    def __getitem__(self, name):
        k = self.names.index(name)
        return {"mean": self.mean[k], "var": self.var[k], "se": self.se[k]}


def ensemble(
    model: BilinearModel,
    U0,
    T: float,
    dt: float,
    scheme: str = "semi_implicit",
    n_paths: int = 100,
    seed: int = 0,
    observables: Optional[Sequence[Observable]] = None,
    workers: int = 1,
    quantile_levels=(0.05, 0.5, 0.95),
) -> EnsembleStats:
    """Terminal-time statistics over streams 0..n_paths-1.

    Default observables are the energy and every coordinate. Integration
    errors are re-raised with the failing stream id attached.
    """
    from .observables import coordinate

    if observables is None:
        observables = [energy()] + [coordinate(k) for k in range(model.dim)]

    def run(ids):
        return simulate_batch(model, U0, T, dt, scheme, seed, ids).terminal

    terminal = np.concatenate(map_chunks(run, int(n_paths), workers), axis=0)
    vals = np.stack([np.asarray(ob(terminal), dtype=float) for ob in observables], axis=0)
    n = terminal.shape[0]
    mean = vals.mean(axis=1)
    var = vals.var(axis=1, ddof=1) if n > 1 else np.zeros(len(observables))
    se = np.sqrt(var / n)
    qs = {q: np.quantile(vals, q, axis=1) for q in quantile_levels}
    return EnsembleStats([ob.name for ob in observables], mean, var, se, qs, n, terminal)


# ---------------------------------------------------------------------------
# energy diagnostics


def energy_residual(traj: Trajectory) -> np.ndarray:
    """Per-step defect of the discrete Ito energy balance.

    r_m = |U_{m+1}|^2 - |U_m|^2 + 2 dt <nu A U_m, U_m> - |sigma|^2 dt - 2 <U_m, sigma dW_m>

    The bilinear term does not appear because <B(U, U), U> = 0.
    """
    U = traj.states
    m = traj.model
    dt = traj.dt
    E = np.sum(U * U, axis=1)
    Uc = U[:-1]
    diss = 2.0 * dt * np.sum(m.linear(Uc) * Uc, axis=1)
    mart = 2.0 * np.sum(Uc * (traj.noise.increments @ m.sigma.T), axis=1)
    return E[1:] - E[:-1] + diss - m.sigma_norm2 * dt - mart


def energy_bilinear_term(traj: Trajectory):
    """The omitted terms 2 dt <B(U_m, U_m), U_m> and their natural scale 2 dt |B| |U_m|^3."""
    U = traj.states[:-1]
    m = traj.model
    terms = 2.0 * traj.dt * np.sum(m.quadratic(U) * U, axis=1)
    scale = 2.0 * traj.dt * m.B_norm * np.sum(U * U, axis=1) ** 1.5
    return terms, scale


# ---------------------------------------------------------------------------
# exponential moment tails


@dataclass
class MomentTailTable:
    K: np.ndarray
    tail: np.ndarray  # empirical P(sup_t S_t >= K/2)
    counts: np.ndarray
    slope: float  # fitted d log(tail) / dK; -gamma_hat
    intercept: float
    fit_ok: bool
    curvature: float  # second difference of log(tail) averaged over the fitted range
    eta: float
    exp_moment: float
    exp_moment_se: float
    exp_bound: float
    n_paths: int
    flags: list = field(default_factory=list)

    @property
    def gamma_hat(self) -> float:
        return -self.slope

    def bound_shape(self) -> np.ndarray:
        return np.exp(self.intercept + self.slope * self.K)


def moment_tail_probe(
    model: BilinearModel,
    U0,
    T: float,
    dt: float,
    n_paths: int,
    K_grid,
    seed: int = 0,
    eta: float = 0.05,
    scheme: str = "semi_implicit",
    workers: int = 1,
    min_count: int = 10,
) -> MomentTailTable:
    """Empirical tail of the energy supremum and an exponential moment.

    With ``S_t = |U_t|^2 + alpha int_0^t |U|^2 ds - |sigma|^2 t`` this returns
    ``P(sup_t S_t >= K/2)`` for each K and a least-squares fit of
    ``log P`` against K over the entries with at least ``min_count``
    exceedances. It also reports ``E exp(eta (sup_s |U_s|^2 + alpha int_0^T |U|^2))``
    next to ``exp(eta (|U0|^2 + |sigma|^2 T))``; exceeding that bound is
    reported, not raised.
    """
    U0 = np.asarray(U0, dtype=float)
    K = np.asarray(K_grid, dtype=float)
    flags = []
    if np.any(K < 2 * float(U0 @ U0) - 1e-12):
        flags.append("K_grid contains values below 2|U0|^2")
    alpha, s2 = model.alpha, model.sigma_norm2

    def run(ids):
        P = len(ids)
        acc = {"int": np.zeros(P), "sup_S": np.full(P, -np.inf), "sup_E": np.zeros(P), "prev": None}

        def obs(m, U):
            E = np.sum(U * U, axis=1)
            if acc["prev"] is not None:
                acc["int"] += 0.5 * dt * (E + acc["prev"])
            acc["prev"] = E
            S = E + alpha * acc["int"] - s2 * m * dt
            np.maximum(acc["sup_S"], S, out=acc["sup_S"])
            np.maximum(acc["sup_E"], E, out=acc["sup_E"])

        simulate_batch(model, U0, T, dt, scheme, seed, ids, observer=obs)
        return np.stack([acc["sup_S"], acc["sup_E"] + alpha * acc["int"]], axis=1)

    res = np.concatenate(map_chunks(run, int(n_paths), workers), axis=0)
    supS, expo_arg = res[:, 0], res[:, 1]
    counts = np.array([(supS >= k / 2).sum() for k in K])
    tail = counts / len(supS)

    use = counts >= min_count
    if use.sum() >= 2:
        slope, intercept = np.polyfit(K[use], np.log(tail[use]), 1)
        fit_ok = True
        logt = np.log(tail[use])
        curv = float(np.mean(np.diff(logt, 2))) if use.sum() >= 3 else float("nan")
    else:
        slope, intercept, fit_ok, curv = float("nan"), float("nan"), False, float("nan")
        flags.append("too few exceedances for a slope fit")

    w = np.exp(eta * expo_arg)
    exp_moment = float(w.mean())
    exp_se = float(w.std(ddof=1) / np.sqrt(len(w))) if len(w) > 1 else 0.0
    bound = float(np.exp(eta * (U0 @ U0 + s2 * T)))
    if exp_moment > bound:
        flags.append("empirical exponential moment exceeds the bound for this eta")
    return MomentTailTable(
        K, tail, counts, float(slope), float(intercept), fit_ok, curv, float(eta),
        exp_moment, exp_se, bound, int(n_paths), flags,
    )


# ---------------------------------------------------------------------------
# weak error on linear models


@dataclass
class WeakError:
    error: float  # E|U_M|^2 - E|X_T|^2
    se: float
    exact_moment: float
    dt: float
    n_paths: int


def weak_error_linear(
    model: BilinearModel,
    U0,
    T: float,
    dt: float,
    n_paths: int,
    seed: int = 0,
    scheme: str = "semi_implicit",
    workers: int = 1,
) -> WeakError:
    """Weak error of E|U(T)|^2 for ``B = 0`` and ``nu A = lam I``.

    Each path is paired with the exact Ornstein-Uhlenbeck transition driven by
    the same increments, ``X_{m+1} = e^{-lam dt} X_m + c sigma dW_m`` with
    ``c^2 = (1 - e^{-2 lam dt}) / (2 lam dt)``, so E|X_M|^2 is the exact
    moment and the paired difference has a small variance.
    """
    if np.any(model.dense_B() if model.is_dense else model.coo[1]):
        raise PreconditionError("weak_error_linear needs B = 0")
    L = model.nu * model.A
    lam = float(L[0, 0])
    if not np.allclose(L, lam * np.eye(model.dim), rtol=0, atol=1e-14 * abs(lam)) or lam <= 0:
        raise PreconditionError("weak_error_linear needs nu A = lam I with lam > 0")
    M = n_steps(T, dt)
    U0 = np.asarray(U0, dtype=float)
    decay = math.exp(-lam * dt)
    c = math.sqrt(-math.expm1(-2 * lam * dt) / (2 * lam * dt))

    def run(ids):
        res = simulate_batch(model, U0, T, dt, scheme, seed, ids, store_noise=True)
        X = np.broadcast_to(U0, (len(ids), model.dim)).copy()
        for m in range(M):
            X = decay * X + c * (res.increments[:, m] @ model.sigma.T)
        return np.sum(res.terminal**2, axis=1) - np.sum(X**2, axis=1)

    diff = np.concatenate(map_chunks(run, int(n_paths), workers))
    n = len(diff)
    exact = math.exp(-2 * lam * T) * float(U0 @ U0) - model.sigma_norm2 * math.expm1(-2 * lam * T) / (2 * lam)
    se = float(diff.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return WeakError(float(diff.mean()), se, exact, float(dt), n)
