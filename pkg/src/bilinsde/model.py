"""Bilinear SDE models ``dU + (nu A U + B(U, U)) dt = sigma dW``.

The bilinear term is stored as a rank-3 tensor with the convention

    B(V, U)_i = sum_{j,k} B[i, j, k] V_j U_k

Dense storage is used up to ``DENSE_MAX_DIM``; above that only the
coordinate list is kept and contractions go through a CSR matrix of shape
``(N, N*N)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataError, PreconditionError, StructuralError

DENSE_MAX_DIM = 64


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BilinearModel:
    """Immutable description of the SDE.

    ``B`` may be given either as a dense ``(N, N, N)`` array or as a
    coordinate list ``(idx, vals)`` with ``idx`` an ``(nnz, 3)`` integer array.
    """

    nu: float
    A: np.ndarray
    B: object
    sigma: np.ndarray
    name: str = "custom"
    _coo: tuple = field(init=False, repr=False, compare=False)
    _dense: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise StructuralError(f"A must be a non-empty square matrix, got shape {A.shape}")
        N = A.shape[0]
        if sigma.ndim == 1:
            sigma = sigma.reshape(N, 1) if sigma.size == N else sigma
        if sigma.ndim != 2 or sigma.shape[0] != N or sigma.shape[1] < 1:
            raise StructuralError(f"sigma must be an ({N}, d) matrix, got shape {sigma.shape}")
        nu = float(self.nu)

        if isinstance(self.B, tuple):
            idx, vals = self.B
            idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
            vals = np.asarray(vals, dtype=float).reshape(-1)
            if idx.shape[0] != vals.shape[0]:
                raise StructuralError("B coordinate list: index and value counts differ")
            if idx.size and (idx.min() < 0 or idx.max() >= N):
                raise StructuralError(f"B coordinate index out of range for N={N}")
            dense = None
            if N <= DENSE_MAX_DIM:
                dense = np.zeros((N, N, N))
                np.add.at(dense, (idx[:, 0], idx[:, 1], idx[:, 2]), vals)
        else:
            dense = np.asarray(self.B, dtype=float)
            if dense.shape != (N, N, N):
                raise StructuralError(f"B must have shape {(N, N, N)}, got {dense.shape}")
            nz = np.nonzero(dense)
            idx = np.stack(nz, axis=1).astype(np.int64)
            vals = dense[nz]
            if N > DENSE_MAX_DIM:
                dense = None

        if not np.isfinite(nu) or nu <= 0:
            raise DataError(f"nu must be a positive finite number, got {nu}")
        for label, arr in (("A", A), ("B", vals), ("sigma", sigma)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{label} contains non-finite entries")

        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "sigma", _readonly(sigma))
        idx.setflags(write=False)
        object.__setattr__(self, "_coo", (idx, _readonly(vals)))
        object.__setattr__(self, "_dense", None if dense is None else _readonly(dense))
        object.__setattr__(self, "B", self._dense if self._dense is not None else (idx, self._coo[1]))

    # -- shape -------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.sigma.shape[1]

    @property
    def is_dense(self) -> bool:
        return self._dense is not None

    @property
    def coo(self):
        """``(idx, vals)`` coordinate list of the nonzero tensor entries."""
        return self._coo

    def dense_B(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense
        N = self.dim
        out = np.zeros((N, N, N))
        idx, vals = self._coo
        np.add.at(out, (idx[:, 0], idx[:, 1], idx[:, 2]), vals)
        return out

    @cached_property
    def _csr(self):
        N = self.dim
        idx, vals = self._coo
        return sp.csr_array((vals, (idx[:, 0], idx[:, 1] * N + idx[:, 2])), shape=(N, N * N))

    # -- derived constants -------------------------------------------------
    @cached_property
    def alpha(self) -> float:
        """Coercivity constant: smallest eigenvalue of the symmetric part of nu*A."""
        S = 0.5 * self.nu * (self.A + self.A.T)
        return float(np.linalg.eigvalsh(S)[0])

    @cached_property
    def sigma_norm2(self) -> float:
        """|sigma|^2 = trace(sigma sigma^T)."""
        return float(np.sum(self.sigma**2))

    @cached_property
    def B_norm(self) -> float:
        """Frobenius norm of the tensor; bounds |B(V, U)| <= B_norm |V||U|."""
        return float(np.sqrt(np.sum(self._coo[1] ** 2)))

    # -- contractions ------------------------------------------------------
    def bilinear(self, V, U):
        """B(V, U); ``V`` and ``U`` may carry matching leading batch axes."""
        V = np.asarray(V, dtype=float)
        U = np.asarray(U, dtype=float)
        if self._dense is not None:
            return np.einsum("ijk,...j,...k->...i", self._dense, V, U)
        N = self.dim
        batch = np.broadcast_shapes(V.shape, U.shape)[:-1]
        outer = (V[..., :, None] * U[..., None, :]).reshape(-1, N * N)
        return (self._csr @ outer.T).T.reshape(batch + (N,))

    def quadratic(self, U):
        return self.bilinear(U, U)

    def grad_bilinear(self, U) -> np.ndarray:
        """Matrix of rho -> B(U, rho) + B(rho, U) at a single state ``U``."""
        U = np.asarray(U, dtype=float)
        if self._dense is not None:
            return np.einsum("ijk,j->ik", self._dense, U) + np.einsum("ikj,j->ik", self._dense, U)
        N = self.dim
        idx, vals = self._coo
        i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
        G = np.zeros((N, N))
        np.add.at(G, (i, k), vals * U[j])
        np.add.at(G, (i, j), vals * U[k])
        return G

    def linear(self, U):
        """nu A U (batched over leading axes)."""
        return self.nu * np.asarray(U, dtype=float) @ self.A.T

    def drift(self, U):
        return -(self.linear(U) + self.quadratic(U))

    # -- misc --------------------------------------------------------------
    def with_sigma(self, sigma) -> "BilinearModel":
        return BilinearModel(self.nu, self.A, self._coo, sigma, name=self.name)

    def with_B(self, B) -> "BilinearModel":
        return BilinearModel(self.nu, self.A, B, self.sigma, name=self.name)


def eval_drift(model: BilinearModel, U) -> np.ndarray:
    """Drift ``-(nu A U + B(U, U))`` of the SDE at ``U``."""
    U = np.asarray(U, dtype=float)
    if U.shape[-1] != model.dim:
        raise StructuralError(f"state has dimension {U.shape[-1]}, model has {model.dim}")
    return model.drift(U)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    coercivity_ok: bool
    alpha: float
    cancellation_max_violation: float
    cancellation_ok: bool
    sigma_ok: bool
    messages: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.coercivity_ok and self.cancellation_ok and self.sigma_ok


def cancellation_violation(model: BilinearModel) -> float:
    """max |B[i,j,k] + B[k,j,i]| over all index triples."""
    if model.is_dense:
        B = model.dense_B()
        return float(np.max(np.abs(B + B.transpose(2, 1, 0))))
    idx, vals = model.coo
    acc = {}
    for (i, j, k), v in zip(map(tuple, idx), vals):
        key = (min(i, k), j, max(i, k))
        acc[key] = acc.get(key, 0.0) + (2 * v if i == k else v)
    return float(max((abs(v) for v in acc.values()), default=0.0))


def validate_model(model: BilinearModel, tol: float = 1e-10) -> ValidationReport:
    """Check coercivity of nu*A, the energy cancellation of B and the noise columns.

    ``tol`` is relative: alpha must exceed ``tol * ||nu A||`` and the
    cancellation violation must not exceed ``tol * max|B|`` (absolute ``tol``
    when B is zero).
    """
    msgs = []
    A_scale = max(float(np.linalg.norm(model.nu * model.A, 2)), 1.0e-300)
    alpha = model.alpha
    coercive = alpha > tol * A_scale
    if not coercive:
        msgs.append(f"coercivity fails: min eig of sym(nu A) = {alpha:.6g}")

    viol = cancellation_violation(model)
    vals = model.coo[1]
    B_scale = float(np.max(np.abs(vals))) if vals.size else 0.0
    canc_ok = viol <= tol * max(B_scale, 1.0)
    if not canc_ok:
        msgs.append(f"cancellation fails: max |B[i,j,k] + B[k,j,i]| = {viol:.3e}")

    col_norms = np.linalg.norm(model.sigma, axis=0)
    sigma_ok = bool(np.all(np.isfinite(model.sigma)) and np.any(col_norms > 0))
    if not sigma_ok:
        msgs.append("sigma has no nonzero column")
    return ValidationReport(coercive, alpha, viol, canc_ok, sigma_ok, msgs)


# ---------------------------------------------------------------------------
# built-in generators


def make_linear(N, nu=1.0, sigma=None, A=None, name="linear"):
    """B = 0 model, A = I unless given; sigma defaults to the identity."""
    A = np.eye(N) if A is None else A
    sigma = np.eye(N) if sigma is None else sigma
    return BilinearModel(nu, A, np.zeros((N, N, N)), sigma, name=name)


def make_triad(c=(1.0, 1.0, -2.0), nu=1.0, forced_axes=(1, 2), tol=1e-12):
    """Three-mode energy-conserving triad with A = I.

    The quadratic term is B(U, U) = (c1 U2 U3, c2 U3 U1, c3 U1 U2). The stored
    tensor is the representative that is antisymmetric in its first and last
    index, so <B(V, U), U> = 0 for every V and not just V = U.
    ``forced_axes`` are 1-based.
    """
    c1, c2, c3 = (float(x) for x in c)
    if abs(c1 + c2 + c3) > tol * max(1.0, abs(c1), abs(c2), abs(c3)):
        raise PreconditionError(f"triad coefficients must sum to zero, got {c1 + c2 + c3:.3g}")
    axes = sorted(set(int(a) for a in forced_axes))
    if not axes:
        raise PreconditionError("forced_axes must be nonempty")
    if axes[0] < 1 or axes[-1] > 3:
        raise PreconditionError(f"forced axes must lie in {{1,2,3}}, got {axes}")
    B = np.zeros((3, 3, 3))
    B[0, 1, 2], B[2, 1, 0] = c1, -c1
    B[1, 0, 2], B[2, 0, 1] = c2, -c2
    sigma = np.eye(3)[:, [a - 1 for a in axes]]
    return BilinearModel(nu, np.eye(3), B, sigma, name="triad")


def galerkin_modes(K):
    """Half-plane wave-vectors with 0 < max(|k1|, |k2|) <= K.

    Ordered by |k|^2, then k1, then k2. Each wave-vector contributes two real
    coordinates (cos, sin), so N = 2 * len(modes) = 4K(K+1).
    """
    modes = [
        (k1, k2)
        for k1 in range(0, K + 1)
        for k2 in range(-K, K + 1)
        if (k1 > 0 or k2 > 0)
    ]
    return sorted(modes, key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))


def _canonical_mode(k):
    k1, k2 = int(k[0]), int(k[1])
    if k1 < 0 or (k1 == 0 and k2 < 0):
        k1, k2 = -k1, -k2
    return k1, k2


def make_galerkin_nse2d(K, nu=1.0, forced_modes=((1, 0), (1, 1)), amplitude=1.0, drop_tol=1e-13):
    """Galerkin truncation of 2D Navier-Stokes in vorticity form on [0, 2pi]^2.

    Coordinates are the L2-orthonormal real basis
    ``cos(k.x)/(sqrt(2) pi), sin(k.x)/(sqrt(2) pi)`` for the modes of
    :func:`galerkin_modes`, interleaved (cos_k, sin_k). ``A = diag(|k|^2)`` and

        B[i, j, m] = < e_i, u(e_j) . grad e_m >,   u(w) = grad^perp (-Laplace)^{-1} w

    computed with a tensor-grid rule that is exact for the trigonometric
    products involved. Each forced wave-vector adds two noise columns (cos and
    sin) of size ``amplitude``.
    """
    K = int(K)
    if K < 1:
        raise PreconditionError("cutoff K must be >= 1")
    modes = galerkin_modes(K)
    index = {k: n for n, k in enumerate(modes)}
    forced = []
    for k in forced_modes:
        kc = _canonical_mode(k)
        if kc not in index:
            raise PreconditionError(f"forced mode {tuple(k)} lies outside the cutoff K={K}")
        if kc not in forced:
            forced.append(kc)
    if not forced:
        raise PreconditionError("at least one forced mode is required")

    N = 2 * len(modes)
    n = 3 * K + 2  # exact for trigonometric degree <= 3K per coordinate
    x = 2 * np.pi * np.arange(n) / n
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    w = (2 * np.pi / n) ** 2
    norm = 1.0 / (np.sqrt(2.0) * np.pi)

    kv = np.array(modes, dtype=float)
    phase = kv[:, 0, None, None] * X1 + kv[:, 1, None, None] * X2
    C, S = np.cos(phase) * norm, np.sin(phase) * norm
    E = np.empty((N, n, n))
    E[0::2], E[1::2] = C, S
    # gradients: d/dx_l cos = -k_l sin, d/dx_l sin = k_l cos
    G = np.empty((N, 2, n, n))
    for l in range(2):
        kl = kv[:, l, None, None]
        G[0::2, l] = -kl * S
        G[1::2, l] = kl * C
    # velocity u = (-d2 psi, d1 psi) with psi = e / |k|^2
    k2 = np.repeat(np.sum(kv**2, axis=1), 2)
    Uvel = np.stack([-G[:, 1], G[:, 0]], axis=1) / k2[:, None, None, None]

    adv = np.einsum("jlxy,mlxy->jmxy", Uvel, G)  # u(e_j) . grad e_m
    B = w * np.einsum("ixy,jmxy->ijm", E, adv)
    scale = np.max(np.abs(B))
    B[np.abs(B) < drop_tol * scale] = 0.0

    A = np.diag(k2)
    sigma = np.zeros((N, 2 * len(forced)))
    for c, kc in enumerate(forced):
        sigma[2 * index[kc], 2 * c] = amplitude
        sigma[2 * index[kc] + 1, 2 * c + 1] = amplitude
    nz = np.nonzero(B)
    coo = (np.stack(nz, axis=1), B[nz])
    return BilinearModel(nu, A, coo, sigma, name=f"nse2d_K{K}")


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: BilinearModel) -> dict:
    idx, vals = model.coo
    return {
        "dim": model.dim,
        "noise_dim": model.noise_dim,
        "nu": model.nu,
        "A": model.A.tolist(),
        "B": [[int(i), int(j), int(k), float(v)] for (i, j, k), v in zip(idx, vals)],
        "sigma": model.sigma.T.tolist(),
        "name": model.name,
    }


def model_from_dict(doc: dict) -> BilinearModel:
    try:
        N, d = int(doc["dim"]), int(doc["noise_dim"])
        nu = float(doc["nu"])
        A = np.asarray(doc["A"], dtype=float)
        entries = doc.get("B", [])
        cols = np.asarray(doc["sigma"], dtype=float)
    except KeyError as exc:
        raise StructuralError(f"model document missing field {exc.args[0]!r}") from None
    if A.size == N * N:
        A = A.reshape(N, N)
    else:
        raise StructuralError(f"A has {A.size} entries, expected {N * N}")
    if cols.ndim != 2 or cols.shape != (d, N):
        raise StructuralError(f"sigma must list {d} columns of length {N}, got shape {cols.shape}")
    if entries:
        arr = np.asarray(entries, dtype=float).reshape(-1, 4)
        if np.any(arr[:, :3] != np.round(arr[:, :3])):
            raise StructuralError("B indices must be integers")
        coo = (arr[:, :3].astype(np.int64), arr[:, 3])
    else:
        coo = (np.zeros((0, 3), dtype=np.int64), np.zeros(0))
    return BilinearModel(nu, A, coo, cols.T, name=str(doc.get("name", "custom")))


def save_model(model: BilinearModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> BilinearModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise StructuralError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from None
    return model_from_dict(doc)
