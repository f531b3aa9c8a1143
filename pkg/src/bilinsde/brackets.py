"""Lie brackets of polynomial vector fields and the Hormander span ladders.

Two ladders are provided. The constant ladder ``W_n`` only needs the
bilinear tensor: starting from the noise columns it repeatedly adds
``B(psi, sigma_j) + B(sigma_j, psi)``. The general ladder ``V_n`` works with
polynomial vector fields and the drift ``F(U) = -nu A U - B(U, U)``; its
spans depend on the state and are only checked pointwise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError
from .model import BilinearModel

DEFAULT_DEGREE_CAP = 4
DEFAULT_RANK_TOL = 1e-8


def span_dimension(vectors, tol=DEFAULT_RANK_TOL) -> int:
    """Numerical rank of a set of vectors.

    Singular values below ``tol * s_max * n`` count as zero, ``n`` being the
    vector length.
    """
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if V.size == 0:
        return 0
    s = np.linalg.svd(V, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0] * V.shape[1]))


def _symmetrize(T):
    """Average a tensor over all permutations of its argument axes (all but axis 0)."""
    m = T.ndim - 1
    if m <= 1:
        return T
    perms = list(itertools.permutations(range(1, m + 1)))
    out = np.zeros_like(T)
    for p in perms:
        out += np.transpose(T, (0,) + p)
    return out / len(perms)


class PolyVectorField:
    """Polynomial vector field on R^N stored by homogeneous degree.

    ``parts[m]`` is a tensor of shape ``(N,) + (N,) * m``, symmetrized over
    its last ``m`` axes on construction, so the field is
    ``U -> sum_m parts[m](U, ..., U)``.
    """

    def __init__(self, N, parts=None, degree_cap=DEFAULT_DEGREE_CAP):
        self.N = int(N)
        self.degree_cap = int(degree_cap)
        self.parts = {}
        for m, T in (parts or {}).items():
            T = np.asarray(T, dtype=float)
            if T.shape != (self.N,) * (m + 1):
                raise ValueError(f"degree-{m} part must have shape {(self.N,) * (m + 1)}")
            if m > self.degree_cap:
                raise CapacityError(f"degree {m} exceeds the cap {self.degree_cap}")
            if np.any(T):
                self.parts[m] = _symmetrize(T)

    # constructors
    @classmethod
    def constant(cls, v, degree_cap=DEFAULT_DEGREE_CAP):
        v = np.asarray(v, dtype=float)
        return cls(v.size, {0: v}, degree_cap)

    @classmethod
    def linear(cls, M, degree_cap=DEFAULT_DEGREE_CAP):
        M = np.asarray(M, dtype=float)
        return cls(M.shape[0], {1: M}, degree_cap)

    @classmethod
    def quadratic(cls, B, degree_cap=DEFAULT_DEGREE_CAP):
        B = np.asarray(B, dtype=float)
        return cls(B.shape[0], {2: _symmetrize(B)}, degree_cap)

    @classmethod
    def drift(cls, model: BilinearModel, sign=1.0, degree_cap=DEFAULT_DEGREE_CAP):
        """``sign * (-nu A U - B(U, U))`` as a polynomial field."""
        parts = {1: -sign * model.nu * model.A, 2: -sign * _symmetrize(model.dense_B())}
        return cls(model.dim, parts, degree_cap)

    # algebra
    @property
    def degree(self) -> int:
        return max(self.parts, default=-1)

    def is_zero(self) -> bool:
        return not self.parts

    def _combine(self, other, a, b):
        parts = {}
        for m in set(self.parts) | set(other.parts):
            parts[m] = a * self.parts.get(m, 0.0) + b * other.parts.get(m, 0.0)
        parts = {m: np.broadcast_to(T, (self.N,) * (m + 1)).copy() for m, T in parts.items()}
        return PolyVectorField(self.N, parts, max(self.degree_cap, other.degree_cap))

    def __add__(self, other):
        return self._combine(other, 1.0, 1.0)

    def __sub__(self, other):
        return self._combine(other, 1.0, -1.0)

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, c):
        return PolyVectorField(self.N, {m: c * T for m, T in self.parts.items()}, self.degree_cap)

    # evaluation
    def __call__(self, U):
        U = np.asarray(U, dtype=float)
        out = np.zeros(self.N)
        for T in self.parts.values():
            R = T
            while R.ndim > 1:
                R = R @ U
            out += R
        return out

    def jacobian(self, U):
        """Matrix of the derivative at ``U`` (symmetry of the parts gives the factor m)."""
        U = np.asarray(U, dtype=float)
        J = np.zeros((self.N, self.N))
        for m, T in self.parts.items():
            if m == 0:
                continue
            R = T
            while R.ndim > 2:
                R = R @ U
            J += m * R
        return J

    def directional(self, G: "PolyVectorField") -> "PolyVectorField":
        """The field ``U -> grad(self)(U) G(U)``."""
        cap = max(self.degree_cap, G.degree_cap)
        parts = {}
        for q, H in self.parts.items():
            if q == 0:
                continue
            for p, Gp in G.parts.items():
                deg = q - 1 + p
                if deg > cap:
                    raise CapacityError(
                        f"bracket term of degree {deg} exceeds the degree cap {cap}"
                    )
                # move H's contracted slot to the end, then contract with G's output axis
                T = q * np.tensordot(np.moveaxis(H, 1, -1), Gp, axes=(-1, 0))
                parts[deg] = parts.get(deg, 0.0) + _symmetrize(T)
        return PolyVectorField(self.N, parts, cap)

    def flat(self, degree_cap=None) -> np.ndarray:
        """Concatenated coefficients of degrees 0..cap (zeros where absent)."""
        cap = self.degree_cap if degree_cap is None else degree_cap
        chunks = []
        for m in range(cap + 1):
            T = self.parts.get(m)
            chunks.append(np.zeros(self.N ** (m + 1)) if T is None else T.ravel())
        return np.concatenate(chunks)

    def __repr__(self):
        return f"PolyVectorField(N={self.N}, degrees={sorted(self.parts)})"


def lie_bracket(G: PolyVectorField, H: PolyVectorField) -> PolyVectorField:
    """[G, H] = grad(H) G - grad(G) H. Raises CapacityError on degree overflow."""
    return H.directional(G) - G.directional(H)


@dataclass
class BracketLadder:
    levels: list
    span_dim: list
    new_vectors: list
    spanning_level: int | None = None
    stabilized_at: int | None = None
    overflows: list = field(default_factory=list)
    kind: str = "W"

    @property
    def exhausted(self) -> bool:
        """True if n_max was reached before the span either filled or stabilized."""
        return self.spanning_level is None and self.stabilized_at is None

    def rows(self):
        """(level, new_vectors, span_dim) triples for tabular output."""
        return [(n, self.new_vectors[n], self.span_dim[n]) for n in range(len(self.levels))]


def _extend_basis(basis, candidates, tol):
    """Append candidates that raise the numerical rank; returns the number added."""
    added = 0
    rank = span_dimension(basis, tol) if basis else 0
    for v in candidates:
        trial = basis + [v]
        r = span_dimension(trial, tol)
        if r > rank:
            basis.append(v)
            rank = r
            added += 1
    return added


def build_W_ladder(model: BilinearModel, n_max: int, tol=DEFAULT_RANK_TOL) -> BracketLadder:
    """Constant bracket ladder W_0 = {sigma_j}, W_n = W_{n-1} u {B(psi, s_j) + B(s_j, psi)}.

    Vectors are kept only if they raise the numerical rank, so every level
    holds at most N vectors. Iteration stops once a level adds nothing.
    """
    N = model.dim
    sig = [model.sigma[:, j] for j in range(model.noise_dim)]
    basis = []
    added = _extend_basis(basis, [s / np.linalg.norm(s) for s in sig if np.any(s)], tol)
    levels = [np.array(basis).reshape(-1, N)]
    dims = [len(basis)]
    new = [added]
    ladder = BracketLadder(levels, dims, new, kind="W")
    if dims[0] == N:
        ladder.spanning_level = 0
        return ladder
    for n in range(1, int(n_max) + 1):
        cands = []
        for psi in list(basis):
            for s in sig:
                v = model.bilinear(psi, s) + model.bilinear(s, psi)
                # zero relative to |B(psi, s)| <= |B|_F |psi| |s|; survivors are normalized
                nv = np.linalg.norm(v)
                if nv > tol * 2.0 * model.B_norm * np.linalg.norm(psi) * np.linalg.norm(s):
                    cands.append(v / nv)
        added = _extend_basis(basis, cands, tol)
        levels.append(np.array(basis).reshape(-1, N))
        dims.append(len(basis))
        new.append(added)
        if len(basis) == N:
            ladder.spanning_level = n
            break
        if added == 0:
            ladder.stabilized_at = n
            break
    return ladder


def build_V_ladder(
    model: BilinearModel,
    n_max: int,
    degree_cap=DEFAULT_DEGREE_CAP,
    tol=DEFAULT_RANK_TOL,
    drift_sign=1.0,
) -> BracketLadder:
    """General ladder V_n = span{E, [E, F], [E, sigma_k] : E in V_{n-1}}.

    Levels hold a basis of polynomial fields (rank measured on the
    coefficient vectors). Brackets that would exceed ``degree_cap`` are
    skipped and listed in ``overflows`` as ``(level, description)``.
    Intended for small N: a degree-m field stores N**(m+1) coefficients.
    """
    if degree_cap < 2:
        raise ValueError("degree_cap must be at least 2")
    N = model.dim
    F = PolyVectorField.drift(model, sign=drift_sign, degree_cap=degree_cap)
    sig = [PolyVectorField.constant(model.sigma[:, k], degree_cap) for k in range(model.noise_dim)]

    fields, flats = [], []

    def add(cands):
        count = 0
        for fld in cands:
            if fld.is_zero():
                continue
            v = fld.flat(degree_cap)
            if _extend_basis(flats, [v], tol):
                fields.append(fld)
                count += 1
        return count

    added = add(sig)
    ladder = BracketLadder([list(fields)], [len(fields)], [added], kind="V")
    frontier = list(fields)
    for n in range(1, int(n_max) + 1):
        cands = []
        for E in frontier:
            try:
                cands.append(lie_bracket(E, F))
            except CapacityError as exc:
                ladder.overflows.append((n, f"[E, F] with deg E = {E.degree}: {exc}"))
            for k, s in enumerate(sig):
                cands.append(lie_bracket(E, s))
        before = len(fields)
        added = add(cands)
        frontier = fields[before:]
        ladder.levels.append(list(fields))
        ladder.span_dim.append(len(fields))
        ladder.new_vectors.append(added)
        if added == 0:
            ladder.stabilized_at = n
            break
    return ladder


@dataclass
class PointCheck:
    span_dim: int
    spanning: bool
    level: int | None
    overflows: list


def check_hormander_at_point(
    model: BilinearModel, U, n_max=6, tol=DEFAULT_RANK_TOL, degree_cap=DEFAULT_DEGREE_CAP
):
    """Span of the V-ladder fields evaluated at ``U``.

    Returns ``(span_dim, spanning)``. The full ladder information is
    available via :func:`check_hormander_at_point_detail`.
    """
    res = check_hormander_at_point_detail(model, U, n_max, tol, degree_cap)
    return res.span_dim, res.spanning


def check_hormander_at_point_detail(
    model: BilinearModel, U, n_max=6, tol=DEFAULT_RANK_TOL, degree_cap=DEFAULT_DEGREE_CAP
) -> PointCheck:
    U = np.asarray(U, dtype=float)
    ladder = build_V_ladder(model, n_max, degree_cap=degree_cap, tol=tol)
    N = model.dim
    best, level = 0, None
    for n, flds in enumerate(ladder.levels):
        vals = [f(U) for f in flds]
        r = span_dimension(vals, tol) if vals else 0
        best = max(best, r)
        if r == N:
            level = n
            break
    spanning = best == N
    if not spanning and ladder.overflows:
        first = ladder.overflows[0]
        raise CapacityError(
            f"span {best} < {N} at U and the ladder hit the degree cap "
            f"{degree_cap} at level {first[0]}"
        )
    return PointCheck(best, spanning, level, ladder.overflows)

