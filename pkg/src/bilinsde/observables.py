"""Observables phi(U) with gradient and Hessian, evaluated in batch."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ObservableError


@dataclass(frozen=True)
class Observable:
    """Scalar function of the state.

    All maps accept ``U`` with shape ``(..., N)``; ``value`` returns shape
    ``(...)``, ``gradient`` ``(..., N)`` and ``hessian`` ``(..., N, N)``.
    """

    name: str
    value: Callable
    gradient: Optional[Callable] = None
    hessian: Optional[Callable] = None

    def __call__(self, U):
        return self.value(np.asarray(U, dtype=float))

    def grad(self, U):
        if self.gradient is None:
            raise ObservableError(f"observable {self.name!r} has no gradient")
        return self.gradient(np.asarray(U, dtype=float))

    def hess(self, U):
        if self.hessian is None:
            raise ObservableError(f"observable {self.name!r} has no hessian")
        return self.hessian(np.asarray(U, dtype=float))


def energy() -> Observable:
    """|U|^2."""

    def hess(U):
        N = U.shape[-1]
        return np.broadcast_to(2.0 * np.eye(N), U.shape[:-1] + (N, N))

    return Observable("energy", lambda U: np.sum(U * U, axis=-1), lambda U: 2.0 * U, hess)


def coordinate(k: int) -> Observable:
    """<U, e_k> with 0-based ``k``."""

    def grad(U):
        g = np.zeros_like(U)
        g[..., k] = 1.0
        return g

    def hess(U):
        N = U.shape[-1]
        return np.zeros(U.shape[:-1] + (N, N))

    return Observable(f"coord{k}", lambda U: U[..., k], grad, hess)


def quadratic_form(Q, name="quadform") -> Observable:
    """<Q U, U>."""
    Q = np.asarray(Q, dtype=float)
    S = Q + Q.T

    def hess(U):
        return np.broadcast_to(S, U.shape[:-1] + S.shape)

    return Observable(
        name,
        lambda U: np.einsum("...i,ij,...j->...", U, Q, U),
        lambda U: U @ S.T,
        hess,
    )


def constant(c=1.0) -> Observable:
    def hess(U):
        N = U.shape[-1]
        return np.zeros(U.shape[:-1] + (N, N))

    return Observable("one", lambda U: np.full(U.shape[:-1], float(c)), lambda U: np.zeros_like(U), hess)


def dissipation(model) -> Observable:
    """2 <nu A U, U>, the energy dissipation rate."""
    return quadratic_form(2.0 * model.nu * model.A, name="dissipation")


def parse_observable(spec: str, model=None) -> Observable:
    """Build a built-in observable from a short name.

    Accepted: ``energy``, ``coordK`` (0-based), ``one``, ``dissipation``.
    """
    spec = spec.strip()
    if spec == "energy":
        return energy()
    if spec == "one":
        return constant(1.0)
    if spec == "dissipation":
        if model is None:
            raise ValueError("dissipation observable needs a model")
        return dissipation(model)
    if spec.startswith("coord"):
        return coordinate(int(spec[5:]))
    raise ValueError(f"unknown observable {spec!r}")
