"""Centralized Kalman-Bucy filter, the optimal reference for every comparison."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._validation import symmetrize
from .exceptions import NumericalFailure
from .model import PlantModel

__all__ = [
    "CentralizedFilterState",
    "central_gain",
    "information",
    "riccati_rhs",
    "central_step",
    "integrate_riccati",
    "steady_state_covariance",
]


@dataclass(frozen=True)
class CentralizedFilterState:
    xhat: np.ndarray
    P: np.ndarray

    @classmethod
    def from_plant(cls, plant: PlantModel) -> "CentralizedFilterState":
        return cls(plant.x0.copy(), plant.P0.copy())


def central_gain(P, C, R) -> np.ndarray:
    """``K = P C^T R^-1``."""
    P, C, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (P, C, R))
    try:
        return np.linalg.solve(R.T, (P @ C.T).T).T
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("measurement covariance R is singular") from None


def _solve(R, C) -> np.ndarray:
    """``R^-1 C`` with a readable error for singular ``R``."""
    try:
        return np.linalg.solve(np.atleast_2d(np.asarray(R, dtype=float)), C)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("measurement covariance R is singular") from None


def information(C, R, y=None):
    """Return ``G = C^T R^-1 C`` and, if ``y`` is given, ``b = C^T R^-1 y``."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    RinvC = _solve(R, C)
    G = C.T @ RinvC
    if y is None:
        return G
    return G, RinvC.T @ np.asarray(y, dtype=float).reshape(-1)


def riccati_rhs(P, A, W, G):
    """``A P + P A^T + W - P G P``; broadcasts over leading axes."""
    return A @ P + P @ np.swapaxes(A, -1, -2) + W - P @ G @ P


def central_step(state: CentralizedFilterState, plant: PlantModel, C, R, y, t: float,
                 h: float) -> CentralizedFilterState:
    """One explicit Euler step of the estimate and Riccati equations.

    The innovation is evaluated as ``P (R^-1 C)^T (y - C xhat)``, which is
    ``K (y - C xhat)`` and vanishes exactly when ``y = C xhat``.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    A = plant.A(t)
    W = plant.W(t)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    RinvC = _solve(R, C)
    G = C.T @ RinvC
    x, P = state.xhat, state.P
    dx = A @ x + P @ (RinvC.T @ (np.asarray(y, dtype=float).reshape(-1) - C @ x))
    P_new = symmetrize(P + h * riccati_rhs(P, A, W, G))
    x_new = x + h * dx
    try:
        np.linalg.cholesky(P_new)
    except np.linalg.LinAlgError:
        raise NumericalFailure("centralized covariance lost positive definiteness; step too large?",
                               time=t + h) from None
    return CentralizedFilterState(x_new, P_new)


def integrate_riccati(P0, A_at: Callable[[float], np.ndarray], W_at: Callable[[float], np.ndarray],
                      G_at: Callable[[float], np.ndarray], t0: float, t1: float, h: float,
                      method: str = "rk4") -> np.ndarray:
    """Integrate the Riccati equation from ``t0`` to ``t1`` (either direction)."""
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    span = t1 - t0
    steps = max(1, int(np.ceil(abs(span) / h - 1e-9)))
    dt = span / steps
    P = np.array(P0, dtype=float)

    def f(t, P):
        return riccati_rhs(P, A_at(t), W_at(t), G_at(t))

    t = t0
    for _ in range(steps):
        if method == "euler":
            P = P + dt * f(t, P)
        else:
            k1 = f(t, P)
            k2 = f(t + dt / 2, P + dt / 2 * k1)
            k3 = f(t + dt / 2, P + dt / 2 * k2)
            k4 = f(t + dt, P + dt * k3)
            P = P + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        P = symmetrize(P)
        t += dt
    return P


def steady_state_covariance(A, W, C, R, tol: float = 1e-10, max_time: float = 1e4,
                            max_step: float = 0.05) -> np.ndarray:
    """Steady-state Riccati solution for a time-invariant model.

    Integrates from ``P = I`` with RK4 until ``||dP/dt|| < tol``. The step
    adapts to the size of the quadratic term so the transient stays stable.
    """
    A, W = np.atleast_2d(A).astype(float), np.atleast_2d(W).astype(float)
    G = information(C, R)
    n = A.shape[0]
    P = np.eye(n)
    t = 0.0
    normA, normG = np.linalg.norm(A, 2), np.linalg.norm(G, 2)
    while t < max_time:
        rate = riccati_rhs(P, A, W, G)
        if np.linalg.norm(rate, 2) < tol:
            return P
        dt = min(max_step, 0.5 / (2 * normA + 2 * normG * np.linalg.norm(P, 2) + 1e-300))
        k1 = rate
        k2 = riccati_rhs(P + dt / 2 * k1, A, W, G)
        k3 = riccati_rhs(P + dt / 2 * k2, A, W, G)
        k4 = riccati_rhs(P + dt * k3, A, W, G)
        P = symmetrize(P + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
        t += dt
        if not np.all(np.isfinite(P)):
            break
    raise NumericalFailure("Riccati integration did not reach steady state; is (A, C) detectable?",
                           time=t)

