"""Fixed-time consensus on the local information matrices.

Each node holds ``Zhat_i = Z_i - Q_i`` where ``Z_i = N C_i^T R_i^-1 C_i`` and
``Q_i`` integrates ``alpha * sum_j phi(Zhat_i - Zhat_j)``. Because ``phi`` is
odd, the edge contributions cancel pairwise and ``sum_i Q_i`` stays at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graph import GraphTopology
from .model import ModelBounds

__all__ = [
    "ConsensusParams",
    "ConsensusState",
    "phi",
    "min_xi",
    "t_max",
    "edge_flows",
    "consensus_step",
    "ConsensusRun",
    "run_consensus",
    "DEADBAND",
]

DEADBAND = 1e-9
SCHEMES = ("limited", "euler")


@dataclass(frozen=True)
class ConsensusParams:
    alpha: float = 20.0
    gamma: float = 0.7
    xi: float = 10.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        if not self.xi >= 0:
            raise ValueError(f"xi must be non-negative, got {self.xi}")

    def is_admissible(self, bounds: ModelBounds, graph: GraphTopology) -> bool:
        return self.xi >= min_xi(bounds.L, self.alpha, graph.algebraic_connectivity)

    def t_max(self, graph: GraphTopology) -> float:
        return t_max(graph.ell, self.alpha, self.gamma, graph.algebraic_connectivity)


@dataclass(frozen=True)
class ConsensusState:
    Q: np.ndarray     # (N, n, n)
    Zhat: np.ndarray  # (N, n, n)

    @classmethod
    def initial(cls, Z_locals: np.ndarray) -> "ConsensusState":
        Z_locals = np.asarray(Z_locals, dtype=float)
        return cls(np.zeros_like(Z_locals), Z_locals.copy())


def phi(x, xi: float, gamma: float, deadband: float = 0.0):
    """``(|x|^(1-gamma) + |x|^(1+gamma) + xi) * sgn(x)``, elementwise.

    Entries with ``|x| <= deadband`` map to zero.
    """
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    sgn = np.where(ax > deadband, np.sign(x), 0.0)
    out = (ax ** (1.0 - gamma) + ax ** (1.0 + gamma) + xi) * sgn
    return out if out.ndim else float(out)


def min_xi(L: float, alpha: float, lambda_g: float) -> float:
    """Smallest ``xi`` for which the protocol tracks a signal with ``||dZ/dt|| <= L``."""
    if alpha <= 0 or lambda_g <= 0:
        raise ValueError("alpha and lambda_g must be positive")
    if L < 0:
        raise ValueError("L must be non-negative")
    return 2.0 * L / (alpha * math.sqrt(lambda_g))


def t_max(ell: int, alpha: float, gamma: float, lambda_g: float) -> float:
    """Settling-time bound ``ell * pi / (alpha * gamma * lambda_g)`` in seconds."""
    if ell <= 0 or alpha <= 0 or lambda_g <= 0:
        raise ValueError("ell, alpha and lambda_g must be positive")
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie strictly inside (0, 1), got {gamma}")
    return ell * math.pi / (alpha * gamma * lambda_g)


def edge_flows(Zhat: np.ndarray, g: GraphTopology, params: ConsensusParams, h: float,
               scheme: str = "limited", deadband: float = DEADBAND) -> np.ndarray:
    """Per-edge increment of ``Q`` at the lower endpoint, shape ``(ell, n, n)``.

    ``"euler"`` is the plain explicit step ``h * alpha * phi(Zhat_i - Zhat_j)``.
    ``"limited"`` caps each entry at ``|Zhat_i - Zhat_j| / N``, the uniform
    averaging step, so one step never carries an edge past agreement. The cap
    is inactive while disagreement is large and removes the sign-term
    chattering near consensus; it needs no information beyond ``N``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if g.ell == 0:
        return np.zeros((0,) + Zhat.shape[1:])
    lo = np.array([i for i, _ in g.edges])
    hi = np.array([j for _, j in g.edges])
    D = Zhat[lo] - Zhat[hi]
    flow = h * params.alpha * phi(D, params.xi, params.gamma, deadband)
    if scheme == "limited":
        cap = np.abs(D) / g.N
        flow = np.sign(flow) * np.minimum(np.abs(flow), cap)
    return flow


def consensus_step(state: ConsensusState, Z_locals: np.ndarray, g: GraphTopology,
                   params: ConsensusParams, h: float, scheme: str = "limited",
                   deadband: float = DEADBAND) -> ConsensusState:
    """Advance ``Q`` one step using the current ``Zhat`` messages.

    ``Z_locals`` are the local information matrices at the new time; the
    returned ``Zhat`` is ``Z_locals - Q_new``.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    flows = edge_flows(state.Zhat, g, params, h, scheme, deadband)
    N = g.N
    dQ = (g.incidence @ flows.reshape(g.ell, -1)).reshape(N, *state.Q.shape[1:]) if g.ell else 0.0
    Q = state.Q + dQ
    return ConsensusState(Q, np.asarray(Z_locals, dtype=float) - Q)


@dataclass
class ConsensusRun:
    times: np.ndarray
    disagreement: np.ndarray   # (T, N) Frobenius ||Zhat_i - Zbar||
    final: ConsensusState
    t_max: float


def run_consensus(Z_at: Callable[[np.ndarray], np.ndarray], g: GraphTopology, params: ConsensusParams,
                  h: float, t_end: float, stride: int = 1, scheme: str = "limited",
                  chunk: int = 2000) -> ConsensusRun:
    """Run the protocol standalone on ``Z_at(times) -> (T, N, n, n)``.

    Disagreement is measured against the exact network average of ``Z_i``.
    """
    steps = int(round(t_end / h))
    state = ConsensusState.initial(Z_at(np.zeros(1))[0])
    times, rows = [], []

    def record(k, Z):
        Zbar = Z.mean(axis=0)
        times.append(k * h)
        rows.append(np.linalg.norm(state.Zhat - Zbar, axis=(1, 2)))

    record(0, Z_at(np.zeros(1))[0])
    for start in range(0, steps, chunk):
        ks = np.arange(start + 1, min(start + chunk, steps) + 1)
        Zs = Z_at(ks * h)
        for k, Z in zip(ks, Zs):
            state = consensus_step(state, Z, g, params, h, scheme)
            if k % stride == 0 or k == steps:
                record(k, Z)
    return ConsensusRun(np.array(times), np.array(rows), state,
                        params.t_max(g) if g.ell else float("nan"))
