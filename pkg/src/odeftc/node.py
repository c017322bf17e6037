"""A single ODEFTC node driven by synchronous neighbor messages.

Per step the node reads the messages its neighbors sent at the previous
round, advances its consensus integrator ``Q_i``, its covariance ``P_i`` and
its estimate ``xhat_i`` with one explicit Euler step, and exposes the new
``xhat_i``/``Zhat_i`` for the next round.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._validation import symmetrize
from .centralized import information, riccati_rhs
from .consensus import DEADBAND, ConsensusParams, phi
from .model import PlantModel, SensorModel

__all__ = [
    "NodeState",
    "NeighborMessage",
    "local_gain",
    "local_information",
    "init_node",
    "make_message",
    "node_step",
]

log = logging.getLogger(__name__)

_HEADER = struct.Struct("<qq")


@dataclass(frozen=True)
class NeighborMessage:
    """What one node sends its neighbors each round: its estimate and ``Zhat``."""

    sender: int
    xhat: np.ndarray
    Zhat: np.ndarray

    def to_bytes(self) -> bytes:
        """Flat little-endian layout: int64 sender, int64 n, xhat, row-major Zhat (float64)."""
        n = self.xhat.size
        return (_HEADER.pack(self.sender, n)
                + np.ascontiguousarray(self.xhat, dtype="<f8").tobytes()
                + np.ascontiguousarray(self.Zhat, dtype="<f8").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "NeighborMessage":
        sender, n = _HEADER.unpack_from(data)
        expected = _HEADER.size + 8 * (n + n * n)
        if len(data) != expected:
            raise ValueError(f"message length {len(data)} does not match n={n} (expected {expected})")
        body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(float)
        return cls(int(sender), body[:n].copy(), body[n:].reshape(n, n).copy())


@dataclass(frozen=True)
class NodeState:
    xhat: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    Zhat: np.ndarray
    K: np.ndarray
    lambda_min: float = float("nan")


def local_gain(P, C, R, N: int) -> np.ndarray:
    """``K_i = N P_i C_i^T R_i^-1``."""
    P, C, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (P, C, R))
    try:
        return N * np.linalg.solve(R.T, (P @ C.T).T).T
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("local measurement covariance R_i is singular") from None


def local_information(sensor: SensorModel, t: float, N: int) -> np.ndarray:
    """``Z_i(t) = N C_i^T R_i^-1 C_i``."""
    return N * information(sensor.C(t), sensor.R(t))


def init_node(plant: PlantModel, sensor: SensorModel, N: int, xhat0=None, P0=None,
              t: float = 0.0) -> NodeState:
    P = plant.P0.copy() if P0 is None else np.array(P0, dtype=float)
    xhat = plant.x0.copy() if xhat0 is None else np.array(xhat0, dtype=float)
    Z = local_information(sensor, t, N)
    return NodeState(xhat, P, np.zeros_like(Z), Z, local_gain(P, sensor.C(t), sensor.R(t), N),
                     float(np.linalg.eigvalsh(P)[0]))


def make_message(state: NodeState, sender: int) -> NeighborMessage:
    return NeighborMessage(int(sender), state.xhat.copy(), state.Zhat.copy())


def node_step(state: NodeState, y, msgs: Sequence[NeighborMessage], plant: PlantModel,
              sensor: SensorModel, *, N: int, kappa: float, consensus: ConsensusParams,
              t: float, h: float, neighbors=None, scheme: str = "limited",
              deadband: float = DEADBAND) -> NodeState:
    """Advance one node from ``t`` to ``t + h``.

    ``msgs`` must hold exactly one message per neighbor, carrying the
    neighbors' values at time ``t``. When ``neighbors`` is given the sender
    set is checked against it.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    senders = [m.sender for m in msgs]
    if len(set(senders)) != len(senders):
        raise ValueError(f"duplicate neighbor messages from {senders}")
    if neighbors is not None and set(senders) != set(neighbors):
        missing = sorted(set(neighbors) - set(senders))
        extra = sorted(set(senders) - set(neighbors))
        raise ValueError(f"neighbor messages mismatch: missing {missing}, unexpected {extra}")

    A, W = plant.A(t), plant.W(t)
    C = sensor.C(t)
    RinvC = np.linalg.solve(sensor.R(t), C)
    x, P = state.xhat, state.P

    coupling = np.zeros_like(x)
    dQ = np.zeros_like(state.Q)
    for m in msgs:
        coupling = coupling + (m.xhat - x)
        D = state.Zhat - m.Zhat
        flow = h * consensus.alpha * phi(D, consensus.xi, consensus.gamma, deadband)
        if scheme == "limited":
            flow = np.sign(flow) * np.minimum(np.abs(flow), np.abs(D) / N)
        elif scheme != "euler":
            raise ValueError(f"unknown scheme {scheme!r}")
        dQ = dQ + flow

    resid = np.asarray(y, dtype=float).reshape(-1) - C @ x
    dx = A @ x + N * (P @ (RinvC.T @ resid)) + kappa * (P @ coupling)
    x_new = x + h * dx
    P_new = symmetrize(P + h * riccati_rhs(P, A, W, state.Zhat))
    Q_new = state.Q + dQ

    t1 = t + h
    C1, R1 = sensor.C(t1), sensor.R(t1)
    Zhat_new = N * information(C1, R1) - Q_new
    lam = float(np.linalg.eigvalsh(P_new)[0])
    if not lam > 0:
        log.warning("P_i lost positive definiteness at t=%.6g (lambda_min=%.3g)", t1, lam)
    return NodeState(x_new, P_new, Q_new, Zhat_new, local_gain(P_new, C1, R1, N), lam)
