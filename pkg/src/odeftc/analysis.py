"""Gain bounds, aggregate error-dynamics matrices and the identity checks.

Aggregate quantities stack the ``N`` node errors into one ``N n`` vector; the
Kronecker products are built densely, which is fine at ``N n`` of a few dozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._validation import symmetrize
from .centralized import information, riccati_rhs, steady_state_covariance
from .exceptions import ScenarioError
from .graph import GraphTopology
from .model import estimate_bounds
from .node import local_gain

__all__ = [
    "kappa_sufficient",
    "kappa_battilotti",
    "GainBoundReport",
    "gain_bounds",
    "AggregateMatrices",
    "build_a_star",
    "sigma_disturbance",
    "aggregate_matrices",
    "covariance_mismatch",
    "empirical_covariance",
    "disagreement_projector",
    "IdentityReport",
    "verify_identities",
]


def _positive(**values):
    for name, v in values.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")


def kappa_sufficient(c: float, r1: float, lambda_g: float) -> float:
    """``c^2 / (2 r1 lambda_g)``: consensus gain above which the error dynamics are stable."""
    _positive(c=c, r1=r1, lambda_g=lambda_g)
    return c * c / (2.0 * r1 * lambda_g)


def kappa_battilotti(A, W, C, R, N: int, lambda_g: float, Pinf, *,
                     return_eta: bool = False):
    """``(||Pinf^-1 A + A^T Pinf^-1|| + eta) / lambda_g`` for a time-invariant model.

    ``eta = 4 N^2 lambda_max(Pinf^-1 W Pinf^-1 + G) lambda_max(G)`` with
    ``G = C^T R^-1 C``. Norms are spectral.
    """
    _positive(N=N, lambda_g=lambda_g)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    Pinf = np.atleast_2d(np.asarray(Pinf, dtype=float))
    try:
        Pi = np.linalg.inv(Pinf)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("steady-state covariance is singular") from None
    if not np.all(np.isfinite(Pi)) or np.linalg.cond(Pinf) > 1e14:
        raise np.linalg.LinAlgError("steady-state covariance is numerically singular")
    G = information(C, R)
    first = float(np.linalg.norm(Pi @ A + A.T @ Pi, 2))
    eta = 4.0 * N * N * float(np.linalg.eigvalsh(symmetrize(Pi @ W @ Pi + G))[-1]) \
        * float(np.linalg.eigvalsh(symmetrize(G))[-1])
    value = (first + eta) / lambda_g
    return (value, eta) if return_eta else value


@dataclass(frozen=True)
class GainBoundReport:
    kappa0_paper: float            # with r1 = inf ||R(t)||
    kappa0_strict: float           # with r1 = inf lambda_min(R(t))
    kappa_battilotti: float | None  # time-invariant scenarios only
    inputs_echo: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        rows = [("kappa0 (r1 = inf ||R||)", self.kappa0_paper),
                ("kappa0 (r1 = inf lambda_min(R))", self.kappa0_strict)]
        if self.kappa_battilotti is not None:
            rows.append(("kappa (Battilotti et al.)", self.kappa_battilotti))
        rows += [(k, v) for k, v in self.inputs_echo.items()]
        width = max(len(k) for k, _ in rows)
        out = [f"{k:<{width}}  {v:.6g}" if isinstance(v, float) else f"{k:<{width}}  {v}" for k, v in rows]
        if self.kappa_battilotti is None:
            out.append("Battilotti bound omitted: scenario is time-varying")
        return out

    def as_dict(self) -> dict:
        return {"kappa0_paper": self.kappa0_paper, "kappa0_strict": self.kappa0_strict,
                "kappa_battilotti": self.kappa_battilotti, **self.inputs_echo}


def _stacked(sensors, t: float):
    C = np.concatenate([s.C(t) for s in sensors], axis=0)
    blocks = [s.R(t) for s in sensors]
    size = sum(b.shape[0] for b in blocks)
    R = np.zeros((size, size))
    k = 0
    for b in blocks:
        m = b.shape[0]
        R[k:k + m, k:k + m] = b
        k += m
    return C, R


def gain_bounds(scenario, lambda_g: float | None = None, grid=None) -> GainBoundReport:
    """Bound report for a scenario; ``lambda_g`` overrides the graph's algebraic connectivity."""
    lam = scenario.graph.algebraic_connectivity if lambda_g is None else float(lambda_g)
    if not lam > 0:
        raise ScenarioError("algebraic connectivity must be positive (is the graph connected?)")
    b = estimate_bounds(scenario.plant, scenario.sensors, grid=grid)
    echo = {"c": b.c, "r1": b.r1, "r1_strict": b.r1_strict, "lambda_g": lam, "N": scenario.N}
    battilotti = None
    if scenario.is_time_invariant:
        C, R = _stacked(scenario.sensors, 0.0)
        A, W = scenario.plant.A(0.0), scenario.plant.W(0.0)
        Pinf = steady_state_covariance(A, W, C, R)
        battilotti, eta = kappa_battilotti(A, W, C, R, scenario.N, lam, Pinf, return_eta=True)
        echo["eta"] = eta
    return GainBoundReport(kappa_sufficient(b.c, b.r1, lam), kappa_sufficient(b.c, b.r1_strict, lam),
                           battilotti, echo)


# -- aggregate matrices ----------------------------------------------------


def disagreement_projector(N: int) -> np.ndarray:
    """``H = I - U/N`` where ``U`` is the all-ones matrix."""
    return np.eye(N) - np.ones((N, N)) / N


def build_a_star(P_list: Sequence, C_list: Sequence, R_list: Sequence, A, Q_G, kappa: float,
                 N: int) -> np.ndarray:
    """``blockdiag(A - K_i C_i) - kappa blockdiag(P_i) (Q_G kron I)`` with ``K_i = N P_i C_i^T R_i^-1``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    Q_G = np.atleast_2d(np.asarray(Q_G, dtype=float))
    if not (len(P_list) == len(C_list) == len(R_list) == N) or Q_G.shape != (N, N):
        raise ValueError(f"expected {N} P_i, C_i, R_i and an {N}x{N} Laplacian")
    diag_A = np.zeros((N * n, N * n))
    diag_P = np.zeros((N * n, N * n))
    for i, (P, C, R) in enumerate(zip(P_list, C_list, R_list)):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if P.shape != (n, n) or C.shape[1] != n:
            raise ValueError(f"node {i + 1}: P_i is {P.shape}, C_i is {C.shape}, expected n={n}")
        s = slice(i * n, (i + 1) * n)
        diag_A[s, s] = A - local_gain(P, C, R, N) @ C
        diag_P[s, s] = P
    return diag_A - kappa * diag_P @ np.kron(Q_G, np.eye(n))


def sigma_disturbance(P, G_list: Sequence, N: int) -> np.ndarray:
    """Four-term disturbance matrix built from ``P``, ``G_d = blockdiag(G_i)`` and ``G = sum G_i``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = P.shape[0]
    if len(G_list) != N:
        raise ValueError(f"expected {N} information matrices, got {len(G_list)}")
    G_list = [np.atleast_2d(np.asarray(G, dtype=float)) for G in G_list]
    if any(G.shape != (n, n) for G in G_list):
        raise ValueError(f"every G_i must be {n}x{n}")
    I, U = np.eye(N), np.ones((N, N))
    Gd = np.zeros((N * n, N * n))
    for i, G in enumerate(G_list):
        Gd[i * n:(i + 1) * n, i * n:(i + 1) * n] = G
    G = sum(G_list)
    IP, UP = np.kron(I, P), np.kron(U, P)
    return N * N * IP @ Gd @ IP - N * UP @ Gd @ IP - N * IP @ Gd @ UP + np.kron(U, P @ G @ P)


def covariance_mismatch(P_aggregate, P_central, N: int) -> tuple[np.ndarray, float]:
    """``X = Pagg - U kron P`` and the largest diagonal-block gap ``||Pagg_ii - P||_F``."""
    Pagg = np.atleast_2d(np.asarray(P_aggregate, dtype=float))
    P = np.atleast_2d(np.asarray(P_central, dtype=float))
    n = P.shape[0]
    if Pagg.shape != (N * n, N * n):
        raise ValueError(f"aggregate covariance is {Pagg.shape}, expected {(N * n, N * n)}")
    X = Pagg - np.kron(np.ones((N, N)), P)
    gap = max(float(np.linalg.norm(X[i * n:(i + 1) * n, i * n:(i + 1) * n])) for i in range(N))
    return X, gap


@dataclass(frozen=True)
class AggregateMatrices:
    A_star: np.ndarray
    Sigma: np.ndarray
    X: np.ndarray


def aggregate_matrices(P_list, C_list, R_list, A, graph: GraphTopology, kappa: float, P_central,
                       P_aggregate) -> AggregateMatrices:
    N = graph.N
    G_list = [information(C, R) for C, R in zip(C_list, R_list)]
    X, _ = covariance_mismatch(P_aggregate, P_central, N)
    return AggregateMatrices(build_a_star(P_list, C_list, R_list, A, graph.laplacian, kappa, N),
                             sigma_disturbance(P_central, G_list, N), X)


def empirical_covariance(samples, ddof: int = 1) -> np.ndarray:
    """Mean-subtracted covariance over axis 0, accumulated in index order.

    ``samples`` has shape ``(M, ..., d)``; the result has shape ``(..., d, d)``.
    ``ddof=1`` gives the unbiased estimator.
    """
    samples = np.asarray(samples, dtype=float)
    M = samples.shape[0]
    if M - ddof < 1:
        raise ValueError(f"need more than {ddof} samples, got {M}")
    acc = np.zeros(samples.shape[1:])
    for m in range(M):
        acc = acc + samples[m]
    mean = acc / M
    cov = np.zeros(samples.shape[1:] + samples.shape[-1:])
    for m in range(M):
        d = samples[m] - mean
        cov = cov + d[..., :, None] * d[..., None, :]
    return cov / (M - ddof)


# -- identity suite --------------------------------------------------------


@dataclass
class IdentityReport:
    trials: int
    max_error: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)   # (check, trial, error, instance)

    @property
    def ok(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = [f"{name:<28} max error {err:.3e}" for name, err in self.max_error.items()]
        out += [f"FAILED {name} trial {k}: error {err:.3e}" for name, k, err, _ in self.failures]
        out.append(f"{self.trials} trials, {'all passed' if self.ok else f'{len(self.failures)} failures'}")
        return out


TOLERANCES = {
    "vec(ABC)": 1e-10,
    "H^2 = H": 1e-12,
    "H U = 0": 1e-12,
    "1^T Q_G = 0": 1e-12,
    "Sigma symmetric": 1e-12,
    "(1^T x I) Sigma (1 x I)": 1e-10,
    "Sigma (1 x I)": 1e-10,
    "d/dt P^-1": 1e-3,
}


def _random_spd(rng, n, scale=1.0):
    M = rng.standard_normal((n, n))
    return scale * (M @ M.T / n + 0.5 * np.eye(n))


def _random_graph(rng, N) -> GraphTopology:
    perm = rng.permutation(N)
    edges = {tuple(sorted((int(perm[k]), int(perm[k + 1])))) for k in range(N - 1)}
    for i in range(N):
        for j in range(i + 1, N):
            if rng.random() < 0.3:
                edges.add((i, j))
    return GraphTopology(N, sorted(edges))


def _rk4(P, A, W, G, dt):
    k1 = riccati_rhs(P, A, W, G)
    k2 = riccati_rhs(P + dt / 2 * k1, A, W, G)
    k3 = riccati_rhs(P + dt / 2 * k2, A, W, G)
    k4 = riccati_rhs(P + dt * k3, A, W, G)
    return P + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def verify_identities(rng: np.random.Generator | int | None = None, trials: int = 50) -> IdentityReport:
    """Check the Kronecker, projector, Laplacian, disturbance and inverse-Riccati identities.

    Matrix-valued residuals are measured in Frobenius norm relative to
    ``max(1, scale)`` of the quantities involved.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng)
    report = IdentityReport(trials, {k: 0.0 for k in TOLERANCES})

    def check(name, k, err, instance):
        report.max_error[name] = max(report.max_error[name], err)
        if not err < TOLERANCES[name]:
            report.failures.append((name, k, err, instance))

    for k in range(trials):
        p, q, r, s = rng.integers(1, 6, size=4)
        A = rng.standard_normal((p, q))
        B = rng.standard_normal((q, r))
        C = rng.standard_normal((r, s))
        lhs = (A @ B @ C).reshape(-1, order="F")
        rhs = np.kron(C.T, A) @ B.reshape(-1, order="F")
        check("vec(ABC)", k, float(np.linalg.norm(lhs - rhs)) / max(1.0, float(np.linalg.norm(lhs))),
              {"A": A, "B": B, "C": C})

        N = int(rng.integers(1, 9))
        H = disagreement_projector(N)
        check("H^2 = H", k, float(np.linalg.norm(H @ H - H)), {"N": N})
        check("H U = 0", k, float(np.linalg.norm(H @ np.ones((N, N)))), {"N": N})
        g = _random_graph(rng, max(N, 2))
        check("1^T Q_G = 0", k, float(np.linalg.norm(np.ones(g.N) @ g.laplacian)), {"edges": g.edges})

        n = int(rng.integers(1, 5))
        P = _random_spd(rng, n)
        G_list = []
        for _ in range(N):
            ny = int(rng.integers(1, 3))
            Ci = rng.standard_normal((ny, n))
            G_list.append(information(Ci, _random_spd(rng, ny, 0.1)))
        S = sigma_disturbance(P, G_list, N)
        one = np.kron(np.ones((N, 1)), np.eye(n))
        scale = max(1.0, float(np.linalg.norm(S)))
        check("Sigma symmetric", k, float(np.linalg.norm(S - S.T)) / scale, {"P": P, "G": G_list})
        check("(1^T x I) Sigma (1 x I)", k, float(np.linalg.norm(one.T @ S @ one)) / scale,
              {"P": P, "G": G_list})
        check("Sigma (1 x I)", k, float(np.linalg.norm(S @ one)) / scale, {"P": P, "G": G_list})

        An = rng.standard_normal((n, n))
        Wn = _random_spd(rng, n, 0.5)
        ny = int(rng.integers(1, n + 1))
        Cn = rng.standard_normal((ny, n))
        Rn = _random_spd(rng, ny, 0.5)
        Gn = information(Cn, Rn)
        Pt = _random_spd(rng, n)
        for _ in range(20):
            Pt = symmetrize(_rk4(Pt, An, Wn, Gn, 0.005))
        d = 1e-6
        fd = (np.linalg.inv(_rk4(Pt, An, Wn, Gn, d)) - np.linalg.inv(_rk4(Pt, An, Wn, Gn, -d))) / (2 * d)
        Pi = np.linalg.inv(Pt)
        exact = -Pi @ An - An.T @ Pi - Pi @ Wn @ Pi + Gn
        check("d/dt P^-1", k, float(np.linalg.norm(fd - exact)) / max(1e-12, float(np.linalg.norm(exact))),
              {"A": An, "W": Wn, "C": Cn, "R": Rn, "P": Pt})
    return report
