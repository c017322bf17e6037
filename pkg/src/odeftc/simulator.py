"""Euler-Maruyama simulation of the plant with centralized and ODEFTC filters.

Covariances, consensus variables and the centralized Riccati solution do not
depend on the noise, so they are advanced once per step and shared by every
realization in a batch; only the truth and the estimates are batched.

Reproducibility rules:

* realization ``k`` draws from ``SeedSequence(seed, spawn_key=(k,))`` and the
  draw order is fixed (initial state, random initial estimates, then per step
  ``n`` process and ``n_y`` measurement normals);
* every per-realization operation reduces only over its own data, so values do
  not depend on how realizations are batched;
* Monte Carlo sums are formed inside fixed blocks of ``BLOCK`` consecutive
  realizations and the block sums are added in block order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import symmetrize
from .analysis import empirical_covariance
from .centralized import riccati_rhs
from .consensus import DEADBAND, edge_flows
from .exceptions import NumericalFailure
from .model import PlantModel, SensorModel
from .scenario import Scenario, SimConfig

__all__ = [
    "BLOCK",
    "sqrt_psd",
    "realization_rng",
    "truth_step",
    "measure",
    "SimulationTrace",
    "McSummary",
    "run_realization",
    "monte_carlo",
]

log = logging.getLogger(__name__)

BLOCK = 10
_CHUNK = 1000


def sqrt_psd(W, tol: float = 1e-8) -> np.ndarray:
    """Symmetric square root ``S`` with ``S S^T = W`` for a (possibly singular) PSD ``W``."""
    W = np.asarray(W, dtype=float)
    scale = max(1.0, float(np.max(np.abs(W)))) if W.size else 1.0
    if np.max(np.abs(W - np.swapaxes(W, -1, -2)), initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(W)
    if np.min(vals, initial=0.0) < -tol * scale:
        raise ValueError(f"matrix is not positive semidefinite (eigenvalue {np.min(vals):.3g})")
    root = np.sqrt(np.clip(vals, 0.0, None))
    return (vecs * root[..., None, :]) @ np.swapaxes(vecs, -1, -2)


def realization_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for realization ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def truth_step(x, plant: PlantModel, t: float, h: float, rng: np.random.Generator | None) -> np.ndarray:
    """``x + h A(t) x + sqrt(h) S(t) zeta`` with ``S S^T = W(t)``; ``rng=None`` drops the noise."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    out = x + h * (plant.A(t) @ x)
    if rng is not None:
        out = out + math.sqrt(h) * (sqrt_psd(plant.W(t)) @ rng.standard_normal(x.size))
    return out


def measure(x, sensor: SensorModel, t: float, h: float, rng: np.random.Generator | None) -> np.ndarray:
    """Sampled measurement ``C(t) x + v`` with ``v ~ N(0, R(t)/h)``; ``rng=None`` gives ``C x``."""
    if h <= 0:
        raise ValueError("step must be positive")
    y = sensor.C(t) @ np.asarray(x, dtype=float)
    if rng is not None:
        try:
            L = np.linalg.cholesky(sensor.R(t))
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(f"R(t) is not positive definite at t={t:.6g}") from None
        y = y + (L @ rng.standard_normal(sensor.ny)) / math.sqrt(h)
    return y


@dataclass
class SimulationTrace:
    """One realization, sampled every ``stride`` steps (plus the final step)."""

    times: np.ndarray              # (S,)
    truth: np.ndarray              # (S, n)
    node_estimates: np.ndarray     # (S, N, n)
    central_estimate: np.ndarray   # (S, n)
    P_central: np.ndarray          # (S, n, n)
    P_nodes: np.ndarray            # (S, N, n, n)
    lambda_min_log: np.ndarray     # (N,) smallest eigenvalue of each P_i seen at the samples
    sq_error_central: np.ndarray   # (steps + 1,) per-step squared error norm
    sq_error_nodes: np.ndarray     # (steps + 1, N)


@dataclass
class McSummary:
    """Monte Carlo statistics. MSE is the mean squared error norm over realizations."""

    times: np.ndarray                  # (steps + 1,)
    mse_central: np.ndarray            # (steps + 1,)
    mse_nodes: np.ndarray              # (steps + 1, N)
    sample_times: np.ndarray           # (S,)
    mean_error: np.ndarray             # (S, N, n)
    mean_error_central: np.ndarray     # (S, n)
    empirical_cov_nodes: np.ndarray    # (S, N, n, n)
    empirical_cov_central: np.ndarray  # (S, n, n)
    aggregate_cov: np.ndarray          # (S, N n, N n), covariance of the stacked node errors
    P_central: np.ndarray              # (S, n, n)
    P_nodes: np.ndarray                # (S, N, n, n)
    lambda_min_log: np.ndarray         # (N,)
    realizations: int
    errors: np.ndarray = field(repr=False, default=None)  # (M, S, N + 1, n), central first

    @property
    def cov_gap(self) -> np.ndarray:
        """``||empirical cov_i - P||_F`` per sample and node, shape ``(S, N)``."""
        diff = self.empirical_cov_nodes - self.P_central[:, None]
        return np.linalg.norm(diff, axis=(-2, -1))

    def standard_error(self) -> np.ndarray:
        """Standard error of the mean error, shape ``(S, N, n)``."""
        var = np.diagonal(self.empirical_cov_nodes, axis1=-2, axis2=-1)
        return np.sqrt(var / self.realizations)


# -- engine ----------------------------------------------------------------


class _Prepared:
    """Scenario constants laid out for the batched step."""

    def __init__(self, scenario: Scenario, config: SimConfig):
        self.scenario = scenario
        self.config = config
        self.plant = scenario.plant
        self.sensors = scenario.sensors
        self.graph = scenario.graph
        self.N = scenario.N
        self.n = scenario.n
        self.ny = sum(s.ny for s in self.sensors)
        self.owner = np.concatenate([np.full(s.ny, i) for i, s in enumerate(self.sensors)])
        self.lap = self.graph.laplacian
        self.chol_P0 = np.linalg.cholesky(self.plant.P0)
        self._W_root = sqrt_psd(self.plant.W(0.0)) if self.plant.W.is_constant else None

    def chunk(self, times: np.ndarray) -> dict[str, np.ndarray]:
        T = times.size
        A = self.plant.A.eval_many(times)
        W = self.plant.W.eval_many(times)
        SW = np.broadcast_to(self._W_root, W.shape) if self._W_root is not None else sqrt_psd(W)
        C_rows, LR_blocks, RinvC_rows, G_nodes = [], [], [], []
        for s in self.sensors:
            Ci = s.C.eval_many(times)
            Ri = s.R.eval_many(times)
            try:
                LR_blocks.append(np.linalg.cholesky(Ri))
            except np.linalg.LinAlgError:
                raise NumericalFailure("sensor noise covariance R_i(t) is not positive definite",
                                       time=float(times[0])) from None
            RinvC = np.linalg.solve(Ri, Ci)
            C_rows.append(Ci)
            RinvC_rows.append(RinvC)
            G_nodes.append(np.swapaxes(Ci, -1, -2) @ RinvC)
        C = np.concatenate(C_rows, axis=1)
        RinvC = np.concatenate(RinvC_rows, axis=1)
        LR = np.zeros((T, self.ny, self.ny))
        k = 0
        for L in LR_blocks:
            m = L.shape[-1]
            LR[:, k:k + m, k:k + m] = L
            k += m
        G_nodes = np.stack(G_nodes, axis=1)                      # (T, N, n, n)
        Bnodes = np.zeros((T, self.N, self.n, self.ny))
        for r, i in enumerate(self.owner):
            Bnodes[:, i, :, r] = RinvC[:, r, :]
        return {
            "A": A, "W": W, "SW": SW, "C": C, "LR": LR,
            "G_nodes": G_nodes,
            "G_central": G_nodes.sum(axis=1, keepdims=True),     # (T, 1, n, n)
            "B_nodes": Bnodes,                                    # (T, N, n, ny)
            "B_central": np.swapaxes(RinvC, -1, -2)[:, None],    # (T, 1, n, ny)
        }


def _mv(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Batched matrix-vector product reducing over a contiguous last axis."""
    return (M * v[..., None, :]).sum(-1)


@dataclass
class _BatchResult:
    indices: np.ndarray
    block_ids: np.ndarray
    block_sums: np.ndarray          # (steps + 1, n_blocks, N + 1)
    sample_steps: np.ndarray
    errors: np.ndarray              # (B, S, N + 1, n)
    P_nodes: np.ndarray
    P_central: np.ndarray
    lambda_min: np.ndarray
    sq_errors: np.ndarray | None = None   # (B, steps + 1, N + 1) when kept
    truth: np.ndarray | None = None
    estimates: np.ndarray | None = None   # (B, S, N + 1, n)


def _sample_steps(steps: int, stride: int) -> np.ndarray:
    s = np.arange(0, steps + 1, stride)
    return s if s[-1] == steps else np.append(s, steps)


def _run_batch(scenario: Scenario, config: SimConfig, indices, keep_trace: bool = False) -> _BatchResult:
    prep = _Prepared(scenario, config)
    N, n, ny = prep.N, prep.n, prep.ny
    h, steps, kappa = config.h, config.steps, config.kappa
    indices = np.asarray(indices, dtype=int)
    B = indices.size
    sqh = math.sqrt(h)

    rngs = [realization_rng(config.seed, k) for k in indices]
    x = np.empty((B, n))
    xh = np.empty((B, N, n))
    for b, rng in enumerate(rngs):
        z0 = rng.standard_normal(n)
        x[b] = prep.plant.x0 + (prep.chol_P0 @ z0 if config.initial_state_noise else 0.0)
        if config.init == "random":
            xh[b] = rng.uniform(-1.0, 1.0, size=(N, n))
        else:
            xh[b] = prep.plant.x0
    xc = np.broadcast_to(prep.plant.x0, (B, 1, n)).copy()
    P = np.broadcast_to(prep.plant.P0, (N, n, n)).copy()
    Pc = prep.plant.P0[None].copy()

    first = prep.chunk(np.zeros(1))
    Q = np.zeros((N, n, n))
    Zhat = N * first["G_nodes"][0] - Q

    blocks = indices // BLOCK
    block_ids = np.unique(blocks)
    slot = np.searchsorted(block_ids, blocks)
    pos = np.zeros(B, dtype=int)
    for b in range(B):
        pos[b] = np.sum(slot[:b] == slot[b])
    width = int(pos.max()) + 1
    nb = block_ids.size
    block_sums = np.empty((steps + 1, nb, N + 1))
    samples = _sample_steps(steps, config.stride)
    S = samples.size
    errors = np.empty((B, S, N + 1, n))
    P_nodes_s = np.empty((S, N, n, n))
    P_central_s = np.empty((S, n, n))
    lam_min = np.full(N + 1, np.inf)
    sq_keep = np.empty((B, steps + 1, N + 1)) if keep_trace else None
    truth_s = np.empty((B, S, n)) if keep_trace else None
    est_s = np.empty((B, S, N + 1, n)) if keep_trace else None
    warned = set()
    grid = np.zeros((nb, width, N + 1))
    s_idx = 0

    def record(k: int):
        nonlocal s_idx
        err = np.concatenate([x[:, None, :] - xc, x[:, None, :] - xh], axis=1)   # (B, N+1, n)
        sq = (err * err).sum(-1)
        grid[slot, pos] = sq
        acc = grid[:, 0]
        for j in range(1, width):
            acc = acc + grid[:, j]
        block_sums[k] = acc
        if keep_trace:
            sq_keep[:, k] = sq
        if s_idx < S and samples[s_idx] == k:
            if not np.all(np.isfinite(err)):
                bad = int(indices[np.argmax(~np.all(np.isfinite(err), axis=(1, 2)))])
                raise NumericalFailure("estimate diverged to a non-finite value",
                                       step=k, time=k * h, realization=bad)
            errors[:, s_idx] = err
            P_nodes_s[s_idx] = P
            P_central_s[s_idx] = Pc[0]
            lam = np.linalg.eigvalsh(np.concatenate([Pc, P]))[:, 0]
            np.minimum(lam_min, lam, out=lam_min)
            if not lam[0] > 0:
                raise NumericalFailure("centralized covariance lost positive definiteness",
                                       step=k, time=k * h)
            for i in np.flatnonzero(~(lam[1:] > 0)):
                if i not in warned:
                    warned.add(i)
                    log.warning("P_%d lost positive definiteness at t=%.6g (lambda_min=%.3g)",
                                i + 1, k * h, lam[i + 1])
            if keep_trace:
                truth_s[:, s_idx] = x
                est_s[:, s_idx, 0] = xc[:, 0]
                est_s[:, s_idx, 1:] = xh
            s_idx += 1

    record(0)
    lap = prep.lap
    for start in range(0, steps, _CHUNK):
        ks = np.arange(start, min(start + _CHUNK, steps))
        T = ks.size
        mats = prep.chunk(ks * h)
        noise = np.empty((T, B, n + ny))
        for b, rng in enumerate(rngs):
            noise[:, b] = rng.standard_normal((T, n + ny))
        if not config.process_noise:
            noise[:, :, :n] = 0.0
        if not config.measurement_noise:
            noise[:, :, n:] = 0.0
        Z_next = N * prep.chunk((ks[-1] + 1) * h * np.ones(1))["G_nodes"]
        for j in range(T):
            k = ks[j]
            A, W = mats["A"][j], mats["W"][j]
            zw, zv = noise[j, :, :n], noise[j, :, n:]

            C = mats["C"][j]
            y = _mv(C, x) + _mv(mats["LR"][j], zv) / sqh                        # (B, ny)
            # residual form: exactly zero innovation when y = C xhat
            r_nodes = _mv(mats["B_nodes"][j], y[:, None, :] - _mv(C, xh))       # (B, N, n)
            r_cent = _mv(mats["B_central"][j], y[:, None, :] - _mv(C, xc))      # (B, 1, n)

            Ax = _mv(A, xh)
            inn = N * _mv(P, r_nodes)
            Lx = (lap[None, :, None, :] * np.swapaxes(xh, 1, 2)[:, None, :, :]).sum(-1)
            dx = Ax + inn + (-kappa) * _mv(P, Lx)
            dxc = _mv(A, xc) + 1 * _mv(Pc, r_cent)

            x = x + h * _mv(A, x) + sqh * _mv(mats["SW"][j], zw)
            xh = xh + h * dx
            xc = xc + h * dxc

            flows = edge_flows(Zhat, prep.graph, config.consensus, h, config.scheme, DEADBAND)
            if prep.graph.ell:
                Q = Q + (prep.graph.incidence @ flows.reshape(prep.graph.ell, -1)).reshape(N, n, n)
            P = symmetrize(P + h * riccati_rhs(P, A, W, Zhat))
            Pc = symmetrize(Pc + h * riccati_rhs(Pc, A, W, mats["G_central"][j]))
            Z = N * mats["G_nodes"][j + 1] if j + 1 < T else Z_next[0]
            Zhat = Z - Q
            record(k + 1)

    return _BatchResult(indices, block_ids, block_sums, samples, errors, P_nodes_s, P_central_s,
                        lam_min, sq_keep, truth_s, est_s)


def run_realization(scenario: Scenario, config: SimConfig | None = None, realization_index: int = 0,
                    stride: int | None = None) -> SimulationTrace:
    """Simulate one realization; deterministic in ``(config.seed, realization_index)``."""
    config = scenario.config if config is None else config
    if stride is not None:
        config = config.replace(stride=stride)
    try:
        res = _run_batch(scenario, config, [realization_index], keep_trace=True)
    except NumericalFailure as exc:
        raise NumericalFailure(str(exc).split(" (")[0], step=exc.step, time=exc.time,
                               realization=realization_index) from exc
    times = res.sample_steps * config.h
    return SimulationTrace(
        times=times,
        truth=res.truth[0],
        node_estimates=res.estimates[0, :, 1:],
        central_estimate=res.estimates[0, :, 0],
        P_central=res.P_central,
        P_nodes=res.P_nodes,
        lambda_min_log=res.lambda_min[1:],
        sq_error_central=res.sq_errors[0, :, 0],
        sq_error_nodes=res.sq_errors[0, :, 1:],
    )


def _batch_job(args):
    scenario, config, indices = args
    return _run_batch(scenario, config, indices)


def monte_carlo(scenario: Scenario, config: SimConfig | None = None, n_jobs: int = 1,
                blocks_per_batch: int | None = None) -> McSummary:
    """Run ``config.realizations`` realizations and aggregate their statistics.

    Work is split into batches of whole ``BLOCK``-sized groups of
    realizations; results are bit-identical for any ``n_jobs`` or batch size.
    """
    config = scenario.config if config is None else config
    M = int(config.realizations)
    n_blocks = -(-M // BLOCK)
    if blocks_per_batch is None:
        blocks_per_batch = -(-n_blocks // max(1, n_jobs))
    batches = []
    for b0 in range(0, n_blocks, blocks_per_batch):
        lo, hi = b0 * BLOCK, min((b0 + blocks_per_batch) * BLOCK, M)
        batches.append(np.arange(lo, hi))

    jobs = [(scenario, config, idx) for idx in batches]
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_batch_job, jobs))
    else:
        results = [_batch_job(job) for job in jobs]

    steps = config.steps
    N = scenario.N
    total = np.zeros((steps + 1, N + 1))
    for res in results:
        for j in range(res.block_ids.size):
            total = total + res.block_sums[:, j]
    mse = total / M

    errors = np.concatenate([r.errors for r in results], axis=0)     # (M, S, N+1, n)
    first = results[0]
    S, n = errors.shape[1], scenario.n

    acc = np.zeros(errors.shape[1:])
    for m in range(M):
        acc = acc + errors[m]
    mean = acc / M
    ddof = 1 if M > 1 else 0
    agg = empirical_covariance(errors[:, :, 1:].reshape(M, S, N * n), ddof=ddof)
    cov_c = empirical_covariance(errors[:, :, 0], ddof=ddof)
    cov_nodes = np.stack([agg[:, i * n:(i + 1) * n, i * n:(i + 1) * n] for i in range(N)], axis=1)

    lam = first.lambda_min
    for r in results[1:]:
        lam = np.minimum(lam, r.lambda_min)
    return McSummary(
        times=np.arange(steps + 1) * config.h,
        mse_central=mse[:, 0],
        mse_nodes=mse[:, 1:],
        sample_times=first.sample_steps * config.h,
        mean_error=mean[:, 1:],
        mean_error_central=mean[:, 0],
        empirical_cov_nodes=cov_nodes,
        empirical_cov_central=cov_c,
        aggregate_cov=agg,
        P_central=first.P_central,
        P_nodes=first.P_nodes,
        lambda_min_log=lam[1:],
        realizations=M,
        errors=errors,
    )
