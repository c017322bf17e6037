"""Acceptance criteria 1-9, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or ``python tests/test_acceptance.py``.
"""

import math
import os
import time

import numpy as np
import pytest

from odeftc.analysis import gain_bounds, verify_identities
from odeftc.cli import main as cli_main
from odeftc.consensus import run_consensus
from odeftc.scenario import load_scenario, scenario_from_dict
from odeftc.simulator import monte_carlo, run_realization

LINES: list[str] = []
JOBS = os.cpu_count() or 1


def report(number, ok, detail, elapsed):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.1f} s]"
    LINES.append(line)
    print(line)
    return ok


def _information(scenario):
    N = scenario.N

    def Z_at(ts):
        return np.stack([N * np.swapaxes(s.C.eval_many(ts), -1, -2) @ np.linalg.solve(s.R.eval_many(ts), s.C.eval_many(ts))
                         for s in scenario.sensors], axis=1)

    return Z_at


def test_criterion_1_gain_bounds():
    t0 = time.perf_counter()
    ltv = gain_bounds(load_scenario("paper-ltv"), lambda_g=0.2679)
    lti = gain_bounds(load_scenario("paper-lti"), lambda_g=0.2679)
    checks = {
        "ltv kappa0": (ltv.kappa0_paper, abs(ltv.kappa0_paper - 139.98) <= 0.05),
        "lti kappa0": (lti.kappa0_paper, abs(lti.kappa0_paper - 93.32) <= 0.05),
        "lti eq19": (lti.kappa_battilotti, abs(lti.kappa_battilotti / 12931.43 - 1) <= 0.01),
    }
    elapsed = time.perf_counter() - t0
    ok = all(v[1] for v in checks.values()) and elapsed < 5
    detail = ", ".join(f"{k}={v[0]:.6g} ({'ok' if v[1] else 'off'})" for k, v in checks.items())
    detail += " | expected 139.98 +-0.05, 93.32 +-0.05, 12931.43 +-1%"
    assert report(1, ok, detail, elapsed), detail


def test_criterion_2_fixed_time_consensus():
    t0 = time.perf_counter()
    sc = load_scenario("paper-lti")
    run = run_consensus(_information(sc), sc.graph, sc.config.consensus, 1e-4, 10.0, stride=10)
    after = run.times >= run.t_max
    worst = float(run.disagreement[after].max())
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-3 and elapsed < 30
    detail = f"T_max={run.t_max:.4g} s, max disagreement after T_max={worst:.3e} (< 1e-3)"
    assert report(2, ok, detail, elapsed), detail


def test_criterion_3_riccati_consensus():
    t0 = time.perf_counter()
    sc = load_scenario("paper-ltv")
    tr = run_realization(sc, sc.config.replace(init="matched", t_end=10.0, stride=10_000), 0)
    gap = float(np.linalg.norm(tr.P_nodes[-1] - tr.P_central[-1][None], axis=(1, 2)).max())
    elapsed = time.perf_counter() - t0
    ok = tr.times[-1] == pytest.approx(10.0) and gap < 1e-2 and elapsed < 60
    detail = f"max_i ||P_i(10) - P(10)||_F = {gap:.3e} (< 1e-2)"
    assert report(3, ok, detail, elapsed), detail


def _wishart_se(cov, M):
    """Frobenius norm of the entrywise standard errors of a sample covariance."""
    d = np.diagonal(cov, axis1=-2, axis2=-1)
    var = (d[..., :, None] * d[..., None, :] + cov ** 2) / (M - 1)
    return np.sqrt(var.sum(axis=(-2, -1)))


def test_criterion_4_optimality_trend():
    t0 = time.perf_counter()
    sc = load_scenario("paper-ltv")
    gaps, ses, ratios = {}, {}, None
    for kappa in (150.0, 500.0, 2000.0):
        cfg = sc.config.replace(kappa=kappa, realizations=50, h=1e-4, t_end=5.0)
        s = monte_carlo(sc, cfg, n_jobs=JOBS)
        g = s.cov_gap[-1]
        worst = int(np.argmax(g))
        gaps[kappa] = float(g[worst])
        ses[kappa] = float(_wishart_se(s.empirical_cov_nodes[-1, worst], 50))
        if kappa == 2000.0:
            last = s.times >= s.times[-1] - 1.0 - 1e-12
            ratios = s.mse_nodes[last] / s.mse_central[last, None]
    eps = 2 * math.sqrt(np.mean(np.square(list(ses.values()))))
    monotone = gaps[150.0] >= gaps[500.0] >= gaps[2000.0] - eps
    close = bool(np.all(np.abs(ratios - 1) <= 0.25))
    elapsed = time.perf_counter() - t0
    ok = monotone and close and elapsed < 900
    detail = (f"gap(150)={gaps[150.0]:.4f} gap(500)={gaps[500.0]:.4f} gap(2000)={gaps[2000.0]:.4f} eps={eps:.4f}; "
              f"kappa=2000 node/central MSE over last second in [{ratios.min():.3f}, {ratios.max():.3f}] (within 25%)")
    assert report(4, ok, detail, elapsed), detail


def test_criterion_5_unbiasedness():
    t0 = time.perf_counter()
    sc = load_scenario("paper-ltv")
    M = 100
    s = monte_carlo(sc, sc.config.replace(init="matched", realizations=M), n_jobs=JOBS)
    mean = s.mean_error[-1]
    se = s.standard_error()[-1]
    z = np.abs(mean) / se
    elapsed = time.perf_counter() - t0
    ok = bool(np.all(z < 4))
    detail = f"max |mean error| / standard error at t_end = {z.max():.2f} over {z.size} components (< 4)"
    assert report(5, ok, detail, elapsed), detail


def test_criterion_6_negative_control():
    t0 = time.perf_counter()
    sc = load_scenario("paper-ltv")
    s = monte_carlo(sc, sc.config.replace(kappa=0.0, realizations=20, init="matched"), n_jobs=JOBS)
    ratio = s.mse_nodes[-1] / s.mse_central[-1]
    elapsed = time.perf_counter() - t0
    ok = bool(ratio.max() > 10)
    detail = f"kappa=0: worst node MSE / central MSE at t_end = {ratio.max():.1f} (> 10)"
    assert report(6, ok, detail, elapsed), detail


def test_criterion_7_identities():
    t0 = time.perf_counter()
    rep = verify_identities(np.random.default_rng(2024), 50)
    elapsed = time.perf_counter() - t0
    ok = rep.ok and elapsed < 5
    worst = max(rep.max_error.items(), key=lambda kv: kv[1])
    detail = f"50 trials, {len(rep.failures)} failures; largest residual {worst[0]} = {worst[1]:.2e}"
    assert report(7, ok, detail, elapsed), detail


def test_criterion_8_single_node_equivalence():
    t0 = time.perf_counter()
    doc = load_scenario("paper-ltv").to_dict()
    doc["sensors"] = [{"C": [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]],
                       "R": [["0.05 + 0.01*sin(0.1*t)", 0, 0], [0, 0.02, 0], [0, 0, "0.03 + 0.01*cos(0.1*t)"]]}]
    doc["graph"] = {"N": 1, "edges": []}
    sc = scenario_from_dict(doc)
    tr = run_realization(sc, sc.config.replace(init="matched", t_end=1.0, stride=1), 0)
    steps = tr.times.size - 1
    diff = max(float(np.abs(tr.node_estimates[:, 0] - tr.central_estimate).max()),
               float(np.abs(tr.P_nodes[:, 0] - tr.P_central).max()))
    elapsed = time.perf_counter() - t0
    ok = steps == 10_000 and diff <= 1e-12
    detail = f"{steps} steps, max elementwise |node - central| = {diff:.3e} (<= 1e-12)"
    assert report(8, ok, detail, elapsed), detail


def test_criterion_9_determinism(tmp_path):
    t0 = time.perf_counter()
    args = ["simulate", "--scenario", "paper-ltv", "--realizations", "30", "--t-end", "0.5", "--seed", "99", "--trace"]
    codes = [cli_main(args + ["--out", str(tmp_path / "a"), "--jobs", "1"]),
             cli_main(args + ["--out", str(tmp_path / "b"), "--jobs", "1"]),
             cli_main(args + ["--out", str(tmp_path / "c"), "--jobs", str(max(JOBS, 3))])]
    files = ("mse.csv", "cov_gap.csv", "trace.csv")
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / d / f).read_bytes()
               for f in files for d in ("b", "c"))
    elapsed = time.perf_counter() - t0
    ok = codes == [0, 0, 0] and same
    detail = f"{', '.join(files)} byte-identical across repeat and --jobs {max(JOBS, 3)}: {same}"
    assert report(9, ok, detail, elapsed), detail


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_criterion_")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
