"""``odeftc`` command line: simulate, bounds, verify, consensus, graph-info.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import gain_bounds, verify_identities
from .consensus import SCHEMES, ConsensusParams, run_consensus
from .exceptions import NumericalFailure, ScenarioError
from .graph import GraphTopology
from .scenario import INIT_MODES, load_scenario
from .simulator import monte_carlo, run_realization

__all__ = ["main", "build_parser", "write_csv", "write_gnuplot"]

OUT_ENV = "ODEFTC_OUT"
FMT = "%.17g"

log = logging.getLogger("odeftc")


def write_csv(path: Path, header: list[str], rows: np.ndarray) -> None:
    """Comma-separated values with a fixed 17-significant-digit format."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, np.atleast_2d(rows), fmt=FMT, delimiter=",")


def write_gnuplot(out: Path, summary, title: str) -> None:
    """Whitespace data file plus a script drawing node MSE solid and centralized dashed."""
    N = summary.mse_nodes.shape[1]
    data = np.column_stack([summary.times, summary.mse_central, summary.mse_nodes])
    np.savetxt(out / "mse.dat", data, fmt=FMT,
               header="t mse_central " + " ".join(f"mse_node_{i + 1}" for i in range(N)))
    plots = [f"'mse.dat' using 1:{i + 3} with lines lw 1 dt 1 title 'node {i + 1}'" for i in range(N)]
    plots.append("'mse.dat' using 1:2 with lines lw 2 dt 2 lc rgb 'black' title 'centralized'")
    script = "\n".join([
        "set terminal pngcairo size 900,600",
        "set output 'mse.png'",
        f"set title '{title}'",
        "set xlabel 't [s]'",
        "set ylabel 'MSE'",
        "set logscale y",
        "set key outside right",
        "plot " + ", \\\n     ".join(plots),
        "",
    ])
    (out / "mse.gp").write_text(script)


def _out_dir(arg: str | None) -> Path:
    out = Path(arg or os.environ.get(OUT_ENV) or "odeftc-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    changes = {k: v for k, v in {
        "kappa": args.kappa, "realizations": args.realizations, "h": args.step,
        "t_end": args.t_end, "seed": args.seed, "stride": args.stride, "init": args.init,
        "scheme": args.scheme,
    }.items() if v is not None}
    cfg = scenario.config.replace(**changes)
    out = _out_dir(args.out)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()

    summary = monte_carlo(scenario, cfg, n_jobs=args.jobs)
    N = scenario.N
    every = max(1, args.mse_every)
    rows = np.column_stack([summary.times, summary.mse_central, summary.mse_nodes])[::every]
    write_csv(out / "mse.csv", ["t", "mse_central"] + [f"mse_node_{i + 1}" for i in range(N)], rows)
    gap = summary.cov_gap
    S = gap.shape[0]
    gap_rows = np.column_stack([np.repeat(summary.sample_times, N), np.tile(np.arange(1, N + 1), S),
                                gap.reshape(-1)])
    write_csv(out / "cov_gap.csv", ["t", "node", "frob_gap"], gap_rows)
    files = ["mse.csv", "cov_gap.csv", "mse.dat", "mse.gp"]
    if args.trace:
        tr = run_realization(scenario, cfg, 0)
        n = scenario.n
        header = ["t"] + [f"x_{a + 1}" for a in range(n)] + [f"central_{a + 1}" for a in range(n)]
        header += [f"node_{i + 1}_{a + 1}" for i in range(N) for a in range(n)]
        write_csv(out / "trace.csv", header,
                  np.column_stack([tr.times, tr.truth, tr.central_estimate,
                                   tr.node_estimates.reshape(tr.times.size, -1)]))
        files.append("trace.csv")
    write_gnuplot(out, summary, f"{scenario.name}, kappa = {cfg.kappa:g}")

    manifest = {
        "tool": "odeftc", "version": __version__, "subcommand": "simulate",
        "scenario": str(args.scenario), "scenario_document": scenario.to_dict(),
        "config": cfg.to_dict(), "jobs": args.jobs, "mse_every": every, "trace": bool(args.trace),
        "output_dir": str(out.resolve()), "files": files,
        "started_utc": started.isoformat(), "elapsed_s": round(time.perf_counter() - t0, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    tail = summary.times >= summary.times[-1] - 1.0
    print(f"wrote {', '.join(files)} and manifest.json to {out}")
    print(f"final-second mean MSE: central {summary.mse_central[tail].mean():.6g}, "
          f"nodes {np.array2string(summary.mse_nodes[tail].mean(axis=0), precision=6)}")
    return 0


def cmd_bounds(args) -> int:
    report = gain_bounds(load_scenario(args.scenario), lambda_g=args.lambda_g)
    if args.format == "json":
        print(json.dumps(report.as_dict(), indent=2))
    elif args.format == "kv":
        for k, v in report.as_dict().items():
            print(f"{k}={'' if v is None else (FMT % v if isinstance(v, float) else v)}")
    else:
        print("\n".join(report.lines()))
    return 0


def cmd_verify(args) -> int:
    report = verify_identities(np.random.default_rng(args.seed), args.trials)
    print("\n".join(report.lines()))
    return 0 if report.ok else 2


def _information_series(scenario):
    N = scenario.N

    def Z_at(times):
        out = []
        for s in scenario.sensors:
            C, R = s.C.eval_many(times), s.R.eval_many(times)
            out.append(N * np.swapaxes(C, -1, -2) @ np.linalg.solve(R, C))
        return np.stack(out, axis=1)

    return Z_at


def cmd_consensus(args) -> int:
    scenario = load_scenario(args.scenario)
    base = scenario.config.consensus
    params = ConsensusParams(alpha=args.alpha if args.alpha is not None else base.alpha,
                             gamma=args.gamma if args.gamma is not None else base.gamma,
                             xi=args.xi if args.xi is not None else base.xi)
    h = args.step if args.step is not None else scenario.config.h
    if scenario.graph.ell == 0:
        raise ScenarioError("consensus needs a graph with at least one edge")
    run = run_consensus(_information_series(scenario), scenario.graph, params, h, args.t_end,
                        stride=max(1, int(round(args.every / h))), scheme=args.scheme)
    worst = run.disagreement.max(axis=1)
    after = run.times >= run.t_max
    above = np.flatnonzero(worst >= args.tol)
    if not above.size:
        settled = run.times[0]
    elif above[-1] + 1 < worst.size:
        settled = run.times[above[-1] + 1]
    else:
        settled = float("nan")
    print(f"T_max                      {run.t_max:.6g} s")
    print(f"disagreement < {args.tol:g} from   {settled:.6g} s")
    if after.any():
        print(f"max disagreement after T_max {worst[after].max():.3e}")
    else:
        print("horizon ends before T_max")
    print(f"final disagreement         {worst[-1]:.3e}")
    return 0


def cmd_graph_info(args) -> int:
    if args.path:
        g, label = GraphTopology.path(args.path), f"path-{args.path}"
    elif args.complete:
        g, label = GraphTopology.complete(args.complete), f"complete-{args.complete}"
    else:
        if not args.scenario:
            raise ScenarioError("give --scenario, --path N or --complete N")
        g, label = load_scenario(args.scenario).graph, str(args.scenario)
    print(f"graph        {label}")
    print(f"N            {g.N}")
    print(f"edges        {g.ell}: " + " ".join(f"{i + 1}-{j + 1}" for i, j in g.edges))
    print(f"degrees      {' '.join(str(int(d)) for d in g.degrees)}")
    print(f"eigenvalues  {' '.join(f'{v:.6g}' for v in g.eigenvalues)}")
    print(f"lambda_G     {g.algebraic_connectivity:.6g}")
    if g.ell and g.algebraic_connectivity > 0:
        p = ConsensusParams()
        print(f"T_max        {p.t_max(g):.6g} s (alpha={p.alpha:g}, gamma={p.gamma:g})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odeftc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo run of the centralized and distributed filters")
    p.add_argument("--scenario", required=True, help="YAML file or built-in name (paper-ltv, paper-lti)")
    p.add_argument("--kappa", type=float)
    p.add_argument("--realizations", type=int)
    p.add_argument("--step", type=float, help="integration step h [s]")
    p.add_argument("--t-end", type=float, help="horizon [s]")
    p.add_argument("--seed", type=int)
    p.add_argument("--stride", type=int, help="covariance sampling interval in steps")
    p.add_argument("--init", choices=INIT_MODES)
    p.add_argument("--scheme", choices=SCHEMES, help="consensus discretization")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./odeftc-out)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--mse-every", type=int, default=1, help="write every k-th step to mse.csv")
    p.add_argument("--trace", action="store_true", help="also write trace.csv for realization 0")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bounds", help="consensus gain bounds")
    p.add_argument("--scenario", required=True)
    p.add_argument("--lambda-g", type=float, help="override the algebraic connectivity")
    p.add_argument("--format", choices=("text", "kv", "json"), default="text")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", help="randomized identity checks")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("consensus", help="standalone fixed-time consensus on the information matrices")
    p.add_argument("--scenario", required=True)
    p.add_argument("--t-end", type=float, default=10.0)
    p.add_argument("--step", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--xi", type=float)
    p.add_argument("--scheme", choices=SCHEMES, default="limited")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--every", type=float, default=1e-3, help="recording interval [s]")
    p.set_defaults(func=cmd_consensus)

    p = sub.add_parser("graph-info", help="Laplacian spectrum and consensus time bound")
    p.add_argument("--scenario")
    p.add_argument("--path", type=int, metavar="N")
    p.add_argument("--complete", type=int, metavar="N")
    p.set_defaults(func=cmd_graph_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"odeftc: numerical failure: {exc}", file=sys.stderr)
        return 2
    except np.linalg.LinAlgError as exc:
        print(f"odeftc: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ScenarioError, ValueError, KeyError, OSError, yaml.YAMLError) as exc:
        print(f"odeftc: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
