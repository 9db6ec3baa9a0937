"""Command-line front end.

Subcommands:

    solve-finite        one finite-horizon solve, CSV path + diagnostics
    solve-ergodic       ergodic triple, JSON
    solve-discounted    one discounted solve, CSV path + diagnostics
    linearize-ergodic   linearized ergodic system (theta selection), JSON
    master-eval         corrector chi(., m0), JSON
    experiment          turnpike | longtime | discount | expansion sweeps

Exit codes: 0 success, 2 config error, 3 solver non-convergence in a
non-sweep command, 4 contract violation when --check is passed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import experiments as xp
from .discounted import solve_discounted_mfg, solve_discounted_stationary
from .ergodic import solve_ergodic
from .errors import SolverError
from .finite_horizon import TerminalCondition, make_time_grid, solve_mfg_finite
from .linearized import solve_linearized_ergodic
from .master import CorrectorPipeline
from .serialize import solution_rows, write_csv, write_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CONTRACT = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfgtorus",
        description="Mean-field-game solvers and experiments on the 1-D torus",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="JSON config (defaults apply when omitted)")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (overrides config)")
        p.add_argument("--jobs", type=int, default=1,
                       help="concurrent sweep entries")
        p.add_argument("--seed", type=int, default=None,
                       help="seed for randomized probes (overrides config)")
        p.add_argument("--check", action="store_true",
                       help="exit 4 when an experiment contract is violated")

    for name in ("solve-finite", "solve-ergodic", "solve-discounted",
                 "linearize-ergodic", "master-eval"):
        common(sub.add_parser(name))
    p_exp = sub.add_parser("experiment")
    p_exp.add_argument("kind", choices=["turnpike", "longtime", "discount",
                                        "expansion"])
    common(p_exp)
    return parser


def _load_config(args) -> xp.ExperimentConfig:
    if args.config is None:
        cfg = xp.parse_config_dict({})
    else:
        cfg = xp.parse_config(args.config)
    if args.out is not None:
        cfg.raw["output"]["dir"] = str(args.out)
    if args.seed is not None:
        cfg.raw["seed"] = int(args.seed)
    return cfg


def _cmd_solve_finite(cfg: xp.ExperimentConfig, args) -> int:
    g = cfg.grid()
    spec = cfg.model(g)
    T = cfg.T_list[0]
    tg = make_time_grid(g, T, cfg.dt_factor)
    sol = solve_mfg_finite(spec, tg, cfg.m0(g), TerminalCondition.coupling_g(),
                           opts=cfg.solver_options())
    out = cfg.out_dir
    write_csv(out / "solution.csv", ["t", "x", "u", "m"],
              solution_rows(g, tg, {"u": sol.u_path, "m": sol.m_path}))
    write_json(out / "diagnostics.json", sol.diagnostics())
    print(f"solve-finite: T={T} iterations={sol.iterations} "
          f"residual={sol.final_residual:.3e}")
    return EXIT_OK


def _cmd_solve_ergodic(cfg: xp.ExperimentConfig, args) -> int:
    spec = cfg.model()
    erg = solve_ergodic(spec)
    write_json(cfg.out_dir / "ergodic.json", erg.to_dict())
    print(f"solve-ergodic: lambda_bar={erg.lambda_bar:.12g} "
          f"residuals=({erg.residuals[0]:.2e}, {erg.residuals[1]:.2e})")
    return EXIT_OK


def _cmd_solve_discounted(cfg: xp.ExperimentConfig, args) -> int:
    g = cfg.grid()
    spec = cfg.model(g)
    delta = cfg.delta_list[0]
    stat = solve_discounted_stationary(spec, delta)
    sol = solve_discounted_mfg(spec, delta, cfg.m0(g), stationary=stat,
                               opts=cfg.solver_options())
    out = cfg.out_dir
    write_csv(out / "solution.csv", ["t", "x", "u", "m"],
              solution_rows(g, sol.tg, {"u": sol.u_path, "m": sol.m_path}))
    write_json(out / "diagnostics.json", sol.diagnostics())
    write_json(out / "stationary.json", stat.to_dict())
    print(f"solve-discounted: delta={delta} T_trunc={sol.tg.T} "
          f"iterations={sol.iterations}")
    return EXIT_OK


def _cmd_linearize_ergodic(cfg: xp.ExperimentConfig, args) -> int:
    spec = cfg.model()
    erg = solve_ergodic(spec)
    lin = solve_linearized_ergodic(spec, erg)
    payload = lin.to_dict()
    payload.update(lin.extras)
    write_json(cfg.out_dir / "linearized_ergodic.json", payload)
    print(f"linearize-ergodic: theta_bar={lin.theta_bar:.12g} "
          f"residuals=({lin.residuals[0]:.2e}, {lin.residuals[1]:.2e})")
    return EXIT_OK


def _cmd_master_eval(cfg: xp.ExperimentConfig, args) -> int:
    g = cfg.grid()
    spec = cfg.model(g)
    pipe = CorrectorPipeline(spec, cfg.master_options())
    chi = pipe.chi(cfg.m0(g), cfg.raw["master"]["method"],
                   cfg.raw["master"]["normalization"])
    write_json(cfg.out_dir / "corrector.json", chi.to_dict())
    print(f"master-eval: method={chi.method} parameter={chi.parameter:g} "
          f"cauchy_gap={chi.cauchy_gap:.3e}")
    return EXIT_OK


_EXPERIMENTS = {
    "turnpike": xp.run_turnpike,
    "longtime": xp.run_longtime,
    "discount": xp.run_discount,
    "expansion": xp.run_expansion,
}


def _cmd_experiment(cfg: xp.ExperimentConfig, args) -> int:
    runner = _EXPERIMENTS[args.kind]
    result = runner(cfg, out_dir=cfg.out_dir, jobs=args.jobs)
    status = "ok" if result.contract_ok else "contract violated"
    print(f"experiment {args.kind}: {status}; "
          f"{len(result.failures)} failed entries; files: {len(result.files)}")
    for note in result.contract_notes:
        print(f"  note: {note}")
    if args.check and not result.contract_ok:
        return EXIT_CONTRACT
    return EXIT_OK


_COMMANDS = {
    "solve-finite": _cmd_solve_finite,
    "solve-ergodic": _cmd_solve_ergodic,
    "solve-discounted": _cmd_solve_discounted,
    "linearize-ergodic": _cmd_linearize_ergodic,
    "master-eval": _cmd_master_eval,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    handler = _COMMANDS[args.command]
    try:
        return handler(cfg, args)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
