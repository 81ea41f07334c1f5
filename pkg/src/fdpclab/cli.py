"""Command-line front end.

Subcommands: rate, sweep, scaling, lowsnr, solve-w, jointopt.  stdout
carries only the machine-readable payload (JSON); diagnostics go to stderr.
Exit codes: 0 success, 2 configuration error, 3 solver/search failure.

Flags override config-file values; the seed resolution order is
``--seed`` > config ``mc.seed`` > ``FDPC_SEED`` > 0.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import covopt, lab
from .config import build_experiment, load_config, validate_config
from .errors import ConfigurationError, FdpcError, SearchError, SolverError
from .inflation import solve_w
from .model import NoCsit, build_sample_bank
from .rate import achievable_rate, no_interference_bound

EXIT_CONFIG = 2
EXIT_SOLVER = 3

SOLVER_CHOICES = ("alg1", "alg2", "zero", "pinv", "identity", "perfect")


def _log(msg):
    print(msg, file=sys.stderr)


def _emit(payload, out_path=None):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _resolve_seed(args, raw):
    if getattr(args, "seed", None) is not None:
        return args.seed
    mc = raw.get("mc", {})
    if "seed" in mc:
        return mc["seed"]
    env = os.environ.get("FDPC_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"FDPC_SEED must be an integer, got {env!r}")
    return 0


def _load_experiment(args):
    if args.config:
        raw = load_config(args.config)
    elif getattr(args, "ref", None):
        raw = validate_config({"ref": args.ref})
    else:
        raise ConfigurationError("provide a config file or --ref NAME")
    if getattr(args, "ref", None):
        raw["ref"] = args.ref
    seed = _resolve_seed(args, raw)
    overrides = {
        "snr_db": getattr(args, "snr_db", None),
        "q_over_p": getattr(args, "q_over_p", None),
        "n_inner": getattr(args, "samples", None),
        "n_outer": getattr(args, "n_outer", None),
        "seed": seed,
    }
    exp = build_experiment(raw, overrides)
    return exp


def _bank_for(exp, csit=None):
    csit = csit if csit is not None else exp.csit
    return build_sample_bank(exp.base_spec, exp.model, csit,
                             exp.mc["n_outer"], exp.mc["n_inner"], exp.mc["seed"])


def cmd_rate(args):
    exp = _load_experiment(args)
    spec = exp.spec_at()
    bank = _bank_for(exp)
    iterations = 0
    if args.solver in ("alg1", "alg2"):
        iter_box = [0]

        def policy(spec_, cell):
            res = solve_w(spec_, cell.draws, args.solver)
            iter_box[0] = max(iter_box[0], res.iterations)
            return res.W, res.converged
    else:
        policy = lab.resolve_w(spec, args.solver)
        iter_box = [0]
    est = achievable_rate(spec, policy, bank)
    bound = no_interference_bound(spec, bank)
    iterations = iter_box[0]
    payload = {
        "rate_bits": est.rate_bits,
        "stderr_bits": est.stderr_bits,
        "bound_bits": bound.rate_bits,
        "solver": args.solver,
        "converged": est.converged,
        "iterations": iterations,
        "snr_db": exp.snr_db,
        "n_outer": bank.n_outer,
        "n_inner": bank.n_inner,
        "seed": exp.mc["seed"],
        "config_hash": exp.hash,
    }
    _emit(payload, args.out)


def _parse_csit_labels(spec_labels, exp):
    out = []
    for label in spec_labels.split(","):
        label = label.strip()
        if label == "none":
            out.append(NoCsit())
        elif label == "perfect":
            from .model import PerfectCsit

            out.append(PerfectCsit())
        elif label.startswith("B="):
            out.append(lab.default_quantized_csit(exp.model, int(label[2:])))
        else:
            raise ConfigurationError(f"unknown CSIT label {label!r}")
    return tuple(out)


def cmd_sweep(args):
    exp = _load_experiment(args)
    snrs = tuple(float(s) for s in args.snr_db_list.split(","))
    solvers = tuple(s.strip() for s in args.solvers.split(","))
    csits = _parse_csit_labels(args.csit, exp) if args.csit else (exp.csit,)
    plan = lab.SweepPlan(snr_db_list=snrs, q_over_p=exp.q_over_p, solvers=solvers,
                         csit_list=csits, include_bound=not args.no_bound,
                         n_outer=exp.mc["n_outer"], n_inner=exp.mc["n_inner"])
    rows = lab.run_sweep(exp.base_spec, exp.model, plan, exp.mc["seed"],
                         threads=args.threads)
    for row in rows:
        if row.error:
            _log(f"cell (snr={row.snr_db}, csit={row.csit}, solver={row.solver}) "
                 f"failed: {row.error}")
    lab.write_sweep_csv(rows, args.out)
    _emit({"out": args.out, "rows": len(rows),
           "errors": sum(1 for r in rows if r.error),
           "seed": exp.mc["seed"], "config_hash": exp.hash})


def cmd_scaling(args):
    exp = _load_experiment(args)
    slope = lab.estimate_scaling(exp.base_spec, exp.model, args.w,
                                 (args.snr_lo, args.snr_hi), exp.mc["seed"],
                                 q_over_p=exp.q_over_p, n_inner=exp.mc["n_inner"])
    predicted = lab.predicted_scaling(exp.spec_at(args.snr_lo))
    _emit({"measured_slope": slope, "predicted_slope": predicted,
           "w": args.w, "snr_window_db": [args.snr_lo, args.snr_hi],
           "seed": exp.mc["seed"], "config_hash": exp.hash}, args.out)


def cmd_lowsnr(args):
    exp = _load_experiment(args)
    snrs = [float(s) for s in args.snr_db_list.split(",")]
    rows = lab.low_snr_ratio(exp.base_spec, exp.model, snrs, exp.mc["seed"],
                             q_over_p=exp.q_over_p, n_inner=exp.mc["n_inner"])
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(lab.format_lowsnr_csv(rows))
    _emit({"out": args.out, "rows": len(rows), "seed": exp.mc["seed"],
           "config_hash": exp.hash})


def cmd_solve_w(args):
    exp = _load_experiment(args)
    spec = exp.spec_at()
    bank = _bank_for(exp)
    if len(bank.cells) != 1:
        raise ConfigurationError("solve-w expects a single-cell (no-CSIT) bank")
    res = solve_w(spec, bank.cells[0].draws, args.solver)
    if not res.converged and args.solver in ("alg1", "alg2"):
        _log(f"solver {args.solver} did not converge "
             f"(best objective {res.objective_trace[-1]:.6g})")
    _emit({
        "solver": args.solver,
        "W": _matrix_payload(res.W),
        "objective_trace": list(res.objective_trace),
        "converged": res.converged,
        "iterations": res.iterations,
        "seed": exp.mc["seed"],
        "config_hash": exp.hash,
    }, args.out)


def _matrix_payload(mat):
    mat = np.asarray(mat)
    if np.iscomplexobj(mat):
        return {"re": mat.real.tolist(), "im": mat.imag.tolist()}
    return mat.tolist()


def cmd_jointopt(args):
    exp = _load_experiment(args)
    spec = exp.spec_at()
    bank = _bank_for(exp, csit=NoCsit())
    cfg = covopt.JointConfig(rank_bound=args.rank or spec.dims.m,
                             outer_iters=args.outer_iters,
                             solver=args.solver)
    res = covopt.joint_optimize(spec, cfg, bank)
    _emit({
        "rate_bits": res.rate_bits,
        "stderr_bits": res.stderr_bits,
        "eig_ratio": res.eig_ratio,
        "rank_used": res.rank_used,
        "rate_trace": list(res.rate_trace),
        "converged": res.converged,
        "T": _matrix_payload(res.T),
        "W": _matrix_payload(res.W),
        "seed": exp.mc["seed"],
        "config_hash": exp.hash,
    }, args.out)


def _add_common(p, with_solver=False):
    p.add_argument("config", nargs="?", default=None,
                   help="JSON configuration file")
    p.add_argument("--ref", help="start from a named reference channel")
    p.add_argument("--snr-db", type=float, dest="snr_db")
    p.add_argument("--q-over-p", type=float, dest="q_over_p")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, help="override mc.n_inner")
    p.add_argument("--n-outer", type=int, dest="n_outer", help="override mc.n_outer")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="write the payload/file here instead of stdout")
    if with_solver:
        p.add_argument("--solver", choices=SOLVER_CHOICES, default="alg1")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fdpclab",
        description="Achievable-rate laboratory for dirty paper coding over fading channels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rate", help="single rate evaluation")
    _add_common(p, with_solver=True)
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("sweep", help="rate-vs-SNR sweep to CSV")
    _add_common(p)
    p.add_argument("--snr-db-list", required=True, help="comma-separated SNRs in dB")
    p.add_argument("--solvers", default="alg1")
    p.add_argument("--csit", help="comma list of none, perfect, B=1, B=2, ...")
    p.add_argument("--no-bound", action="store_true")
    p.set_defaults(func=cmd_sweep)
    # sweep writes its CSV to --out (required)

    p = sub.add_parser("scaling", help="high-SNR slope estimate")
    _add_common(p)
    p.add_argument("--w", default="pinv", choices=("pinv", "zero", "identity"))
    p.add_argument("--snr-lo", type=float, default=40.0)
    p.add_argument("--snr-hi", type=float, default=60.0)
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("lowsnr", help="zero-inflation to bound ratio curve")
    _add_common(p)
    p.add_argument("--snr-db-list", default="0,-5,-10,-15,-20,-25,-30")
    p.set_defaults(func=cmd_lowsnr)

    p = sub.add_parser("solve-w", help="solve the inflation factor on one bank")
    _add_common(p, with_solver=True)
    p.set_defaults(func=cmd_solve_w)

    p = sub.add_parser("jointopt", help="joint covariance/inflation optimization")
    _add_common(p, with_solver=True)
    p.add_argument("--rank", type=int, help="rank bound for the input covariance")
    p.add_argument("--outer-iters", type=int, default=30)
    p.set_defaults(func=cmd_jointopt)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "sweep" and not args.out:
        _log("sweep requires --out PATH for the CSV")
        return EXIT_CONFIG
    if args.command == "lowsnr" and not args.out:
        _log("lowsnr requires --out PATH for the CSV")
        return EXIT_CONFIG
    try:
        args.func(args)
    except ConfigurationError as exc:
        _log(f"configuration error: {exc}")
        return EXIT_CONFIG
    except (SolverError, SearchError) as exc:
        _log(f"solver error: {exc}")
        return EXIT_SOLVER
    except FdpcError as exc:
        _log(f"error: {exc}")
        return EXIT_SOLVER
    return 0


if __name__ == "__main__":
    sys.exit(main())
