"""Command-line interface.

One executable, six subcommands: ``solve`` (fit a problem file), ``theory``
(closed-form quantities for a parameter file), ``packing`` (separated code
over the lattice plus its counting bound), ``gen`` (synthetic dataset),
``sweep`` (full experiment plan), and ``report`` (recompute a summary from a
records CSV). Exit codes: 0 success, 1 usage error, 2 runtime/data error.
JSON is the primary output; ``--pretty`` adds a human-readable table.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from .harness import plan_from_json, read_records_csv, summarize, sweep
from .solver import problem_from_json, solution_to_json_dict
from .solver import solve as solve_problem
from .synth import dataset_to_csv, build_truth, sample_dataset, truth_spec_from_json, truth_to_json_dict
from .theory import (
    TheoryParams,
    greedy_packing,
    minimax_lower_bound,
    optimal_lambda,
    packing_lower_bound,
    predicted_rate,
    sample_size_ok,
    zeta_n,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the contract here is 1.
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _emit(payload: dict, out: str | None, pretty: bool) -> None:
    text = json.dumps(_jsonable(payload), indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    if pretty:
        for key, value in payload.items():
            print(f"{key:>24}  {value}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_solve(args: argparse.Namespace) -> int:
    problem = problem_from_json(args.problem)
    solution = solve_problem(problem)
    _emit(solution_to_json_dict(solution), args.out, args.pretty)
    return 0


def _parse_params_file(path: str) -> TheoryParams:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a JSON object of parameter fields")
    allowed = {f.name for f in dataclasses.fields(TheoryParams)}
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(f"{path}: unknown parameter fields {sorted(unknown)}")
    if "p" in raw:
        raw["p"] = float(raw["p"])  # accepts the string "inf"
    try:
        return TheoryParams(**raw)
    except TypeError as exc:
        raise ValueError(f"{path}: {exc}") from exc


def _cmd_theory(args: argparse.Namespace) -> int:
    params = _parse_params_file(args.params)
    lam = optimal_lambda(params)
    rate = predicted_rate(params)
    payload = {
        "params": dataclasses.asdict(params),
        "optimal_lambda": lam,
        "sample_size_ok": sample_size_ok(params),
        "zeta_n_at_optimal_lambda": zeta_n(params, lam),
        "predicted_rate_leading": rate.leading,
        "predicted_rate_terms": list(rate.full),
        "minimax_lower_bound": minimax_lower_bound(params, params.R_p),
    }
    _emit(payload, args.out, args.pretty)
    return 0


def _cmd_packing(args: argparse.Namespace) -> int:
    bound = packing_lower_bound(args.N, args.M)
    code = greedy_packing(args.N, args.M)
    payload = {
        "N": args.N,
        "M": args.M,
        "q_star": float(bound.q_star),
        "q_star_exact": str(bound.q_star),
        "q_star_ceil": -(-bound.q_star.numerator // bound.q_star.denominator),
        "log_lower_bound": bound.log_bound,
        "code_size": len(code),
        "code": [list(word) for word in code],
    }
    _emit(payload, args.out, args.pretty)
    return 0


def _cmd_gen(args: argparse.Namespace) -> int:
    spec, kernel = truth_spec_from_json(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    truth = build_truth(spec, kernel)
    dataset = sample_dataset(truth, kernel, args.n, args.noise_bound, seed=spec.seed)
    out = Path(args.out)
    dataset_to_csv(dataset, out)
    sidecar = out.with_suffix(".truth.json")
    sidecar.write_text(json.dumps(_jsonable(truth_to_json_dict(truth)), indent=2) + "\n")
    _emit({"data": str(out), "truth": str(sidecar), "n": dataset.n}, None, args.pretty)
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    plan = plan_from_json(args.plan)
    if args.workers is not None:
        plan = dataclasses.replace(plan, workers=args.workers)
    _, summary = sweep(plan, out_dir=args.out_dir)
    _emit(summary, None, args.pretty)
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    records = read_records_csv(args.records)
    _emit(summarize(records), args.out, args.pretty)
    return 0


# ---------------------------------------------------------------------------
# Parser / dispatch
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="lpmkl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="increase log detail")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--pretty", action="store_true", help="also print a human-readable table")
        return p

    p = add("solve", _cmd_solve, "solve a problem file")
    p.add_argument("--problem", required=True, help="problem JSON (y, gram_files, p, lambda1)")
    p.add_argument("--out", default=None, help="solution JSON path (default: stdout)")

    p = add("theory", _cmd_theory, "closed-form quantities for a parameter file")
    p.add_argument("--params", required=True, help="parameter JSON (n, M, p, s, ...)")
    p.add_argument("--out", default=None)

    p = add("packing", _cmd_packing, "separated lattice code and counting bound")
    p.add_argument("--N", type=int, required=True, help="alphabet size per coordinate (>= 2)")
    p.add_argument("--M", type=int, required=True, help="word length (even, >= 2)")
    p.add_argument("--out", default=None)

    p = add("gen", _cmd_gen, "generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="truth spec JSON")
    p.add_argument("--n", type=int, required=True, help="sample size")
    p.add_argument("--out", required=True, help="dataset CSV path (truth sidecar written next to it)")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument("--noise-bound", type=float, default=0.5, help="uniform noise half-width")

    p = add("sweep", _cmd_sweep, "run an experiment plan")
    p.add_argument("--plan", required=True, help="plan JSON")
    p.add_argument("--out-dir", required=True, help="directory for records.csv and summary.json")
    p.add_argument("--workers", type=int, default=None, help="override the plan worker count")

    p = add("report", _cmd_report, "recompute a summary from a records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--out", default=None)
    return parser


def dispatch(argv: Sequence[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(list(argv))
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=max(logging.WARNING - 10 * args.verbose, logging.DEBUG))
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
