"""Command line entry point: ``stopclock {ingest,simulate,analyze,naive}``.

Exit codes: 0 on success (also with warnings), 1 on a runtime failure,
2 on a usage or input-schema error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .diagnostics import distribution_export, write_balance_csv, write_density_csv
from .inference import bootstrap_mean_test, naive_stmc_summary, wilcoxon_one_sample
from .matching import METHOD_ALIASES, METHODS, write_pairs_csv
from .pbp import IntegrityError, PbpError, parse_pbp, read_instants_csv, segment_games, write_instants_csv, write_pbp_csv
from .pipeline import naive_treated, run_analysis
from .propensity import save_model
from .simulator import SimConfig, generate, write_truth_json

DEFAULT_LAMBDAS = (2, 4, 6)


class UsageError(Exception):
    pass


def _threads_default() -> int:
    raw = os.environ.get("STOPCLOCK_THREADS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def _check_lambdas(values, allow_any: bool) -> list[int]:
    for lam in values:
        if lam <= 0 or lam % 2:
            raise UsageError(f"lambda must be a positive even integer, got {lam}")
        if not allow_any and lam not in DEFAULT_LAMBDAS:
            raise UsageError(f"lambda {lam} is outside {set(DEFAULT_LAMBDAS)}; pass --allow-any-lambda to use it")
    return list(values)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _write_manifest(out: Path, args, inputs, outputs, started: float, notes) -> None:
    flags = {k: v for k, v in vars(args).items() if k not in ("func",)}
    manifest = {
        "subcommand": args.command,
        "flags": flags,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "started_at": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "duration_s": round(time.time() - started, 3),
        "warnings": list(notes),
    }
    _write_json(out / "manifest.json", manifest)


def _load_instants(path: str):
    try:
        return read_instants_csv(path)
    except PbpError as exc:
        raise UsageError(f"{path}: {exc}") from exc


# -- subcommands -------------------------------------------------------------

def cmd_ingest(args, out: Path, notes: list[str]):
    try:
        games = parse_pbp(args.pbp)
    except PbpError as exc:
        raise UsageError(f"{args.pbp}: {exc}") from exc
    instants, failed = segment_games(games, strict=args.strict)
    for gid, msg in sorted(failed.items()):
        notes.append(f"skipped game {gid}: {msg}")
    dest = out / "instants.csv"
    write_instants_csv(instants, dest)
    return [args.pbp], [dest]


def cmd_simulate(args, out: Path, notes: list[str]):
    try:
        config = SimConfig(
            n_games=args.games, possessions_per_quarter=args.possessions, theta=args.theta,
            pi0=args.pi0, pi1=args.pi1, delta=args.delta, lam=args.sim_lambda, seed=args.seed,
            official_marks=tuple(args.official_marks),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    games, _ = generate(config)
    pbp_path, truth_path = out / "pbp.csv", out / "truth.json"
    write_pbp_csv(games, pbp_path)
    write_truth_json(config, truth_path)
    return [], [pbp_path, truth_path]


def cmd_analyze(args, out: Path, notes: list[str]):
    lams = _check_lambdas(args.lam, args.allow_any_lambda)
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    if args.permutations < 1:
        raise UsageError("--permutations must be >= 1")
    games = _load_instants(args.instants)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = run_analysis(
            games, lams, args.side, args.method, algorithm=args.algorithm,
            subgroup=args.subgroup.replace("-", "_"), n_perm=args.permutations, alpha=args.alpha,
            seed=args.seed, threads=args.threads,
        )
    for w in caught:
        notes.append(str(w.message))
    report_path, balance_path, pairs_path = out / "report.json", out / "balance.csv", out / "pairs.csv"
    _write_json(report_path, [r.to_dict() for r in result.reports])
    write_balance_csv(result.balance, balance_path)
    write_pairs_csv(result.samples, pairs_path)
    outputs = [report_path, balance_path, pairs_path]
    if args.dump_model:
        for (lam, side), model in sorted(result.models.items()):
            path = out / f"model_lambda{lam}_{side}.json"
            save_model(model, path)
            outputs.append(path)
    return [args.instants], outputs


def cmd_naive(args, out: Path, notes: list[str]):
    lams = _check_lambdas(args.lam, args.allow_any_lambda)
    games = _load_instants(args.instants)
    rows, groups = [], {}
    for lam in lams:
        treated = naive_treated(games, lam)
        mean, n = naive_stmc_summary(treated)
        y = [u.y for u in treated]
        rows.append({
            "lambda": lam, "mean": mean, "n": n,
            "wilcoxon_p": wilcoxon_one_sample(y).p_value,
            "bootstrap_p": bootstrap_mean_test(y, n_boot=args.n_boot, seed=args.seed).p_value,
            "n_boot": args.n_boot, "seed": args.seed,
        })
        groups[f"lambda={lam}"] = y
    naive_path, density_path = out / "naive.json", out / "naive_density.csv"
    _write_json(naive_path, rows)
    write_density_csv([distribution_export(groups, covariate="stmc")], density_path)
    return [args.instants], [naive_path, density_path]


# -- parser ------------------------------------------------------------------

def _method(value: str) -> str:
    value = METHOD_ALIASES.get(value, value)
    if value not in METHODS:
        raise argparse.ArgumentTypeError(f"unknown method {value!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stopclock", description="Causal effect of timeouts on scoring momentum.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, seed=True):
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ingest", help="segment a play-by-play CSV into game instants")
    p.add_argument("pbp")
    p.add_argument("--strict", action="store_true", help="fail on the first game with an integrity error")
    common(p, seed=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simulate", help="write a synthetic season and its ground truth")
    p.add_argument("--games", type=int, default=100)
    p.add_argument("--possessions", type=int, default=24, help="possessions per team per quarter")
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--theta", type=int, default=-4)
    p.add_argument("--pi0", type=float, default=0.01)
    p.add_argument("--pi1", type=float, default=0.3)
    p.add_argument("--lambda", dest="sim_lambda", type=int, default=4, help="post-timeout effect window")
    p.add_argument("--official-marks", type=float, nargs="*", default=[419.0, 179.0])
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="matched timeout-effect estimates")
    p.add_argument("instants")
    p.add_argument("--lambda", dest="lam", type=int, nargs="+", default=[2])
    p.add_argument("--side", nargs="+", choices=["home", "away"], default=["home"])
    p.add_argument("--method", nargs="+", type=_method, default=["propensity"])
    p.add_argument("--algorithm", choices=["optimal", "greedy"], default="optimal")
    p.add_argument("--subgroup", choices=["all", "minus-last5", "only-last5"], default="all")
    p.add_argument("--permutations", type=int, default=10_000)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--threads", type=int, default=_threads_default())
    p.add_argument("--allow-any-lambda", action="store_true")
    p.add_argument("--dump-model", action="store_true", help="also write fitted propensity models")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("naive", help="unmatched post-timeout momentum change")
    p.add_argument("instants")
    p.add_argument("--lambda", dest="lam", type=int, nargs="+", default=list(DEFAULT_LAMBDAS))
    p.add_argument("--n-boot", type=int, default=10_000)
    p.add_argument("--allow-any-lambda", action="store_true")
    common(p)
    p.set_defaults(func=cmd_naive)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    out = Path(args.out)
    notes: list[str] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        inputs, outputs = args.func(args, out, notes)
    except UsageError as exc:
        print(f"stopclock {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (IntegrityError, ValueError, OSError) as exc:
        print(f"stopclock {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for note in notes:
        print(f"warning: {note}", file=sys.stderr)
    _write_manifest(out, args, inputs, outputs, started, notes)
    return 0


if __name__ == "__main__":
    sys.exit(main())
