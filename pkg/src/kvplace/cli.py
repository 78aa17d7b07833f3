"""Command-line front end.

    kvplace simulate --scenario S.json [--policy P] [--alpha F] [--seed N] [--out DIR] [--set k=v ...]
    kvplace compare  --scenario S.json --policy P [--policy P ...] [--alphas 0.1,1,5] [--fixed-ratios ...]
    kvplace oracle-gap [--seed N] [--n-instances 200] [--out gaps.csv]
    kvplace gen profiles --preset narrativeqa --n 50 --out profiles.jsonl
    kvplace gen trace --profiles profiles.jsonl --rate 2 --duration 100 --out trace.jsonl

Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .bench import oracle_gap, summarize
from .core import KVPlaceError, ValidationError
from .placement import parse_policy
from .quality import read_profiles, write_profiles
from .simulate import ReplayMetrics, run, write_actions_jsonl, write_records_csv, write_summary_json
from .workload import PRESETS, ScenarioSpec, gen_contexts, gen_trace, load_scenario, serialize_trace

log = logging.getLogger("kvplace")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _load(args) -> ScenarioSpec:
    path = Path(args.scenario)
    if not path.is_file():
        raise UsageError(f"scenario file not found: {path}")
    overrides = list(args.set or [])
    if getattr(args, "alpha", None) is not None:
        overrides.append(f"params.alpha={args.alpha}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return load_scenario(path, overrides)


def run_point(scenario: ScenarioSpec, policy_spec: str, alpha: Optional[float] = None):
    if alpha is not None:
        scenario = dataclasses.replace(scenario, params=dataclasses.replace(scenario.params, alpha=alpha))
    policy = parse_policy(policy_spec, scenario.params, **scenario.joint_kwargs())
    return run(scenario, policy)


def cmd_simulate(args) -> int:
    scenario = _load(args)
    policy_spec = args.policy or scenario.policy
    records, metrics, sim = run_point(scenario, policy_spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(records, out / "requests.csv")
    write_actions_jsonl(sim.actions, out / "actions.jsonl")
    write_summary_json(metrics, out / "summary.json", {"policy": policy_spec, "alpha": scenario.params.alpha, "seed": scenario.seed})
    print(
        f"policy={policy_spec} requests={metrics.n_requests} ttft_sum={metrics.ttft_sum:.6g} "
        f"mean_ttft={metrics.mean_ttft:.6g} mean_quality={metrics.mean_quality:.6g} "
        f"miss={metrics.miss_fraction:.4g} tier_hits={json.dumps(metrics.tier_hit_fraction)}"
    )
    return EXIT_OK


def _compare_job(job):
    scenario, policy, alpha = job
    _, metrics, _ = run_point(scenario, policy, alpha)
    return metrics


def pareto_flags(points: Sequence[tuple[float, float]]) -> list[bool]:
    """True for (ttft, quality) points no other point beats on both axes."""
    flags = []
    for i, (t, q) in enumerate(points):
        dominated = any(
            (t2 <= t and q2 >= q) and (t2 < t or q2 > q) for j, (t2, q2) in enumerate(points) if j != i
        )
        flags.append(not dominated)
    return flags


def compare_grid(args, scenario: ScenarioSpec) -> list[tuple[str, str, Optional[float]]]:
    alphas = _floats(args.alphas) if args.alphas else [None]
    grid = []
    for spec in args.policy or []:
        if spec == "joint":
            grid.extend(("joint", f"alpha={a if a is not None else scenario.params.alpha:g}", a) for a in alphas)
        else:
            grid.append((spec, "", None))
    if args.fixed_ratios:
        methods = args.fixed_methods.split(",") if args.fixed_methods else sorted(scenario.methods)
        for m in methods:
            for r in _floats(args.fixed_ratios):
                spec = "lru" if r == 1.0 else f"fixed:{m}:{r:g}"
                if (spec, "", None) not in grid:
                    grid.append((spec, "", None))
    if not grid:
        raise UsageError("empty comparison grid: give --policy and/or --fixed-ratios")
    return grid


def cmd_compare(args) -> int:
    scenario = _load(args)
    grid = compare_grid(args, scenario)
    jobs = [(scenario, spec, alpha) for spec, _, alpha in grid]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results: list[ReplayMetrics] = list(pool.map(_compare_job, jobs))
    else:
        results = [_compare_job(j) for j in jobs]
    tiers = [t.tier_id for t in scenario.tiers]
    flags = pareto_flags([(m.mean_ttft, m.mean_quality) for m in results])
    header = ["policy", "param", "mean_ttft", "mean_quality", "miss_fraction"] + [f"hit_tier{t}" for t in tiers] + ["pareto"]
    sink = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(sink)
        w.writerow(header)
        for (spec, param, _), m, flag in zip(grid, results, flags):
            w.writerow(
                [spec, param, repr(m.mean_ttft), repr(m.mean_quality), repr(m.miss_fraction)]
                + [repr(m.tier_hit_fraction.get(t, 0.0)) for t in tiers]
                + [int(flag)]
            )
    finally:
        if sink is not sys.stdout:
            sink.close()
    return EXIT_OK


def cmd_oracle_gap(args) -> int:
    rows = oracle_gap(
        args.seed, args.n_instances,
        max_contexts=args.max_contexts, n_ratios=args.n_ratios, n_methods=args.n_methods,
    )
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f.name for f in dataclasses.fields(rows[0])] if rows else ["instance"])
            for r in rows:
                w.writerow(dataclasses.astuple(r))
    summary = summarize(rows)
    print(json.dumps(summary, sort_keys=True))
    if rows and not (summary["all_feasible"] and summary["greedy_le_oracle"]):
        log.error("greedy placement infeasible or above the oracle")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.what == "profiles":
        names = [n for n in args.preset.split(",") if n]
        unknown = [n for n in names if n not in PRESETS]
        if unknown or not names:
            raise UsageError(f"unknown preset {','.join(unknown) or '(none)'}; available: {', '.join(sorted(PRESETS))}")
        mix = names[0] if len(names) == 1 else {n: 1.0 for n in names}
        profiles = gen_contexts(args.seed, mix, args.n, bytes_per_token=args.bytes_per_token, k=args.k)
        write_profiles(profiles, args.out)
        return EXIT_OK
    if args.profiles:
        contexts = [p.context for p in read_profiles(args.profiles)]
    else:
        contexts = args.n
    trace = gen_trace(args.seed, contexts, args.zipf, args.rate, args.duration, n_new_tokens=args.new_tokens)
    serialize_trace(trace, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvplace", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("--scenario", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-path override")

    p = sub.add_parser("simulate", help="replay one scenario under one policy")
    scenario_args(p)
    p.add_argument("--policy", help="joint | lru | prefill | fixed:<method>:<ratio> | impress:<X>")
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="replay a grid of policies and alphas")
    scenario_args(p)
    p.add_argument("--policy", action="append")
    p.add_argument("--alphas", help="comma-separated alpha sweep for the joint policy")
    p.add_argument("--fixed-ratios", help="comma-separated ratios for fixed-compression baselines")
    p.add_argument("--fixed-methods", help="comma-separated methods (default: all scenario methods)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oracle-gap", help="greedy vs exact placement on random instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-instances", type=int, default=200)
    p.add_argument("--max-contexts", type=int, default=6)
    p.add_argument("--n-ratios", type=int, default=4)
    p.add_argument("--n-methods", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle_gap)

    p = sub.add_parser("gen", help="generate profiles or a trace as JSONL")
    p.add_argument("what", choices=("profiles", "trace"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", default="narrativeqa", help="preset name, or comma-separated mix")
    p.add_argument("--n", type=int, default=50, help="number of contexts")
    p.add_argument("--bytes-per-token", type=float, default=0.12e6)
    p.add_argument("--k", type=float, default=1.0, help="sensitivity curve shape")
    p.add_argument("--profiles", help="take context ids from this profile file")
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--duration", type=float, default=100.0)
    p.add_argument("--zipf", type=float, default=1.0)
    p.add_argument("--new-tokens", type=int, default=0)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValidationError, FileNotFoundError) as exc:
        print(f"kvplace: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KVPlaceError as exc:
        print(f"kvplace: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
