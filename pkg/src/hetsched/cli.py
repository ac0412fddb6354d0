"""Command line interface.

Subcommands:
  sim synth           generate a synthetic trace file
  sim run             simulate one policy on a trace and write results
  sim sweep           grid of policy x rps x latency-slack runs
  sim eval-predictor  Kendall-tau table for length predictors
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

from .balancer import BalancerConfig
from .engine import AgingConfig
from .errors import SimError
from .metrics import (
    OperatingPoint,
    frontier,
    summarize,
    write_operating_points_csv,
    write_predictor_eval_csv,
    write_programs_csv,
)
from .predictor import (
    EmpiricalQuantilePredictor,
    InputLengthPredictor,
    OraclePredictor,
    arrival_order_distance,
    build_predictor,
    evaluate_predictor,
)
from .profiles import Pool, load_pool, parse_model_flag, pool_from_profiles
from .router import build_router
from .simcore import (
    FcfsPolicy,
    LeastLoadedPolicy,
    MlfqPolicy,
    PredictivePolicy,
    SimConfig,
    SjfPolicy,
    StjfPolicy,
    run,
)
from .workload import (
    ArrivalProcess,
    LengthStats,
    builtin_templates,
    generate_arrivals,
    load_trace,
    save_trace,
    synthesize_trace,
)

POLICY_NAMES = ["predictive", "fcfs", "sjf", "stjf", "mlfq", "least_loaded"]


def _load_pool_args(args) -> Pool:
    if args.pool:
        return load_pool(args.pool)
    if args.model:
        return pool_from_profiles([parse_model_flag(m) for m in args.model])
    raise SimError("give either --pool FILE or one or more --model id:decode:batch flags")


def _build_policy(name: str, args, training) :
    if name == "predictive":
        threshold = args.aging_threshold if args.aging_threshold > 0 else math.inf
        return PredictivePolicy(
            balancer=BalancerConfig(args.latency_slack, args.confidence_margin),
            router=build_router(args.router, args.seed),
            predictor=build_predictor(args.predictor, args.seed, training),
            aging=AgingConfig(threshold, args.aging_quantum),
        )
    if name == "fcfs":
        return FcfsPolicy()
    if name == "sjf":
        return SjfPolicy()
    if name == "stjf":
        return StjfPolicy()
    if name == "mlfq":
        return MlfqPolicy(levels=args.mlfq_levels, quantum_tokens=args.mlfq_quantum)
    if name == "least_loaded":
        return LeastLoadedPolicy(args.weight_waiting, args.weight_running)
    raise SimError(f"unknown policy {name!r} (choose from {POLICY_NAMES})")


def _arrivals_for(args, trace, rps: float):
    if args.arrivals == "trace":
        return [(rec.program_id, rec.user_arrival_time_ms) for rec in trace]
    proc = ArrivalProcess(rps=rps, seed=args.seed, horizon_ms=args.horizon)
    return generate_arrivals(proc, [rec.program_id for rec in trace])


def _sim_config(args) -> SimConfig:
    return SimConfig(
        think_time_ms=args.think_time,
        snapshot_interval_ms=args.snapshot_interval or None,
        router_latency_ms=args.router_latency,
        predictor_latency_ms=args.predictor_latency,
    )


def _add_run_knobs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trace", required=True, help="trace file (ndjson)")
    p.add_argument("--pool", help="pool config file (json)")
    p.add_argument("--model", action="append",
                   help="inline model spec id:decode_ms:batch[:prefill_ms] (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--latency-slack", type=float, default=0.5)
    p.add_argument("--confidence-margin", type=float, default=0.1)
    p.add_argument("--router", default="oracle",
                   help="oracle | constant:V | table:PATH | noisy-oracle:P")
    p.add_argument("--predictor", default="oracle",
                   help="oracle | quantile[:Q] | input-length | noisy-oracle:S")
    p.add_argument("--train-trace", help="training trace for the quantile predictor")
    p.add_argument("--aging-threshold", type=float, default=8,
                   help="promote after this many skipped iterations; 0 disables aging")
    p.add_argument("--aging-quantum", type=int, default=4)
    p.add_argument("--mlfq-levels", type=int, default=3)
    p.add_argument("--mlfq-quantum", type=int, default=512)
    p.add_argument("--weight-waiting", type=float, default=1.0)
    p.add_argument("--weight-running", type=float, default=1.0)
    p.add_argument("--arrivals", choices=["poisson", "trace"], default="poisson")
    p.add_argument("--horizon", type=float, default=None, help="drop arrivals past this ms")
    p.add_argument("--think-time", type=float, default=0.0)
    p.add_argument("--snapshot-interval", type=float, default=0.0)
    p.add_argument("--router-latency", type=float, default=0.0,
                   help="simulated per-call router latency (ms), overhead accounting only")
    p.add_argument("--predictor-latency", type=float, default=0.0)


def _cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    stats = {m: LengthStats(v["mean"], v["std"]) for m, v in spec["models"].items()}
    inp = spec.get("input_tokens", {"mean": 256.0, "std": 128.0})
    records = synthesize_trace(
        builtin_templates(spec.get("workflows", "code")),
        stats,
        spec["success_rates"],
        n=args.n,
        seed=args.seed,
        difficulty_mix=spec.get("difficulty_mix"),
        template_mix=spec.get("template_mix"),
        role_weights=spec.get("role_weights"),
        input_stats=LengthStats(inp["mean"], inp["std"]),
    )
    save_trace(records, args.out)
    print(f"wrote {len(records)} programs to {args.out}")
    return 0


def _cmd_run(args) -> int:
    pool = _load_pool_args(args)
    trace = load_trace(args.trace, expected_models=set(pool.model_ids))
    training = load_trace(args.train_trace) if args.train_trace else trace
    policy = _build_policy(args.policy, args, training)
    arrivals = _arrivals_for(args, trace, args.rps)
    result = run(trace, pool, policy, arrivals, seed=args.seed, config=_sim_config(args))
    os.makedirs(args.out, exist_ok=True)
    result.event_log.write(os.path.join(args.out, "events.ndjson"))
    result.write_json(os.path.join(args.out, "summary.json"))
    write_programs_csv(result, os.path.join(args.out, "programs.csv"))
    op = summarize(result)
    write_operating_points_csv([op], os.path.join(args.out, "operating_point.csv"))
    print(
        f"{result.policy}: {len(result.programs)} programs | "
        f"latency {op.latency_per_token_ms:.2f} ms/token | "
        f"makespan {op.makespan_ms:.0f} ms | score {op.score:.3f} | "
        f"overhead {100 * result.overhead.fraction_of_total_makespan:.2f}%"
    )
    return 0


def _cmd_sweep(args) -> int:
    pool = _load_pool_args(args)
    trace = load_trace(args.trace, expected_models=set(pool.model_ids))
    training = load_trace(args.train_trace) if args.train_trace else trace
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    rps_grid = [float(x) for x in args.rps.split(",")]
    slack_grid = [float(x) for x in args.latency_slacks.split(",")]
    os.makedirs(args.out, exist_ok=True)
    rows: list[tuple[float, float, OperatingPoint]] = []
    for rps in rps_grid:
        arrivals = _arrivals_for(args, trace, rps)
        for name in policies:
            slacks = slack_grid if name == "predictive" else [args.latency_slack]
            for slack in slacks:
                args.latency_slack = slack
                policy = _build_policy(name, args, training)
                result = run(trace, pool, policy, arrivals, seed=args.seed,
                             config=_sim_config(args))
                op = summarize(result)
                rows.append((rps, slack if name == "predictive" else float("nan"), op))
                print(
                    f"rps={rps} {op.policy:<12} slack={slack if name == 'predictive' else '-'}"
                    f" latency={op.latency_per_token_ms:.2f} ms/token"
                    f" makespan={op.makespan_ms:.0f} score={op.score:.3f}"
                )
    header = ["rps", "latency_slack", "policy", "config_label",
              "latency_per_token_ms", "makespan_ms", "score"]
    with open(os.path.join(args.out, "operating_points.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rps, slack, op in rows:
            w.writerow([rps, slack, op.policy, op.config_label,
                        repr(op.latency_per_token_ms), repr(op.makespan_ms), repr(op.score)])
    with open(os.path.join(args.out, "frontier.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rps in rps_grid:
            group = [(r, s, op) for r, s, op in rows if r == rps]
            front = frontier([op for _, _, op in group])
            for r, s, op in group:
                if op in front:
                    w.writerow([r, s, op.policy, op.config_label,
                                repr(op.latency_per_token_ms), repr(op.makespan_ms),
                                repr(op.score)])
    print(f"wrote {len(rows)} operating points to {args.out}")
    return 0


def _cmd_eval_predictor(args) -> int:
    train = load_trace(args.train)
    test = load_trace(args.test)
    model_ids = sorted(test[0].model_ids) if test else []
    if not model_ids:
        raise SimError("test trace is empty")
    predictors = [
        OraclePredictor(),
        EmpiricalQuantilePredictor(train, args.quantile),
        InputLengthPredictor(),
    ]
    rows: list[tuple[str, dict[str, float]]] = []
    for pred in predictors:
        rows.append((pred.name, {m: evaluate_predictor(pred, test, m) for m in model_ids}))
    rows.append(("fcfs", {m: arrival_order_distance(test, m) for m in model_ids}))
    write_predictor_eval_csv(rows, model_ids, args.out)
    print(f"{'predictor':<14}" + "".join(f"{m:>12}" for m in model_ids) + f"{'avg':>12}")
    for name, per_model in rows:
        vals = [per_model[m] for m in model_ids]
        print(f"{name:<14}" + "".join(f"{v:>12.4f}" for v in vals)
              + f"{sum(vals) / len(vals):>12.4f}")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sim",
        description="Simulate multi-stage agent workflow scheduling on a "
                    "heterogeneous model pool.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic trace")
    p.add_argument("--spec", required=True, help="synthesis spec (json)")
    p.add_argument("--n", type=int, required=True, help="number of programs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output trace path (ndjson)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("run", help="run one policy on a trace")
    p.add_argument("--policy", required=True, choices=POLICY_NAMES)
    p.add_argument("--rps", type=float, default=8.0)
    p.add_argument("--out", required=True, help="output directory")
    _add_run_knobs(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="policy x rps x slack grid")
    p.add_argument("--policies", required=True,
                   help=f"comma list from {','.join(POLICY_NAMES)}")
    p.add_argument("--rps", default="8", help="comma list of arrival rates")
    p.add_argument("--latency-slacks", default="0,0.25,0.5,1,2",
                   help="comma list applied to the predictive policy")
    p.add_argument("--out", required=True, help="output directory")
    _add_run_knobs(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("eval-predictor", help="Kendall-tau table for predictors")
    p.add_argument("--train", required=True, help="training trace (ndjson)")
    p.add_argument("--test", required=True, help="held-out trace (ndjson)")
    p.add_argument("--quantile", type=float, default=0.5)
    p.add_argument("--out", required=True, help="output csv path")
    p.set_defaults(func=_cmd_eval_predictor)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
