"""Run results, summary metrics, and Pareto frontier extraction.

Latency per token divides each program's end-to-end completion time by
that program's own total output tokens under its assigned model, which
keeps the metric comparable across policies that route to models of
different verbosity. Queue time is reported per program: the sum of its
stages' queue waits.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

from .errors import EmptyResult, MismatchedRuns


@dataclass(frozen=True)
class RequestResult:
    request_id: str
    program_id: str
    stage_index: int
    model: str
    arrival_ms: float
    completion_ms: float
    queue_wait_ms: float
    out_tokens: int
    priority: float


@dataclass(frozen=True)
class ProgramResult:
    program_id: str
    workflow_id: str
    model: str
    n_stages: int
    arrival_ms: float
    completion_ms: float
    makespan_ms: float
    total_output_tokens: int
    success: int
    queue_wait_ms: float
    stage_waits_ms: tuple[float, ...]
    service_ms: float


@dataclass(frozen=True)
class EngineStats:
    model_id: str
    requests_served: int
    tokens_emitted: int
    busy_ms: float
    utilization: float
    iterations: int
    peak_queue_depth: int


@dataclass(frozen=True)
class OverheadStats:
    router_calls: int
    predictor_calls: int
    router_ms: float
    predictor_ms: float
    total_ms: float
    fraction_of_total_makespan: float


@dataclass
class RunResult:
    policy: str
    seed: int
    programs: list[ProgramResult]
    requests: list[RequestResult]
    engines: list[EngineStats]
    overhead: OverheadStats
    duration_ms: float
    config: dict = field(default_factory=dict)
    event_log: object = None  # EventLog; serialized separately as ndjson

    def to_json_dict(self) -> dict:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "duration_ms": self.duration_ms,
            "config": self.config,
            "overhead": asdict(self.overhead),
            "engines": [asdict(e) for e in self.engines],
            "programs": [asdict(p) for p in self.programs],
            "requests": [asdict(r) for r in self.requests],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")


@dataclass(frozen=True)
class OperatingPoint:
    latency_per_token_ms: float
    makespan_ms: float
    score: float
    policy: str
    config_label: str = ""


def summarize(result: RunResult) -> OperatingPoint:
    """Collapse a run into its (latency, makespan, score) operating point."""
    if not result.programs:
        raise EmptyResult("run produced no completed programs")
    n = len(result.programs)
    lat = sum(p.makespan_ms / p.total_output_tokens for p in result.programs) / n
    mk = sum(p.makespan_ms for p in result.programs) / n
    score = sum(p.success for p in result.programs) / n
    return OperatingPoint(
        latency_per_token_ms=lat,
        makespan_ms=mk,
        score=score,
        policy=result.policy,
        config_label=result.config.get("label", ""),
    )


def mean_program_queue_time(result: RunResult) -> float:
    if not result.programs:
        raise EmptyResult("run produced no completed programs")
    return sum(p.queue_wait_ms for p in result.programs) / len(result.programs)


def mean_request_queue_time(result: RunResult) -> float:
    if not result.requests:
        raise EmptyResult("run produced no completed requests")
    return sum(r.queue_wait_ms for r in result.requests) / len(result.requests)


@dataclass(frozen=True)
class QueueTimeReport:
    means_ms: dict[str, float]
    reductions_pct: dict[tuple[str, str], float]


def queue_time_report(results: dict[str, RunResult]) -> QueueTimeReport:
    """Mean program queue time per policy plus pairwise reductions.

    reductions_pct[(a, b)] is how much policy b cuts policy a's mean queue
    time, in percent. All runs must share the same workload.
    """
    if not results:
        raise EmptyResult("no runs to compare")
    baseline = None
    for name, res in results.items():
        key = sorted((p.program_id, p.arrival_ms) for p in res.programs)
        if baseline is None:
            baseline = key
        elif key != baseline:
            raise MismatchedRuns(f"run {name!r} does not share the comparison workload")
    means = {name: mean_program_queue_time(res) for name, res in results.items()}
    reductions: dict[tuple[str, str], float] = {}
    for a, ma in means.items():
        for b, mb in means.items():
            if a == b:
                continue
            reductions[(a, b)] = 100.0 * (ma - mb) / ma if ma > 0 else 0.0
    return QueueTimeReport(means_ms=means, reductions_pct=reductions)


def frontier(points: list[OperatingPoint]) -> list[OperatingPoint]:
    """Points not dominated in (latency down, score up), input order kept."""
    out = []
    for p in points:
        dominated = any(
            q.latency_per_token_ms <= p.latency_per_token_ms
            and q.score >= p.score
            and (q.latency_per_token_ms < p.latency_per_token_ms or q.score > p.score)
            for q in points
        )
        if not dominated:
            out.append(p)
    return out


_OP_FIELDS = ["policy", "config_label", "latency_per_token_ms", "makespan_ms", "score"]


def write_operating_points_csv(points: list[OperatingPoint], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_OP_FIELDS)
        for p in points:
            w.writerow(
                [p.policy, p.config_label, repr(p.latency_per_token_ms), repr(p.makespan_ms), repr(p.score)]
            )


def write_programs_csv(result: RunResult, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "program_id",
                "workflow_id",
                "model",
                "n_stages",
                "arrival_ms",
                "completion_ms",
                "makespan_ms",
                "total_output_tokens",
                "success",
                "queue_wait_ms",
            ]
        )
        for p in result.programs:
            w.writerow(
                [
                    p.program_id,
                    p.workflow_id,
                    p.model,
                    p.n_stages,
                    repr(p.arrival_ms),
                    repr(p.completion_ms),
                    repr(p.makespan_ms),
                    p.total_output_tokens,
                    p.success,
                    repr(p.queue_wait_ms),
                ]
            )


def write_predictor_eval_csv(
    rows: list[tuple[str, dict[str, float]]], model_ids: list[str], path: str
) -> None:
    """Kendall tau table: one row per predictor, one column per model."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["predictor"] + model_ids + ["avg"])
        for name, per_model in rows:
            vals = [per_model[m] for m in model_ids]
            w.writerow([name] + [f"{v:.4f}" for v in vals] + [f"{sum(vals) / len(vals):.4f}"])
