"""Discrete-event simulation core.

One run drains a set of workflow programs through a pool of simulated
engines under a single scheduling policy. The global loop interleaves
three event sources in deterministic time order: request arrivals,
engine-internal stint ends (completions / quantum expiries), and optional
snapshot ticks. Stage completions immediately chain the next stage's
arrival (plus an optional think time), so every program eventually
produces exactly one completion per stage.

Everything is deterministic for fixed inputs: all tie-breaks are by
(time, kind, sequence number) or lexicographic model id, and all
randomness lives in the workload generator or in seeded router/predictor
components.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

from .balancer import BalancerConfig, SchedulerState, schedule_request
from .engine import AGING_DISABLED, AgingConfig, EngineSim, MlfqEngine
from .errors import ValidationError
from .eventlog import EventLog
from .metrics import (
    EngineStats,
    OverheadStats,
    ProgramResult,
    RequestResult,
    RunResult,
)
from .monitor import ActivityMonitor
from .predictor import OraclePredictor, Predictor
from .profiles import Pool
from .router import OracleRouter, Router
from .workload import (
    Request,
    TraceRecord,
    first_stage_request,
    next_stage_request,
)

# Event kinds, in tie-break rank order. Engine stint ends (rank 0) always
# run before same-time arrivals so freed capacity is visible immediately.
RANK_ENGINE = 0
RANK_ARRIVAL = 1
RANK_SNAPSHOT = 2


@dataclass(frozen=True, order=True)
class Event:
    # seq is unique, so ordering never falls through to kind/payload
    time: float
    rank: int
    seq: int
    kind: str
    payload: object = None


@dataclass(frozen=True)
class PredictivePolicy:
    """Confidence-routed, length-prioritized scheduling (the full pipeline)."""

    balancer: BalancerConfig = BalancerConfig()
    router: Router = field(default_factory=OracleRouter)
    predictor: Predictor = field(default_factory=OraclePredictor)
    aging: AgingConfig = AgingConfig()

    name = "predictive"

    def label(self) -> str:
        return (
            f"predictive(tau={self.balancer.latency_slack},"
            f"margin={self.balancer.confidence_margin},"
            f"router={self.router.name},predictor={self.predictor.name})"
        )


@dataclass(frozen=True)
class FcfsPolicy:
    weight_waiting: float = 1.0
    weight_running: float = 1.0

    name = "fcfs"

    def label(self) -> str:
        return "fcfs"


@dataclass(frozen=True)
class SjfPolicy:
    """Shortest job first by the current stage's true output length."""

    weight_waiting: float = 1.0
    weight_running: float = 1.0

    name = "sjf"

    def label(self) -> str:
        return "sjf(oracle)"


@dataclass(frozen=True)
class StjfPolicy:
    """Shortest total job first by the workflow's true remaining length."""

    weight_waiting: float = 1.0
    weight_running: float = 1.0

    name = "stjf"

    def label(self) -> str:
        return "stjf(oracle)"


@dataclass(frozen=True)
class MlfqPolicy:
    levels: int = 3
    quantum_tokens: int = 512
    weight_waiting: float = 1.0
    weight_running: float = 1.0

    name = "mlfq"

    def label(self) -> str:
        return f"mlfq(levels={self.levels},quantum={self.quantum_tokens})"


@dataclass(frozen=True)
class LeastLoadedPolicy:
    """FCFS queues behind a least-loaded dispatcher (vLLM-style baseline)."""

    weight_waiting: float = 1.0
    weight_running: float = 1.0

    name = "least_loaded"

    def label(self) -> str:
        return f"least_loaded(w={self.weight_waiting},r={self.weight_running})"


Policy = (
    PredictivePolicy | FcfsPolicy | SjfPolicy | StjfPolicy | MlfqPolicy | LeastLoadedPolicy
)


def baseline_dispatch(policy, req: Request, engines: dict) -> str:
    """Pick the engine with the lowest weighted (waiting, running) count."""
    if isinstance(policy, PredictivePolicy):
        raise ValidationError("baseline_dispatch is for non-predictive policies")
    w_w = getattr(policy, "weight_waiting", 1.0)
    w_r = getattr(policy, "weight_running", 1.0)
    return min(
        sorted(engines),
        key=lambda m: (w_w * engines[m].waiting_count + w_r * engines[m].running_count, m),
    )


@dataclass(frozen=True)
class SimConfig:
    think_time_ms: float = 0.0
    snapshot_interval_ms: float | None = None
    router_latency_ms: float = 0.0
    predictor_latency_ms: float = 0.0
    decay_in_flight: bool = False


class _Run:
    def __init__(
        self,
        trace: list[TraceRecord],
        pool: Pool,
        policy: Policy,
        arrivals: list[tuple[str, float]],
        seed: int,
        config: SimConfig,
    ):
        self.pool = pool
        self.policy = policy
        self.config = config
        self.seed = seed
        self.recs = {rec.program_id: rec for rec in trace}
        pool_models = set(pool.model_ids)
        for rec in trace:
            if not pool_models <= rec.model_ids:
                raise ValidationError(
                    f"{rec.program_id}: trace does not cover pool models "
                    f"{sorted(pool_models - rec.model_ids)}"
                )
        for pid, _ in arrivals:
            if pid not in self.recs:
                raise ValidationError(f"arrival references unknown program {pid!r}")
        self.arrivals = arrivals
        self.log = EventLog()
        self.monitor = ActivityMonitor(pool.model_ids, decay_in_flight=config.decay_in_flight)
        self.engines = self._build_engines()
        self.state = SchedulerState(pool=pool, monitor=self.monitor, queues=self.engines)
        self._heap: list[Event] = []
        self._seq = itertools.count()
        self._now = 0.0
        self._priorities: dict[str, float] = {}
        self._request_results: list[RequestResult] = []
        self._router_calls = 0
        self._predictor_calls = 0

    def _build_engines(self):
        engines = {}
        for mid in self.pool.model_ids:
            prof = self.pool[mid]
            if isinstance(self.policy, MlfqPolicy):
                engines[mid] = MlfqEngine(
                    prof, self.policy.levels, self.policy.quantum_tokens, log=self.log
                )
            elif isinstance(self.policy, PredictivePolicy):
                engines[mid] = EngineSim(prof, aging=self.policy.aging, log=self.log)
            else:
                engines[mid] = EngineSim(prof, aging=AGING_DISABLED, log=self.log)
        return engines

    def _push(self, time: float, rank: int, kind: str, payload=None) -> None:
        heapq.heappush(
            self._heap, Event(time, rank, next(self._seq), kind, payload)
        )

    def execute(self) -> RunResult:
        for pid, t in self.arrivals:
            rec = self.recs[pid]
            self.monitor.start_program(pid, rec.workflow_id, rec.n_stages, t)
            self._push(t, RANK_ARRIVAL, "arrival", first_stage_request(rec, t))
        if self.config.snapshot_interval_ms:
            self._push(self.config.snapshot_interval_ms, RANK_SNAPSHOT, "snapshot")

        while True:
            eng_t, eng_id = self._next_engine_event()
            evt = self._heap[0] if self._heap else None
            if eng_t is None and evt is None:
                break
            if eng_t is not None and (evt is None or eng_t <= evt.time):
                self._now = eng_t
                for comp in self.engines[eng_id].advance_to(eng_t):
                    self._handle_completion(eng_id, comp)
                continue
            heapq.heappop(self._heap)
            self._now = evt.time
            if evt.kind == "arrival":
                self._dispatch(evt.payload)
            elif evt.kind == "snapshot":
                self._handle_snapshot(evt.time)
        return self._assemble()

    def _next_engine_event(self) -> tuple[float | None, str | None]:
        best_t, best_id = None, None
        for mid in self.pool.model_ids:
            t = self.engines[mid].next_event_time()
            if t is not None and (best_t is None or t < best_t):
                best_t, best_id = t, mid
        return best_t, best_id

    def _sync_progress(self, now: float) -> None:
        for mid in self.pool.model_ids:
            for rid, emitted in self.engines[mid].emitted_snapshot(now).items():
                self.monitor.note_progress(mid, rid, emitted)

    def _dispatch(self, req: Request) -> None:
        rec = self.recs[req.program_id]
        self.monitor.note_request(req.request_id, req.program_id, req.stage_index)
        self.log.emit(
            "arrival",
            req.arrival_time,
            request_id=req.request_id,
            program_id=req.program_id,
            stage=req.stage_index,
            input_tokens=req.input_tokens,
        )
        if isinstance(self.policy, PredictivePolicy):
            if self.config.decay_in_flight:
                self._sync_progress(req.arrival_time)
            decision = schedule_request(
                req, rec, self.state, self.policy.router, self.policy.predictor,
                self.policy.balancer,
            )
            self._predictor_calls += 1
            if not decision.used_cached_assignment:
                self._router_calls += 1
            self._priorities[req.request_id] = decision.priority
            self.log.emit(
                "decision",
                req.arrival_time,
                request_id=req.request_id,
                model=decision.model,
                priority=decision.priority,
                used_cached_assignment=decision.used_cached_assignment,
                loads=decision.estimated_loads,
                scores=decision.scores,
            )
            return
        model = self.monitor.assignment(req.program_id)
        cached = model is not None
        if not cached:
            model = baseline_dispatch(self.policy, req, self.engines)
            self.monitor.assign(req.program_id, model)
        stage_out = rec.out_tokens(req.stage_index, model)
        if isinstance(self.policy, SjfPolicy):
            priority = yhat = float(stage_out)
        elif isinstance(self.policy, StjfPolicy):
            priority = yhat = float(rec.remaining_tokens(req.stage_index, model))
        else:
            priority, yhat = req.arrival_time, 0.0
        self.monitor.record_dispatch(model, req.request_id, yhat)
        self._priorities[req.request_id] = priority
        self.engines[model].enqueue(req, priority, stage_out, now=req.arrival_time)
        self.log.emit(
            "decision",
            req.arrival_time,
            request_id=req.request_id,
            model=model,
            priority=priority,
            used_cached_assignment=cached,
            loads=None,
            scores=None,
        )

    def _handle_completion(self, model: str, comp) -> None:
        req = comp.request
        rec = self.recs[req.program_id]
        self.monitor.record_completion(model, req.request_id, comp.out_tokens, comp.time)
        self._request_results.append(
            RequestResult(
                request_id=req.request_id,
                program_id=req.program_id,
                stage_index=req.stage_index,
                model=model,
                arrival_ms=req.arrival_time,
                completion_ms=comp.time,
                queue_wait_ms=comp.queue_wait_ms,
                out_tokens=comp.out_tokens,
                priority=self._priorities[req.request_id],
            )
        )
        nxt = next_stage_request(
            rec, req.stage_index, comp.time + self.config.think_time_ms, model
        )
        if nxt is None:
            success = rec.success[model]
            self.monitor.finish_program(req.program_id, success)
            entry = self.monitor.programs[req.program_id]
            self.log.emit(
                "program_complete",
                comp.time,
                program_id=req.program_id,
                model=model,
                makespan_ms=comp.time - entry.user_arrival_ms,
                success=success,
            )
        else:
            self._push(nxt.arrival_time, RANK_ARRIVAL, "arrival", nxt)

    def _handle_snapshot(self, t: float) -> None:
        if self.config.decay_in_flight:
            self._sync_progress(t)
        models = {}
        for mid in self.pool.model_ids:
            eng = self.engines[mid]
            models[mid] = {
                "in_flight_tokens": self.monitor.in_flight_sum(mid),
                "queue_depth": eng.waiting_count,
                "running": eng.running_count,
            }
        self.log.emit("snapshot", t, models=models)
        busy = any(not self.engines[m].idle for m in self.pool.model_ids)
        if self._heap or busy:
            self._push(t + self.config.snapshot_interval_ms, RANK_SNAPSHOT, "snapshot")

    def _assemble(self) -> RunResult:
        waits: dict[str, dict[int, float]] = {}
        for rr in self._request_results:
            waits.setdefault(rr.program_id, {})[rr.stage_index] = rr.queue_wait_ms
        programs = []
        for pid in sorted(self.monitor.programs):
            entry = self.monitor.programs[pid]
            if entry.final_completion_ms is None:
                raise ValidationError(f"program {pid} did not drain; simulation incomplete")
            rec = self.recs[pid]
            model = entry.assigned_model
            prof = self.pool[model]
            service = sum(
                prof.prefill_ms_per_token * self._stage_input(rec, j, model)
                + rec.out_tokens(j, model) * prof.decode_ms_per_token
                for j in range(1, rec.n_stages + 1)
            )
            stage_waits = tuple(waits[pid][j] for j in range(1, rec.n_stages + 1))
            programs.append(
                ProgramResult(
                    program_id=pid,
                    workflow_id=entry.workflow_id,
                    model=model,
                    n_stages=entry.n_stages,
                    arrival_ms=entry.user_arrival_ms,
                    completion_ms=entry.final_completion_ms,
                    makespan_ms=entry.final_completion_ms - entry.user_arrival_ms,
                    total_output_tokens=entry.total_output_tokens,
                    success=entry.success,
                    queue_wait_ms=sum(stage_waits),
                    stage_waits_ms=stage_waits,
                    service_ms=service,
                )
            )
        duration = self._now
        engines = [
            EngineStats(
                model_id=mid,
                requests_served=self.engines[mid].requests_served,
                tokens_emitted=self.engines[mid].tokens_emitted_total,
                busy_ms=self.engines[mid].busy_ms,
                utilization=self.engines[mid].busy_ms / duration if duration > 0 else 0.0,
                iterations=self.engines[mid].iterations,
                peak_queue_depth=self.engines[mid].peak_queue_depth,
            )
            for mid in self.pool.model_ids
        ]
        router_ms = self._router_calls * self.config.router_latency_ms
        predictor_ms = self._predictor_calls * self.config.predictor_latency_ms
        total_makespan = sum(p.makespan_ms for p in programs)
        overhead = OverheadStats(
            router_calls=self._router_calls,
            predictor_calls=self._predictor_calls,
            router_ms=router_ms,
            predictor_ms=predictor_ms,
            total_ms=router_ms + predictor_ms,
            fraction_of_total_makespan=(
                (router_ms + predictor_ms) / total_makespan if total_makespan > 0 else 0.0
            ),
        )
        result = RunResult(
            policy=self.policy.name,
            seed=self.seed,
            programs=programs,
            requests=self._request_results,
            engines=engines,
            overhead=overhead,
            duration_ms=duration,
            config={
                "label": self.policy.label(),
                "think_time_ms": self.config.think_time_ms,
                "router_latency_ms": self.config.router_latency_ms,
                "predictor_latency_ms": self.config.predictor_latency_ms,
            },
            event_log=self.log,
        )
        return result

    @staticmethod
    def _stage_input(rec: TraceRecord, stage: int, model: str) -> int:
        carried = sum(rec.carried_context(j, model) for j in range(1, stage))
        return rec.base_input(stage) + carried


def run(
    trace: list[TraceRecord],
    pool: Pool,
    policy: Policy,
    arrivals: list[tuple[str, float]],
    seed: int = 0,
    config: SimConfig = SimConfig(),
) -> RunResult:
    """Drain every program in `arrivals` through the pool under `policy`.

    Returns per-program completion records, per-engine stats, overhead
    totals, and the full event log. Bit-deterministic for fixed inputs.
    """
    return _Run(trace, pool, policy, arrivals, seed, config).execute()
