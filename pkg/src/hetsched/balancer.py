"""Load-aware model selection and dispatch.

For a request with no prior assignment, the balancer estimates each
model's backlog drain time from in-flight predicted tokens, then picks
the highest-confidence model that stays within a multiplicative latency
slack of the fastest option and clears a confidence margin over it.
Later stages of the same program reuse the first stage's model, skipping
the router entirely.

All tie-breaks are lexicographic by model id so that replays are
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError
from .monitor import ActivityMonitor
from .profiles import Pool
from .predictor import Predictor
from .router import ConfidenceVector, Router
from .workload import Request, TraceRecord


@dataclass(frozen=True)
class BalancerConfig:
    latency_slack: float = 0.5
    confidence_margin: float = 0.1

    def __post_init__(self):
        if self.latency_slack < 0:
            raise ValidationError(f"latency_slack must be >= 0, got {self.latency_slack}")
        if not 0.0 <= self.confidence_margin <= 1.0:
            raise ValidationError(
                f"confidence_margin must be in [0,1], got {self.confidence_margin}"
            )


@dataclass(frozen=True)
class Decision:
    model: str
    priority: float
    estimated_loads: dict[str, float]
    used_cached_assignment: bool
    scores: dict[str, float] | None = None


def estimate_load(pool: Pool, monitor: ActivityMonitor) -> dict[str, float]:
    """Estimated drain time of each model's admitted work, in ms.

    load = in_flight_predicted_tokens * decode_ms_per_token / max_batch_size
    """
    loads: dict[str, float] = {}
    for mid in pool.model_ids:
        prof = pool[mid]
        loads[mid] = (
            monitor.in_flight_sum(mid) * prof.decode_ms_per_token / prof.max_batch_size
        )
    return loads


def select_model(
    scores: ConfidenceVector, loads: dict[str, float], cfg: BalancerConfig
) -> str:
    """Pick the first model, scanning by descending confidence, that is
    within the latency slack of the fastest model and beats its confidence
    by at least the margin; the fastest model if none qualifies."""
    if set(scores.scores) != set(loads):
        raise ValidationError("scores and loads must cover the same model set")
    m_fast = min(loads, key=lambda m: (loads[m], m))
    limit = (1.0 + cfg.latency_slack) * loads[m_fast]
    q_star = scores[m_fast]
    for m in sorted(loads, key=lambda m: (-scores[m], m)):
        if loads[m] <= limit and scores[m] >= q_star + cfg.confidence_margin:
            return m
    return m_fast


@dataclass
class SchedulerState:
    """Shared state one scheduling decision reads and writes."""

    pool: Pool
    monitor: ActivityMonitor
    queues: dict[str, object]  # model_id -> engine with .enqueue(...)


def schedule_request(
    req: Request,
    rec: TraceRecord,
    state: SchedulerState,
    router: Router,
    predictor: Predictor,
    cfg: BalancerConfig,
) -> Decision:
    """Route, prioritize, and enqueue one request.

    Programs already in the assignment map reuse their model and skip both
    the router and load estimation. Either way the predictor runs for the
    chosen model, its estimate becomes the queue priority, and the request
    is recorded as in-flight before being enqueued.
    """
    cached = state.monitor.assignment(req.program_id)
    if cached is not None:
        model = cached
        loads: dict[str, float] = {}
        score_map = None
    else:
        loads = estimate_load(state.pool, state.monitor)
        vec = router.score(req, rec, state.pool)
        model = select_model(vec, loads, cfg)
        state.monitor.assign(req.program_id, model)
        score_map = vec.scores
    predicted = predictor.predict(req, rec, model)
    state.monitor.record_dispatch(model, req.request_id, predicted)
    state.queues[model].enqueue(
        req,
        priority=predicted,
        out_tokens=rec.out_tokens(req.stage_index, model),
        now=req.arrival_time,
    )
    return Decision(
        model=model,
        priority=predicted,
        estimated_loads=loads,
        used_cached_assignment=cached is not None,
        scores=score_map,
    )
