"""Workflows, requests, and traces.

A *program* is one execution of a multi-stage agent workflow (plan, solve,
code, verify, ...). Each stage is one LLM call; the scheduler sees stages as
individual requests. A trace file stores, per program, the ground-truth
output lengths and task success for every model in the pool, so the same
trace can drive oracle components and simulated execution for any policy.

Trace files are newline-delimited JSON, one program per line:

    {"program_id": "p000001", "workflow_id": "code-2stage",
     "user_arrival_time_ms": 0.0,
     "stages": [{"stage_index": 1, "role": "planner", "base_input_tokens": 212,
                 "models": {"fast": {"out_tokens": 120, "carried_context_tokens": 120},
                            "strong": {"out_tokens": 95, "carried_context_tokens": 95}}},
                ...],
     "success": {"fast": 0, "strong": 1},
     "difficulty": "hard"}

The synthetic generator writes the same format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidStats, ParseError, UnknownStage, ValidationError


@dataclass(frozen=True)
class StageSpec:
    """One stage of a workflow template: a role name and its 1-based index."""

    role: str
    index: int


@dataclass(frozen=True)
class WorkflowSpec:
    workflow_id: str
    stages: tuple[StageSpec, ...]

    def __post_init__(self):
        if not self.stages:
            raise ValidationError(f"workflow {self.workflow_id!r} has no stages")
        for i, st in enumerate(self.stages, start=1):
            if st.index != i:
                raise ValidationError(
                    f"workflow {self.workflow_id!r}: stage indices must be contiguous from 1"
                )

    @property
    def n_stages(self) -> int:
        return len(self.stages)


def _wf(workflow_id: str, *roles: str) -> WorkflowSpec:
    return WorkflowSpec(workflow_id, tuple(StageSpec(r, i + 1) for i, r in enumerate(roles)))


# Shipped templates: 1/2/4-stage agent pipelines for code generation and
# math reasoning.
CODE_WORKFLOWS: tuple[WorkflowSpec, ...] = (
    _wf("code-4stage", "planner", "coder", "qa_agent", "coder"),
    _wf("code-2stage", "planner", "coder"),
    _wf("code-1stage", "coder"),
)

MATH_WORKFLOWS: tuple[WorkflowSpec, ...] = (
    _wf("math-4stage", "planner", "solver", "verifier", "solver"),
    _wf("math-2stage", "planner", "solver"),
    _wf("math-1stage", "solver"),
)


def builtin_templates(name: str) -> tuple[WorkflowSpec, ...]:
    try:
        return {"code": CODE_WORKFLOWS, "math": MATH_WORKFLOWS}[name]
    except KeyError:
        raise ValidationError(f"unknown template set {name!r} (expected 'code' or 'math')")


@dataclass(frozen=True)
class Request:
    """One stage invocation: the unit the scheduler routes and prioritizes."""

    program_id: str
    stage_index: int
    input_tokens: int
    arrival_time: float  # ms since simulation start
    workflow_id: str
    role: str

    def __post_init__(self):
        if self.stage_index < 1:
            raise ValidationError(f"stage_index must be >= 1, got {self.stage_index}")
        if self.input_tokens <= 0:
            raise ValidationError(f"input_tokens must be > 0, got {self.input_tokens}")
        if self.arrival_time < 0:
            raise ValidationError(f"arrival_time must be >= 0, got {self.arrival_time}")

    @property
    def request_id(self) -> str:
        return f"{self.program_id}:{self.stage_index}"


@dataclass(frozen=True)
class ModelStageOutput:
    out_tokens: int
    carried_context_tokens: int


@dataclass
class StageTrace:
    stage_index: int
    role: str
    base_input_tokens: int
    models: dict[str, ModelStageOutput]


@dataclass
class TraceRecord:
    """Ground truth for one program: per-stage, per-model outputs plus success."""

    program_id: str
    workflow_id: str
    user_arrival_time_ms: float
    stages: list[StageTrace]
    success: dict[str, int]
    difficulty: str

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def model_ids(self) -> set[str]:
        return set(self.success)

    def _stage(self, stage_index: int) -> StageTrace:
        if not 1 <= stage_index <= self.n_stages:
            raise UnknownStage(
                f"{self.program_id}: stage {stage_index} outside 1..{self.n_stages}"
            )
        return self.stages[stage_index - 1]

    def base_input(self, stage_index: int) -> int:
        return self._stage(stage_index).base_input_tokens

    def out_tokens(self, stage_index: int, model_id: str) -> int:
        return self._stage(stage_index).models[model_id].out_tokens

    def carried_context(self, stage_index: int, model_id: str) -> int:
        return self._stage(stage_index).models[model_id].carried_context_tokens

    def remaining_tokens(self, from_stage: int, model_id: str) -> int:
        """Total output tokens of stages from_stage..N under `model_id`."""
        self._stage(from_stage)
        return sum(
            st.models[model_id].out_tokens for st in self.stages[from_stage - 1 :]
        )

    def total_tokens(self, model_id: str) -> int:
        return self.remaining_tokens(1, model_id)

    def validate(self, expected_models: set[str] | None = None) -> None:
        if not self.stages:
            raise ValidationError(f"{self.program_id}: no stages")
        if self.user_arrival_time_ms < 0:
            raise ValidationError(f"{self.program_id}: negative user_arrival_time_ms")
        models = self.model_ids
        if not models:
            raise ValidationError(f"{self.program_id}: empty success map")
        if expected_models is not None and not expected_models <= models:
            missing = sorted(expected_models - models)
            raise ValidationError(f"{self.program_id}: missing model entries {missing}")
        for flag in self.success.values():
            if flag not in (0, 1):
                raise ValidationError(f"{self.program_id}: success flags must be 0 or 1")
        for i, st in enumerate(self.stages, start=1):
            if st.stage_index != i:
                raise ValidationError(
                    f"{self.program_id}: stage indices must be contiguous from 1"
                )
            if st.base_input_tokens < 1:
                raise ValidationError(f"{self.program_id}: stage {i} base_input_tokens < 1")
            if set(st.models) != models:
                raise ValidationError(
                    f"{self.program_id}: stage {i} model entries {sorted(st.models)} "
                    f"do not match success map {sorted(models)}"
                )
            for mid, out in st.models.items():
                if out.out_tokens < 0 or out.carried_context_tokens < 0:
                    raise ValidationError(
                        f"{self.program_id}: stage {i} model {mid}: negative token count"
                    )

    def to_json_dict(self) -> dict:
        return {
            "program_id": self.program_id,
            "workflow_id": self.workflow_id,
            "user_arrival_time_ms": self.user_arrival_time_ms,
            "stages": [
                {
                    "stage_index": st.stage_index,
                    "role": st.role,
                    "base_input_tokens": st.base_input_tokens,
                    "models": {
                        mid: {
                            "out_tokens": out.out_tokens,
                            "carried_context_tokens": out.carried_context_tokens,
                        }
                        for mid, out in sorted(st.models.items())
                    },
                }
                for st in self.stages
            ],
            "success": {mid: self.success[mid] for mid in sorted(self.success)},
            "difficulty": self.difficulty,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TraceRecord":
        try:
            stages = [
                StageTrace(
                    stage_index=int(s["stage_index"]),
                    role=str(s.get("role", "")),
                    base_input_tokens=int(s["base_input_tokens"]),
                    models={
                        mid: ModelStageOutput(
                            out_tokens=int(o["out_tokens"]),
                            carried_context_tokens=int(o["carried_context_tokens"]),
                        )
                        for mid, o in s["models"].items()
                    },
                )
                for s in obj["stages"]
            ]
            return cls(
                program_id=str(obj["program_id"]),
                workflow_id=str(obj["workflow_id"]),
                user_arrival_time_ms=float(obj["user_arrival_time_ms"]),
                stages=stages,
                success={mid: int(v) for mid, v in obj["success"].items()},
                difficulty=str(obj["difficulty"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad trace record: {exc}") from exc


def load_trace(path: str, expected_models: set[str] | None = None) -> list[TraceRecord]:
    """Load and validate a newline-delimited trace file.

    The whole file is rejected on the first malformed record; the raised
    error names the offending line.
    """
    records: list[TraceRecord] = []
    model_set: set[str] | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}")
            if not isinstance(obj, dict):
                raise ParseError(lineno, "record is not a JSON object")
            try:
                rec = TraceRecord.from_json_dict(obj)
            except ValueError as exc:
                raise ParseError(lineno, str(exc))
            try:
                rec.validate(expected_models)
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}")
            if model_set is None:
                model_set = rec.model_ids
            elif rec.model_ids != model_set:
                raise ValidationError(
                    f"line {lineno}: model set {sorted(rec.model_ids)} differs from "
                    f"earlier records {sorted(model_set)}"
                )
            records.append(rec)
    return records


def save_trace(records: list[TraceRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict(), separators=(",", ":")) + "\n")


@dataclass(frozen=True)
class LengthStats:
    """Mean/std of a program's total output tokens under one model."""

    mean: float
    std: float

    def __post_init__(self):
        if self.mean <= 0:
            raise InvalidStats(f"mean must be > 0, got {self.mean}")
        if self.std < 0:
            raise InvalidStats(f"std must be >= 0, got {self.std}")


def _lognormal_params(mean: float, std: float) -> tuple[float, float]:
    # Moment matching: choose (mu, sigma) so the lognormal has the target
    # mean and std.
    sigma2 = math.log(1.0 + (std / mean) ** 2)
    mu = math.log(mean) - sigma2 / 2.0
    return mu, math.sqrt(sigma2)


def _split_total(total: int, weights: list[float]) -> list[int]:
    # Largest-remainder split so the integer stage lengths sum to `total`.
    wsum = sum(weights)
    raw = [total * w / wsum for w in weights]
    base = [int(math.floor(x)) for x in raw]
    short = total - sum(base)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def synthesize_trace(
    templates: list[WorkflowSpec] | tuple[WorkflowSpec, ...],
    stats: dict[str, LengthStats],
    success_rates: dict[str, dict[str, float]],
    n: int,
    seed: int,
    *,
    difficulty_mix: dict[str, float] | None = None,
    template_mix: list[float] | None = None,
    role_weights: dict[str, float] | None = None,
    input_stats: LengthStats = LengthStats(256.0, 128.0),
) -> list[TraceRecord]:
    """Generate `n` statistically faithful programs.

    Per model, total output tokens are lognormal with the given mean/std
    (moment-matched), split across stages by role weights (equal split by
    default). Success is Bernoulli per (model, difficulty). Deterministic
    in `seed`.
    """
    if n <= 0:
        raise ValidationError(f"n must be > 0, got {n}")
    if not templates:
        raise ValidationError("no workflow templates given")
    if not stats:
        raise ValidationError("no length stats given")
    model_ids = sorted(stats)
    for mid in model_ids:
        if mid not in success_rates:
            raise ValidationError(f"no success rates for model {mid!r}")
    mix = difficulty_mix or {"easy": 0.5, "hard": 0.5}
    difficulties = sorted(mix)
    dprobs = np.array([mix[d] for d in difficulties], dtype=float)
    dprobs = dprobs / dprobs.sum()
    for mid in model_ids:
        for d in difficulties:
            if d not in success_rates[mid]:
                raise ValidationError(f"no success rate for ({mid!r}, {d!r})")
    if template_mix is not None and len(template_mix) != len(templates):
        raise ValidationError("template_mix length must match templates")
    tprobs = np.array(template_mix or [1.0] * len(templates), dtype=float)
    tprobs = tprobs / tprobs.sum()

    rng = np.random.default_rng(seed)
    params = {mid: _lognormal_params(stats[mid].mean, stats[mid].std) for mid in model_ids}
    in_mu, in_sigma = _lognormal_params(input_stats.mean, max(input_stats.std, 0.0) or 1e-12)

    records: list[TraceRecord] = []
    for i in range(n):
        wf = templates[int(rng.choice(len(templates), p=tprobs))]
        difficulty = difficulties[int(rng.choice(len(difficulties), p=dprobs))]
        weights = [
            (role_weights or {}).get(st.role, 1.0) for st in wf.stages
        ]
        base_inputs = [
            max(1, int(round(rng.lognormal(in_mu, in_sigma)))) for _ in wf.stages
        ]
        per_model_stage: list[dict[str, ModelStageOutput]] = [dict() for _ in wf.stages]
        success: dict[str, int] = {}
        for mid in model_ids:
            mu, sigma = params[mid]
            if stats[mid].std == 0:
                total = max(1, int(round(stats[mid].mean)))
            else:
                total = max(1, int(round(rng.lognormal(mu, sigma))))
            for j, out in enumerate(_split_total(total, weights)):
                per_model_stage[j][mid] = ModelStageOutput(out, out)
            rate = success_rates[mid][difficulty]
            success[mid] = int(rng.random() < rate)
        stages = [
            StageTrace(st.index, st.role, base_inputs[st.index - 1], per_model_stage[st.index - 1])
            for st in wf.stages
        ]
        records.append(
            TraceRecord(
                program_id=f"p{i:06d}",
                workflow_id=wf.workflow_id,
                user_arrival_time_ms=0.0,
                stages=stages,
                success=success,
                difficulty=difficulty,
            )
        )
    return records


@dataclass(frozen=True)
class ArrivalProcess:
    """Open-loop Poisson arrivals at a fixed offered rate."""

    rps: float
    seed: int
    horizon_ms: float | None = None

    def __post_init__(self):
        if self.rps <= 0:
            raise ValidationError(f"rps must be > 0, got {self.rps}")


def generate_arrivals(
    proc: ArrivalProcess, programs: list[str]
) -> list[tuple[str, float]]:
    """Assign each program a Poisson arrival time (mean gap 1000/rps ms).

    Times are strictly increasing and deterministic per seed. Programs
    falling past `horizon_ms` (when set) are dropped.
    """
    if not programs:
        raise ValidationError("programs must be non-empty")
    rng = np.random.default_rng(proc.seed)
    gaps = rng.exponential(1000.0 / proc.rps, size=len(programs))
    out: list[tuple[str, float]] = []
    t = 0.0
    for pid, gap in zip(programs, gaps):
        t += max(float(gap), 1e-9)
        if proc.horizon_ms is not None and t > proc.horizon_ms:
            break
        out.append((pid, t))
    return out


def first_stage_request(rec: TraceRecord, arrival_time: float | None = None) -> Request:
    """Build the stage-1 request for a program."""
    st = rec.stages[0]
    return Request(
        program_id=rec.program_id,
        stage_index=1,
        input_tokens=st.base_input_tokens,
        arrival_time=rec.user_arrival_time_ms if arrival_time is None else arrival_time,
        workflow_id=rec.workflow_id,
        role=st.role,
    )


def next_stage_request(
    rec: TraceRecord,
    completed_stage: int,
    completion_time: float,
    assigned_model: str,
) -> Request | None:
    """Chain to the next stage after `completed_stage` finishes.

    The next stage's input is its base prompt plus all prior stage outputs
    under the assigned model (context accumulates). Returns None after the
    final stage.
    """
    if not 1 <= completed_stage <= rec.n_stages:
        raise UnknownStage(
            f"{rec.program_id}: completed stage {completed_stage} outside 1..{rec.n_stages}"
        )
    if completed_stage == rec.n_stages:
        return None
    nxt = completed_stage + 1
    carried = sum(rec.carried_context(j, assigned_model) for j in range(1, nxt))
    st = rec.stages[nxt - 1]
    return Request(
        program_id=rec.program_id,
        stage_index=nxt,
        input_tokens=st.base_input_tokens + carried,
        arrival_time=completion_time,
        workflow_id=rec.workflow_id,
        role=st.role,
    )
