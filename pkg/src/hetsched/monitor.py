"""Activity monitor: program table, assignment map, and in-flight volumes.

The monitor is the single source of truth the load balancer reads. It is
written only by the scheduler event loop (one decision at a time), so all
reads within a decision see a consistent snapshot.

In-flight entries hold the PREDICTED token volume of each dispatched,
not-yet-completed request and are inserted once at dispatch and removed
at completion; they are not decremented as tokens stream out unless the
optional decay flag is set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .errors import (
    AssignmentConflict,
    DuplicateRequest,
    UnknownModel,
    UnknownRequest,
)


@dataclass
class ProgramEntry:
    program_id: str
    workflow_id: str
    n_stages: int
    user_arrival_ms: float
    assigned_model: str | None = None
    stage_request_ids: dict[int, str] = field(default_factory=dict)
    stage_completion_ms: dict[int, float] = field(default_factory=dict)
    final_completion_ms: float | None = None
    success: int | None = None
    total_output_tokens: int = 0


class ActivityMonitor:
    def __init__(self, model_ids: Iterable[str], decay_in_flight: bool = False):
        self.decay_in_flight = decay_in_flight
        self._in_flight: dict[str, dict[str, float]] = {m: {} for m in sorted(model_ids)}
        self._progress: dict[str, dict[str, float]] = {m: {} for m in self._in_flight}
        self._dispatched: dict[str, str] = {}
        self.assignments: dict[str, str] = {}
        self.programs: dict[str, ProgramEntry] = {}
        self._request_index: dict[str, tuple[str, int]] = {}

    # -- assignment map -------------------------------------------------

    def assignment(self, program_id: str) -> str | None:
        return self.assignments.get(program_id)

    def assign(self, program_id: str, model_id: str) -> None:
        existing = self.assignments.get(program_id)
        if existing is not None and existing != model_id:
            raise AssignmentConflict(
                f"{program_id} already assigned to {existing}, cannot move to {model_id}"
            )
        self.assignments[program_id] = model_id
        if program_id in self.programs:
            self.programs[program_id].assigned_model = model_id

    # -- program table ---------------------------------------------------

    def start_program(
        self, program_id: str, workflow_id: str, n_stages: int, user_arrival_ms: float
    ) -> None:
        if program_id not in self.programs:
            self.programs[program_id] = ProgramEntry(
                program_id, workflow_id, n_stages, user_arrival_ms
            )

    def note_request(self, request_id: str, program_id: str, stage_index: int) -> None:
        self._request_index[request_id] = (program_id, stage_index)
        entry = self.programs.get(program_id)
        if entry is not None:
            entry.stage_request_ids[stage_index] = request_id

    def finish_program(self, program_id: str, success: int) -> None:
        self.programs[program_id].success = success

    # -- in-flight map ---------------------------------------------------

    def record_dispatch(self, model_id: str, request_id: str, predicted_tokens: float) -> None:
        if model_id not in self._in_flight:
            raise UnknownModel(model_id)
        if predicted_tokens < 0:
            raise ValueError(f"predicted_tokens must be >= 0, got {predicted_tokens}")
        if request_id in self._dispatched:
            raise DuplicateRequest(
                f"{request_id} already in flight on {self._dispatched[request_id]}"
            )
        self._in_flight[model_id][request_id] = predicted_tokens
        self._dispatched[request_id] = model_id

    def record_completion(
        self, model_id: str, request_id: str, actual_tokens: int, time: float
    ) -> None:
        if model_id not in self._in_flight:
            raise UnknownModel(model_id)
        if self._in_flight[model_id].pop(request_id, None) is None:
            raise UnknownRequest(f"{request_id} not in flight on {model_id}")
        del self._dispatched[request_id]
        self._progress[model_id].pop(request_id, None)
        loc = self._request_index.get(request_id)
        if loc is not None:
            program_id, stage_index = loc
            entry = self.programs.get(program_id)
            if entry is not None:
                entry.stage_completion_ms[stage_index] = time
                entry.total_output_tokens += actual_tokens
                if stage_index == entry.n_stages:
                    entry.final_completion_ms = time

    def note_progress(self, model_id: str, request_id: str, emitted_tokens: float) -> None:
        """Record streamed-out tokens; only queried when decay is enabled."""
        if request_id in self._in_flight.get(model_id, {}):
            self._progress[model_id][request_id] = emitted_tokens

    def in_flight_sum(self, model_id: str) -> float:
        if model_id not in self._in_flight:
            raise UnknownModel(model_id)
        entries = self._in_flight[model_id]
        if not self.decay_in_flight:
            return sum(entries.values())
        progress = self._progress[model_id]
        return sum(max(y - progress.get(rid, 0.0), 0.0) for rid, y in entries.items())

    def in_flight_count(self, model_id: str) -> int:
        if model_id not in self._in_flight:
            raise UnknownModel(model_id)
        return len(self._in_flight[model_id])

    def snapshot(self) -> dict[str, dict[str, float]]:
        return {
            m: {"in_flight_tokens": self.in_flight_sum(m), "in_flight_requests": len(v)}
            for m, v in self._in_flight.items()
        }
