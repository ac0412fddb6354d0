"""Single inference-engine simulation.

Each engine owns a local priority queue and a running batch of at most
max_batch_size requests. Every batch member decodes at the profile's full
per-token rate (the regime in which the balancer's drain-time formula is
exact), prefill is charged once on first admission, and completion times
are exact event times, never quantized to a step size.

A *scheduling iteration* happens at every batch-refill opportunity: a
completion frees a slot, or a new request arrives while slots are free.
Anti-starvation aging is driven by these iterations: a queued entry
skipped S times in a row is promoted one starvation level (sorting ahead
of all normal entries); a promoted entry that has run for Q iterations is
demoted one level back toward normal. Once admitted, a request runs to
completion; there is no mid-generation preemption.

The MLFQ variant replaces the starvation-aware queue with classic
multi-level feedback: FIFO levels, demotion after each quantum of service
tokens, and preemption at quantum boundaries (quantum expiry is a refill
boundary, so this stays consistent with the no-mid-token rule).
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

from .errors import ValidationError
from .eventlog import EventLog
from .profiles import ModelProfile
from .workload import Request


@dataclass(frozen=True)
class AgingConfig:
    """Anti-starvation knobs: promote after S skipped iterations, demote
    after Q served iterations. S = inf disables aging."""

    starvation_threshold: float = 8
    running_quantum: int = 4
    demote_while_queued: bool = False

    def __post_init__(self):
        if self.starvation_threshold < 1:
            raise ValidationError("starvation_threshold must be >= 1 (or inf)")
        if self.running_quantum < 1:
            raise ValidationError("running_quantum must be >= 1")


AGING_DISABLED = AgingConfig(starvation_threshold=math.inf)


@dataclass
class QueueEntry:
    request: Request
    priority: float
    arrival: float
    seq: int
    out_tokens: int
    starvation_count: int = 0
    starvation_level: int = 0
    quantum_counter: int = 0
    last_enqueue_time: float = 0.0
    waited_ms: float = 0.0

    def sort_key(self) -> tuple:
        return (self.starvation_level, self.priority, self.arrival, self.seq)


@dataclass
class MlfqEntry:
    request: Request
    arrival: float
    seq: int
    out_tokens: int
    remaining_tokens: int
    level: int = 0
    level_entry_time: float = 0.0
    last_enqueue_time: float = 0.0
    waited_ms: float = 0.0
    emitted: int = 0
    prefill_done: bool = False

    def sort_key(self) -> tuple:
        return (self.level, self.level_entry_time, self.seq)


@dataclass
class RunningRequest:
    entry: QueueEntry | MlfqEntry
    admit_time: float
    decode_start: float
    stint_end: float
    stint_tokens: int
    prior_emitted: int = 0


@dataclass(frozen=True)
class Completion:
    request: Request
    time: float
    out_tokens: int
    queue_wait_ms: float


class _BatchEngine:
    """Shared clock, running-batch, and accounting machinery."""

    def __init__(self, profile: ModelProfile, log: EventLog | None = None):
        self.profile = profile
        self.log = log if log is not None else EventLog()
        self.now = 0.0
        self.running: dict[int, RunningRequest] = {}
        self._seq = itertools.count()
        self.iterations = 0
        self.tokens_emitted_total = 0
        self.requests_served = 0
        self.busy_ms = 0.0
        self._busy_since: float | None = None
        self.peak_queue_depth = 0

    @property
    def model_id(self) -> str:
        return self.profile.model_id

    @property
    def running_count(self) -> int:
        return len(self.running)

    @property
    def waiting_count(self) -> int:
        raise NotImplementedError

    @property
    def idle(self) -> bool:
        return not self.running and self.waiting_count == 0

    def _advance_clock(self, now: float) -> None:
        if now < self.now - 1e-9:
            raise ValueError(f"{self.model_id}: time going backwards ({now} < {self.now})")
        self.now = max(self.now, now)

    def enqueue(self, request: Request, priority: float, out_tokens: int, now: float) -> None:
        self._advance_clock(now)
        entry = self._make_entry(request, priority, out_tokens, now)
        self._push(entry)
        self.log.emit(
            "enqueue",
            now,
            engine=self.model_id,
            request_id=request.request_id,
            priority=priority,
            level=self._entry_level(entry),
        )
        if len(self.running) < self.profile.max_batch_size:
            self._iterate(now)

    def scheduling_iteration(self, now: float) -> list[Request]:
        """Run one explicit iteration; returns the requests admitted by it."""
        self._advance_clock(now)
        return [rr.entry.request for rr in self._iterate(now)]

    def next_event_time(self) -> float | None:
        return min((rr.stint_end for rr in self.running.values()), default=None)

    def advance(self, dt: float) -> list[Completion]:
        """Advance local time by dt, returning completions at exact times."""
        if dt <= 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        return self.advance_to(self.now + dt)

    def advance_to(self, target: float) -> list[Completion]:
        completions: list[Completion] = []
        while self.running:
            t = self.next_event_time()
            if t is None or t > target:
                break
            rr = min(self.running.values(), key=lambda r: (r.stint_end, r.entry.seq))
            completions.extend(self._finish_stint(rr, rr.stint_end))
        self._advance_clock(target)
        return completions

    def emitted_snapshot(self, now: float) -> dict[str, int]:
        """Tokens emitted so far per running request (floor-accumulated)."""
        out: dict[str, int] = {}
        for rr in self.running.values():
            if now <= rr.decode_start:
                done = 0
            else:
                done = min(
                    rr.stint_tokens,
                    int((now - rr.decode_start) / self.profile.decode_ms_per_token),
                )
            out[rr.entry.request.request_id] = rr.prior_emitted + done
        return out

    # -- internals --------------------------------------------------------

    def _admit(self, entry, now: float) -> RunningRequest:
        prefill_ms = 0.0
        if not getattr(entry, "prefill_done", False):
            prefill_ms = self.profile.prefill_ms_per_token * entry.request.input_tokens
            if isinstance(entry, MlfqEntry):
                entry.prefill_done = True
        decode_start = now + prefill_ms
        stint_tokens = self._stint_tokens(entry)
        rr = RunningRequest(
            entry=entry,
            admit_time=now,
            decode_start=decode_start,
            stint_end=decode_start + stint_tokens * self.profile.decode_ms_per_token,
            stint_tokens=stint_tokens,
            prior_emitted=getattr(entry, "emitted", 0),
        )
        if not self.running:
            self._busy_since = now
        self.running[entry.seq] = rr
        entry.waited_ms += now - entry.last_enqueue_time
        self.log.emit(
            "admit",
            now,
            engine=self.model_id,
            request_id=entry.request.request_id,
            level=self._entry_level(entry),
            priority=self._entry_priority(entry),
            wait_ms=now - entry.last_enqueue_time,
        )
        return rr

    def _finish_stint(self, rr: RunningRequest, t: float) -> list[Completion]:
        self._advance_clock(t)
        del self.running[rr.entry.seq]
        self.tokens_emitted_total += rr.stint_tokens
        if not self.running and self._busy_since is not None:
            self.busy_ms += t - self._busy_since
            self._busy_since = None
        done = self._on_stint_end(rr, t)
        self._iterate(t)
        return [done] if done is not None else []

    def _make_entry(self, request, priority, out_tokens, now):
        raise NotImplementedError

    def _entry_level(self, entry) -> int:
        raise NotImplementedError

    def _entry_priority(self, entry) -> float:
        raise NotImplementedError

    def _stint_tokens(self, entry) -> int:
        raise NotImplementedError

    def _push(self, entry) -> None:
        raise NotImplementedError

    def _iterate(self, now: float) -> list[RunningRequest]:
        raise NotImplementedError

    def _on_stint_end(self, rr: RunningRequest, t: float) -> Completion | None:
        raise NotImplementedError


class EngineSim(_BatchEngine):
    """Starvation-aware priority-queue engine.

    Queue order is ascending (starvation_level, priority, arrival, seq):
    smaller predicted work first, arrival breaking ties, promoted entries
    ahead of all normal ones.
    """

    def __init__(
        self,
        profile: ModelProfile,
        aging: AgingConfig = AGING_DISABLED,
        log: EventLog | None = None,
    ):
        super().__init__(profile, log)
        self.aging = aging
        self._heap: list[tuple[tuple, int]] = []
        self._queued: dict[int, QueueEntry] = {}

    @property
    def waiting_count(self) -> int:
        return len(self._queued)

    def _make_entry(self, request, priority, out_tokens, now):
        if out_tokens < 0:
            raise ValidationError(f"out_tokens must be >= 0, got {out_tokens}")
        return QueueEntry(
            request=request,
            priority=priority,
            arrival=now,
            seq=next(self._seq),
            out_tokens=out_tokens,
            last_enqueue_time=now,
        )

    def _entry_level(self, entry):
        return entry.starvation_level

    def _entry_priority(self, entry):
        return entry.priority

    def _stint_tokens(self, entry):
        return entry.out_tokens

    def _push(self, entry: QueueEntry) -> None:
        self._queued[entry.seq] = entry
        heapq.heappush(self._heap, (entry.sort_key(), entry.seq))
        self.peak_queue_depth = max(self.peak_queue_depth, len(self._queued))

    def _pop_min(self) -> QueueEntry | None:
        # Lazy deletion: promotion/demotion pushes a fresh node, so a node
        # whose key no longer matches the entry's current key is stale.
        while self._heap:
            key, seq = self._heap[0]
            entry = self._queued.get(seq)
            if entry is None or entry.sort_key() != key:
                heapq.heappop(self._heap)
                continue
            heapq.heappop(self._heap)
            del self._queued[seq]
            return entry
        return None

    def _iterate(self, now: float) -> list[RunningRequest]:
        self.iterations += 1
        admitted: list[RunningRequest] = []
        while len(self.running) < self.profile.max_batch_size:
            entry = self._pop_min()
            if entry is None:
                break
            admitted.append(self._admit(entry, now))
        self._age_queued(now)
        self._tick_running_quantum(now)
        return admitted

    def _age_queued(self, now: float) -> None:
        S = self.aging.starvation_threshold
        if S == math.inf or not self._queued:
            return
        Q = self.aging.running_quantum
        for seq in sorted(self._queued):
            entry = self._queued[seq]
            entry.starvation_count += 1
            if entry.starvation_count >= S:
                entry.starvation_count = 0
                entry.starvation_level -= 1
                entry.quantum_counter = 0
                heapq.heappush(self._heap, (entry.sort_key(), entry.seq))
                self.log.emit(
                    "promote",
                    now,
                    engine=self.model_id,
                    request_id=entry.request.request_id,
                    level=entry.starvation_level,
                    priority=entry.priority,
                )
            elif self.aging.demote_while_queued and entry.starvation_level < 0:
                entry.quantum_counter += 1
                if entry.quantum_counter >= Q:
                    entry.quantum_counter = 0
                    entry.starvation_level += 1
                    heapq.heappush(self._heap, (entry.sort_key(), entry.seq))
                    self.log.emit(
                        "demote",
                        now,
                        engine=self.model_id,
                        request_id=entry.request.request_id,
                        level=entry.starvation_level,
                        priority=entry.priority,
                    )

    def _tick_running_quantum(self, now: float) -> None:
        if self.aging.starvation_threshold == math.inf:
            return
        Q = self.aging.running_quantum
        for seq in sorted(self.running):
            entry = self.running[seq].entry
            if entry.starvation_level < 0:
                entry.quantum_counter += 1
                if entry.quantum_counter >= Q:
                    entry.quantum_counter = 0
                    entry.starvation_level += 1
                    self.log.emit(
                        "demote",
                        now,
                        engine=self.model_id,
                        request_id=entry.request.request_id,
                        level=entry.starvation_level,
                        priority=entry.priority,
                    )

    def _on_stint_end(self, rr: RunningRequest, t: float) -> Completion:
        entry = rr.entry
        self.requests_served += 1
        self.log.emit(
            "complete",
            t,
            engine=self.model_id,
            request_id=entry.request.request_id,
            level=entry.starvation_level,
            priority=entry.priority,
            out_tokens=entry.out_tokens,
        )
        return Completion(entry.request, t, entry.out_tokens, entry.waited_ms)


class MlfqEngine(_BatchEngine):
    """Multi-level feedback queue engine (baseline discipline).

    New requests enter level 0; each quantum of served tokens demotes a
    request one level (bottom level recycles). Within a level, order is
    FIFO by the time the request entered that level. A request whose
    quantum expires is preempted at that refill boundary and re-queued;
    prefill is charged only on its first admission.
    """

    def __init__(
        self,
        profile: ModelProfile,
        levels: int = 3,
        quantum_tokens: int = 512,
        log: EventLog | None = None,
    ):
        if levels < 1:
            raise ValidationError(f"levels must be >= 1, got {levels}")
        if quantum_tokens < 1:
            raise ValidationError(f"quantum_tokens must be >= 1, got {quantum_tokens}")
        super().__init__(profile, log)
        self.levels = levels
        self.quantum_tokens = quantum_tokens
        self._heap: list[tuple[tuple, int]] = []
        self._queued: dict[int, MlfqEntry] = {}

    @property
    def waiting_count(self) -> int:
        return len(self._queued)

    def _make_entry(self, request, priority, out_tokens, now):
        if out_tokens < 0:
            raise ValidationError(f"out_tokens must be >= 0, got {out_tokens}")
        return MlfqEntry(
            request=request,
            arrival=now,
            seq=next(self._seq),
            out_tokens=out_tokens,
            remaining_tokens=out_tokens,
            level_entry_time=now,
            last_enqueue_time=now,
        )

    def _entry_level(self, entry):
        return entry.level

    def _entry_priority(self, entry):
        return float(entry.level)

    def _stint_tokens(self, entry):
        return min(self.quantum_tokens, entry.remaining_tokens)

    def _push(self, entry: MlfqEntry) -> None:
        self._queued[entry.seq] = entry
        heapq.heappush(self._heap, (entry.sort_key(), entry.seq))
        self.peak_queue_depth = max(self.peak_queue_depth, len(self._queued))

    def _pop_min(self) -> MlfqEntry | None:
        while self._heap:
            key, seq = heapq.heappop(self._heap)
            entry = self._queued.pop(seq, None)
            if entry is not None:
                return entry
        return None

    def _iterate(self, now: float) -> list[RunningRequest]:
        self.iterations += 1
        admitted: list[RunningRequest] = []
        while len(self.running) < self.profile.max_batch_size:
            entry = self._pop_min()
            if entry is None:
                break
            admitted.append(self._admit(entry, now))
        return admitted

    def _on_stint_end(self, rr: RunningRequest, t: float) -> Completion | None:
        entry = rr.entry
        entry.remaining_tokens -= rr.stint_tokens
        entry.emitted += rr.stint_tokens
        if entry.remaining_tokens <= 0:
            self.requests_served += 1
            self.log.emit(
                "complete",
                t,
                engine=self.model_id,
                request_id=entry.request.request_id,
                level=entry.level,
                priority=float(entry.level),
                out_tokens=entry.out_tokens,
            )
            return Completion(entry.request, t, entry.out_tokens, entry.waited_ms)
        entry.level = min(entry.level + 1, self.levels - 1)
        entry.level_entry_time = t
        entry.last_enqueue_time = t
        self._push(entry)
        self.log.emit(
            "preempt",
            t,
            engine=self.model_id,
            request_id=entry.request.request_id,
            level=entry.level,
            priority=float(entry.level),
        )
        return None
