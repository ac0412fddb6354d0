"""Per-model confidence scoring.

A router maps a request to a score in [0, 1] per pool model, estimating
how likely that model is to solve the request. Implementations here are
pluggable stand-ins fed from trace labels or lookup tables; all of them
are pure functions of their inputs (plus a fixed seed), so repeated calls
agree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import MissingTableEntry, ValidationError
from .profiles import Pool
from .seeding import stable_uniform
from .workload import Request, TraceRecord


@dataclass(frozen=True)
class ConfidenceVector:
    scores: dict[str, float]

    def __post_init__(self):
        for mid, q in self.scores.items():
            if not 0.0 <= q <= 1.0:
                raise ValidationError(f"score for {mid!r} outside [0,1]: {q}")

    def __getitem__(self, model_id: str) -> float:
        return self.scores[model_id]


class Router:
    """Base router. Subclasses implement `_score_one`."""

    name = "router"

    def score(self, req: Request, rec: TraceRecord, pool: Pool) -> ConfidenceVector:
        return ConfidenceVector(
            {mid: self._score_one(req, rec, mid) for mid in pool.model_ids}
        )

    def _score_one(self, req: Request, rec: TraceRecord, model_id: str) -> float:
        raise NotImplementedError


class OracleRouter(Router):
    """Returns the trace's per-model success label as 0.0 / 1.0."""

    name = "oracle"

    def _score_one(self, req, rec, model_id):
        return float(rec.success[model_id])


class ConstantRouter(Router):
    """Same score for every model; selection then depends only on load."""

    name = "constant"

    def __init__(self, value: float):
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"constant score must be in [0,1], got {value}")
        self.value = value

    def _score_one(self, req, rec, model_id):
        return self.value


class TableRouter(Router):
    """Looks up a fixed score per (model, difficulty)."""

    name = "table"

    def __init__(self, table: dict[str, dict[str, float]]):
        self.table = table

    def _score_one(self, req, rec, model_id):
        try:
            return float(self.table[model_id][rec.difficulty])
        except KeyError:
            raise MissingTableEntry(f"no score for ({model_id!r}, {rec.difficulty!r})")

    @classmethod
    def from_file(cls, path: str) -> "TableRouter":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))


class NoisyOracleRouter(Router):
    """Oracle labels flipped with a fixed probability.

    Flips are keyed on (seed, program, model) so the same request always
    sees the same corrupted label.
    """

    name = "noisy-oracle"

    def __init__(self, flip_probability: float, seed: int):
        if not 0.0 <= flip_probability <= 1.0:
            raise ValidationError("flip probability must be in [0,1]")
        self.flip_probability = flip_probability
        self.seed = seed

    def _score_one(self, req, rec, model_id):
        label = float(rec.success[model_id])
        if stable_uniform("router", self.seed, req.program_id, model_id) < self.flip_probability:
            return 1.0 - label
        return label


def build_router(spec: str, seed: int = 0) -> Router:
    """Build a router from a CLI spec string.

    Accepted forms: "oracle", "constant:V", "table:PATH", "noisy-oracle:P".
    """
    kind, _, arg = spec.partition(":")
    if kind == "oracle":
        return OracleRouter()
    if kind == "constant":
        return ConstantRouter(float(arg or 0.5))
    if kind == "table":
        if not arg:
            raise ValidationError("table router needs a path: table:PATH")
        return TableRouter.from_file(arg)
    if kind == "noisy-oracle":
        return NoisyOracleRouter(float(arg or 0.1), seed)
    raise ValidationError(f"unknown router spec {spec!r}")
