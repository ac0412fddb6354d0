"""Per-model capacity and latency parameters.

Profiles are loaded once per run and shared read-only by the load
estimator and the engine simulators. Decode rate and batch capacity are
the knobs the load formula depends on; prefill is a one-shot cost charged
when a request first enters a running batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class ModelProfile:
    model_id: str
    decode_ms_per_token: float
    max_batch_size: int
    prefill_ms_per_token: float = 0.0

    def __post_init__(self):
        if self.decode_ms_per_token <= 0:
            raise ValidationError(
                f"{self.model_id}: decode_ms_per_token must be > 0, "
                f"got {self.decode_ms_per_token}"
            )
        if self.max_batch_size < 1:
            raise ValidationError(
                f"{self.model_id}: max_batch_size must be >= 1, got {self.max_batch_size}"
            )
        if self.prefill_ms_per_token < 0:
            raise ValidationError(
                f"{self.model_id}: prefill_ms_per_token must be >= 0"
            )


@dataclass(frozen=True)
class Pool:
    """The heterogeneous model set served by one run. Immutable."""

    profiles: tuple[ModelProfile, ...]
    quality_order: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.profiles:
            raise ValidationError("pool must contain at least one model")
        ids = [p.model_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate model ids in pool: {ids}")
        if self.quality_order is not None and set(self.quality_order) != set(ids):
            raise ValidationError("quality_order must list exactly the pool's model ids")

    @property
    def model_ids(self) -> list[str]:
        """Model ids in lexicographic order (the tie-break order everywhere)."""
        return sorted(p.model_id for p in self.profiles)

    def __getitem__(self, model_id: str) -> ModelProfile:
        for p in self.profiles:
            if p.model_id == model_id:
                return p
        raise KeyError(model_id)

    def __contains__(self, model_id: str) -> bool:
        return any(p.model_id == model_id for p in self.profiles)

    def __len__(self) -> int:
        return len(self.profiles)


def pool_from_profiles(profiles: list[ModelProfile]) -> Pool:
    return Pool(tuple(profiles))


def load_pool(path: str) -> Pool:
    """Load a pool config file (JSON: {"models": [...], "quality_order": [...]})."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.lineno, f"invalid JSON: {exc.msg}")
    if not isinstance(obj, dict) or "models" not in obj:
        raise ValidationError(f"{path}: expected an object with a 'models' list")
    profiles = []
    for m in obj["models"]:
        try:
            profiles.append(
                ModelProfile(
                    model_id=str(m["model_id"]),
                    decode_ms_per_token=float(m["decode_ms_per_token"]),
                    max_batch_size=int(m["max_batch_size"]),
                    prefill_ms_per_token=float(m.get("prefill_ms_per_token", 0.0)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: bad model entry {m!r}: {exc}")
    qo = obj.get("quality_order")
    return Pool(tuple(profiles), tuple(qo) if qo else None)


def parse_model_flag(spec: str) -> ModelProfile:
    """Parse the CLI shorthand 'id:decode_ms:batch[:prefill_ms]'."""
    parts = spec.split(":")
    if len(parts) not in (3, 4):
        raise ValidationError(
            f"bad --model spec {spec!r} (want id:decode_ms_per_token:max_batch[:prefill_ms])"
        )
    try:
        return ModelProfile(
            model_id=parts[0],
            decode_ms_per_token=float(parts[1]),
            max_batch_size=int(parts[2]),
            prefill_ms_per_token=float(parts[3]) if len(parts) == 4 else 0.0,
        )
    except ValueError as exc:
        raise ValidationError(f"bad --model spec {spec!r}: {exc}")
