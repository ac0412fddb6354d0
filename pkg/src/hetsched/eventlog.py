"""Structured run event log.

Every scheduling decision, queue transition, and completion is recorded
as a flat dict. Serialization sorts keys and uses compact separators so
identical runs produce byte-identical files.
"""

from __future__ import annotations

import json


class EventLog:
    def __init__(self):
        self.events: list[dict] = []

    def emit(self, kind: str, time: float, **fields) -> None:
        ev = {"kind": kind, "t": time}
        ev.update(fields)
        self.events.append(ev)

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]

    def to_ndjson(self) -> str:
        return "".join(
            json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n"
            for e in self.events
        )

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_ndjson())

    def __len__(self) -> int:
        return len(self.events)
