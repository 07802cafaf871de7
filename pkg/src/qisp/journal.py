"""Append-only NDJSON journal and crash-recovery replay.

One record per grant / cancel / scheduler action / admin override. Grants,
cancels and overrides are fsync'd before the caller acknowledges them;
tick action records are flushed but not synced — losing a tail action is
self-healing on replay (the next tick re-routes or recovers).

A torn final line (crash mid-write) is ignored on replay.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .errors import ValidationError
from .fabric import ChannelKind, FabricSpec, FabricState, release_route, set_route
from .scheduler import Calendar, Reservation, ReservationStatus, SchedulerAction


class Journal:
    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "ab")

    def append(self, record: dict, durable: bool = True) -> int:
        """Write one record; returns the byte offset after it lands."""
        line = json.dumps(record, separators=(",", ":")) + "\n"
        self._fh.write(line.encode("utf-8"))
        self._fh.flush()
        if durable:
            os.fsync(self._fh.fileno())
        return self._fh.tell()

    def grant(self, res: Reservation) -> int:
        return self.append({
            "t": "grant",
            "id": res.id,
            "user": res.user,
            "resources": [[k.value, c] for k, c in res.sorted_resources()],
            "start_ms": res.start_ms,
            "end_ms": res.end_ms,
            "status": res.status.value,
        })

    def cancel(self, rid: str, at_ms: int) -> int:
        return self.append({"t": "cancel", "id": rid, "at": at_ms})

    def action(self, action: SchedulerAction) -> int:
        return self.append({
            "t": "action",
            "kind": action.kind,
            "id": action.reservation_id,
            "ops": [list(op) for op in action.ops],
            "at": action.at_ms,
        }, durable=False)

    def override(self, op: str, kind: str, channel: int, user: int | None, at_ms: int) -> int:
        return self.append({
            "t": "override", "op": op, "kind": kind,
            "channel": channel, "user": user, "at": at_ms,
        })

    def close(self) -> None:
        self._fh.close()


def read_records(path: str | os.PathLike) -> list[dict]:
    """All complete records in order; a torn trailing line is dropped."""
    records = []
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        return records
    for line in raw.split(b"\n"):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            break  # torn tail: ignore it and everything after
    return records


def replay(path: str | os.PathLike, spec: FabricSpec) -> tuple[Calendar, FabricState]:
    """Rebuild calendar and fabric routing state from the journal."""
    calendar = Calendar()
    fabric = FabricState.empty(spec)
    for rec in read_records(path):
        t = rec.get("t")
        if t == "grant":
            res = Reservation(
                id=rec["id"],
                user=rec["user"],
                resources=frozenset((ChannelKind(k), c) for k, c in rec["resources"]),
                start_ms=rec["start_ms"],
                end_ms=rec["end_ms"],
                status=ReservationStatus(rec["status"]),
            )
            calendar.reservations[res.id] = res
            calendar.note_replayed_id(res.id)
        elif t == "cancel":
            res = calendar.reservations.get(rec["id"])
            if res is not None:
                res.status = ReservationStatus.CANCELLED
                calendar.routed.discard(res.id)
        elif t == "action":
            res = calendar.reservations.get(rec["id"])
            if res is None:
                raise ValidationError(f"journal action for unknown reservation {rec['id']!r}")
            for op, kind, channel, user in rec["ops"]:
                if op == "set":
                    fabric = set_route(fabric, ChannelKind(kind), channel, user)
                else:
                    fabric = release_route(fabric, ChannelKind(kind), channel)
            if rec["kind"] == "allocate":
                res.status = ReservationStatus.ACTIVE
                calendar.routed.add(res.id)
            else:
                if res.status is not ReservationStatus.CANCELLED:
                    res.status = ReservationStatus.COMPLETED
                calendar.routed.discard(res.id)
            calendar.last_tick_ms = max(calendar.last_tick_ms, rec["at"])
        elif t == "override":
            if rec["op"] == "set":
                fabric = set_route(fabric, ChannelKind(rec["kind"]), rec["channel"], rec["user"])
            else:
                fabric = release_route(fabric, ChannelKind(rec["kind"]), rec["channel"])
        else:
            raise ValidationError(f"unknown journal record type {t!r}")
    return calendar, fabric
