"""Reservation calendar and resource allocation engine.

Grants exclusive, time-windowed claims on EPS/SPD channels, enforcing the
non-conflict rule (a channel serves at most one user at any instant) and
per-user capacity (5 EPS, 4 SPD). A periodic tick routes channels at
window start and recovers them at window end; recoveries are applied
before allocations so back-to-back windows hand over within one tick.

The calendar is mutated by a single logical writer; callers serialize
submissions (the HTTP service funnels them through one lock).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import (
    AlreadyFinished,
    FabricInconsistency,
    MalformedRequest,
    UnknownReservation,
    UnknownUser,
)
from .fabric import (
    EPS_PER_USER,
    SPD_PER_USER,
    ChannelKind,
    FabricState,
    FabricSpec,
    check_user,
    reachable_channels,
    release_route,
    set_route,
)

ChannelRef = tuple[ChannelKind, int]

# fabric ops recorded in actions/journal: ("set", kind, channel, user) or
# ("release", kind, channel, None)
FabricOp = tuple[str, str, int, Optional[int]]


class ReservationStatus(str, Enum):
    PENDING = "pending"
    ACTIVE = "active"
    COMPLETED = "completed"
    CANCELLED = "cancelled"
    REJECTED = "rejected"


FINISHED = (ReservationStatus.COMPLETED, ReservationStatus.CANCELLED, ReservationStatus.REJECTED)


@dataclass(frozen=True)
class ReservationRequest:
    user: int
    resources: frozenset[ChannelRef]
    start_ms: int
    end_ms: int


@dataclass
class Reservation:
    id: str
    user: int
    resources: frozenset[ChannelRef]
    start_ms: int
    end_ms: int
    status: ReservationStatus

    def overlaps(self, start_ms: int, end_ms: int) -> bool:
        return self.start_ms < end_ms and start_ms < self.end_ms

    def contains(self, at_ms: int) -> bool:
        return self.start_ms <= at_ms < self.end_ms

    def count(self, kind: ChannelKind) -> int:
        return sum(1 for k, _ in self.resources if k is kind)

    def sorted_resources(self) -> list[ChannelRef]:
        return sorted(self.resources, key=lambda r: (r[0].value, r[1]))


@dataclass(frozen=True)
class SchedulerAction:
    kind: str                 # "allocate" | "recover"
    reservation_id: str
    ops: tuple[FabricOp, ...]
    at_ms: int


@dataclass
class SubmitResult:
    reservation: Optional[Reservation]
    reason: Optional[str] = None
    conflicts: tuple[str, ...] = ()

    @property
    def granted(self) -> bool:
        return self.reservation is not None


class Calendar:
    """All reservations, plus the bookkeeping of which are live on the fabric."""

    def __init__(self):
        self.reservations: dict[str, Reservation] = {}
        self.routed: set[str] = set()     # reservation ids currently holding routes
        self.last_tick_ms: int = -1
        self._seq = 0

    def next_id(self) -> str:
        self._seq += 1
        return f"r-{self._seq:06d}"

    def note_replayed_id(self, rid: str) -> None:
        """Keep the id sequence monotone when rebuilding from a journal."""
        try:
            self._seq = max(self._seq, int(rid.split("-")[-1]))
        except ValueError:
            pass

    def get(self, rid: str) -> Reservation:
        try:
            return self.reservations[rid]
        except KeyError:
            raise UnknownReservation(f"no reservation {rid!r}") from None

    def booked(self):
        """Reservations that count for conflicts/capacity (not cancelled/rejected)."""
        return (r for r in self.reservations.values() if r.status not in
                (ReservationStatus.CANCELLED, ReservationStatus.REJECTED))

    def by_user(self, user: int) -> list[Reservation]:
        return sorted((r for r in self.reservations.values() if r.user == user), key=lambda r: r.id)


def submit(calendar: Calendar, spec: FabricSpec, request: ReservationRequest, now_ms: int) -> SubmitResult:
    """Admit or reject a reservation request.

    Granted iff every requested channel is conflict-free over the window,
    the user's concurrent holdings stay within capacity, and every channel
    is reachable from the user's ports. Raises MalformedRequest for
    structurally invalid requests (bad user, empty resources, zero-length
    or already-elapsed windows).
    """
    try:
        check_user(request.user)
    except UnknownUser as exc:
        raise MalformedRequest(str(exc)) from None
    if not request.resources:
        raise MalformedRequest("resources must be non-empty")
    if request.end_ms <= request.start_ms:
        raise MalformedRequest("window end must be after start")
    if request.end_ms <= now_ms:
        raise MalformedRequest("window lies entirely in the past")

    # per-request capacity first: a request for six EPS channels is a
    # capacity rejection even though only five indices exist
    eps_req = sum(1 for k, _ in request.resources if k is ChannelKind.EPS)
    spd_req = sum(1 for k, _ in request.resources if k is ChannelKind.SPD)
    if eps_req > EPS_PER_USER or spd_req > SPD_PER_USER:
        return SubmitResult(None, reason="capacity")

    eps_ok, spd_ok = reachable_channels(spec, request.user)
    for kind, channel in request.resources:
        ok = eps_ok if kind is ChannelKind.EPS else spd_ok
        if channel not in ok:
            return SubmitResult(None, reason="unreachable")

    conflicts = set()
    for other in calendar.booked():
        if not other.overlaps(request.start_ms, request.end_ms):
            continue
        if other.resources & request.resources:
            conflicts.add(other.id)
    if conflicts:
        return SubmitResult(None, reason="conflict", conflicts=tuple(sorted(conflicts)))

    if not _capacity_ok(calendar, request):
        return SubmitResult(None, reason="capacity")

    status = ReservationStatus.ACTIVE if request.start_ms <= now_ms else ReservationStatus.PENDING
    res = Reservation(
        id=calendar.next_id(),
        user=request.user,
        resources=request.resources,
        start_ms=request.start_ms,
        end_ms=request.end_ms,
        status=status,
    )
    calendar.reservations[res.id] = res
    return SubmitResult(res)


def _capacity_ok(calendar: Calendar, request: ReservationRequest) -> bool:
    """Max concurrent per-kind holdings within the window stay <= (5, 4)."""
    mine = [r for r in calendar.booked()
            if r.user == request.user and r.overlaps(request.start_ms, request.end_ms)]
    probes = {request.start_ms}
    probes.update(r.start_ms for r in mine if request.start_ms < r.start_ms < request.end_ms)
    for at in probes:
        eps = sum(1 for k, _ in request.resources if k is ChannelKind.EPS)
        spd = sum(1 for k, _ in request.resources if k is ChannelKind.SPD)
        for r in mine:
            if r.contains(at):
                eps += r.count(ChannelKind.EPS)
                spd += r.count(ChannelKind.SPD)
        if eps > EPS_PER_USER or spd > SPD_PER_USER:
            return False
    return True


def tick(calendar: Calendar, fabric: FabricState, now_ms: int) -> tuple[FabricState, list[SchedulerAction]]:
    """Advance the clock: recover elapsed windows, then route due ones.

    Aborts without any mutation (FabricInconsistency) if a channel the
    calendar believes free is found routed, which indicates an
    out-of-band override colliding with a reservation.
    """
    if now_ms < calendar.last_tick_ms:
        raise MalformedRequest(f"tick clock went backwards: {now_ms} < {calendar.last_tick_ms}")

    recover_plan: list[tuple[Reservation, tuple[FabricOp, ...]]] = []
    allocate_plan: list[tuple[Reservation, tuple[FabricOp, ...]]] = []
    for rid in sorted(calendar.reservations):
        res = calendar.reservations[rid]
        if res.status in FINISHED:
            continue
        if res.end_ms <= now_ms:
            ops = tuple(
                ("release", k.value, c, None) for k, c in res.sorted_resources()
            ) if rid in calendar.routed else ()
            recover_plan.append((res, ops))
        elif res.start_ms <= now_ms and rid not in calendar.routed:
            ops = tuple(("set", k.value, c, res.user) for k, c in res.sorted_resources())
            allocate_plan.append((res, ops))

    # dry-run against a working copy so an inconsistency aborts cleanly
    working = fabric
    for _, ops in recover_plan:
        for _, kind, channel, _user in ops:
            working = release_route(working, ChannelKind(kind), channel)
    for res, ops in allocate_plan:
        for _, kind, channel, user in ops:
            if working.route_of(ChannelKind(kind), channel) is not None:
                raise FabricInconsistency(
                    f"{kind} channel {channel} is routed but reservation {res.id} expected it free"
                )
            working = set_route(working, ChannelKind(kind), channel, user)

    actions: list[SchedulerAction] = []
    for res, ops in recover_plan:
        res.status = ReservationStatus.COMPLETED
        calendar.routed.discard(res.id)
        actions.append(SchedulerAction("recover", res.id, ops, now_ms))
    for res, ops in allocate_plan:
        res.status = ReservationStatus.ACTIVE
        calendar.routed.add(res.id)
        actions.append(SchedulerAction("allocate", res.id, ops, now_ms))
    calendar.last_tick_ms = now_ms
    return working, actions


def cancel(calendar: Calendar, fabric: FabricState, rid: str, now_ms: int) -> tuple[FabricState, list[SchedulerAction]]:
    """Cancel a Pending or Active reservation; Active ones release immediately."""
    res = calendar.get(rid)
    if res.status in FINISHED:
        raise AlreadyFinished(f"reservation {rid} is {res.status.value}")
    actions: list[SchedulerAction] = []
    if rid in calendar.routed:
        ops = tuple(("release", k.value, c, None) for k, c in res.sorted_resources())
        for _, kind, channel, _user in ops:
            fabric = release_route(fabric, ChannelKind(kind), channel)
        calendar.routed.discard(rid)
        actions.append(SchedulerAction("recover", rid, ops, now_ms))
    res.status = ReservationStatus.CANCELLED
    return fabric, actions


def usage(calendar: Calendar, user: int, at_ms: int) -> tuple[int, int, tuple[str, ...]]:
    """Channels held by a user at an instant: (eps_count, spd_count, ids)."""
    check_user(user)
    eps = spd = 0
    ids = []
    for res in calendar.booked():
        if res.user == user and res.contains(at_ms):
            eps += res.count(ChannelKind.EPS)
            spd += res.count(ChannelKind.SPD)
            ids.append(res.id)
    return eps, spd, tuple(sorted(ids))
