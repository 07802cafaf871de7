"""HTTP control plane: reservations, routing, live status, measurements.

A single ``ControlPlane`` owns the calendar, the fabric snapshot and the
journal; every mutation funnels through its lock (linearizable submit).
Read paths serve from the latest committed snapshot. Measurement jobs run
the simulation pipeline on a small worker pool, bound to whatever the
fabric routes at job start — an unrouted channel measures nothing but its
detector's dark counts, just like pointing a real time tagger at a dark
fiber.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse

from . import analysis, photonics, scheduler, topology as topo_mod
from .config import Role, ServiceConfig, UserAccount, load_default_config
from .errors import (
    AlreadyFinished,
    ChannelOccupied,
    FabricInconsistency,
    GroupViolation,
    MalformedRequest,
    NonConvergence,
    QispError,
    UnknownChannel,
    UnknownReservation,
    UnknownUser,
)
from .fabric import ChannelKind, FabricState, release_route, set_route
from .journal import Journal, replay
from .models import (
    MeasurementAccepted,
    MeasurementCreate,
    MeasurementView,
    RejectionView,
    ReservationCreate,
    ReservationView,
    ResourceRef,
    RouteCommand,
    StatusFrameView,
)
from .scheduler import Calendar, Reservation, ReservationRequest, ReservationStatus, SubmitResult

log = logging.getLogger("qisp.service")


def wall_clock_ms() -> int:
    return int(time.time() * 1000)


@dataclass
class MeasurementJob:
    id: str
    owner: int
    kind: str
    params: dict
    state: str = "queued"          # queued | running | done | failed
    result: Optional[dict] = None
    error: Optional[str] = None
    created_ms: int = 0


class ControlPlane:
    """Single-writer core shared by all request handlers."""

    def __init__(self, config: ServiceConfig, *, clock=None, journal_enabled: bool = True):
        self.config = config
        self.clock = clock or wall_clock_ms
        self.lock = threading.RLock()
        self.journal: Optional[Journal] = None
        if journal_enabled:
            path = Path(config.journal_path)
            if path.exists():
                self.calendar, self.fabric = replay(path, config.fabric)
                log.info("journal replay: %d reservations, %d routed",
                         len(self.calendar.reservations), len(self.calendar.routed))
            else:
                self.calendar, self.fabric = Calendar(), FabricState.empty(config.fabric)
            self.journal = Journal(path)
        else:
            self.calendar, self.fabric = Calendar(), FabricState.empty(config.fabric)
        # ms timestamp of the last route change per channel; replayed routes
        # count as long-settled
        self.routed_at: dict[tuple[str, int], int] = {}
        self.subscribers: list[queue.SimpleQueue] = []
        self._job_seq = itertools.count(1)
        self.jobs: dict[str, MeasurementJob] = {}

    def now(self) -> int:
        return self.clock()

    # -- mutations -----------------------------------------------------------

    def submit(self, user: int, resources: frozenset, start_ms: int, end_ms: int) -> SubmitResult:
        request = ReservationRequest(user=user, resources=resources, start_ms=start_ms, end_ms=end_ms)
        with self.lock:
            now = self.now()
            result = scheduler.submit(self.calendar, self.config.fabric, request, now)
            if result.granted and self.journal:
                self.journal.grant(result.reservation)
            if result.granted:
                log.info("grant %s user=%d window=[%d,%d)", result.reservation.id, user, start_ms, end_ms)
                try:
                    self.tick(now)  # route immediately-active windows without waiting
                except FabricInconsistency:
                    pass  # grant stands; routing resumes once the override is released
        return result

    def tick(self, now: Optional[int] = None) -> list:
        with self.lock:
            at = self.now() if now is None else now
            try:
                fabric, actions = scheduler.tick(self.calendar, self.fabric, at)
            except FabricInconsistency as exc:
                log.error("tick aborted: %s", exc)
                raise
            self.fabric = fabric
            for action in actions:
                if self.journal:
                    self.journal.action(action)
                for op, kind, channel, _user in action.ops:
                    if op == "set":
                        self.routed_at[(kind, channel)] = at
                    else:
                        self.routed_at.pop((kind, channel), None)
                log.info("%s %s at %d", action.kind, action.reservation_id, at)
            self._publish()
            return actions

    def cancel(self, rid: str, requester: UserAccount) -> Reservation:
        with self.lock:
            res = self.calendar.get(rid)
            if res.user != requester.user and requester.role is not Role.ADMIN:
                raise PermissionError(f"reservation {rid} belongs to user {res.user}")
            now = self.now()
            self.fabric, actions = scheduler.cancel(self.calendar, self.fabric, rid, now)
            if self.journal:
                for action in actions:
                    self.journal.action(action)
                self.journal.cancel(rid, now)
            for action in actions:
                for _op, kind, channel, _user in action.ops:
                    self.routed_at.pop((kind, channel), None)
            log.info("cancel %s at %d", rid, now)
            self._publish()
            return res

    def admin_route(self, op: str, kind: ChannelKind, channel: int, user: Optional[int]) -> None:
        with self.lock:
            now = self.now()
            if op == "set":
                self.fabric = set_route(self.fabric, kind, channel, user)
                self.routed_at[(kind.value, channel)] = now
            else:
                self.fabric = release_route(self.fabric, kind, channel)
                self.routed_at.pop((kind.value, channel), None)
            if self.journal:
                self.journal.override(op, kind.value, channel, user, now)
            log.info("override %s %s %d -> %s", op, kind.value, channel, user)
            self._publish()

    # -- status --------------------------------------------------------------

    def status_frame(self, now: Optional[int] = None) -> dict:
        with self.lock:
            at = self.now() if now is None else now
            topo = self.config.topology
            user_terminal = topo.terminal_users()
            active_kinds: dict[int, set[str]] = {}
            status_counts = {s.value: 0 for s in ReservationStatus}
            for res in self.calendar.reservations.values():
                status_counts[res.status.value] += 1
                if res.status is ReservationStatus.ACTIVE:
                    kinds = active_kinds.setdefault(res.user, set())
                    for k, _ in res.resources:
                        kinds.add(k.value)
            nodes = []
            for node in topo.nodes:
                if node.kind is not topo_mod.NodeKind.TERMINAL:
                    nodes.append({"id": node.id, "user": None, "state": "hub"})
                    continue
                user = topo.user_of(node.id)
                kinds = active_kinds.get(user, set())
                if "eps" in kinds and "spd" in kinds:
                    state = "active_both"
                elif "eps" in kinds:
                    state = "active_eps"
                elif "spd" in kinds:
                    state = "active_spd"
                else:
                    state = "inactive"
                nodes.append({"id": node.id, "user": user, "state": state})
            hub_id = topo.central_hub.id
            flows = set()
            for i, user in enumerate(self.fabric.eps_routes):
                node_id = user_terminal.get(user) if user else None
                if node_id:
                    flows.add((hub_id, node_id, "entangled_photons"))
            for i, user in enumerate(self.fabric.spd_routes):
                node_id = user_terminal.get(user) if user else None
                if node_id:
                    flows.add((node_id, hub_id, "single_photons_to_detector"))
            return {
                "timestamp_ms": at,
                "nodes": nodes,
                "flows": [
                    {"source": s, "dest": d, "kind": k}
                    for s, d, k in sorted(flows)
                ],
                "fabric": {
                    "eps": {str(i + 1): u for i, u in enumerate(self.fabric.eps_routes)},
                    "spd": {str(i + 1): u for i, u in enumerate(self.fabric.spd_routes)},
                },
                "reservations": status_counts,
            }

    def subscribe(self) -> queue.SimpleQueue:
        q: queue.SimpleQueue = queue.SimpleQueue()
        with self.lock:
            self.subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.SimpleQueue) -> None:
        with self.lock:
            if q in self.subscribers:
                self.subscribers.remove(q)

    def _publish(self) -> None:
        if not self.subscribers:
            return
        frame = self.status_frame()
        for q in list(self.subscribers):
            q.put(frame)

    # -- measurement binding ---------------------------------------------------

    def holdings_of(self, user: int) -> frozenset:
        with self.lock:
            held = set()
            for res in self.calendar.reservations.values():
                if res.user == user and res.status is ReservationStatus.ACTIVE:
                    held.update(res.resources)
            return frozenset(held)

    def arm_for_channel(self, eps_channel: int, compensation: float, at: int) -> photonics.ArmConfig:
        """Bind a source channel to the fiber path of whoever it routes to.

        Unrouted channels — and routes younger than the switch actuation
        latency — get an opaque arm, so only dark counts come back.
        """
        user = self.fabric.route_of(ChannelKind.EPS, eps_channel)
        routed_at = self.routed_at.get(("eps", eps_channel), 0)
        live = user is not None and at - routed_at >= self.config.switch_latency_ms
        terminal = self.config.topology.terminal_users().get(user) if live else None
        if terminal is None:
            dark = topo_mod.synthetic_path(1e-12)
            return photonics.ArmConfig(dark, compensation_ps_nm=0.0, extra_loss_db=math.inf)
        path = topo_mod.path_to(self.config.topology, terminal)
        return photonics.ArmConfig(path, compensation_ps_nm=compensation)

    def close(self) -> None:
        if self.journal:
            self.journal.close()


class Ticker(threading.Thread):
    def __init__(self, control: ControlPlane, period_s: float):
        super().__init__(name="qisp-ticker", daemon=True)
        self.control = control
        self.period_s = period_s
        self.stop_event = threading.Event()

    def run(self) -> None:
        while not self.stop_event.wait(self.period_s):
            try:
                self.control.tick()
            except FabricInconsistency:
                pass  # already logged; an operator has to release the override


# --- measurement pipeline ----------------------------------------------------


def _fit_to_dict(fit: Optional[analysis.GaussianFit]) -> Optional[dict]:
    if fit is None:
        return None
    return {
        "amplitude": fit.amplitude,
        "center_ps": fit.center_ps,
        "sigma_ps": fit.sigma_ps,
        "baseline": fit.baseline,
        "fwhm_ps": fit.fwhm_ps,
        "fwhm_uncertainty_ps": fit.fwhm_uncertainty_ps,
        "converged": fit.converged,
        "residual_norm": fit.residual_norm,
    }


def run_measurement(control: ControlPlane, job: MeasurementJob) -> dict:
    """Execute one job against the routing bound at call time."""
    with control.lock:
        at = control.now()
        params = job.params
        eps_pair = params["eps_pair"]
        signal_arm = control.arm_for_channel(eps_pair[0], params.get("compensation_ps_nm", 0.0), at)
        idler_arm = control.arm_for_channel(eps_pair[1], 0.0, at)
        cfg = control.config
    scenario = analysis.SweepScenario(
        source=cfg.source,
        channel_pair=(cfg.fabric.eps(eps_pair[0]), cfg.fabric.eps(eps_pair[1])),
        signal_arm=signal_arm,
        idler_arm=idler_arm,
        signal_detector=cfg.fabric.spd(params["signal_spd"]),
        idler_detector=cfg.fabric.spd(params["idler_spd"]),
        tagger=cfg.tagger,
        bin_width_ps=params["bin_width_ps"],
        window_ps=params["window_ps"],
    )
    if job.kind == "histogram":
        hist = analysis.correlation_histogram(scenario, params["pairs"], params["seed"])
        fit = fit_error = None
        try:
            fit = analysis.fit_gaussian(hist)
        except NonConvergence as exc:
            fit, fit_error = exc.fit, str(exc)
        except QispError as exc:
            fit_error = str(exc)
        metrics = None
        if hist.counts.sum() > 0:
            center = fit.center_ps if fit is not None else None
            m = analysis.coincidence_metrics(hist, params["peak_halfwidth_ps"], center_ps=center)
            metrics = {
                "coincidence_rate": m.coincidence_rate,
                "accidental_rate": m.accidental_rate,
                "car": None if math.isinf(m.car) else m.car,
                "car_infinite": math.isinf(m.car),
            }
        return {
            "histogram": {
                "bin_width_ps": hist.bin_width_ps,
                "lo_ps": hist.lo_ps,
                "hi_ps": hist.hi_ps,
                "counts": hist.counts.tolist(),
                "total_pairs_examined": hist.total_pairs_examined,
            },
            "fit": _fit_to_dict(fit),
            "fit_error": fit_error,
            "metrics": metrics,
        }
    # dispersion sweep
    comps = compensation_grid(params["compensation_from"], params["compensation_to"],
                              params["compensation_step"])
    result = analysis.run_dispersion_sweep(scenario, comps, params["pairs_per_point"], params["seed"])
    return {
        "points": [
            {
                "compensation_ps_nm": p.compensation_ps_nm,
                "fwhm_ps": p.fit.fwhm_ps if p.fit and p.fit.converged else None,
                "fwhm_err_ps": p.fit.fwhm_uncertainty_ps if p.fit and p.fit.converged else None,
                "center_ps": p.fit.center_ps if p.fit and p.fit.converged else None,
                "converged": bool(p.fit and p.fit.converged),
            }
            for p in result.points
        ],
        "argmin_compensation_ps_nm": result.argmin_compensation_ps_nm,
    }


def compensation_grid(start: float, stop: float, step: float) -> list[float]:
    """Inclusive grid from start towards stop; direction follows the sign
    of (stop - start). start == stop gives a single point."""
    if step <= 0:
        raise ValueError("step must be > 0")
    if stop == start:
        return [start]
    direction = 1.0 if stop > start else -1.0
    values = []
    k = 0
    while True:
        v = start + direction * step * k
        if (v - stop) * direction > 1e-9:
            break
        values.append(round(v, 9))
        k += 1
    return values


# --- FastAPI wiring ----------------------------------------------------------


def create_app(
    config: Optional[ServiceConfig] = None,
    *,
    clock=None,
    auto_tick: bool = True,
    journal_enabled: bool = True,
    workers: int = 4,
) -> FastAPI:
    cfg = config or load_default_config()
    control = ControlPlane(cfg, clock=clock, journal_enabled=journal_enabled)
    executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="qisp-measure")

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        ticker: Optional[Ticker] = None
        if auto_tick and cfg.tick_ms > 0:
            ticker = Ticker(control, cfg.tick_ms / 1000.0)
            ticker.start()
        try:
            yield
        finally:
            if ticker is not None:
                ticker.stop_event.set()
                ticker.join(timeout=2.0)
            executor.shutdown(wait=False, cancel_futures=True)
            control.close()

    app = FastAPI(title="qisp control plane", version="0.1.0", lifespan=lifespan)
    app.state.control = control
    app.state.executor = executor
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def require_account(request: Request) -> UserAccount:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        account = cfg.account_for_token(header[7:].strip())
        if account is None:
            raise HTTPException(status_code=401, detail="unknown token")
        return account

    def require_admin(account: UserAccount = Depends(require_account)) -> UserAccount:
        if account.role is not Role.ADMIN:
            raise HTTPException(status_code=403, detail="admin role required")
        return account

    def reservation_view(res: Reservation) -> ReservationView:
        return ReservationView(
            id=res.id,
            user=res.user,
            resources=[ResourceRef(kind=k.value, channel=c) for k, c in res.sorted_resources()],
            start_ms=res.start_ms,
            end_ms=res.end_ms,
            status=res.status.value,
        )

    @app.post("/api/reservations", status_code=201, response_model=ReservationView,
              responses={409: {"model": RejectionView}})
    def create_reservation(body: ReservationCreate, account: UserAccount = Depends(require_account)):
        user = body.user if body.user is not None else account.user
        if user != account.user and account.role is not Role.ADMIN:
            raise HTTPException(status_code=403, detail="cannot reserve for another user")
        if not body.resources:
            raise HTTPException(status_code=400, detail="resources must be non-empty")
        resources = frozenset((ChannelKind(r.kind), r.channel) for r in body.resources)
        try:
            result = control.submit(user, resources, body.start_ms, body.end_ms)
        except MalformedRequest as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if not result.granted:
            return Response(
                content=RejectionView(reason=result.reason, conflicts=list(result.conflicts)).model_dump_json(),
                status_code=409,
                media_type="application/json",
            )
        return reservation_view(result.reservation)

    @app.get("/api/reservations", response_model=list[ReservationView])
    def list_reservations(user: Optional[int] = None, account: UserAccount = Depends(require_account)):
        target = user if user is not None else account.user
        if target != account.user and account.role is not Role.ADMIN:
            raise HTTPException(status_code=403, detail="cannot list another user's reservations")
        with control.lock:
            return [reservation_view(r) for r in control.calendar.by_user(target)]

    @app.delete("/api/reservations/{rid}", response_model=ReservationView)
    def delete_reservation(rid: str, account: UserAccount = Depends(require_account)):
        try:
            res = control.cancel(rid, account)
        except UnknownReservation as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except AlreadyFinished as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except PermissionError as exc:
            raise HTTPException(status_code=403, detail=str(exc))
        return reservation_view(res)

    @app.get("/api/topology")
    def get_topology(account: UserAccount = Depends(require_account)):
        topo = cfg.topology
        return {
            "nodes": [
                {
                    "id": n.id,
                    "kind": n.kind.value,
                    "building": n.building,
                    "position": list(n.display_position),
                    "user": topo.user_of(n.id),
                }
                for n in topo.nodes
            ],
            "links": [
                {"a": l.a, "b": l.b, "length_km": l.length_km}
                for l in topo.links
            ],
            "terminal_users": {str(u): nid for u, nid in topo.terminal_users().items()},
        }

    @app.get("/api/fabric")
    def get_fabric(account: UserAccount = Depends(require_account)):
        with control.lock:
            fabric = control.fabric
            return {
                "eps_channels": [
                    {
                        "index": ch.index,
                        "center_nm": ch.center_nm,
                        "bandwidth_nm": ch.bandwidth_nm,
                        "partner": ch.partner,
                        "routed_to": fabric.route_of(ChannelKind.EPS, ch.index),
                    }
                    for ch in cfg.fabric.eps_channels
                ],
                "spd_channels": [
                    {
                        "index": ch.index,
                        "group": ch.group.value,
                        "efficiency": ch.efficiency,
                        "routed_to": fabric.route_of(ChannelKind.SPD, ch.index),
                    }
                    for ch in cfg.fabric.spd_channels
                ],
            }

    @app.post("/api/admin/routes")
    def admin_routes(body: RouteCommand, account: UserAccount = Depends(require_admin)):
        try:
            control.admin_route(body.op, ChannelKind(body.kind), body.channel, body.user)
        except (ChannelOccupied, GroupViolation) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except (UnknownChannel, UnknownUser) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        with control.lock:
            return {
                "eps": {str(i + 1): u for i, u in enumerate(control.fabric.eps_routes)},
                "spd": {str(i + 1): u for i, u in enumerate(control.fabric.spd_routes)},
            }

    @app.get("/api/status", response_model=StatusFrameView)
    def get_status(account: UserAccount = Depends(require_account)):
        return control.status_frame()

    @app.get("/api/status/stream")
    def stream_status(account: UserAccount = Depends(require_account)):
        def gen():
            q = control.subscribe()
            try:
                yield f"data: {json.dumps(control.status_frame())}\n\n"
                while True:
                    try:
                        frame = q.get(timeout=15.0)
                        yield f"data: {json.dumps(frame)}\n\n"
                    except queue.Empty:
                        yield ": keepalive\n\n"
            finally:
                control.unsubscribe(q)

        return StreamingResponse(gen(), media_type="text/event-stream")

    @app.post("/api/measurements", status_code=202, response_model=MeasurementAccepted)
    def create_measurement(body: MeasurementCreate, account: UserAccount = Depends(require_account)):
        params = body.model_dump()
        try:
            pair = cfg.fabric.eps(params["eps_pair"][0]), cfg.fabric.eps(params["eps_pair"][1])
            cfg.fabric.spd(params["signal_spd"])
            cfg.fabric.spd(params["idler_spd"])
        except UnknownChannel as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        if pair[0].partner != pair[1].index:
            raise HTTPException(status_code=422, detail="eps_pair must be a correlated channel pair")
        if params["signal_spd"] == params["idler_spd"]:
            raise HTTPException(status_code=422, detail="signal and idler detectors must differ")
        needed = {
            (ChannelKind.EPS, params["eps_pair"][0]),
            (ChannelKind.EPS, params["eps_pair"][1]),
            (ChannelKind.SPD, params["signal_spd"]),
            (ChannelKind.SPD, params["idler_spd"]),
        }
        held = control.holdings_of(account.user)
        missing = needed - held
        if missing:
            pretty = ", ".join(f"{k.value} {c}" for k, c in sorted(missing, key=lambda r: (r[0].value, r[1])))
            raise HTTPException(status_code=403, detail=f"not holding active reservations for: {pretty}")
        job = MeasurementJob(
            id=f"m-{next(control._job_seq):06d}",
            owner=account.user,
            kind=params["kind"],
            params=params,
            created_ms=control.now(),
        )
        control.jobs[job.id] = job

        def work():
            job.state = "running"
            try:
                job.result = run_measurement(control, job)
                job.state = "done"
            except Exception as exc:  # report, never crash the pool
                job.error = str(exc)
                job.state = "failed"
                log.exception("measurement %s failed", job.id)

        executor.submit(work)
        return MeasurementAccepted(id=job.id, kind=job.kind, state=job.state)

    @app.get("/api/measurements/{mid}", response_model=MeasurementView)
    def get_measurement(mid: str, account: UserAccount = Depends(require_account)):
        job = control.jobs.get(mid)
        if job is not None and control.now() - job.created_ms > cfg.measurement_expiry_s * 1000:
            control.jobs.pop(mid, None)
            job = None
        if job is None:
            raise HTTPException(status_code=404, detail=f"no measurement {mid!r}")
        if job.owner != account.user and account.role is not Role.ADMIN:
            raise HTTPException(status_code=403, detail="not the job owner")
        return MeasurementView(
            id=job.id, kind=job.kind, owner=job.owner, state=job.state,
            created_ms=job.created_ms, result=job.result, error=job.error,
        )

    return app
