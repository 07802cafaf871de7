import dataclasses
import json
import time
from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from qisp.config import load_default_config
from qisp.service import compensation_grid, create_app

USER_3 = {"Authorization": "Bearer demo-mse-3"}
USER_5 = {"Authorization": "Bearer demo-pas-1"}
ADMIN = {"Authorization": "Bearer demo-admin"}


class FakeClock:
    def __init__(self, start=1_000_000):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, ms):
        self.now += ms
        return self.now


@pytest.fixture
def harness(tmp_path):
    clock = FakeClock()
    cfg = dataclasses.replace(load_default_config(), journal_path=str(tmp_path / "journal.ndjson"))
    app = create_app(cfg, clock=clock, auto_tick=False)
    with TestClient(app) as client:
        yield client, clock, app.state.control


def reserve(client, headers, resources, start, end, user=None):
    body = {"resources": resources, "start_ms": start, "end_ms": end}
    if user is not None:
        body["user"] = user
    return client.post("/api/reservations", json=body, headers=headers)


def test_auth_required(harness):
    client, _, _ = harness
    assert client.get("/api/status").status_code == 401
    assert client.get("/api/status", headers={"Authorization": "Bearer nope"}).status_code == 401
    assert client.get("/api/status", headers=USER_3).status_code == 200


def test_create_reservation_roundtrip(harness):
    client, clock, _ = harness
    resp = reserve(client, USER_3, [{"kind": "eps", "channel": 2}], clock.now, clock.now + 60_000)
    assert resp.status_code == 201
    body = resp.json()
    assert body["user"] == 3
    assert body["status"] == "active"  # window already contains now
    listed = client.get("/api/reservations", headers=USER_3).json()
    assert [r["id"] for r in listed] == [body["id"]]


def test_conflicting_reservation_409(harness):
    client, clock, _ = harness
    first = reserve(client, USER_3, [{"kind": "eps", "channel": 2}], clock.now, clock.now + 60_000)
    second = reserve(client, USER_5, [{"kind": "eps", "channel": 2}],
                     clock.now + 30_000, clock.now + 90_000)
    assert second.status_code == 409
    body = second.json()
    assert body["reason"] == "conflict"
    assert body["conflicts"] == [first.json()["id"]]


def test_capacity_rejection_409(harness):
    client, clock, _ = harness
    resp = reserve(client, USER_3,
                   [{"kind": "eps", "channel": c} for c in range(1, 6)] + [{"kind": "eps", "channel": 6}],
                   clock.now, clock.now + 1000)
    assert resp.status_code == 409
    assert resp.json()["reason"] == "capacity"


def test_malformed_request_400(harness):
    client, clock, _ = harness
    resp = reserve(client, USER_3, [{"kind": "eps", "channel": 1}], clock.now + 100, clock.now + 100)
    assert resp.status_code == 400
    resp = reserve(client, USER_3, [], clock.now, clock.now + 100)
    assert resp.status_code == 400


def test_reserving_for_other_user_requires_admin(harness):
    client, clock, _ = harness
    resp = reserve(client, USER_3, [{"kind": "eps", "channel": 1}],
                   clock.now, clock.now + 1000, user=5)
    assert resp.status_code == 403
    resp = reserve(client, ADMIN, [{"kind": "eps", "channel": 1}],
                   clock.now, clock.now + 1000, user=5)
    assert resp.status_code == 201
    assert resp.json()["user"] == 5


def test_cancel_flow(harness):
    client, clock, _ = harness
    rid = reserve(client, USER_3, [{"kind": "eps", "channel": 2}],
                  clock.now, clock.now + 60_000).json()["id"]
    # another user cannot cancel it
    assert client.delete(f"/api/reservations/{rid}", headers=USER_5).status_code == 403
    resp = client.delete(f"/api/reservations/{rid}", headers=USER_3)
    assert resp.status_code == 200
    assert resp.json()["status"] == "cancelled"
    assert client.delete(f"/api/reservations/{rid}", headers=USER_3).status_code == 409
    assert client.delete("/api/reservations/r-999999", headers=USER_3).status_code == 404


def test_topology_and_fabric_views(harness):
    client, _, _ = harness
    topo = client.get("/api/topology", headers=USER_3).json()
    assert len(topo["nodes"]) == 18
    assert topo["terminal_users"]["1"] == "MSE-1"
    fabric = client.get("/api/fabric", headers=USER_3).json()
    assert len(fabric["eps_channels"]) == 5
    assert fabric["eps_channels"][1]["partner"] == 3
    assert all(ch["routed_to"] is None for ch in fabric["eps_channels"])


def test_admin_route_override(harness):
    client, _, _ = harness
    cmd = {"op": "set", "kind": "eps", "channel": 1, "user": 4}
    assert client.post("/api/admin/routes", json=cmd, headers=USER_3).status_code == 403
    resp = client.post("/api/admin/routes", json=cmd, headers=ADMIN)
    assert resp.status_code == 200
    assert resp.json()["eps"]["1"] == 4
    # group violation surfaces as 409
    bad = {"op": "set", "kind": "spd", "channel": 7, "user": 2}
    assert client.post("/api/admin/routes", json=bad, headers=ADMIN).status_code == 409


def test_status_frame_consistency(harness):
    client, clock, control = harness
    frame = client.get("/api/status", headers=USER_3).json()
    assert all(n["state"] in ("hub", "inactive") for n in frame["nodes"])
    reserve(client, USER_3, [{"kind": "eps", "channel": 2}, {"kind": "spd", "channel": 1}],
            clock.now, clock.now + 60_000)
    frame = client.get("/api/status", headers=USER_3).json()
    states = {n["id"]: n["state"] for n in frame["nodes"]}
    assert states["MSE-3"] == "active_both"
    assert {"source": "ECE", "dest": "MSE-3", "kind": "entangled_photons"} in frame["flows"]
    assert {"source": "MSE-3", "dest": "ECE", "kind": "single_photons_to_detector"} in frame["flows"]
    # expiry: after the window elapses, the node goes back to inactive on tick
    clock.advance(61_000)
    control.tick()
    frame = client.get("/api/status", headers=USER_3).json()
    assert {n["id"]: n["state"] for n in frame["nodes"]}["MSE-3"] == "inactive"
    assert frame["flows"] == []


@pytest.fixture
def live_server(tmp_path):
    # the in-process TestClient consumes bodies eagerly, so server-sent
    # events need a real server
    import socket
    import threading

    import uvicorn

    cfg = dataclasses.replace(
        load_default_config(), journal_path=str(tmp_path / "journal.ndjson"), tick_ms=50)
    app = create_app(cfg)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    server = uvicorn.Server(uvicorn.Config(app, log_level="error"))
    thread = threading.Thread(target=server.run, kwargs={"sockets": [sock]}, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise TimeoutError("server did not start")
        time.sleep(0.01)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


def test_status_stream_sse(live_server):
    import httpx

    now = int(time.time() * 1000)
    with httpx.Client(base_url=live_server, timeout=10.0) as client:
        with client.stream("GET", "/api/status/stream", headers=USER_3) as resp:
            assert resp.status_code == 200
            assert resp.headers["content-type"].startswith("text/event-stream")
            lines = resp.iter_lines()
            first = next(l for l in lines if l.startswith("data: "))
            snapshot = json.loads(first[6:])
            assert {n["id"]: n["state"] for n in snapshot["nodes"]}["MSE-3"] == "inactive"
            client.post("/api/reservations", headers=USER_3,
                        json={"resources": [{"kind": "eps", "channel": 2}],
                              "start_ms": now, "end_ms": now + 60_000})
            last_ts = snapshot["timestamp_ms"]
            for line in lines:
                if not line.startswith("data: "):
                    continue
                frame = json.loads(line[6:])
                assert frame["timestamp_ms"] >= last_ts  # monotone frames
                last_ts = frame["timestamp_ms"]
                if {n["id"]: n["state"] for n in frame["nodes"]}["MSE-3"] == "active_eps":
                    break
            else:
                raise AssertionError("never saw the node go active")


def test_measurement_requires_holdings(harness):
    client, clock, _ = harness
    job = {"kind": "histogram", "eps_pair": [2, 3], "signal_spd": 1, "idler_spd": 2, "pairs": 1000}
    resp = client.post("/api/measurements", json=job, headers=USER_3)
    assert resp.status_code == 403
    assert "not holding" in resp.json()["detail"]


def test_measurement_validation_422(harness):
    client, clock, _ = harness
    bad_pair = {"kind": "histogram", "eps_pair": [2, 4]}
    assert client.post("/api/measurements", json=bad_pair, headers=USER_3).status_code == 422
    same_spd = {"kind": "histogram", "eps_pair": [2, 3], "signal_spd": 1, "idler_spd": 1}
    assert client.post("/api/measurements", json=same_spd, headers=USER_3).status_code == 422
    tiny = {"kind": "histogram", "eps_pair": [2, 3], "pairs": 10}
    assert client.post("/api/measurements", json=tiny, headers=USER_3).status_code == 422


def wait_for_job(client, headers, mid, timeout_s=30.0):
    deadline = time.time() + timeout_s
    while time.time() < deadline:
        view = client.get(f"/api/measurements/{mid}", headers=headers).json()
        if view["state"] in ("done", "failed"):
            return view
        time.sleep(0.05)
    raise TimeoutError(f"job {mid} did not finish")


def test_histogram_measurement_pipeline(harness):
    client, clock, control = harness
    # hold the full channel set; switch latency elapses via the fake clock
    reserve(client, USER_3,
            [{"kind": "eps", "channel": 2}, {"kind": "eps", "channel": 3},
             {"kind": "spd", "channel": 1}, {"kind": "spd", "channel": 2}],
            clock.now, clock.now + 600_000)
    clock.advance(1000)
    control.tick()
    job = {"kind": "histogram", "eps_pair": [2, 3], "signal_spd": 1, "idler_spd": 2,
           "pairs": 20_000, "compensation_ps_nm": -19.4, "seed": 5}
    resp = client.post("/api/measurements", json=job, headers=USER_3)
    assert resp.status_code == 202
    mid = resp.json()["id"]
    # other users cannot read the job
    assert client.get(f"/api/measurements/{mid}", headers=USER_5).status_code == 403
    view = wait_for_job(client, USER_3, mid)
    assert view["state"] == "done", view.get("error")
    fit = view["result"]["fit"]
    assert fit["converged"]
    # fully compensated: jitter-limited peak near 160 ps
    assert abs(fit["fwhm_ps"] - 160.0) / 160.0 < 0.05
    assert view["result"]["metrics"]["coincidence_rate"] > 5000


def test_measurement_on_unrouted_channels_is_dark(harness):
    client, clock, control = harness
    reserve(client, USER_3,
            [{"kind": "eps", "channel": 2}, {"kind": "eps", "channel": 3},
             {"kind": "spd", "channel": 1}, {"kind": "spd", "channel": 2}],
            clock.now + 500_000, clock.now + 900_000)  # future window: not routed yet
    job = {"kind": "histogram", "eps_pair": [2, 3], "pairs": 1000}
    resp = client.post("/api/measurements", json=job, headers=USER_3)
    assert resp.status_code == 403  # no *active* holdings yet


def test_switch_latency_blinds_fresh_routes(harness):
    client, clock, control = harness
    reserve(client, USER_3,
            [{"kind": "eps", "channel": 2}, {"kind": "eps", "channel": 3},
             {"kind": "spd", "channel": 1}, {"kind": "spd", "channel": 2}],
            clock.now, clock.now + 600_000)
    # routes just actuated; inside switch_latency_ms the arms stay dark
    job = {"kind": "histogram", "eps_pair": [2, 3], "pairs": 5000, "seed": 1}
    mid = client.post("/api/measurements", json=job, headers=USER_3).json()["id"]
    view = wait_for_job(client, USER_3, mid)
    assert view["state"] == "done"
    hist_total = sum(view["result"]["histogram"]["counts"])
    # dark-count-only streams: essentially no coincidences in the window
    assert hist_total < 5


def test_sweep_measurement(harness):
    client, clock, control = harness
    reserve(client, USER_3,
            [{"kind": "eps", "channel": 2}, {"kind": "eps", "channel": 3},
             {"kind": "spd", "channel": 1}, {"kind": "spd", "channel": 2}],
            clock.now, clock.now + 600_000)
    clock.advance(1000)
    control.tick()
    job = {"kind": "dispersion_sweep", "compensation_from": -17.0, "compensation_to": -21.0,
           "compensation_step": 1.0, "pairs_per_point": 20_000, "seed": 9}
    resp = client.post("/api/measurements", json=job, headers=USER_3)
    assert resp.status_code == 202
    view = wait_for_job(client, USER_3, resp.json()["id"])
    assert view["state"] == "done", view.get("error")
    result = view["result"]
    assert len(result["points"]) == 5
    assert result["argmin_compensation_ps_nm"] in (-19.0, -20.0)


def test_unknown_measurement_404(harness):
    client, _, _ = harness
    assert client.get("/api/measurements/m-999999", headers=USER_3).status_code == 404


def test_measurement_results_expire(harness):
    client, clock, control = harness
    reserve(client, USER_3,
            [{"kind": "eps", "channel": 2}, {"kind": "eps", "channel": 3},
             {"kind": "spd", "channel": 1}, {"kind": "spd", "channel": 2}],
            clock.now, clock.now + 600_000)
    clock.advance(1000)
    control.tick()
    job = {"kind": "histogram", "eps_pair": [2, 3], "pairs": 1000, "seed": 2}
    mid = client.post("/api/measurements", json=job, headers=USER_3).json()["id"]
    wait_for_job(client, USER_3, mid)
    assert client.get(f"/api/measurements/{mid}", headers=USER_3).status_code == 200
    clock.advance(control.config.measurement_expiry_s * 1000 + 1)
    assert client.get(f"/api/measurements/{mid}", headers=USER_3).status_code == 404


def test_exactly_one_winner_under_concurrency(harness):
    client, clock, _ = harness
    start, end = clock.now + 100_000, clock.now + 200_000

    def fire(_):
        return reserve(client, USER_3, [{"kind": "eps", "channel": 4}], start, end).status_code

    with ThreadPoolExecutor(max_workers=16) as pool:
        codes = list(pool.map(fire, range(32)))
    assert codes.count(201) == 1
    assert codes.count(409) == 31


def test_journal_crash_restart(tmp_path):
    clock = FakeClock()
    cfg = dataclasses.replace(load_default_config(), journal_path=str(tmp_path / "journal.ndjson"))
    app = create_app(cfg, clock=clock, auto_tick=False)
    with TestClient(app) as client:
        rid = reserve(client, USER_3, [{"kind": "eps", "channel": 2}],
                      clock.now, clock.now + 600_000).json()["id"]
        frame = client.get("/api/status", headers=USER_3).json()
        assert frame["fabric"]["eps"]["2"] == 3
    # process "dies"; a new app replays the same journal
    app2 = create_app(cfg, clock=clock, auto_tick=False)
    with TestClient(app2) as client:
        listed = client.get("/api/reservations", headers=USER_3).json()
        assert [r["id"] for r in listed] == [rid]
        frame = client.get("/api/status", headers=USER_3).json()
        assert frame["fabric"]["eps"]["2"] == 3
        states = {n["id"]: n["state"] for n in frame["nodes"]}
        assert states["MSE-3"] == "active_eps"


def test_endpoint_latency_within_tick(harness):
    # self-imposed responsiveness bound: control-path endpoints answer
    # well inside the default 100 ms tick period
    client, clock, _ = harness
    reserve(client, USER_3, [{"kind": "eps", "channel": 2}], clock.now, clock.now + 60_000)
    samples = []
    for _ in range(50):
        t0 = time.perf_counter()
        assert client.get("/api/status", headers=USER_3).status_code == 200
        samples.append(time.perf_counter() - t0)
    samples.sort()
    assert samples[int(0.95 * len(samples))] < 0.1


def test_compensation_grid():
    assert compensation_grid(0.0, -22.0, 1.0) == [float(-k) for k in range(23)]
    assert compensation_grid(0.0, 0.0, 1.0) == [0.0]
    assert compensation_grid(-5.0, -3.0, 1.0) == [-5.0, -4.0, -3.0]
    with pytest.raises(ValueError):
        compensation_grid(0.0, -5.0, 0.0)
