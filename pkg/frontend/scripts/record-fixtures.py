#!/usr/bin/env python3
"""Record API fixtures for the dashboard tests from the real service.

Spins the control plane in-process with a fake clock so the captured
frames are reproducible, drives it through a deterministic scenario, and
dumps the raw JSON responses under test/fixtures/.
"""

import dataclasses
import json
import sys
import time
from pathlib import Path

from fastapi.testclient import TestClient

from qisp.config import load_default_config
from qisp.service import create_app

FIXTURES = Path(__file__).resolve().parent.parent / "test" / "fixtures"

USER_3 = {"Authorization": "Bearer demo-mse-3"}
USER_5 = {"Authorization": "Bearer demo-pas-1"}


class FakeClock:
    def __init__(self, start=1_760_000_000_000):
        self.now = start

    def __call__(self):
        return self.now


def dump(name, payload):
    path = FIXTURES / name
    path.write_text(json.dumps(payload, indent=2) + "\n")
    print(f"wrote {path}")


def wait_done(client, headers, mid):
    for _ in range(600):
        view = client.get(f"/api/measurements/{mid}", headers=headers).json()
        if view["state"] in ("done", "failed"):
            return view
        time.sleep(0.05)
    raise TimeoutError(mid)


def main(tmp_journal):
    clock = FakeClock()
    cfg = dataclasses.replace(load_default_config(), journal_path=tmp_journal)
    app = create_app(cfg, clock=clock, auto_tick=False)
    control = app.state.control
    with TestClient(app) as client:
        dump("topology.json", client.get("/api/topology", headers=USER_3).json())
        dump("status_idle.json", client.get("/api/status", headers=USER_3).json())

        r1 = client.post("/api/reservations", headers=USER_3, json={
            "resources": [{"kind": "eps", "channel": 2}, {"kind": "eps", "channel": 3},
                          {"kind": "spd", "channel": 1}, {"kind": "spd", "channel": 2}],
            "start_ms": clock.now, "end_ms": clock.now + 600_000})
        assert r1.status_code == 201, r1.text
        r2 = client.post("/api/reservations", headers=USER_5, json={
            "resources": [{"kind": "eps", "channel": 4}],
            "start_ms": clock.now, "end_ms": clock.now + 600_000})
        assert r2.status_code == 201, r2.text
        dump("reservations_user3.json", client.get("/api/reservations", headers=USER_3).json())
        dump("status_active.json", client.get("/api/status", headers=USER_3).json())

        conflict = client.post("/api/reservations", headers=USER_5, json={
            "resources": [{"kind": "eps", "channel": 2}],
            "start_ms": clock.now + 60_000, "end_ms": clock.now + 120_000})
        assert conflict.status_code == 409, conflict.text
        dump("conflict.json", conflict.json())

        clock.now += 1000  # let the switch actuation latency elapse
        control.tick()

        job = client.post("/api/measurements", headers=USER_3, json={
            "kind": "histogram", "eps_pair": [2, 3], "signal_spd": 1, "idler_spd": 2,
            "pairs": 20_000, "compensation_ps_nm": -19.4, "seed": 7})
        assert job.status_code == 202, job.text
        dump("measurement_histogram.json", wait_done(client, USER_3, job.json()["id"]))

        job = client.post("/api/measurements", headers=USER_3, json={
            "kind": "dispersion_sweep", "compensation_from": -16.0, "compensation_to": -22.0,
            "compensation_step": 1.0, "pairs_per_point": 20_000, "seed": 7})
        assert job.status_code == 202, job.text
        dump("measurement_sweep.json", wait_done(client, USER_3, job.json()["id"]))


if __name__ == "__main__":
    import tempfile

    FIXTURES.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        main(f"{tmp}/journal.ndjson")
    sys.exit(0)
