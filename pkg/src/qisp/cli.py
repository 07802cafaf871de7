"""Command line: serve the control plane, validate configs, and run the
field-test reproduction offline.

Exit codes: 0 success, 1 validation failure, 2 usage error.
"""

from __future__ import annotations

import json
import math
import socket
import sys
from pathlib import Path

import click

from . import __version__
from .analysis import SweepScenario, run_dispersion_sweep
from .config import ServiceConfig, default_config_path, load_config
from .errors import QispError
from .photonics import (
    ArmConfig,
    DetectionStream,
    detect,
    generate_pairs,
    propagate,
    time_tag,
    write_streams_binary,
    write_streams_csv,
)
from .service import compensation_grid
from .topology import logical_graph, path_to, synthetic_path

import numpy as np


def _load_config_or_die(path: str | None) -> ServiceConfig:
    target = path or default_config_path()
    try:
        return load_config(target)
    except QispError as exc:
        click.echo(f"config error in {target}: {exc}", err=True)
        sys.exit(1)


@click.group()
@click.version_option(__version__)
def main():
    """Quantum-network service control plane and simulator."""


@main.command()
@click.option("--config", "config_path", envvar="QISP_CONFIG", type=click.Path(), default=None,
              help="Service config JSON (defaults to the bundled campus config).")
@click.option("--port", type=int, default=None, help="Override the configured port (0 = OS-assigned).")
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(config_path, port, host):
    """Run the HTTP service (long-running)."""
    import logging

    import uvicorn

    from .service import create_app

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    cfg = _load_config_or_die(config_path)
    app = create_app(cfg)
    chosen = cfg.port if port is None else port
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, chosen))
    actual = sock.getsockname()[1]
    click.echo(f"listening on {host}:{actual}")
    server = uvicorn.Server(uvicorn.Config(app, log_level="warning"))
    server.run(sockets=[sock])


@main.command()
@click.option("--config", "config_path", envvar="QISP_CONFIG", type=click.Path(), default=None)
def check(config_path):
    """Validate a config and report the logical connectivity layer."""
    cfg = _load_config_or_die(config_path)
    topo = cfg.topology
    hubs = sum(1 for n in topo.nodes if n.kind.value != "terminal")
    terminals = topo.terminals
    click.echo(f"nodes: {len(topo.nodes)} ({hubs} hubs + {len(terminals)} terminals), "
               f"central hub {topo.central_hub.id}")
    click.echo(f"links: {len(topo.links)}")
    for node in terminals:
        path = path_to(topo, node.id)
        click.echo(f"  {node.id}: {path.total_dispersion_ps_nm:.3f} ps/nm, "
                   f"{path.total_loss_db:.3f} dB, {path.total_delay_ps:.0f} ps")
    pairs = logical_graph(topo, cfg.fabric)
    n = len(terminals)
    complete = n * (n - 1) // 2
    if not pairs:
        click.echo("logical graph: EMPTY")
        sys.exit(1)
    if len(pairs) == complete:
        click.echo(f"logical graph: complete over {n} terminals ({complete} pairs)")
    else:
        click.echo(f"logical graph: INCOMPLETE ({len(pairs)}/{complete} pairs)")
        sys.exit(1)


@main.command()
@click.option("--from", "comp_from", type=float, default=0.0, show_default=True,
              help="First compensation value (ps/nm).")
@click.option("--to", "comp_to", type=float, default=-22.0, show_default=True,
              help="Last compensation value (ps/nm).")
@click.option("--step", type=float, default=1.0, show_default=True)
@click.option("--pairs", type=int, default=100_000, show_default=True,
              help="Emitted pairs per sweep point (>= 1000).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Write the sweep CSV here.")
@click.option("--config", "config_path", envvar="QISP_CONFIG", type=click.Path(), default=None)
@click.option("--fiber-dispersion", type=float, default=9.7, show_default=True,
              help="Per-arm fiber dispersion (ps/nm).")
def sweep(comp_from, comp_to, step, pairs, seed, out, config_path, fiber_dispersion):
    """Reproduce the dispersion-cancellation sweep offline."""
    if step <= 0:
        raise click.UsageError("--step must be > 0")
    if pairs < 1000:
        raise click.UsageError("--pairs must be >= 1000")
    cfg = _load_config_or_die(config_path)
    comps = compensation_grid(comp_from, comp_to, step)
    arm = ArmConfig(synthetic_path(fiber_dispersion / 17.0))
    eps_pair = None
    for a, b in cfg.fabric.correlated_pairs():
        eps_pair = (cfg.fabric.eps(a), cfg.fabric.eps(b))
        break
    if eps_pair is None:
        click.echo("config declares no correlated channel pair", err=True)
        sys.exit(1)
    scenario = SweepScenario(
        source=cfg.source,
        channel_pair=eps_pair,
        signal_arm=arm,
        idler_arm=arm,
        signal_detector=cfg.fabric.spd_channels[0],
        idler_detector=cfg.fabric.spd_channels[1],
        tagger=cfg.tagger,
    )
    result = run_dispersion_sweep(scenario, comps, pairs, seed)
    if out:
        result.to_csv(out)
        click.echo(f"wrote {out}")
    best = result.argmin_compensation_ps_nm
    if best is None:
        click.echo("sweep produced no converged fit", err=True)
        sys.exit(1)
    fit = next(p.fit for p in result.points if p.compensation_ps_nm == best)
    click.echo(f"argmin compensation: {best:g} ps/nm")
    click.echo(f"minimum FWHM: {fit.fwhm_ps:.2f} +- {fit.fwhm_uncertainty_ps:.2f} ps")


@main.command()
@click.option("--duration", type=float, required=True, help="Acquisition length in seconds.")
@click.option("--scenario", "scenario_path", type=click.Path(exists=True), required=True,
              help="Scenario JSON (see scenario.example.json).")
@click.option("--out", type=click.Path(), required=True,
              help="Output file; .bin selects the binary format, otherwise CSV.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", envvar="QISP_CONFIG", type=click.Path(), default=None)
def simulate(duration, scenario_path, out, seed, config_path):
    """Simulate detection streams for a scenario and export the time tags."""
    cfg = _load_config_or_die(config_path)
    try:
        doc = json.loads(Path(scenario_path).read_text(encoding="utf-8"))
        streams = _simulate_scenario(cfg, doc, duration, seed)
    except (QispError, KeyError, ValueError) as exc:
        click.echo(f"scenario error: {exc}", err=True)
        sys.exit(1)
    if str(out).endswith(".bin"):
        write_streams_binary(streams, out)
    else:
        write_streams_csv(streams, out)
    click.echo(f"wrote {sum(len(s) for s in streams)} events to {out}")


def _arm_from_scenario(cfg: ServiceConfig, doc: dict) -> ArmConfig:
    if doc.get("unrouted"):
        return ArmConfig(synthetic_path(1e-12), extra_loss_db=math.inf)
    if "user_node" in doc:
        path = path_to(cfg.topology, doc["user_node"])
    else:
        path = synthetic_path(
            float(doc.get("length_km", 9.7 / 17.0)),
            loss_db_per_km=float(doc.get("loss_db_per_km", 0.2)),
            dispersion_ps_nm_km=float(doc.get("dispersion_ps_nm_km", 17.0)),
        )
    return ArmConfig(
        path,
        compensation_ps_nm=float(doc.get("compensation_ps_nm", 0.0)),
        extra_loss_db=float(doc.get("extra_loss_db", 0.0)),
    )


def _simulate_scenario(cfg: ServiceConfig, doc: dict, duration_s: float, seed: int) -> list[DetectionStream]:
    from dataclasses import replace

    eps_pair = doc.get("eps_pair", [2, 3])
    pair = (cfg.fabric.eps(int(eps_pair[0])), cfg.fabric.eps(int(eps_pair[1])))
    signal_arm = _arm_from_scenario(cfg, doc.get("signal_arm", {}))
    idler_arm = _arm_from_scenario(cfg, doc.get("idler_arm", {}))
    signal_spd = cfg.fabric.spd(int(doc.get("signal_spd", 1)))
    idler_spd = cfg.fabric.spd(int(doc.get("idler_spd", 2)))
    overrides = doc.get("detector_overrides")
    if overrides:
        allowed = {"efficiency", "jitter_fwhm_ps", "dead_time_ps", "dark_rate_hz"}
        unknown = set(overrides) - allowed
        if unknown:
            raise ValueError(f"unknown detector_overrides keys: {sorted(unknown)}")
        signal_spd = replace(signal_spd, **overrides)
        idler_spd = replace(idler_spd, **overrides)
    if duration_s <= 0:
        return [DetectionStream(signal_spd.index, np.zeros(0)),
                DetectionStream(idler_spd.index, np.zeros(0))]
    pairs = generate_pairs(cfg.source, pair, duration_s, seed)
    sig_t, idl_t = propagate(pairs, signal_arm, idler_arm, seed + 1)
    sig = time_tag(detect(sig_t, signal_spd, duration_s, seed + 2), cfg.tagger, seed + 4)
    idl = time_tag(detect(idl_t, idler_spd, duration_s, seed + 3), cfg.tagger, seed + 5)
    return [sig, idl]


@main.command()
@click.option("--url", default="http://127.0.0.1:8080", show_default=True)
@click.option("--token", required=True, help="Bearer token of a configured account.")
def status(url, token):
    """Fetch the live status frame from a running service."""
    import httpx

    try:
        resp = httpx.get(f"{url}/api/status", headers={"Authorization": f"Bearer {token}"}, timeout=10.0)
    except httpx.HTTPError as exc:
        click.echo(f"request failed: {exc}", err=True)
        sys.exit(1)
    if resp.status_code != 200:
        click.echo(f"HTTP {resp.status_code}: {resp.text}", err=True)
        sys.exit(1)
    frame = resp.json()
    click.echo(f"timestamp: {frame['timestamp_ms']}")
    for node in frame["nodes"]:
        click.echo(f"  {node['id']:>6}  {node['state']}")
    for flow in frame["flows"]:
        click.echo(f"  {flow['source']} -> {flow['dest']} ({flow['kind']})")


if __name__ == "__main__":
    main()
