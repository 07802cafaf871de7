"""Service configuration: one JSON document covering topology, fabric,
physics, accounts and runtime knobs. The bundled default ships as
``inquire.json`` (also at the repo root)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import ParseError, ValidationError
from .fabric import (
    EpsChannel,
    FabricSpec,
    SpdChannel,
    SpdGroup,
    check_user,
    default_fabric_spec,
)
from .photonics import SourceModel, SpectralShape, TaggerModel
from .topology import Topology, topology_from_dict, topology_to_dict


class Role(str, Enum):
    USER = "user"
    ADMIN = "admin"


@dataclass(frozen=True)
class UserAccount:
    user: int
    display_name: str
    token: str
    role: Role = Role.USER


@dataclass(frozen=True)
class ServiceConfig:
    topology: Topology
    fabric: FabricSpec
    users: tuple[UserAccount, ...]
    source: SourceModel
    tagger: TaggerModel
    port: int = 8080
    tick_ms: int = 100
    journal_path: str = "qisp-journal.ndjson"
    switch_latency_ms: int = 10
    measurement_expiry_s: int = 86400

    def account_for_token(self, token: str) -> UserAccount | None:
        for acct in self.users:
            if acct.token == token:
                return acct
        return None


def default_config_path() -> Path:
    return Path(str(resources.files("qisp").joinpath("data/inquire.json")))


def load_config(text_or_path: str | Path, *, is_path: bool = True) -> ServiceConfig:
    """Load and validate a full service config from a file path or JSON text."""
    if is_path:
        try:
            text = Path(text_or_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ParseError(f"cannot read config: {exc}") from None
    else:
        text = str(text_or_path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc}") from None
    return config_from_dict(doc)


def load_default_config() -> ServiceConfig:
    return load_config(default_config_path())


def _fabric_from_dict(doc: dict) -> FabricSpec:
    raw = doc.get("fabric")
    if raw is None:
        return default_fabric_spec()
    try:
        eps = tuple(
            EpsChannel(
                index=int(c["index"]),
                center_nm=float(c["center_nm"]),
                bandwidth_nm=float(c.get("bandwidth_nm", 16.0)),
                partner=None if c.get("partner") is None else int(c["partner"]),
            )
            for c in raw["eps_channels"]
        )
        spd = tuple(
            SpdChannel(
                index=int(c["index"]),
                group=SpdGroup(c["group"]),
                efficiency=float(c.get("efficiency", 0.8)),
                jitter_fwhm_ps=float(c.get("jitter_fwhm_ps", 80.0)),
                dead_time_ps=float(c.get("dead_time_ps", 50_000.0)),
                dark_rate_hz=float(c.get("dark_rate_hz", 100.0)),
            )
            for c in raw["spd_channels"]
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad fabric entry: {exc}") from None
    return FabricSpec(eps, spd)


def config_from_dict(doc: dict) -> ServiceConfig:
    topology = topology_from_dict(doc)
    fabric = _fabric_from_dict(doc)

    physics = doc.get("physics", {})
    try:
        source = SourceModel(
            pair_rate_hz=float(physics.get("pair_rate_hz", 1e6)),
            degeneracy_nm=float(physics.get("degeneracy_nm", 1560.0)),
            spectral_shape=SpectralShape(physics.get("spectral_shape", "gaussian")),
            spectral_fwhm_nm=float(physics.get("spectral_fwhm_nm", 16.0)),
            passband_truncation=bool(physics.get("passband_truncation", False)),
        )
        raw_tagger = physics.get("tagger", {})
        tagger = TaggerModel(
            resolution_ps=float(raw_tagger.get("resolution_ps", 1.0)),
            jitter_fwhm_ps=float(raw_tagger.get("jitter_fwhm_ps", 80.0)),
            max_rate_hz=float(raw_tagger.get("max_rate_hz", 8.5e6)),
        )
    except (ValueError, TypeError) as exc:
        raise ParseError(f"bad physics entry: {exc}") from None

    accounts = []
    for item in doc.get("users", []):
        try:
            accounts.append(
                UserAccount(
                    user=int(item["user"]),
                    display_name=str(item.get("display_name", f"user {item['user']}")),
                    token=str(item["token"]),
                    role=Role(item.get("role", "user")),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"bad user entry {item!r}: {exc}") from None

    fabric.validate(degeneracy_nm=source.degeneracy_nm)
    for acct in accounts:
        check_user(acct.user)
    tokens = [a.token for a in accounts]
    if len(tokens) != len(set(tokens)):
        raise ValidationError("user tokens must be unique")
    ids = [a.user for a in accounts]
    if len(ids) != len(set(ids)):
        raise ValidationError("user ids must be unique")

    return ServiceConfig(
        topology=topology,
        fabric=fabric,
        users=tuple(accounts),
        source=source,
        tagger=tagger,
        port=int(doc.get("port", 8080)),
        tick_ms=int(doc.get("tick_ms", 100)),
        journal_path=str(doc.get("journal_path", "qisp-journal.ndjson")),
        switch_latency_ms=int(doc.get("switch_latency_ms", 10)),
        measurement_expiry_s=int(doc.get("measurement_expiry_s", 86400)),
    )


def config_to_dict(cfg: ServiceConfig) -> dict:
    """Round-trippable serialization (used by the topology round-trip check)."""
    doc = topology_to_dict(cfg.topology)
    doc["fabric"] = {
        "eps_channels": [
            {"index": c.index, "center_nm": c.center_nm, "bandwidth_nm": c.bandwidth_nm, "partner": c.partner}
            for c in cfg.fabric.eps_channels
        ],
        "spd_channels": [
            {
                "index": c.index, "group": c.group.value, "efficiency": c.efficiency,
                "jitter_fwhm_ps": c.jitter_fwhm_ps, "dead_time_ps": c.dead_time_ps,
                "dark_rate_hz": c.dark_rate_hz,
            }
            for c in cfg.fabric.spd_channels
        ],
    }
    doc["physics"] = {
        "pair_rate_hz": cfg.source.pair_rate_hz,
        "degeneracy_nm": cfg.source.degeneracy_nm,
        "spectral_shape": cfg.source.spectral_shape.value,
        "spectral_fwhm_nm": cfg.source.spectral_fwhm_nm,
        "passband_truncation": cfg.source.passband_truncation,
        "tagger": {
            "resolution_ps": cfg.tagger.resolution_ps,
            "jitter_fwhm_ps": cfg.tagger.jitter_fwhm_ps,
            "max_rate_hz": cfg.tagger.max_rate_hz,
        },
    }
    doc["users"] = [
        {"user": a.user, "display_name": a.display_name, "token": a.token, "role": a.role.value}
        for a in cfg.users
    ]
    doc["port"] = cfg.port
    doc["tick_ms"] = cfg.tick_ms
    doc["journal_path"] = cfg.journal_path
    doc["switch_latency_ms"] = cfg.switch_latency_ms
    doc["measurement_expiry_s"] = cfg.measurement_expiry_s
    return doc
