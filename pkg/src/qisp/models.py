"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, Field, model_validator


class ResourceRef(BaseModel):
    kind: Literal["eps", "spd"]
    channel: int = Field(ge=1, le=16)


class ReservationCreate(BaseModel):
    user: Optional[int] = Field(default=None, ge=1, le=16,
                                description="defaults to the authenticated user")
    resources: list[ResourceRef]
    start_ms: int
    end_ms: int


class ReservationView(BaseModel):
    id: str
    user: int
    resources: list[ResourceRef]
    start_ms: int
    end_ms: int
    status: str


class RejectionView(BaseModel):
    reason: str
    conflicts: list[str] = []


class RouteCommand(BaseModel):
    op: Literal["set", "release"]
    kind: Literal["eps", "spd"]
    channel: int = Field(ge=1, le=16)
    user: Optional[int] = Field(default=None, ge=1, le=16)

    @model_validator(mode="after")
    def _set_needs_user(self):
        if self.op == "set" and self.user is None:
            raise ValueError("op=set requires a user")
        return self


class NodeStateView(BaseModel):
    id: str
    user: Optional[int] = None
    state: Literal["hub", "inactive", "active_eps", "active_spd", "active_both"]


class FlowView(BaseModel):
    source: str
    dest: str
    kind: Literal["entangled_photons", "single_photons_to_detector"]


class StatusFrameView(BaseModel):
    timestamp_ms: int
    nodes: list[NodeStateView]
    flows: list[FlowView]
    fabric: dict[str, dict[str, Optional[int]]]
    reservations: dict[str, int]


class HistogramJobParams(BaseModel):
    kind: Literal["histogram"] = "histogram"
    eps_pair: tuple[int, int] = (2, 3)
    signal_spd: int = Field(default=1, ge=1, le=8)
    idler_spd: int = Field(default=2, ge=1, le=8)
    pairs: int = Field(default=100_000, ge=1000, le=2_000_000)
    compensation_ps_nm: float = 0.0
    bin_width_ps: float = Field(default=20.0, gt=0)
    window_ps: float = Field(default=2000.0, gt=0)
    peak_halfwidth_ps: float = Field(default=320.0, gt=0)
    seed: int = 0


class SweepJobParams(BaseModel):
    kind: Literal["dispersion_sweep"] = "dispersion_sweep"
    eps_pair: tuple[int, int] = (2, 3)
    signal_spd: int = Field(default=1, ge=1, le=8)
    idler_spd: int = Field(default=2, ge=1, le=8)
    compensation_from: float = 0.0
    compensation_to: float = -22.0
    compensation_step: float = Field(default=1.0, gt=0)
    pairs_per_point: int = Field(default=100_000, ge=1000, le=500_000)
    bin_width_ps: float = Field(default=20.0, gt=0)
    window_ps: float = Field(default=2000.0, gt=0)
    seed: int = 0


MeasurementCreate = Annotated[
    Union[HistogramJobParams, SweepJobParams], Field(discriminator="kind")
]


class MeasurementAccepted(BaseModel):
    id: str
    kind: str
    state: str


class MeasurementView(BaseModel):
    id: str
    kind: str
    owner: int
    state: Literal["queued", "running", "done", "failed"]
    created_ms: int
    result: Optional[dict] = None
    error: Optional[str] = None
