"""Switch fabric: the bandwidth-unlimited photon routers.

Five independent 1x16 switches steer entangled-photon-source (EPS)
channels out to users; eight 1x8 switches bring user fibers back to
single-photon-detector (SPD) channels. Each 1x8 switch only reaches one
half of the user ports, so detector channels carry a group constraint.

Routing state is an immutable value; every mutation returns a new
``FabricState``. The scheduler owns the single write path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from .errors import (
    ChannelOccupied,
    GroupViolation,
    UnknownChannel,
    UnknownUser,
    ValidationError,
)

EPS_CHANNEL_COUNT = 5
SPD_CHANNEL_COUNT = 8
USER_MIN = 1
USER_MAX = 16
EPS_PER_USER = 5   # every user can reach all five EPS switches
SPD_PER_USER = 4   # half of the eight SPD switches serve each user group
DEGENERACY_NM = 1560.0


class ChannelKind(str, Enum):
    EPS = "eps"
    SPD = "spd"


class SpdGroup(str, Enum):
    LOW = "low"     # users 1..8
    HIGH = "high"   # users 9..16

    @property
    def users(self) -> range:
        return range(1, 9) if self is SpdGroup.LOW else range(9, 17)


def user_group(user: int) -> SpdGroup:
    check_user(user)
    return SpdGroup.LOW if user <= 8 else SpdGroup.HIGH


def check_user(user: int) -> None:
    if not isinstance(user, int) or not (USER_MIN <= user <= USER_MAX):
        raise UnknownUser(f"user {user!r} outside {USER_MIN}..{USER_MAX}")


@dataclass(frozen=True)
class EpsChannel:
    """One source-side wavelength channel behind its own 1x16 switch."""

    index: int
    center_nm: float
    bandwidth_nm: float = 16.0
    partner: Optional[int] = None   # index of the correlated channel, if any


@dataclass(frozen=True)
class SpdChannel:
    """One detector channel behind its own 1x8 switch."""

    index: int
    group: SpdGroup
    efficiency: float = 0.8
    jitter_fwhm_ps: float = 80.0
    dead_time_ps: float = 50_000.0
    dark_rate_hz: float = 100.0


@dataclass(frozen=True)
class FabricSpec:
    """Static channel metadata for both switch banks."""

    eps_channels: tuple[EpsChannel, ...]
    spd_channels: tuple[SpdChannel, ...]

    def eps(self, index: int) -> EpsChannel:
        for ch in self.eps_channels:
            if ch.index == index:
                return ch
        raise UnknownChannel(f"no EPS channel {index}")

    def spd(self, index: int) -> SpdChannel:
        for ch in self.spd_channels:
            if ch.index == index:
                return ch
        raise UnknownChannel(f"no SPD channel {index}")

    def correlated_pairs(self) -> list[tuple[int, int]]:
        """All declared correlated EPS index pairs, each once, low index first."""
        pairs = set()
        for ch in self.eps_channels:
            if ch.partner is not None:
                pairs.add((min(ch.index, ch.partner), max(ch.index, ch.partner)))
        return sorted(pairs)

    def validate(self, degeneracy_nm: float = DEGENERACY_NM) -> None:
        eps_idx = [ch.index for ch in self.eps_channels]
        if sorted(eps_idx) != list(range(1, EPS_CHANNEL_COUNT + 1)):
            raise ValidationError(
                f"EPS channel indices must be exactly 1..{EPS_CHANNEL_COUNT}, got {sorted(eps_idx)}"
            )
        spd_idx = [ch.index for ch in self.spd_channels]
        if sorted(spd_idx) != list(range(1, SPD_CHANNEL_COUNT + 1)):
            raise ValidationError(
                f"SPD channel indices must be exactly 1..{SPD_CHANNEL_COUNT}, got {sorted(spd_idx)}"
            )
        by_index = {ch.index: ch for ch in self.eps_channels}
        for ch in self.eps_channels:
            if ch.partner is None:
                continue
            if ch.partner == ch.index:
                raise ValidationError(f"EPS channel {ch.index} is its own partner")
            other = by_index.get(ch.partner)
            if other is None:
                raise ValidationError(f"EPS channel {ch.index} partners missing channel {ch.partner}")
            if other.partner != ch.index:
                raise ValidationError(f"partner relation not symmetric between {ch.index} and {ch.partner}")
            midpoint = 0.5 * (ch.center_nm + other.center_nm)
            if abs(midpoint - degeneracy_nm) > 1.0:
                raise ValidationError(
                    f"correlated pair ({ch.index},{ch.partner}) centers not symmetric about "
                    f"{degeneracy_nm} nm (midpoint {midpoint} nm)"
                )
        for ch in self.spd_channels:
            if not (0.0 <= ch.efficiency <= 1.0):
                raise ValidationError(f"SPD channel {ch.index} efficiency {ch.efficiency} outside [0,1]")
        # every user must see exactly 4 detector channels
        for group in SpdGroup:
            if sum(1 for ch in self.spd_channels if ch.group is group) != SPD_PER_USER:
                raise ValidationError(f"SPD group {group.value} must have exactly {SPD_PER_USER} channels")


def default_fabric_spec() -> FabricSpec:
    """Bundled channel plan: ch 1 standalone, (2,3)=1550/1570, (4,5)=1530/1590."""
    return FabricSpec(
        eps_channels=(
            EpsChannel(1, 1560.0, 16.0, None),
            EpsChannel(2, 1550.0, 16.0, 3),
            EpsChannel(3, 1570.0, 16.0, 2),
            EpsChannel(4, 1530.0, 16.0, 5),
            EpsChannel(5, 1590.0, 16.0, 4),
        ),
        spd_channels=tuple(
            SpdChannel(i, SpdGroup.LOW if i <= 4 else SpdGroup.HIGH)
            for i in range(1, SPD_CHANNEL_COUNT + 1)
        ),
    )


@dataclass(frozen=True)
class FabricState:
    """Immutable routing snapshot: channel index -> user (or None)."""

    spec: FabricSpec
    eps_routes: tuple[Optional[int], ...]
    spd_routes: tuple[Optional[int], ...]

    @classmethod
    def empty(cls, spec: FabricSpec) -> "FabricState":
        return cls(
            spec=spec,
            eps_routes=(None,) * EPS_CHANNEL_COUNT,
            spd_routes=(None,) * SPD_CHANNEL_COUNT,
        )

    def route_of(self, kind: ChannelKind, channel: int) -> Optional[int]:
        routes = self.eps_routes if kind is ChannelKind.EPS else self.spd_routes
        count = EPS_CHANNEL_COUNT if kind is ChannelKind.EPS else SPD_CHANNEL_COUNT
        if not (1 <= channel <= count):
            raise UnknownChannel(f"no {kind.value} channel {channel}")
        return routes[channel - 1]

    def routed_channels(self, user: int) -> tuple[set[int], set[int]]:
        eps = {i + 1 for i, u in enumerate(self.eps_routes) if u == user}
        spd = {i + 1 for i, u in enumerate(self.spd_routes) if u == user}
        return eps, spd


def set_route(state: FabricState, kind: ChannelKind, channel: int, user: int) -> FabricState:
    """Route a channel to a user. Idempotent for the same user; a channel
    held by a different user must be released first."""
    check_user(user)
    current = state.route_of(kind, channel)
    if current == user:
        return state
    if current is not None:
        raise ChannelOccupied(
            f"{kind.value} channel {channel} already routed to user {current}"
        )
    if kind is ChannelKind.SPD:
        ch = state.spec.spd(channel)
        if user not in ch.group.users:
            raise GroupViolation(
                f"SPD channel {channel} serves users "
                f"{ch.group.users.start}..{ch.group.users.stop - 1}, not user {user}"
            )
        routes = list(state.spd_routes)
        routes[channel - 1] = user
        return replace(state, spd_routes=tuple(routes))
    routes = list(state.eps_routes)
    routes[channel - 1] = user
    return replace(state, eps_routes=tuple(routes))


def release_route(state: FabricState, kind: ChannelKind, channel: int) -> FabricState:
    """Unroute a channel; releasing an unrouted channel is a no-op."""
    if state.route_of(kind, channel) is None:
        return state
    if kind is ChannelKind.SPD:
        routes = list(state.spd_routes)
        routes[channel - 1] = None
        return replace(state, spd_routes=tuple(routes))
    routes = list(state.eps_routes)
    routes[channel - 1] = None
    return replace(state, eps_routes=tuple(routes))


def reachable_channels(spec: FabricSpec, user: int) -> tuple[frozenset[int], frozenset[int]]:
    """Channel indices a user's fiber ports can reach: all 5 EPS switches,
    plus the 4 SPD switches wired to the user's half of the port field."""
    check_user(user)
    eps = frozenset(ch.index for ch in spec.eps_channels)
    spd = frozenset(ch.index for ch in spec.spd_channels if user in ch.group.users)
    return eps, spd
