"""Physical-layer Monte Carlo: pair emission, fiber transport, detection.

Models a c.w.-pumped SPDC source whose broadband output is channelized by
a coarse WDM: each emitted pair carries one wavelength detuning, with the
idler photon mirrored about the degeneracy point (energy conservation).
Fiber transport applies loss and first-order chromatic dispersion
(arrival shift D * detuning referenced to channel center); detectors add
efficiency thinning, Gaussian timing jitter, dark counts and dead time;
the time tagger adds its own jitter, quantization and throughput cap.

Everything is a pure function of its inputs plus an explicit seed, so
identical seeds give bit-identical event streams.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InvalidChannelPair, UnsortedInput
from .fabric import EpsChannel, SpdChannel
from .topology import OpticalPath

FWHM_FACTOR = 2.0 * math.sqrt(2.0 * math.log(2.0))  # sigma -> FWHM
PS_PER_S = 1e12

ORIGIN_PHOTON = 0
ORIGIN_DARK = 1


class SpectralShape(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


class SourceKind(str, Enum):
    TIME_ENERGY = "time_energy"
    POLARIZATION = "polarization"


@dataclass(frozen=True)
class SourceModel:
    pair_rate_hz: float = 1e6
    degeneracy_nm: float = 1560.0
    spectral_shape: SpectralShape = SpectralShape.GAUSSIAN
    spectral_fwhm_nm: float = 16.0
    kind: SourceKind = SourceKind.TIME_ENERGY
    # Hard-clip Gaussian detunings at +-bandwidth/2. Off by default: the
    # channelizing filter is what shapes the broadband spectrum into the
    # ~16 nm profile, so clipping on top of it double-counts the filter
    # and visibly narrows dispersion-broadened correlation peaks.
    passband_truncation: bool = False


@dataclass(frozen=True)
class TaggerModel:
    resolution_ps: float = 1.0
    jitter_fwhm_ps: float = 80.0
    max_rate_hz: float = 8.5e6


@dataclass
class PairBatch:
    """Emitted pairs, column-wise: one detuning per pair, idler mirrored."""

    emit_time_ps: np.ndarray
    detuning_nm: np.ndarray
    signal_channel: int
    idler_channel: int

    def __len__(self) -> int:
        return self.emit_time_ps.size


@dataclass(frozen=True)
class ArmConfig:
    """One photon's route to its detector: fiber path plus tunable
    anomalous-dispersion compensation (negative cancels normal fiber
    dispersion) and any fixed extra loss."""

    path: OpticalPath
    compensation_ps_nm: float = 0.0
    extra_loss_db: float = 0.0

    @property
    def total_dispersion_ps_nm(self) -> float:
        return self.path.total_dispersion_ps_nm + self.compensation_ps_nm

    @property
    def total_loss_db(self) -> float:
        return self.path.total_loss_db + self.extra_loss_db


@dataclass
class DetectionStream:
    """Time-ordered detector clicks for one SPD channel."""

    channel: int
    timestamp_ps: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))
    saturated: bool = False

    def __post_init__(self):
        if self.origin.size == 0 and self.timestamp_ps.size > 0:
            self.origin = np.zeros(self.timestamp_ps.size, dtype=np.uint8)

    def __len__(self) -> int:
        return self.timestamp_ps.size


def db_transmission(loss_db: float) -> float:
    return 10.0 ** (-loss_db / 10.0)


def generate_pairs(
    source: SourceModel,
    channel_pair: tuple[EpsChannel, EpsChannel],
    duration_s: float,
    seed: int,
) -> PairBatch:
    """Homogeneous Poisson pair emission over [0, duration).

    Detunings are the signal photon's wavelength offset from its channel
    center; the idler offset is the exact negative (anti-correlation
    about the degeneracy wavelength).
    """
    signal, idler = channel_pair
    if signal.partner != idler.index or idler.partner != signal.index:
        raise InvalidChannelPair(
            f"channels {signal.index} and {idler.index} are not a correlated pair"
        )
    if duration_s <= 0:
        raise ValueError("duration must be > 0")
    rng = np.random.default_rng(seed)
    n = rng.poisson(source.pair_rate_hz * duration_s)
    times = np.sort(rng.uniform(0.0, duration_s * PS_PER_S, n))
    if source.spectral_shape is SpectralShape.UNIFORM:
        half = signal.bandwidth_nm / 2.0
        detunings = rng.uniform(-half, half, n)
    else:
        sigma = source.spectral_fwhm_nm / FWHM_FACTOR
        detunings = rng.normal(0.0, sigma, n)
        if source.passband_truncation:
            half = signal.bandwidth_nm / 2.0
            bad = np.abs(detunings) > half
            while bad.any():
                detunings[bad] = rng.normal(0.0, sigma, int(bad.sum()))
                bad = np.abs(detunings) > half
    return PairBatch(times, detunings, signal.index, idler.index)


def propagate(
    pairs: PairBatch,
    signal_arm: ArmConfig,
    idler_arm: ArmConfig,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Fiber transport of both photons; returns surviving arrival times.

    Each photon independently survives with 10^(-loss/10); a survivor
    arrives at emit + path delay + (fiber dispersion + compensation) *
    its own detuning (idler detuning is the negative of the signal's).
    """
    rng = np.random.default_rng(seed)
    out = []
    for arm, sign in ((signal_arm, 1.0), (idler_arm, -1.0)):
        survive = rng.random(len(pairs)) < db_transmission(arm.total_loss_db)
        t = (
            pairs.emit_time_ps[survive]
            + arm.path.total_delay_ps
            + arm.total_dispersion_ps_nm * (sign * pairs.detuning_nm[survive])
        )
        out.append(t)
    return out[0], out[1]


def detect(
    arrival_times_ps: np.ndarray,
    detector: SpdChannel,
    duration_s: float,
    seed: int,
) -> DetectionStream:
    """Detector response: efficiency thinning, Gaussian jitter, Poisson
    dark counts over [0, duration), then non-paralyzable dead time."""
    rng = np.random.default_rng(seed)
    arrivals = np.asarray(arrival_times_ps, dtype=np.float64)
    kept = arrivals[rng.random(arrivals.size) < detector.efficiency]
    if detector.jitter_fwhm_ps > 0 and kept.size:
        kept = kept + rng.normal(0.0, detector.jitter_fwhm_ps / FWHM_FACTOR, kept.size)
    n_dark = rng.poisson(detector.dark_rate_hz * duration_s)
    darks = rng.uniform(0.0, duration_s * PS_PER_S, n_dark)

    times = np.concatenate([kept, darks])
    origin = np.concatenate([
        np.full(kept.size, ORIGIN_PHOTON, dtype=np.uint8),
        np.full(darks.size, ORIGIN_DARK, dtype=np.uint8),
    ])
    order = np.argsort(times, kind="stable")
    times, origin = times[order], origin[order]

    keep_idx, _ = _min_spacing_filter(times, detector.dead_time_ps)
    return DetectionStream(detector.index, times[keep_idx], origin[keep_idx])


def time_tag(
    stream: DetectionStream,
    tagger: TaggerModel = TaggerModel(),
    seed: int = 0,
) -> DetectionStream:
    """Time tagger stage: tagger jitter, quantization to the tick grid,
    throughput cap. Sets `saturated` when the cap dropped events."""
    times = np.asarray(stream.timestamp_ps, dtype=np.float64)
    if times.size > 1 and np.any(np.diff(times) < 0):
        raise UnsortedInput("detection stream must be time-ordered")
    origin = stream.origin
    rng = np.random.default_rng(seed)
    if tagger.jitter_fwhm_ps > 0 and times.size:
        times = times + rng.normal(0.0, tagger.jitter_fwhm_ps / FWHM_FACTOR, times.size)
        order = np.argsort(times, kind="stable")
        times, origin = times[order], origin[order]
    if tagger.resolution_ps > 0:
        times = np.rint(times / tagger.resolution_ps) * tagger.resolution_ps
    dropped = 0
    if tagger.max_rate_hz > 0 and math.isfinite(tagger.max_rate_hz):
        keep_idx, dropped = _min_spacing_filter(times, PS_PER_S / tagger.max_rate_hz)
        times, origin = times[keep_idx], origin[keep_idx]
    return DetectionStream(stream.channel, times, origin, saturated=dropped > 0)


def _min_spacing_filter(times: np.ndarray, tau_ps: float) -> tuple[np.ndarray, int]:
    """Greedy non-paralyzable gate: drop events closer than tau to the
    last accepted one. Vectorized by iteratively removing the first
    violator of each run; falls back to a plain scan when violations are
    dense (heavy saturation), where the iterative form degrades."""
    n = times.size
    if tau_ps <= 0 or n <= 1:
        return np.arange(n), 0
    idx = np.arange(n)
    while True:
        gaps = np.diff(times[idx])
        viol = gaps < tau_ps
        if not viol.any():
            break
        if viol.mean() > 0.25:
            return _greedy_min_spacing(times, tau_ps)
        first_of_run = viol & ~np.concatenate(([False], viol[:-1]))
        drop = np.concatenate(([False], first_of_run))
        idx = idx[~drop]
    return idx, n - idx.size


def _greedy_min_spacing(times: np.ndarray, tau_ps: float) -> tuple[np.ndarray, int]:
    keep = np.zeros(times.size, dtype=bool)
    last = -math.inf
    for i, t in enumerate(times):
        if t - last >= tau_ps:
            keep[i] = True
            last = t
    idx = np.flatnonzero(keep)
    return idx, times.size - idx.size


# --- event stream import/export -------------------------------------------

_BINARY_RECORD = struct.Struct("<BQB")  # channel, timestamp ps, origin

_ORIGIN_WORDS = {ORIGIN_PHOTON: "photon", ORIGIN_DARK: "dark"}
_ORIGIN_CODES = {v: k for k, v in _ORIGIN_WORDS.items()}


def _merged_rows(streams: list[DetectionStream]):
    rows = []
    for s in streams:
        for t, o in zip(s.timestamp_ps, s.origin):
            rows.append((float(t), s.channel, int(o)))
    rows.sort()
    return rows


def write_streams_csv(streams: list[DetectionStream], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("channel,timestamp_ps,origin\n")
        for t, ch, o in _merged_rows(streams):
            fh.write(f"{ch},{t!r},{_ORIGIN_WORDS[o]}\n")


def read_streams_csv(path: str | Path) -> dict[int, DetectionStream]:
    by_channel: dict[int, tuple[list[float], list[int]]] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "channel,timestamp_ps,origin":
            raise UnsortedInput(f"unexpected CSV header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            ch_s, t_s, o_s = line.split(",")
            times, origins = by_channel.setdefault(int(ch_s), ([], []))
            times.append(float(t_s))
            origins.append(_ORIGIN_CODES[o_s])
    return {
        ch: DetectionStream(ch, np.asarray(ts, dtype=np.float64), np.asarray(os_, dtype=np.uint8))
        for ch, (ts, os_) in sorted(by_channel.items())
    }


def write_streams_binary(streams: list[DetectionStream], path: str | Path) -> None:
    """Compact record format: u8 channel, u64 timestamp in ps, u8 origin.

    Timestamps must be tagged (integral picoseconds) and non-negative.
    """
    with open(path, "wb") as fh:
        for t, ch, o in _merged_rows(streams):
            if t < 0 or t != int(t):
                raise ValueError(f"binary format needs integral non-negative ps timestamps, got {t}")
            fh.write(_BINARY_RECORD.pack(ch, int(t), o))


def read_streams_binary(path: str | Path) -> dict[int, DetectionStream]:
    by_channel: dict[int, tuple[list[float], list[int]]] = {}
    raw = Path(path).read_bytes()
    for ch, t, o in _BINARY_RECORD.iter_unpack(raw):
        times, origins = by_channel.setdefault(ch, ([], []))
        times.append(float(t))
        origins.append(o)
    return {
        ch: DetectionStream(ch, np.asarray(ts, dtype=np.float64), np.asarray(os_, dtype=np.uint8))
        for ch, (ts, os_) in sorted(by_channel.items())
    }
