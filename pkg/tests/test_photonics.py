import math

import numpy as np
import pytest

from qisp.errors import InvalidChannelPair, UnsortedInput
from qisp.fabric import EpsChannel, SpdChannel, SpdGroup, default_fabric_spec
from qisp.photonics import (
    FWHM_FACTOR,
    ArmConfig,
    DetectionStream,
    SourceModel,
    SpectralShape,
    TaggerModel,
    db_transmission,
    detect,
    generate_pairs,
    propagate,
    read_streams_binary,
    read_streams_csv,
    time_tag,
    write_streams_binary,
    write_streams_csv,
)
from qisp.topology import synthetic_path

SPEC = default_fabric_spec()
PAIR = (SPEC.eps(2), SPEC.eps(3))

IDEAL_SPD = SpdChannel(1, SpdGroup.LOW, efficiency=1.0, jitter_fwhm_ps=0.0,
                       dead_time_ps=0.0, dark_rate_hz=0.0)


def lossless_arm(dispersion_ps_nm=0.0, compensation=0.0):
    km = dispersion_ps_nm / 17.0
    if km == 0.0:
        path = synthetic_path(1e-12, loss_db_per_km=0.0, dispersion_ps_nm_km=0.0, delay_ps_per_km=4900.0)
    else:
        path = synthetic_path(km, loss_db_per_km=0.0, dispersion_ps_nm_km=17.0, delay_ps_per_km=4900.0)
    return ArmConfig(path, compensation_ps_nm=compensation)


# --- generate_pairs ---------------------------------------------------------

def test_pair_counts_poisson():
    source = SourceModel(pair_rate_hz=1e6)
    counts = [len(generate_pairs(source, PAIR, 1e-3, seed)) for seed in range(50)]
    sigma = math.sqrt(1000.0)
    for c in counts:
        assert abs(c - 1000) < 5 * sigma
    assert abs(np.mean(counts) - 1000) < 3 * sigma / math.sqrt(len(counts))


def test_vanishing_duration_mostly_empty():
    source = SourceModel(pair_rate_hz=1e6)
    nonempty = sum(1 for seed in range(200) if len(generate_pairs(source, PAIR, 1e-9, seed)))
    assert nonempty <= 2  # Poisson(1e-3) over 200 trials


def test_detuning_fwhm_matches_spectrum():
    source = SourceModel(pair_rate_hz=1e6, spectral_fwhm_nm=16.0)
    pairs = generate_pairs(source, PAIR, 0.1, seed=3)
    assert len(pairs) > 90_000
    fwhm = np.std(pairs.detuning_nm) * FWHM_FACTOR
    assert abs(fwhm - 16.0) / 16.0 < 0.03


def test_uniform_shape_bounded_by_passband():
    source = SourceModel(pair_rate_hz=1e6, spectral_shape=SpectralShape.UNIFORM)
    pairs = generate_pairs(source, PAIR, 0.01, seed=4)
    assert np.all(np.abs(pairs.detuning_nm) <= 8.0)


def test_passband_truncation_clips():
    source = SourceModel(pair_rate_hz=1e6, spectral_fwhm_nm=30.0, passband_truncation=True)
    pairs = generate_pairs(source, PAIR, 0.01, seed=5)
    assert np.all(np.abs(pairs.detuning_nm) <= 8.0)


def test_invalid_channel_pair():
    with pytest.raises(InvalidChannelPair):
        generate_pairs(SourceModel(), (SPEC.eps(2), SPEC.eps(4)), 1e-3, 0)
    with pytest.raises(InvalidChannelPair):
        generate_pairs(SourceModel(), (SPEC.eps(1), SPEC.eps(1)), 1e-3, 0)


def test_emission_times_sorted_and_deterministic():
    source = SourceModel(pair_rate_hz=1e6)
    a = generate_pairs(source, PAIR, 1e-2, seed=9)
    b = generate_pairs(source, PAIR, 1e-2, seed=9)
    assert np.array_equal(a.emit_time_ps, b.emit_time_ps)
    assert np.array_equal(a.detuning_nm, b.detuning_nm)
    assert np.all(np.diff(a.emit_time_ps) >= 0)


# --- propagate --------------------------------------------------------------

def test_propagate_no_broadening_when_everything_off():
    source = SourceModel(pair_rate_hz=1e6)
    pairs = generate_pairs(source, PAIR, 1e-3, seed=1)
    sig, idl = propagate(pairs, lossless_arm(), lossless_arm(), seed=2)
    delay = lossless_arm().path.total_delay_ps
    assert np.allclose(sig, pairs.emit_time_ps + delay)
    diffs = sig - idl
    assert np.allclose(diffs, diffs[0])


def test_propagate_dispersion_spread():
    # both arms 9.7 ps/nm, no compensation: spread FWHM = (9.7+9.7)*16 = 310.4 ps
    source = SourceModel(pair_rate_hz=1e6)
    pairs = generate_pairs(source, PAIR, 0.1, seed=6)
    sig, idl = propagate(pairs, lossless_arm(9.7), lossless_arm(9.7), seed=7)
    fwhm = np.std(sig - idl) * FWHM_FACTOR
    assert abs(fwhm - 310.4) / 310.4 < 0.03


def test_propagate_overcompensation_cancels():
    # C = -19.4 makes D_s + D_i = 0: the correlation collapses to source-limited
    source = SourceModel(pair_rate_hz=1e6)
    pairs = generate_pairs(source, PAIR, 0.01, seed=8)
    sig, idl = propagate(pairs, lossless_arm(9.7, compensation=-19.4), lossless_arm(9.7), seed=9)
    assert np.std(sig - idl) < 1e-9


def test_cancellation_point_is_negative_summed_dispersion():
    # std of (signal - idler) is minimized exactly at C = -(D_s + D_i)
    source = SourceModel(pair_rate_hz=1e6)
    pairs = generate_pairs(source, PAIR, 0.01, seed=10)
    comps = [float(c) for c in np.arange(-22.0, 0.5, 0.5)] + [-19.4]
    spreads = {}
    for comp in comps:
        sig, idl = propagate(pairs, lossless_arm(9.7, compensation=comp), lossless_arm(9.7), seed=11)
        spreads[comp] = float(np.std(sig - idl))
    assert min(spreads, key=spreads.get) == pytest.approx(-19.4)


def test_propagate_loss_binomial():
    # 3 dB arm: survival 10^-0.3 = 0.5012
    source = SourceModel(pair_rate_hz=1e6)
    pairs = generate_pairs(source, PAIR, 0.1, seed=12)
    arm = ArmConfig(synthetic_path(1.0, loss_db_per_km=3.0, dispersion_ps_nm_km=0.0))
    sig, _ = propagate(pairs, arm, lossless_arm(), seed=13)
    p = db_transmission(3.0)
    n = len(pairs)
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(sig.size / n - p) < 3 * sigma


# --- detect -----------------------------------------------------------------

def test_identity_detector_passthrough():
    arrivals = np.array([100.0, 5000.0, 123456.0])
    stream = detect(arrivals, IDEAL_SPD, 1e-6, seed=0)
    assert np.array_equal(stream.timestamp_ps, arrivals)
    assert np.all(stream.origin == 0)


def test_detector_efficiency_thinning():
    arrivals = np.sort(np.random.default_rng(0).uniform(0, 1e11, 100_000))
    spd = SpdChannel(1, SpdGroup.LOW, efficiency=0.8, jitter_fwhm_ps=0.0, dead_time_ps=0.0, dark_rate_hz=0.0)
    stream = detect(arrivals, spd, 0.1, seed=1)
    sigma = math.sqrt(100_000 * 0.8 * 0.2)
    assert abs(len(stream) - 80_000) < 3 * sigma


def test_detector_jitter_fwhm():
    arrivals = np.full(100_000, 5e7)
    spd = SpdChannel(1, SpdGroup.LOW, efficiency=1.0, jitter_fwhm_ps=80.0, dead_time_ps=0.0, dark_rate_hz=0.0)
    stream = detect(arrivals, spd, 1e-3, seed=2)
    fwhm = np.std(stream.timestamp_ps) * FWHM_FACTOR
    assert abs(fwhm - 80.0) / 80.0 < 0.03


def test_dark_counts_poisson_rate():
    spd = SpdChannel(1, SpdGroup.LOW, efficiency=1.0, jitter_fwhm_ps=0.0, dead_time_ps=0.0, dark_rate_hz=5000.0)
    counts = [len(detect(np.array([]), spd, 0.1, seed=s)) for s in range(30)]
    assert abs(np.mean(counts) - 500) < 5 * math.sqrt(500 / 30)
    stream = detect(np.array([]), spd, 0.1, seed=0)
    assert np.all(stream.origin == 1)


def test_dead_time_non_paralyzable():
    # regular 10 ps spacing with 25 ps dead time keeps every third event
    arrivals = np.arange(0.0, 1000.0, 10.0)
    spd = SpdChannel(1, SpdGroup.LOW, efficiency=1.0, jitter_fwhm_ps=0.0, dead_time_ps=25.0, dark_rate_hz=0.0)
    stream = detect(arrivals, spd, 1e-9, seed=0)
    assert np.array_equal(stream.timestamp_ps, np.arange(0.0, 1000.0, 30.0))


def test_dead_time_throughput_model():
    # Poisson stream through dead time tau: output ~ rate/(1 + rate*tau)
    rate = 1e6
    tau_s = 50e-9
    rng = np.random.default_rng(3)
    arrivals = np.sort(rng.uniform(0, 1e12, int(rate)))  # 1 s worth
    spd = SpdChannel(1, SpdGroup.LOW, efficiency=1.0, jitter_fwhm_ps=0.0,
                     dead_time_ps=tau_s * 1e12, dark_rate_hz=0.0)
    stream = detect(arrivals, spd, 1.0, seed=4)
    expected = rate / (1 + rate * tau_s)
    assert abs(len(stream) - expected) / expected < 0.01


# --- time_tag ---------------------------------------------------------------

def test_quantization_rounds_to_grid():
    stream = DetectionStream(1, np.array([100.2, 5000.7, 123456.49]))
    tagged = time_tag(stream, TaggerModel(resolution_ps=1.0, jitter_fwhm_ps=0.0, max_rate_hz=math.inf), seed=0)
    assert np.array_equal(tagged.timestamp_ps, np.array([100.0, 5001.0, 123456.0]))
    assert not tagged.saturated


def test_quantization_error_bound():
    rng = np.random.default_rng(5)
    times = np.sort(rng.uniform(0, 1e9, 10_000))
    stream = DetectionStream(1, times)
    resolution = 16.0
    tagged = time_tag(stream, TaggerModel(resolution_ps=resolution, jitter_fwhm_ps=0.0, max_rate_hz=math.inf), seed=0)
    assert np.all(np.abs(tagged.timestamp_ps - times) <= resolution / 2 + 1e-9)


def test_tagger_saturation():
    rng = np.random.default_rng(6)
    duration_s = 2e-3
    times = np.sort(rng.uniform(0, duration_s * 1e12, int(1e7 * duration_s)))
    stream = DetectionStream(1, times)
    tagged = time_tag(stream, TaggerModel(resolution_ps=1.0, jitter_fwhm_ps=0.0, max_rate_hz=8.5e6), seed=0)
    assert tagged.saturated
    assert len(tagged) / duration_s <= 8.5e6
    assert len(tagged) < len(stream)


def test_tagger_jitter_applied_before_quantization():
    stream = DetectionStream(1, np.full(50_000, 5e7))
    tagged = time_tag(stream, TaggerModel(resolution_ps=1.0, jitter_fwhm_ps=80.0, max_rate_hz=math.inf), seed=7)
    fwhm = np.std(tagged.timestamp_ps) * FWHM_FACTOR
    assert abs(fwhm - 80.0) / 80.0 < 0.03


def test_tagger_rejects_unsorted():
    with pytest.raises(UnsortedInput):
        time_tag(DetectionStream(1, np.array([5.0, 1.0])), TaggerModel(), seed=0)


def test_tag_determinism():
    rng = np.random.default_rng(8)
    times = np.sort(rng.uniform(0, 1e9, 5000))
    stream = DetectionStream(2, times)
    a = time_tag(stream, TaggerModel(), seed=9)
    b = time_tag(stream, TaggerModel(), seed=9)
    assert np.array_equal(a.timestamp_ps, b.timestamp_ps)
    assert np.array_equal(a.origin, b.origin)


# --- stream import/export ---------------------------------------------------

def make_tagged_streams():
    rng = np.random.default_rng(10)
    streams = []
    for ch in (1, 2):
        times = np.sort(rng.integers(0, 10**9, 500)).astype(np.float64)
        origin = rng.integers(0, 2, 500).astype(np.uint8)
        streams.append(DetectionStream(ch, times, origin))
    return streams


def test_csv_round_trip(tmp_path):
    streams = make_tagged_streams()
    path = tmp_path / "events.csv"
    write_streams_csv(streams, path)
    back = read_streams_csv(path)
    for s in streams:
        assert np.array_equal(back[s.channel].timestamp_ps, s.timestamp_ps)
        assert np.array_equal(back[s.channel].origin, s.origin)


def test_binary_round_trip(tmp_path):
    streams = make_tagged_streams()
    path = tmp_path / "events.bin"
    write_streams_binary(streams, path)
    back = read_streams_binary(path)
    for s in streams:
        assert np.array_equal(back[s.channel].timestamp_ps, s.timestamp_ps)
        assert np.array_equal(back[s.channel].origin, s.origin)


def test_binary_rejects_fractional_timestamps(tmp_path):
    stream = DetectionStream(1, np.array([1.5]))
    with pytest.raises(ValueError):
        write_streams_binary([stream], tmp_path / "bad.bin")
