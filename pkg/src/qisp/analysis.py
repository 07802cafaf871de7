"""Biphoton time-correlation analysis.

Builds detection-time-difference histograms with a linear two-pointer
sweep, fits a Gaussian peak (damped Gauss-Newton, moment-seeded), and
runs the dispersion-compensation sweep that demonstrates non-local
dispersion cancellation: the correlation peak is narrowest when the
tunable compensation cancels the summed fiber dispersion of both arms,
leaving only the detector/tagger jitter floor.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    DegenerateBinning,
    EmptyHistogram,
    InsufficientData,
    NonConvergence,
    QispError,
    UnsortedInput,
)
from .fabric import EpsChannel, SpdChannel
from .photonics import (
    FWHM_FACTOR,
    ArmConfig,
    SourceModel,
    TaggerModel,
    detect,
    generate_pairs,
    propagate,
    time_tag,
)

FIT_MAX_ITERATIONS = 200
FIT_RELATIVE_TOLERANCE = 1e-8


@dataclass
class Histogram:
    """Counts of (t_a - t_b) differences over [lo, hi) in fixed bins."""

    bin_width_ps: float
    lo_ps: float
    hi_ps: float
    counts: np.ndarray
    total_pairs_examined: int

    @property
    def bin_centers(self) -> np.ndarray:
        return self.lo_ps + (np.arange(self.counts.size) + 0.5) * self.bin_width_ps

    @property
    def bin_edges(self) -> np.ndarray:
        return self.lo_ps + np.arange(self.counts.size + 1) * self.bin_width_ps

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_lo_ps", "count"])
            for lo, c in zip(self.bin_edges[:-1], self.counts):
                writer.writerow([repr(float(lo)), int(c)])


@dataclass
class GaussianFit:
    amplitude: float
    center_ps: float
    sigma_ps: float
    baseline: float
    fwhm_ps: float
    fwhm_uncertainty_ps: float
    converged: bool
    residual_norm: float
    iterations: int = 0


@dataclass
class SweepPoint:
    compensation_ps_nm: float
    fit: Optional[GaussianFit]
    error: Optional[str] = None


@dataclass
class SweepResult:
    points: list[SweepPoint]
    argmin_compensation_ps_nm: Optional[float]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["compensation_ps_nm", "fwhm_ps", "fwhm_err_ps", "center_ps", "converged"])
            for p in self.points:
                if p.fit is not None and p.fit.converged:
                    writer.writerow([
                        repr(float(p.compensation_ps_nm)),
                        repr(float(p.fit.fwhm_ps)),
                        repr(float(p.fit.fwhm_uncertainty_ps)),
                        repr(float(p.fit.center_ps)),
                        "true",
                    ])
                else:
                    writer.writerow([repr(float(p.compensation_ps_nm)), "nan", "nan", "nan", "false"])


def _stream_times(stream) -> np.ndarray:
    times = np.asarray(getattr(stream, "timestamp_ps", stream), dtype=np.float64)
    if times.size > 1 and np.any(np.diff(times) < 0):
        raise UnsortedInput("event stream must be sorted by timestamp")
    return times


def build_histogram(stream_a, stream_b, bin_width_ps: float, window_ps: float) -> Histogram:
    """Histogram of t_a - t_b over all pairs with |t_a - t_b| < window.

    Linear two-pointer sweep over the sorted streams (searchsorted range
    per left event), never the all-pairs product. Bins are aligned so 0
    is an interior edge; when window is not a whole number of bins the
    outermost bins are only partially covered (pairs are still admitted
    strictly by |difference| < window).
    """
    if bin_width_ps <= 0:
        raise DegenerateBinning("bin width must be > 0")
    if window_ps < bin_width_ps:
        raise DegenerateBinning(f"window {window_ps} ps smaller than one {bin_width_ps} ps bin")
    a = _stream_times(stream_a)
    b = _stream_times(stream_b)
    n_half = math.ceil(window_ps / bin_width_ps)
    lo = -n_half * bin_width_ps
    nbins = 2 * n_half
    counts = np.zeros(nbins, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        return Histogram(bin_width_ps, lo, -lo, counts, 0)

    start = np.searchsorted(b, a - window_ps, side="right")
    stop = np.searchsorted(b, a + window_ps, side="left")
    span = stop - start
    total = int(span.sum())
    if total == 0:
        return Histogram(bin_width_ps, lo, -lo, counts, 0)

    # grouped arange: indices into b for every admitted pair (rows with an
    # empty range would corrupt the step construction, drop them first)
    nz = span > 0
    a_nz, start_nz, span_nz = a[nz], start[nz], span[nz]
    steps = np.ones(total, dtype=np.int64)
    heads = np.cumsum(span_nz)[:-1]
    steps[0] = start_nz[0]
    steps[heads] = start_nz[1:] - (start_nz[:-1] + span_nz[:-1] - 1)
    b_idx = np.cumsum(steps)
    diffs = np.repeat(a_nz, span_nz) - b[b_idx]

    bins = np.floor((diffs - lo) / bin_width_ps).astype(np.int64)
    np.clip(bins, 0, nbins - 1, out=bins)
    counts += np.bincount(bins, minlength=nbins)
    return Histogram(bin_width_ps, lo, -lo, counts, total)


def _gaussian(t: np.ndarray, amp: float, center: float, sigma: float, base: float) -> np.ndarray:
    return amp * np.exp(-((t - center) ** 2) / (2.0 * sigma * sigma)) + base


def _chi2(p: np.ndarray, t: np.ndarray, y: np.ndarray) -> float:
    """Pearson chi-square: residuals weighted by the model's own Poisson
    variance (floored at 1 for empty-background bins)."""
    m = _gaussian(t, *p)
    return float(np.sum((y - m) ** 2 / np.clip(m, 1.0, None)))


def fit_gaussian(hist: Histogram) -> GaussianFit:
    """Gaussian + flat baseline fit via damped Gauss-Newton.

    Counts are Poisson, so residuals are weighted by the model value
    (Pearson chi-square); that keeps the reported uncertainties honest
    for both tall peaks and sparse background. Seeded from
    background-subtracted moments; the damping factor grows tenfold on a
    rejected step and shrinks on an accepted one. The FWHM uncertainty is
    the sigma standard error from the weighted normal equations at the
    optimum, scaled by 2*sqrt(2 ln 2).
    """
    y = hist.counts.astype(np.float64)
    t = hist.bin_centers
    if np.count_nonzero(y) < 5:
        raise InsufficientData(f"only {np.count_nonzero(y)} populated bins, need >= 5")
    if y.max() == y.min():
        raise InsufficientData("histogram has no peak above its floor")

    base0 = float(y.min())
    amp0 = float(y.max() - base0)
    w0 = np.clip(y - base0, 0.0, None)
    center0 = float(np.sum(w0 * t) / np.sum(w0))
    var0 = float(np.sum(w0 * (t - center0) ** 2) / np.sum(w0))
    sigma0 = math.sqrt(var0) if var0 > 0 else hist.bin_width_ps
    p = np.array([amp0, center0, sigma0, base0])

    lam = 1e-3
    chi2 = _chi2(p, t, y)
    converged = False
    iterations = 0
    jtwj = None
    for iterations in range(1, FIT_MAX_ITERATIONS + 1):
        amp, center, sigma, _ = p
        z = (t - center) / sigma
        e = np.exp(-0.5 * z * z)
        model = _gaussian(t, *p)
        weights = 1.0 / np.clip(model, 1.0, None)
        jac = np.column_stack([e, amp * e * z / sigma, amp * e * z * z / sigma, np.ones_like(t)])
        jw = jac * weights[:, None]
        jtwj = jac.T @ jw
        jtwr = jw.T @ (model - y)
        stepped = False
        for _attempt in range(25):
            damped = jtwj + lam * np.diag(np.diag(jtwj))
            try:
                delta = np.linalg.solve(damped, -jtwr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            p_new = p + delta
            chi2_new = _chi2(p_new, t, y)
            if np.isfinite(chi2_new) and chi2_new <= chi2:
                rel = float(np.max(np.abs(delta) / np.maximum(np.abs(p), 1e-12)))
                p, chi2 = p_new, chi2_new
                lam = max(lam / 10.0, 1e-12)
                stepped = True
                if rel < FIT_RELATIVE_TOLERANCE:
                    converged = True
                break
            lam *= 10.0
        if converged or not stepped:
            break

    amp, center, sigma, base = p
    sigma = abs(float(sigma))
    dof = max(y.size - 4, 1)
    # known-variance chi-square covariance, inflated if overdispersed
    scale = max(chi2 / dof, 1.0)
    try:
        cov = scale * np.linalg.inv(jtwj)
        sigma_se = math.sqrt(max(cov[2, 2], 0.0))
    except np.linalg.LinAlgError:
        sigma_se = float("nan")
    fit = GaussianFit(
        amplitude=float(amp),
        center_ps=float(center),
        sigma_ps=sigma,
        baseline=float(base),
        fwhm_ps=FWHM_FACTOR * sigma,
        fwhm_uncertainty_ps=FWHM_FACTOR * sigma_se,
        converged=converged,
        residual_norm=math.sqrt(chi2 / dof),
        iterations=iterations,
    )
    if not converged:
        raise NonConvergence(
            f"no convergence after {iterations} iterations (relative tolerance {FIT_RELATIVE_TOLERANCE})",
            fit=replace(fit, converged=False),
        )
    if amp <= 0 or not math.isfinite(amp) or not math.isfinite(sigma) or sigma <= 0:
        raise NonConvergence(f"degenerate optimum amplitude={amp} sigma={sigma}", fit=replace(fit, converged=False))
    return fit


@dataclass
class CoincidenceMetrics:
    coincidence_rate: float   # counts inside the peak span
    accidental_rate: float    # mean off-peak bin count scaled to the span
    car: float                # coincidence-to-accidental ratio (+inf if no background)


def coincidence_metrics(hist: Histogram, peak_halfwidth_ps: float, center_ps: float | None = None) -> CoincidenceMetrics:
    if hist.counts.sum() == 0:
        raise EmptyHistogram("no counts to analyze")
    centers = hist.bin_centers
    if center_ps is None:
        center_ps = float(centers[int(np.argmax(hist.counts))])
    in_peak = np.abs(centers - center_ps) <= peak_halfwidth_ps
    coincidences = float(hist.counts[in_peak].sum())
    off = hist.counts[~in_peak]
    accidentals = float(off.mean() * in_peak.sum()) if off.size else 0.0
    car = coincidences / accidentals if accidentals > 0 else math.inf
    return CoincidenceMetrics(coincidences, accidentals, car)


@dataclass(frozen=True)
class SweepScenario:
    """Everything the emission-to-fit pipeline needs for one experiment."""

    source: SourceModel
    channel_pair: tuple[EpsChannel, EpsChannel]
    signal_arm: ArmConfig
    idler_arm: ArmConfig
    signal_detector: SpdChannel
    idler_detector: SpdChannel
    tagger: TaggerModel = TaggerModel()
    bin_width_ps: float = 20.0
    window_ps: float = 2000.0


def correlation_histogram(scenario: SweepScenario, pairs_target: int, seed: int) -> Histogram:
    """Run emission -> transport -> detection -> tagging -> histogram once."""
    duration_s = pairs_target / scenario.source.pair_rate_hz
    pairs = generate_pairs(scenario.source, scenario.channel_pair, duration_s, seed)
    sig_t, idl_t = propagate(pairs, scenario.signal_arm, scenario.idler_arm, seed + 1)
    sig = detect(sig_t, scenario.signal_detector, duration_s, seed + 2)
    idl = detect(idl_t, scenario.idler_detector, duration_s, seed + 3)
    sig = time_tag(sig, scenario.tagger, seed + 4)
    idl = time_tag(idl, scenario.tagger, seed + 5)
    return build_histogram(sig, idl, scenario.bin_width_ps, scenario.window_ps)


def run_dispersion_sweep(
    scenario: SweepScenario,
    compensations: list[float],
    pairs_per_point: int,
    seed: int,
) -> SweepResult:
    """Fit the correlation peak at each signal-arm compensation setting.

    Per-point seeds derive as seed + 1000 * index, so points are
    independent and the whole sweep is reproducible. Fit failures are
    recorded on their point instead of aborting the sweep; argmin runs
    over the converged points only.
    """
    if len(compensations) < 1:
        raise ValueError("need at least one compensation value")
    if pairs_per_point < 1000:
        raise ValueError("pairs_per_point must be >= 1000 for a usable fit")
    points: list[SweepPoint] = []
    for k, comp in enumerate(compensations):
        point_scenario = replace(scenario, signal_arm=replace(scenario.signal_arm, compensation_ps_nm=comp))
        hist = correlation_histogram(point_scenario, pairs_per_point, seed + 1000 * k)
        try:
            fit = fit_gaussian(hist)
            points.append(SweepPoint(comp, fit))
        except NonConvergence as exc:
            points.append(SweepPoint(comp, exc.fit, error=str(exc)))
        except QispError as exc:
            points.append(SweepPoint(comp, None, error=str(exc)))
    usable = [p for p in points if p.fit is not None and p.fit.converged]
    argmin = min(usable, key=lambda p: p.fit.fwhm_ps).compensation_ps_nm if usable else None
    return SweepResult(points, argmin)


def expected_fwhm_ps(
    summed_dispersion_ps_nm: float,
    spectral_fwhm_nm: float,
    jitter_fwhms_ps: list[float],
) -> float:
    """Closed-form peak width: quadrature sum of the dispersion-broadened
    term |sum D| * spectral width and every independent jitter."""
    terms = (summed_dispersion_ps_nm * spectral_fwhm_nm) ** 2
    terms += sum(j * j for j in jitter_fwhms_ps)
    return math.sqrt(terms)
