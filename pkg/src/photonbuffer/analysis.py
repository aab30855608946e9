"""Peak amplitudes, per-round-trip loss fit, pulsed g2(0) and the analytic histogram."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .control import ControlProgram
from .detection import DetectorModel, Histogram, PS_PER_S
from .errors import AnalysisError, ConfigError, InsufficientPointsError, UndefinedG2Error, UnsupportedOracleError
from .optics import BufferModel, SourceModel

DEFAULT_GATE_HALF_WIDTH_PS = 45.0
ERROR_MODEL = "poisson-propagation"


class Normalization(str, Enum):
    MAX_PEAK = "max_peak"
    FIRST_PEAK = "first_peak"


@dataclass
class PeakSeries:
    k: np.ndarray
    raw_counts: np.ndarray
    rate: np.ndarray  # counts per live trigger; equals raw/n_triggers without dead time
    amplitude: np.ndarray
    normalization: Normalization = Normalization.MAX_PEAK

    @classmethod
    def from_rates(cls, k, raw_counts, rate, normalization=Normalization.MAX_PEAK) -> PeakSeries:
        k = np.asarray(k, dtype=np.int64)
        if k.size and np.any(np.diff(k) <= 0):
            raise ConfigError("peak indices must be strictly increasing")
        rate = np.asarray(rate, dtype=np.float64)
        normalization = Normalization(normalization)
        if normalization is Normalization.MAX_PEAK:
            ref = rate.max() if rate.size else 0.0
        else:
            ref = rate[0] if rate.size else 0.0
        if not ref > 0:
            raise AnalysisError("no counts in the reference peak; cannot normalise")
        return cls(k, np.asarray(raw_counts, dtype=np.int64), rate, rate / ref, normalization)

    def __len__(self) -> int:
        return int(self.k.shape[0])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["k", "raw_counts", "normalized_amplitude"])
            for k, raw, amp in zip(self.k.tolist(), self.raw_counts.tolist(), self.amplitude.tolist()):
                writer.writerow([k, raw, repr(amp)])


@dataclass
class LossFit:
    slope_db_per_trip: float
    intercept_db: float
    residual_rms_db: float
    n_points: int
    weighted: bool = False

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class G2Result:
    g2: float
    stderr: float
    n_coincidences: int
    n_a: int
    n_b: int
    n_triggers: int
    error_model: str = ERROR_MODEL

    def to_json(self) -> dict:
        return asdict(self)


# -- dead-time live fraction -------------------------------------------------


def _dead_multiplicity(delta: np.ndarray, dead_time_ps: float, period_ps: float) -> np.ndarray:
    """Triggers made dead at folded offset ``delta`` (in [0, P)) after one kept event.

    An event blocks the half-open interval (t, t + dead); counted over whole
    periods that is ceil((dead - delta)/P) triggers. A same-bin pair is split
    evenly between "before" and "after".
    """
    k = np.maximum(np.ceil((dead_time_ps - delta) / period_ps), 0.0)
    same = delta == 0
    k[same] = max(math.ceil(dead_time_ps / period_ps) - 0.5, 0.0)
    return k


def live_fraction(h: Histogram, dead_time_ps: float, trigger_period_ps: float,
                  bins: np.ndarray | None = None, channels: int = 1) -> np.ndarray:
    """Fraction of triggers in which the detector was live at each selected bin.

    Kept events of a non-paralysable detector start disjoint dead intervals, so
    the number of triggers dead at folded time tau is a periodic convolution of
    the histogram with ``_dead_multiplicity``. Exact when the window covers
    the whole trigger period; ``channels`` splits a merged histogram evenly
    between identical detectors.
    """
    bins = np.arange(h.n_bins) if bins is None else np.asarray(bins)
    if dead_time_ps <= 0 or h.n_triggers == 0:
        return np.ones(bins.shape[0])
    centers = h.bin_centers
    src = np.flatnonzero(h.counts)
    weights = h.counts[src].astype(np.float64) / channels
    out = np.empty(bins.shape[0])
    for i, b in enumerate(bins):
        delta = np.mod(centers[b] - centers[src], trigger_period_ps)
        dead = float(np.dot(weights, _dead_multiplicity(delta, dead_time_ps, trigger_period_ps)))
        out[i] = 1.0 - dead / h.n_triggers
    return np.clip(out, 1e-12, 1.0)


# -- peaks ---------------------------------------------------------------------


def gate_bins(h: Histogram, center_ps: float, half_width_ps: float, trigger_period_ps: float | None = None):
    """Indices of bins whose centres lie within +-half_width of ``center_ps`` (folded)."""
    c = h.bin_centers
    if trigger_period_ps:
        d = np.mod(c - center_ps, trigger_period_ps)
        d = np.minimum(d, trigger_period_ps - d)
    else:
        d = np.abs(c - center_ps)
    return np.flatnonzero(d <= half_width_ps)


def peak_rates(h: Histogram, centers_ps, half_width_ps: float, trigger_period_ps: float,
               dead_time_ps: float = 0.0, channels: int = 1):
    """Raw gate counts and dead-time corrected counts per trigger for each centre."""
    raw, rate = [], []
    for center in centers_ps:
        idx = gate_bins(h, center, half_width_ps, trigger_period_ps)
        counts = h.counts[idx].astype(np.float64)
        raw.append(int(round(counts.sum())))
        live = live_fraction(h, dead_time_ps, trigger_period_ps, idx, channels)
        rate.append(float(np.sum(counts / live)) / max(h.n_triggers, 1))
    return np.asarray(raw, dtype=np.int64), np.asarray(rate)


def peak_centroid(h: Histogram, center_ps: float, half_width_ps: float,
                  trigger_period_ps: float | None = None) -> float:
    idx = gate_bins(h, center_ps, half_width_ps, trigger_period_ps)
    w = h.counts[idx].astype(np.float64)
    if w.sum() <= 0:
        raise AnalysisError(f"no counts around {center_ps} ps")
    return float(np.dot(w, h.bin_centers[idx]) / w.sum())


def extract_peaks(h: Histogram, buf: BufferModel, capture_time_ps: float, k_max: int,
                  gate_half_width_ps: float = DEFAULT_GATE_HALF_WIDTH_PS,
                  normalization: Normalization = Normalization.MAX_PEAK, *,
                  trigger_period_ps: float | None = None, dead_time_ps: float = 0.0,
                  channels: int = 1) -> PeakSeries:
    """Integrate the histogram around capture + k * round_trip for k = 0..k_max.

    With ``dead_time_ps > 0`` each gate is divided by the live fraction of the
    triggers, which removes the count-rate dependence a dead time longer than
    the pulse period introduces.
    """
    if gate_half_width_ps >= buf.round_trip_time_ps / 2:
        raise ConfigError(
            f"gate half width {gate_half_width_ps} ps overlaps neighbouring peaks "
            f"(must be < {buf.round_trip_time_ps / 2} ps)"
        )
    if int(np.sum(h.counts)) == 0:
        raise AnalysisError("histogram is empty")
    period = trigger_period_ps or (h.t1_ps - h.t0_ps)
    ks = np.arange(k_max + 1)
    centers = capture_time_ps + ks * buf.round_trip_time_ps
    raw, rate = peak_rates(h, centers, gate_half_width_ps, period, dead_time_ps, channels)
    return PeakSeries.from_rates(ks, raw, rate, normalization)


def fit_loss(series: PeakSeries, k_min: int = 1, weighted: bool = False) -> LossFit:
    """Least-squares line through -10 log10(A_k) versus k; the slope is dB per round trip."""
    sel = series.k >= k_min
    k = series.k[sel].astype(np.float64)
    amp = series.amplitude[sel]
    counts = series.raw_counts[sel]
    bad = amp <= 0
    if np.any(bad):
        warnings.warn(f"excluding {int(bad.sum())} peaks with zero amplitude from the loss fit",
                      stacklevel=2)
        k, amp, counts = k[~bad], amp[~bad], counts[~bad]
    if k.size < 2:
        raise InsufficientPointsError(
            f"loss fit needs at least 2 peaks with counts (k >= {k_min}), got {k.size}"
        )
    y = -10.0 * np.log10(amp)
    w = np.sqrt(counts.astype(np.float64)) if weighted else None
    slope, intercept = np.polyfit(k, y, 1, w=w)
    resid = y - (slope * k + intercept)
    return LossFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid ** 2))),
                   int(k.size), weighted)


# -- g2(0) ---------------------------------------------------------------------


def _gated_triggers(times_ps, trigger_period_ps: float, gate) -> np.ndarray:
    t = np.asarray(times_ps, dtype=np.float64)
    trig = np.floor(t / trigger_period_ps)
    folded = t - trig * trigger_period_ps
    inside = (folded >= gate[0]) & (folded < gate[1])
    return trig[inside].astype(np.int64)


def g2_from_counts(n_cc: int, n_a: int, n_b: int, n_triggers: int) -> G2Result:
    if n_a == 0 or n_b == 0:
        raise UndefinedG2Error(f"g2 undefined with singles n_a={n_a}, n_b={n_b}")
    if n_cc > 0:
        g2 = n_cc * n_triggers / (n_a * n_b)
        err = g2 * math.sqrt(1 / n_cc + 1 / n_a + 1 / n_b)
    else:
        g2 = 0.0
        err = n_triggers / (n_a * n_b) * math.sqrt(1 + 1 / n_a + 1 / n_b)
    return G2Result(g2, err, int(n_cc), int(n_a), int(n_b), int(n_triggers))


def estimate_g2(events_a, events_b, trigger_period_ps: float, gate, n_triggers: int) -> G2Result:
    """Pulsed g2(0) from two channels' click times.

    Singles are in-gate events per channel; a coincidence is a trigger with at
    least one in-gate event on both channels.
    """
    if n_triggers < 1:
        raise ConfigError("n_triggers must be >= 1")
    acc = G2Accumulator(trigger_period_ps, gate)
    acc.add(events_a, events_b)
    return acc.result(n_triggers)


class G2Accumulator:
    """Additive singles/coincidence counters; batches must not split a trigger."""

    def __init__(self, trigger_period_ps: float, gate):
        if not gate[1] > gate[0]:
            raise ConfigError("g2 gate must have hi > lo")
        self.period = float(trigger_period_ps)
        self.gate = (float(gate[0]), float(gate[1]))
        self.n_a = self.n_b = self.n_cc = 0

    def add(self, times_a, times_b) -> None:
        ta = _gated_triggers(times_a, self.period, self.gate)
        tb = _gated_triggers(times_b, self.period, self.gate)
        self.n_a += int(ta.size)
        self.n_b += int(tb.size)
        self.n_cc += int(np.intersect1d(ta, tb, assume_unique=False).size)

    def merge(self, other: G2Accumulator) -> None:
        self.n_a += other.n_a
        self.n_b += other.n_b
        self.n_cc += other.n_cc

    def result(self, n_triggers: int) -> G2Result:
        return g2_from_counts(self.n_cc, self.n_a, self.n_b, n_triggers)


def storage_gate(capture_time_ps: float, n_trips: int, round_trip_time_ps: float,
                 half_width_ps: float = DEFAULT_GATE_HALF_WIDTH_PS) -> tuple[float, float]:
    center = capture_time_ps + n_trips * round_trip_time_ps
    return center - half_width_ps, center + half_width_ps


# -- analytic oracle -------------------------------------------------------------


def exit_probabilities(buf: BufferModel, program: ControlProgram, entry_time_ps: float) -> np.ndarray:
    """Probability that a photon entering the chip exits after k round trips."""
    cross = program.cross_fractions(buf, entry_time_ps)
    t_rt = buf.round_trip_transmission
    out = np.zeros(cross.shape[0])
    out[0] = 1.0 - cross[0]
    inside = cross[0]
    for k in range(1, cross.shape[0]):
        inside *= t_rt
        out[k] = inside * cross[k]
        inside *= 1.0 - cross[k]
    return out * buf.input_transmission * buf.output_transmission


def expected_histogram(src: SourceModel, buf: BufferModel, program: ControlProgram,
                       det: DetectorModel, n_pulses: int, bin_width_ps: float = 1.0,
                       window=None, channels: int = 1) -> Histogram:
    """Expected (real-valued) histogram for rectangular gating and no dead time.

    Peak k holds mean_photons * T_in * T_rt**k * T_out * efficiency * n_pulses
    (times switch-routing factors when extinction is finite), spread over the
    bins by the Gaussian jitter; dark counts add a flat floor per channel.
    """
    if not program.is_ideal:
        raise UnsupportedOracleError("the analytic histogram needs rectangular, unfiltered gates")
    period = src.repetition_period_ps
    t0, t1 = (0.0, period) if window is None else (float(window[0]), float(window[1]))
    n_bins = int(round((t1 - t0) / bin_width_ps))
    if not math.isclose(n_bins * bin_width_ps, t1 - t0):
        raise ConfigError("bin width does not divide the window")
    edges = t0 + np.arange(n_bins + 1) * bin_width_ps
    counts = np.zeros(n_bins)
    means = src.mean_photons * det.efficiency * n_pulses * exit_probabilities(buf, program, src.pulse_epoch_ps)
    for k, mean in enumerate(means):
        if mean <= 0:
            continue
        t = t0 + np.mod(src.pulse_epoch_ps + k * buf.round_trip_time_ps - t0, period)
        if det.jitter_sigma_ps > 0:
            cdf = ndtr((edges - t) / det.jitter_sigma_ps)
            counts += mean * np.diff(cdf)
        else:
            b = int(math.floor((t - t0) / bin_width_ps))
            if 0 <= b < n_bins:
                counts[b] += mean
    counts += channels * det.dark_rate_hz / PS_PER_S * bin_width_ps * n_pulses
    return Histogram(float(bin_width_ps), t0, counts, int(n_pulses))


def write_json(path: str | Path, doc: dict) -> Path:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return Path(path)
