"""End-to-end chain: source -> switch/loop -> splitter -> detectors -> histogram and g2.

Pulses are processed in fixed-size chunks. The stateless part of a chunk
(photon numbers, propagation, splitting, clicks, dark counts) can run on any
worker; dead time and accumulation then run in time order on the caller's
thread. Chunk boundaries depend only on ``chunk_pulses``, never on ``jobs``,
and every random draw is keyed by pulse or block index, so results are the
same for any worker count.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .analysis import G2Accumulator, G2Result
from .control import ControlProgram
from .detection import (
    Channel,
    DetectionEvents,
    DetectorChannel,
    DetectorModel,
    Histogram,
    HistogramAccumulator,
    beamsplit,
)
from .errors import AnalysisError
from .optics import BufferModel, PhotonRecords, Propagator, SourceModel, check_run
from .rng import RngStream, Stream

DEFAULT_CHUNK_PULSES = 1 << 20


@dataclass
class Tally:
    n_pulses: int = 0
    photons_out: int = 0
    n_lost: int = 0
    n_overflow: int = 0
    by_tag: dict = field(default_factory=lambda: {"Stored": 0, "Leaked": 0, "DirectPass": 0})
    clicks: dict = field(default_factory=lambda: {"A": 0, "B": 0})

    def to_json(self) -> dict:
        return {
            "n_pulses": self.n_pulses,
            "photons_out": self.photons_out,
            "n_lost": self.n_lost,
            "n_overflow": self.n_overflow,
            "exits_by_path": dict(self.by_tag),
            "clicks": dict(self.clicks),
        }


@dataclass
class SimulationResult:
    histogram: Histogram
    channel_histograms: dict
    tally: Tally
    g2: G2Result | None = None
    g2_counts: G2Accumulator | None = None
    g2_error: str | None = None
    records: PhotonRecords | None = None
    events: DetectionEvents | None = None


def _backend(name: str | None):
    if name is None:
        return None
    return kernels.BACKENDS[name]


class _ChunkWorker:
    def __init__(self, src, buf, program, det, seed, splitter_ratio, backend):
        engine_backend = None if backend is None else {
            "photon_numbers": backend["photon_numbers"], "propagate": backend["propagate"]}
        self.engine = Propagator(src, buf, program, seed, engine_backend)
        self.period = src.repetition_period_ps
        self.ratio = splitter_ratio
        self.split_rng = RngStream(seed, Stream.SPLITTER)
        self.split_fn = kernels.split if backend is None else backend["split"]
        self.channels = [DetectorChannel(det, seed, Channel.A, backend),
                         DetectorChannel(det, seed, Channel.B, backend)]

    def __call__(self, span):
        start, count = span
        records = self.engine.run_chunk(start, count)
        if self.ratio is None:
            parts = (records, PhotonRecords.empty())
        else:
            to_a = self.split_fn(self.split_rng.key, records.pulse_index, records.photon_index,
                                 float(self.ratio))
            parts = (records.take(to_a), records.take(~to_a))
        t0, t1 = start * self.period, (start + count) * self.period
        raw = [self.channels[0].raw_events(parts[0], t0, t1)]
        if self.ratio is None:
            raw.append(np.empty(0))
        else:
            raw.append(self.channels[1].raw_events(parts[1], t0, t1))
        return records, raw


def _chunks(n_pulses: int, chunk_pulses: int):
    for start in range(0, n_pulses, chunk_pulses):
        yield start, min(chunk_pulses, n_pulses - start)


def _ordered_map(fn, items, jobs: int):
    """Like ``map`` but with at most ~2*jobs chunks in flight."""
    if jobs <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        pending = deque()
        for item in items:
            pending.append(pool.submit(fn, item))
            if len(pending) >= 2 * jobs:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


def simulate(src: SourceModel, buf: BufferModel, program: ControlProgram, det: DetectorModel,
             n_pulses: int, seed: int, *, splitter_ratio: float | None = 0.5,
             bin_width_ps: float = 1.0, window=None, g2_gate=None,
             keep_records: bool = False, keep_events: bool = False,
             chunk_pulses: int = DEFAULT_CHUNK_PULSES, jobs: int = 1,
             backend: str | None = None) -> SimulationResult:
    """Run the full measurement chain and accumulate histograms and g2 counters.

    ``splitter_ratio=None`` sends every photon to detector A (no HBT
    splitter). ``g2_gate`` is a folded time window ``(lo, hi)``; g2 is only
    computed when a splitter is present.
    """
    check_run(src, buf, program, n_pulses)
    if splitter_ratio is not None:
        # validates the ratio once, up front
        beamsplit(PhotonRecords.empty(), splitter_ratio, RngStream(seed, Stream.SPLITTER))
    bk = _backend(backend)
    period = src.repetition_period_ps
    window = (0.0, period) if window is None else window
    worker = _ChunkWorker(src, buf, program, det, seed, splitter_ratio, bk)
    # dead-time state lives on the sequential side only
    dead_channels = [DetectorChannel(det, seed, Channel.A, bk), DetectorChannel(det, seed, Channel.B, bk)]
    hists = [HistogramAccumulator(period, bin_width_ps, window) for _ in range(2)]
    g2_acc = G2Accumulator(period, g2_gate) if (g2_gate is not None and splitter_ratio is not None) else None
    tally = Tally(n_pulses=n_pulses)
    kept_records, kept_events = [], []
    carry = [np.empty(0), np.empty(0)]
    finalized_until = -math.inf

    spans = list(_chunks(n_pulses, chunk_pulses))
    for (start, count), (records, raw) in zip(spans, _ordered_map(worker, spans, jobs)):
        tally.photons_out += len(records)
        tally.n_lost += records.n_lost
        tally.n_overflow += records.n_overflow
        tags = np.bincount(records.path_tag.astype(np.int64), minlength=3)
        tally.by_tag["Stored"] += int(tags[kernels.STORED])
        tally.by_tag["Leaked"] += int(tags[kernels.LEAKED])
        tally.by_tag["DirectPass"] += int(tags[kernels.DIRECT_PASS])
        if keep_records:
            kept_records.append(records)

        last_chunk = start + count >= n_pulses
        split_at = math.inf if last_chunk else (start + count - 1) * period
        final = []
        for c in range(2):
            if raw[c].size and raw[c][0] < finalized_until:
                raise AnalysisError("event jitter crossed a finalised chunk boundary")
            pending = np.sort(np.concatenate((carry[c], raw[c])), kind="stable")
            cut = np.searchsorted(pending, split_at, side="left")
            carry[c] = pending[cut:]
            kept = dead_channels[c].apply_dead_time(pending[:cut])
            hists[c].add(kept)
            tally.clicks[Channel(c).name] += int(kept.size)
            final.append(kept)
        finalized_until = split_at
        if g2_acc is not None:
            g2_acc.add(final[0], final[1])
        if keep_events:
            kept_events.append(DetectionEvents(np.zeros(final[0].size, np.int8), final[0]))
            kept_events.append(DetectionEvents(np.ones(final[1].size, np.int8), final[1]))

    channel_hists = {ch.name: hists[int(ch)].histogram(n_pulses) for ch in Channel}
    merged = channel_hists["A"] + channel_hists["B"]
    merged.n_triggers = n_pulses
    result = SimulationResult(merged, channel_hists, tally)
    if g2_acc is not None:
        result.g2_counts = g2_acc
        try:
            result.g2 = g2_acc.result(n_pulses)
        except AnalysisError as exc:
            result.g2_error = str(exc)
    if keep_records:
        result.records = PhotonRecords.concat(kept_records)
    if keep_events:
        result.events = DetectionEvents.merge(kept_events)
    return result
