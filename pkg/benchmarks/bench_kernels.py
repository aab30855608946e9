"""Time the numba and numpy kernels on the same inputs.

    python benchmarks/bench_kernels.py [--pulses 2000000] [--repeat 3]

Both backends are importable in one process (dispatch by name), so the
comparison does not need the PHOTONBUFFER_DISABLE_NUMBA flag. Integer outputs
are checked for equality before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from photonbuffer import kernels
from photonbuffer._accel import HAVE_NUMBA
from photonbuffer.config import ExperimentConfig
from photonbuffer.analysis import storage_gate
from photonbuffer.pipeline import simulate
from photonbuffer.rng import Stream, stream_key


def make_inputs(n_pulses: int, seed: int = 7):
    cfg = ExperimentConfig().resolve()
    buf = cfg.buffer_model()
    program = cfg.program()
    cross = program.cross_fractions(buf, cfg.source.pulse_epoch_ps)
    counts = kernels.photon_numbers_np(stream_key(seed, Stream.SOURCE), 0, n_pulses,
                                       kernels.KIND_COHERENT, 0.5, 1)
    pulse, photon, trips, tag = kernels.propagate_np(
        stream_key(seed, Stream.LOOP), 0, counts, cross, buf.input_transmission,
        buf.round_trip_transmission, buf.output_transmission, 5)
    out = tag >= 0
    times = cfg.source.pulse_epoch_ps + pulse[out] * 10_000.0 + trips[out] * 100.0
    rng = np.random.default_rng(seed)
    clicks = np.sort(rng.uniform(0, n_pulses * 10_000.0, size=max(n_pulses // 20, 1)))
    return {
        "photon_numbers": (stream_key(seed, Stream.SOURCE), 0, n_pulses, kernels.KIND_COHERENT, 0.5, 1),
        "propagate": (stream_key(seed, Stream.LOOP), 0, counts, cross, buf.input_transmission,
                      buf.round_trip_transmission, buf.output_transmission, 5),
        "split": (stream_key(seed, Stream.SPLITTER), pulse[out], photon[out], 0.5),
        "click": (stream_key(seed, Stream.DETECT_A), pulse[out], photon[out], times, 0.8, 15.0),
        "dark_counts": (stream_key(seed, Stream.DARK_A), np.int64(0), n_pulses // 1000 + 1, 1e7, 5.0),
        "dead_time": (clicks, 50_000.0, -np.inf),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray) and a.dtype.kind == "f":
        return np.allclose(a, b, rtol=0, atol=1e-6)
    return np.array_equal(a, b)


def best_of(fn, args, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pulses", type=int, default=2_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    inputs = make_inputs(args.pulses)
    print(f"{'kernel':<16}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, call_args in inputs.items():
        nb, npf = kernels.BACKENDS["numba"][name], kernels.BACKENDS["numpy"][name]
        if not _same(nb(*call_args), npf(*call_args)):
            raise SystemExit(f"{name}: backends disagree")
        t_nb = best_of(nb, call_args, args.repeat)
        t_np = best_of(npf, call_args, args.repeat)
        print(f"{name:<16}{t_nb * 1e3:>12.2f}{t_np * 1e3:>12.2f}{t_np / t_nb:>10.1f}x")

    cfg = ExperimentConfig(n_pulses=args.pulses).resolve()
    run = (cfg.source_model(), cfg.buffer_model(), cfg.program(), cfg.detector_model(),
           cfg.n_pulses, cfg.master_seed)
    gate = storage_gate(1000.0, 5, 100.0)
    times = {}
    for backend in ("numba", "numpy"):
        simulate(*run, g2_gate=gate, backend=backend)  # warm-up
        t0 = time.perf_counter()
        result = simulate(*run, g2_gate=gate, backend=backend)
        times[backend] = time.perf_counter() - t0
        times[backend + "_clicks"] = dict(result.tally.clicks)
    if times["numba_clicks"] != times["numpy_clicks"]:
        raise SystemExit("pipeline: backends disagree")
    print(f"{'simulate':<16}{times['numba'] * 1e3:>12.2f}{times['numpy'] * 1e3:>12.2f}"
          f"{times['numpy'] / times['numba']:>10.1f}x")


if __name__ == "__main__":
    main()
