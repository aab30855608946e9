"""Hot inner loops of the Monte Carlo engine, in two interchangeable forms.

``*_nb`` functions are numba loop kernels, ``*_np`` functions are vectorised
numpy equivalents that consume exactly the same random slots, so both give
identical integer outcomes (jittered times may differ in the last ulp because
``log``/``cos`` come from different math libraries). The module-level names
without suffix point at whichever backend ``_accel.USE_NUMBA`` selects.

Random draws: the photon number of pulse i is slot i of the SOURCE key (one
SplitMix64 step per pulse). Each photon then gets its own key,
child_key(child_key(LOOP, pulse), j), with one uniform per switch encounter:
    slot k          encounter k (k = 0 .. max_trips); the unit interval is cut
                    into [exit | keep circulating | lost], with the coupler or
                    loop survival folded into the same draw
    slot max+1      output coupling survival
"""

from __future__ import annotations

import math

import numpy as np

from . import _accel
from ._accel import njit
from .rng import (
    child_key,
    child_key_np,
    uniform,
    uniform_np,
    uniform_open,
    uniform_open_np,
)

STORED = 0
LEAKED = 1
DIRECT_PASS = 2
LOST = -1
OVERFLOW = -2

KIND_COHERENT = 0
KIND_FOCK = 1

MAX_POISSON_ITER = 2000
TWO_PI = 2.0 * math.pi


# -- photon numbers per pulse -------------------------------------------------


@njit(cache=True, nogil=True)
def photon_numbers_nb(key, start, count, kind, mu, fock_n):
    out = np.empty(count, dtype=np.int32)
    if kind == KIND_FOCK:
        out[:] = fock_n
        return out
    p0 = math.exp(-mu)
    for i in range(count):
        u = uniform(key, start + i)
        n = 0
        p = p0
        cdf = p0
        while u >= cdf and n < MAX_POISSON_ITER:
            n += 1
            p *= mu / n
            cdf += p
        out[i] = n
    return out


def photon_numbers_np(key, start, count, kind, mu, fock_n):
    if kind == KIND_FOCK:
        return np.full(count, fock_n, dtype=np.int32)
    idx = np.arange(start, start + count, dtype=np.int64)
    u = uniform_np(np.full(count, key, dtype=np.uint64), idx)
    out = np.zeros(count, dtype=np.int32)
    p = np.float64(math.exp(-mu))
    cdf = p
    active = u >= cdf
    n = 0
    while active.any() and n < MAX_POISSON_ITER:
        n += 1
        out[active] = n
        # same accumulation order as the loop kernel: p *= mu / n; cdf += p
        p = p * (mu / n)
        cdf = cdf + p
        active &= u >= cdf
    return out


# -- propagation through coupling, switch and loop ---------------------------


@njit(cache=True, nogil=True)
def propagate_nb(key, start, counts, cross, t_in, t_rt, t_out, hold):
    max_trips = cross.shape[0] - 1
    total = 0
    for i in range(counts.shape[0]):
        total += counts[i]
    pulse = np.empty(total, dtype=np.int64)
    photon = np.empty(total, dtype=np.int32)
    trips = np.empty(total, dtype=np.int16)
    tag = np.empty(total, dtype=np.int8)
    idx = 0
    for i in range(counts.shape[0]):
        n = counts[i]
        if n == 0:
            continue
        pkey = child_key(key, start + i)
        for j in range(n):
            g = child_key(pkey, j)
            pulse[idx] = start + i
            photon[idx] = j
            k = -1
            status = LOST
            # encounter 0: [enter loop | straight through | lost in coupler]
            u = uniform(g, 0)
            if u < t_in * cross[0]:
                status = OVERFLOW
                for trip in range(1, max_trips + 1):
                    u = uniform(g, trip)
                    if u < t_rt * cross[trip]:
                        k = trip
                        break
                    if u >= t_rt:
                        status = LOST
                        break
            elif u < t_in:
                k = 0
            if k >= 0:
                if uniform(g, max_trips + 1) < t_out:
                    if k == 0:
                        status = DIRECT_PASS
                    elif k == hold:
                        status = STORED
                    else:
                        status = LEAKED
                else:
                    status = LOST
            trips[idx] = max(k, 0)
            tag[idx] = status
            idx += 1
    return pulse, photon, trips, tag


def propagate_np(key, start, counts, cross, t_in, t_rt, t_out, hold):
    max_trips = cross.shape[0] - 1
    counts = np.asarray(counts)
    total = int(counts.sum())
    pulse = np.repeat(np.arange(start, start + counts.shape[0], dtype=np.int64), counts)
    first = np.cumsum(counts) - counts
    photon = (np.arange(total) - np.repeat(first, counts)).astype(np.int32)
    g = child_key_np(child_key_np(key, pulse), photon)

    tag = np.full(total, LOST, dtype=np.int8)
    k = np.full(total, -1, dtype=np.int64)
    u = uniform_np(g, 0)
    entered = u < t_in * cross[0]
    k[~entered & (u < t_in)] = 0
    in_loop = np.flatnonzero(entered)
    tag[in_loop] = OVERFLOW
    for trip in range(1, max_trips + 1):
        if in_loop.size == 0:
            break
        u = uniform_np(g[in_loop], trip)
        exits = u < t_rt * cross[trip]
        died = ~exits & (u >= t_rt)
        k[in_loop[exits]] = trip
        tag[in_loop[died]] = LOST
        in_loop = in_loop[~exits & ~died]
    exiting = np.flatnonzero(k >= 0)
    kept = uniform_np(g[exiting], max_trips + 1) < t_out
    tag[exiting[~kept]] = LOST
    out = exiting[kept]
    ko = k[out]
    tag[out] = np.where(ko == 0, DIRECT_PASS, np.where(ko == hold, STORED, LEAKED))
    trips = np.maximum(k, 0).astype(np.int16)
    return pulse, photon, trips, tag


# -- beamsplitter ------------------------------------------------------------


@njit(cache=True, nogil=True)
def split_nb(key, pulse, photon, ratio):
    to_a = np.empty(pulse.shape[0], dtype=np.bool_)
    for i in range(pulse.shape[0]):
        to_a[i] = uniform(child_key(child_key(key, pulse[i]), photon[i]), 0) < ratio
    return to_a


def split_np(key, pulse, photon, ratio):
    return uniform_np(child_key_np(child_key_np(key, pulse), photon), 0) < ratio


# -- detector efficiency and timing jitter -----------------------------------


@njit(cache=True, nogil=True)
def click_nb(key, pulse, photon, times, efficiency, sigma):
    n = pulse.shape[0]
    mask = np.empty(n, dtype=np.bool_)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        g = child_key(child_key(key, pulse[i]), photon[i])
        mask[i] = uniform(g, 0) < efficiency
        if sigma > 0.0:
            r = math.sqrt(-2.0 * math.log(uniform_open(g, 1)))
            out[i] = times[i] + sigma * r * math.cos(TWO_PI * uniform(g, 2))
        else:
            out[i] = times[i]
    return mask, out


def click_np(key, pulse, photon, times, efficiency, sigma):
    g = child_key_np(child_key_np(key, pulse), photon)
    mask = uniform_np(g, 0) < efficiency
    if sigma > 0.0:
        r = np.sqrt(-2.0 * np.log(uniform_open_np(g, 1)))
        out = times + sigma * r * np.cos(TWO_PI * uniform_np(g, 2))
    else:
        out = np.array(times, dtype=np.float64, copy=True)
    return mask, out


# -- dark counts -------------------------------------------------------------


@njit(cache=True, nogil=True)
def dark_counts_nb(key, first_block, n_blocks, block_ps, lam):
    counts = np.zeros(n_blocks, dtype=np.int64)
    p0 = math.exp(-lam)
    total = 0
    for b in range(n_blocks):
        u = uniform(key, first_block + b)
        n = 0
        p = p0
        cdf = p0
        while u >= cdf and n < MAX_POISSON_ITER:
            n += 1
            p *= lam / n
            cdf += p
        counts[b] = n
        total += n
    times = np.empty(total, dtype=np.float64)
    idx = 0
    for b in range(n_blocks):
        if counts[b] == 0:
            continue
        bk = child_key(key, first_block + b)
        origin = (first_block + b) * block_ps
        for j in range(counts[b]):
            times[idx] = origin + uniform(bk, j) * block_ps
            idx += 1
    return times


def dark_counts_np(key, first_block, n_blocks, block_ps, lam):
    blocks = np.arange(first_block, first_block + n_blocks, dtype=np.int64)
    u = uniform_np(np.full(n_blocks, key, dtype=np.uint64), blocks)
    counts = np.zeros(n_blocks, dtype=np.int64)
    p = np.float64(math.exp(-lam))
    cdf = p
    active = u >= cdf
    n = 0
    while active.any() and n < MAX_POISSON_ITER:
        n += 1
        counts[active] = n
        p = p * (lam / n)
        cdf = cdf + p
        active &= u >= cdf
    owner = np.repeat(np.arange(n_blocks), counts)
    first = np.cumsum(counts) - counts
    j = np.arange(owner.size) - np.repeat(first, counts)
    origin = blocks[owner].astype(np.float64) * block_ps
    return origin + uniform_np(child_key_np(key, blocks[owner]), j) * block_ps


# -- non-paralysable dead time ----------------------------------------------


@njit(cache=True, nogil=True)
def dead_time_nb(times, dead, last):
    keep = np.empty(times.shape[0], dtype=np.bool_)
    for i in range(times.shape[0]):
        if times[i] - last >= dead:
            keep[i] = True
            last = times[i]
        else:
            keep[i] = False
    return keep, last


def dead_time_np(times, dead, last):
    # expects sorted times and last <= times[0], as the pipeline guarantees
    keep = np.zeros(times.shape[0], dtype=bool)
    if times.shape[0] == 0:
        return keep, last
    # an event whose gap to its predecessor is >= dead is kept whatever
    # happened before it; only runs of closely spaced events need a scan
    prev = np.concatenate(([last], times[:-1]))
    free = times - prev >= dead
    keep[free] = True
    latest_free = np.maximum.accumulate(np.where(free, times, -np.inf))
    t_last = last
    for i in np.flatnonzero(~free):
        t_last = max(t_last, latest_free[i])
        if times[i] - t_last >= dead:
            keep[i] = True
            t_last = times[i]
    kept = times[keep]
    return keep, float(kept[-1]) if kept.size else last


BACKENDS = {
    "numba": {
        "photon_numbers": photon_numbers_nb,
        "propagate": propagate_nb,
        "split": split_nb,
        "click": click_nb,
        "dark_counts": dark_counts_nb,
        "dead_time": dead_time_nb,
    },
    "numpy": {
        "photon_numbers": photon_numbers_np,
        "propagate": propagate_np,
        "split": split_np,
        "click": click_np,
        "dark_counts": dark_counts_np,
        "dead_time": dead_time_np,
    },
}

_active = BACKENDS[_accel.backend_name()]
photon_numbers = _active["photon_numbers"]
propagate = _active["propagate"]
split = _active["split"]
click = _active["click"]
dark_counts = _active["dark_counts"]
dead_time = _active["dead_time"]
