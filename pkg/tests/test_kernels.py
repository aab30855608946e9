"""The numba and numpy backends must agree draw for draw."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photonbuffer import _accel, kernels
from photonbuffer.rng import Stream, stream_key

NB = kernels.BACKENDS["numba"]
NP = kernels.BACKENDS["numpy"]

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 10**9), st.floats(0, 5), st.integers(1, 3000))
def test_photon_numbers_agree(seed, start, mu, count):
    key = stream_key(seed, Stream.SOURCE)
    a = NB["photon_numbers"](key, np.int64(start), count, kernels.KIND_COHERENT, mu, 1)
    b = NP["photon_numbers"](key, np.int64(start), count, kernels.KIND_COHERENT, mu, 1)
    np.testing.assert_array_equal(a, b)


def test_fock_photon_numbers_are_constant():
    for impl in (NB, NP):
        out = impl["photon_numbers"](stream_key(1, Stream.SOURCE), np.int64(0), 100, kernels.KIND_FOCK, 0.0, 3)
        assert np.all(out == 3)


cross_arrays = st.lists(st.floats(0, 1), min_size=1, max_size=16).map(np.array)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), cross_arrays, st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
       st.integers(0, 15))
def test_propagate_agrees(seed, cross, t_in, t_rt, t_out, hold):
    counts = NP["photon_numbers"](stream_key(seed, Stream.SOURCE), np.int64(0), 400,
                                  kernels.KIND_COHERENT, 1.5, 1)
    key = stream_key(seed, Stream.LOOP)
    a = NB["propagate"](key, np.int64(5), counts, cross, t_in, t_rt, t_out, hold)
    b = NP["propagate"](key, np.int64(5), counts, cross, t_in, t_rt, t_out, hold)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_split_click_dark_agree():
    key = stream_key(11, Stream.SPLITTER)
    pulse = np.repeat(np.arange(5000, dtype=np.int64), 2)
    photon = np.tile(np.array([0, 1], dtype=np.int32), 5000)
    np.testing.assert_array_equal(NB["split"](key, pulse, photon, 0.3), NP["split"](key, pulse, photon, 0.3))
    times = np.linspace(0, 1e6, pulse.size)
    ma, ta = NB["click"](stream_key(11, Stream.DETECT_A), pulse, photon, times, 0.7, 15.0)
    mb, tb = NP["click"](stream_key(11, Stream.DETECT_A), pulse, photon, times, 0.7, 15.0)
    np.testing.assert_array_equal(ma, mb)
    np.testing.assert_allclose(ta, tb, rtol=0, atol=1e-9)
    da = NB["dark_counts"](stream_key(11, Stream.DARK_A), np.int64(3), 200, 1e7, 2.5)
    db = NP["dark_counts"](stream_key(11, Stream.DARK_A), np.int64(3), 200, 1e7, 2.5)
    np.testing.assert_array_equal(da, db)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1e6, allow_nan=False), max_size=200), st.floats(0, 5e4),
       st.one_of(st.just(np.inf), st.floats(0, 1e5)))
def test_dead_time_agrees(times, dead, lag):
    # the carried state always precedes the batch: last <= first time
    t = np.sort(np.asarray(times, dtype=np.float64))
    last = (t[0] if t.size else 0.0) - lag
    ka, la = NB["dead_time"](t, dead, last)
    kb, lb = NP["dead_time"](t, dead, last)
    np.testing.assert_array_equal(ka, kb)
    assert la == lb


def test_dead_time_keeps_spaced_events():
    t = np.array([0.0, 10.0, 60.0, 100.0, 121.0])
    for impl in (NB, NP):
        keep, last = impl["dead_time"](t, 50.0, -np.inf)
        assert keep.tolist() == [True, False, True, False, True]
        assert last == 121.0


def _run_backend_probe(flag: str | None) -> str:
    env = dict(os.environ)
    env.pop(_accel.DISABLE_ENV, None)
    if flag is not None:
        env[_accel.DISABLE_ENV] = flag
    code = ("from photonbuffer import kernels, _accel;"
            "print(_accel.backend_name(), kernels.propagate.__name__)")
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                          text=True, check=True).stdout.split()


def test_env_flag_selects_numpy_backend():
    assert _run_backend_probe("1") == ["numpy", "propagate_np"]
    assert _run_backend_probe(None) == ["numba", "propagate_nb"]
