"""Reproducible lineage-indexed noise: Wiener increments and Poisson clocks.

Every random number is a pure function of
(master_seed, line, ancestry word, purpose, counter), realized with Philox
counter-based streams.  Streams therefore do not depend on creation order,
thread schedule, or on how many founder lines a particular simulation uses --
which is what makes pathwise couplings across population sizes possible.

Normals come from inverse-CDF transforms (one raw draw per normal) so that
random access by step index is exact.  Poisson clock times are built by
exponential-gap inversion anchored at t=0 per clock, so restricting a clock
to a smaller window returns exactly the same events.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .population import LineageIndex

_MASK64 = (1 << 64) - 1

# purpose tags; changing these renumbers every stream in existing outputs
PURPOSE_WIENER = 1
PURPOSE_CLOCK_TIME = 2
PURPOSE_CLOCK_MARK = 3
PURPOSE_INIT = 4
PURPOSE_MASS = 5

_CLOCK_BLOCK = 64  # gaps generated per refill; fixed so times replay exactly


def _mix64(x: int) -> int:
    """SplitMix64 finalizer: collision-resistant 64-bit mixing."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _stream_key(master_seed: int, line: int, word_bits: int, word_len: int,
                purpose: int) -> np.ndarray:
    h = _mix64(master_seed & _MASK64)
    for part in (line, word_bits, word_len, purpose):
        h = _mix64(h ^ (part & _MASK64))
    return np.array([h, _mix64(h ^ 0xD1B54A32D192ED03)], dtype=np.uint64)


_local = threading.local()


def _raw(key: np.ndarray, start: int, count: int) -> np.ndarray:
    """Raw uint64 outputs [start, start+count) of the keyed Philox stream.

    One Philox instance is reused per thread (construction would re-seed from
    OS entropy on every call); resetting its full state dict is bitwise
    equivalent to constructing Philox(key=key, counter=start // 4).
    """
    if count <= 0:
        return np.empty(0, dtype=np.uint64)
    bg = getattr(_local, "bg", None)
    if bg is None:
        bg = _local.bg = Philox(key=np.zeros(2, dtype=np.uint64))
        _local.template = bg.state
    counter = np.zeros(4, dtype=np.uint64)
    counter[0] = start // 4
    state = _local.template
    state["state"] = {"counter": counter, "key": key}
    state["buffer_pos"] = 4          # force a fresh block at this counter
    state["has_uint32"] = 0
    state["uinteger"] = 0
    bg.state = state
    skip = start % 4
    return bg.random_raw(skip + count)[skip:]


def _uniform_open(raw: np.ndarray) -> np.ndarray:
    """Map uint64 draws to doubles strictly inside (0, 1)."""
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


@dataclass(frozen=True)
class ClockEvent:
    """One Poisson clock point: time and uniform mark in (0, lambda_bar)."""

    time: float
    mark: float


@dataclass(frozen=True)
class NoiseUniverse:
    """Addressable source of all Wiener and Poisson-clock randomness.

    One universe is shared by simulations of every population size; distinct
    experiments or Monte Carlo replicas should use ``child`` universes.
    """

    master_seed: int
    dimension: int

    def child(self, tag: str, index: int = 0) -> "NoiseUniverse":
        """Derive an independent universe, e.g. one per Monte Carlo replica."""
        h = _mix64(self.master_seed & _MASK64)
        for byte in tag.encode("utf-8"):
            h = _mix64(h ^ byte)
        h = _mix64(h ^ (index & _MASK64))
        return NoiseUniverse(h, self.dimension)

    # -- Wiener streams ----------------------------------------------------

    def wiener_increments(self, idx: LineageIndex, k0: int, k1: int,
                          dt: float) -> np.ndarray:
        """Increments of W_(line,word) over steps [k0, k1): shape (k1-k0, d).

        Entry j is the increment over step k0+j, i.i.d. N(0, dt·I) and a pure
        function of (universe, idx, k0+j).
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        d = self.dimension
        key = _stream_key(self.master_seed, idx.line, idx.word_bits,
                          idx.word_len, PURPOSE_WIENER)
        raw = _raw(key, k0 * d, (k1 - k0) * d)
        z = ndtri(_uniform_open(raw)).reshape(k1 - k0, d)
        return z * np.sqrt(dt)

    # -- Poisson clocks ------------------------------------------------------

    def clock_events(self, idx: LineageIndex, t0: float, t1: float,
                     lambda_bar: float) -> list[ClockEvent]:
        """Clock points of N_(line,word) with time in [t0, t1), mark in (0, λ̄).

        The underlying point process is fixed once per (universe, idx,
        lambda_bar): event m has time = Σ_{g<=m} Exp_g(λ̄) anchored at 0 and an
        independent uniform mark, so any window query returns a restriction
        of the same global event list.
        """
        times, marks = self.clock_arrays(idx, t1, lambda_bar)
        lo = np.searchsorted(times, t0, side="left")
        return [ClockEvent(float(t), float(z))
                for t, z in zip(times[lo:], marks[lo:])]

    def clock_arrays(self, idx: LineageIndex, t_end: float,
                     lambda_bar: float) -> tuple[np.ndarray, np.ndarray]:
        """All clock points with time < t_end, as (times, marks) arrays."""
        if lambda_bar <= 0:
            raise ValueError("lambda_bar must be positive")
        if t_end <= 0:
            return np.empty(0), np.empty(0)
        tkey = _stream_key(self.master_seed, idx.line, idx.word_bits,
                           idx.word_len, PURPOSE_CLOCK_TIME)
        mkey = _stream_key(self.master_seed, idx.line, idx.word_bits,
                           idx.word_len, PURPOSE_CLOCK_MARK)
        times = []
        carry = 0.0
        g = 0
        while carry < t_end:
            gaps = -np.log(_uniform_open(_raw(tkey, g, _CLOCK_BLOCK))) / lambda_bar
            block = carry + np.cumsum(gaps)
            times.append(block)
            carry = float(block[-1])
            g += _CLOCK_BLOCK
        times = np.concatenate(times)
        n = int(np.searchsorted(times, t_end, side="left"))
        marks = lambda_bar * _uniform_open(_raw(mkey, 0, n))
        return times[:n], marks

    # -- initial data and auxiliary streams ---------------------------------

    def init_uniforms(self, line: int, count: int,
                      purpose: int = PURPOSE_INIT) -> np.ndarray:
        """Uniform(0,1) draws from the reserved init stream of a line."""
        key = _stream_key(self.master_seed, line, 0, 0, purpose)
        return _uniform_open(_raw(key, 0, count))

    def mass_increments(self, replica: int, k0: int, k1: int,
                        dt: float) -> np.ndarray:
        """Wiener increments for the replica-indexed mass-particle stream."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        d = self.dimension
        key = _stream_key(self.master_seed, replica, 0, 0, PURPOSE_MASS)
        raw = _raw(key, k0 * d, (k1 - k0) * d)
        return ndtri(_uniform_open(raw)).reshape(k1 - k0, d) * np.sqrt(dt)


def wiener_increments(universe: NoiseUniverse, idx: LineageIndex,
                      step_range: tuple[int, int], dt: float) -> np.ndarray:
    k0, k1 = step_range
    return universe.wiener_increments(idx, k0, k1, dt)


def clock_events(universe: NoiseUniverse, idx: LineageIndex,
                 window: tuple[float, float], lambda_bar: float) -> list[ClockEvent]:
    t0, t1 = window
    return universe.clock_events(idx, t0, t1, lambda_bar)
