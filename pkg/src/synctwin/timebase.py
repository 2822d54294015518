"""Simulated oscillators, the slave servo, and the deterministic event loop.

All instants are integer nanoseconds since the simulation epoch (SimInstant).
Clock rate is applied with an exact integer carry so that, with zero noise,
accumulated drift over any span is the exact rational product of span and
frequency error, independent of how the span is subdivided.
"""
from __future__ import annotations

import heapq
import itertools
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Callable

SimInstant = int

NS_PER_S = 10**9
SIM_INSTANT_MAX = 2**63 - 1

MAX_FREQ_ERROR_PPB = 10**6


class ServoMode(Enum):
    FREERUN = "freerun"
    LOCKED = "locked"
    HOLDOVER = "holdover"


@dataclass
class ServoState:
    """PI discipline state for a slave clock.

    Gains are per-sample; the correction step is clamped to max_step_ns and the
    integral term is clamped so its contribution alone never exceeds the step
    clamp (anti-windup, needed when attacks feed the servo huge offsets).
    """

    prop_gain: Fraction = Fraction(7, 10)
    integ_gain: Fraction = Fraction(3, 10)
    max_step_ns: int = 10_000_000
    mode: ServoMode = ServoMode.FREERUN
    integ_term: Fraction = Fraction(0)
    last_correction_ns: int = 0


class ClockModel:
    """An oscillator with constant frequency error and optional phase noise.

    Local time = phase offset + elapsed true time scaled by (1 + ppb*1e-9),
    tracked exactly via an integer remainder carry.  Noise is zero-mean around
    the exact trajectory (it does not accumulate).  Reported local time and
    quantized reads are clamped non-decreasing; backward servo steps therefore
    stall reads until the clock catches up rather than producing time reversal.
    """

    def __init__(self, clock_id: str, freq_error_ppb: int = 0, phase_offset_ns: int = 0,
                 noise_std_ns: int = 0, resolution_ns: int = 1,
                 servo: ServoState | None = None, quality: Any = None,
                 seed: int | str = 0) -> None:
        if abs(freq_error_ppb) > MAX_FREQ_ERROR_PPB:
            raise ValueError(f"|freq_error_ppb| must be <= {MAX_FREQ_ERROR_PPB}")
        if noise_std_ns < 0:
            raise ValueError("noise_std_ns must be non-negative")
        if resolution_ns < 1:
            raise ValueError("resolution_ns must be >= 1")
        self.id = clock_id
        self.freq_error_ppb = int(freq_error_ppb)
        self.phase_offset_ns = int(phase_offset_ns)
        self.noise_std_ns = int(noise_std_ns)
        self.resolution_ns = int(resolution_ns)
        self.servo = servo if servo is not None else ServoState()
        self.quality = quality
        self._rng = random.Random(f"{seed}/clock/{clock_id}")
        self._true_ns: int = 0
        self._exact_ns: int = int(phase_offset_ns)
        self._carry: int = 0  # numerator remainder, denominator NS_PER_S
        self._noise_ns: int = 0
        self._reported_floor: int = int(phase_offset_ns)
        self._last_read: int | None = None

    @property
    def true_ns(self) -> int:
        return self._true_ns

    def advance(self, dt_true_ns: int) -> SimInstant:
        """Advance by dt_true_ns of true time; returns the new local time."""
        if dt_true_ns <= 0:
            raise ValueError("dt_true_ns must be positive")
        num = dt_true_ns * (NS_PER_S + self.freq_error_ppb) + self._carry
        inc, self._carry = divmod(num, NS_PER_S)
        self._exact_ns += inc
        self._true_ns += dt_true_ns
        if self.noise_std_ns:
            self._noise_ns = round(self._rng.gauss(0.0, float(self.noise_std_ns)))
        if abs(self._exact_ns) > SIM_INSTANT_MAX:
            raise OverflowError(f"clock {self.id} local time left the 64-bit instant range")
        return self.local_time()

    def advance_to(self, true_ns: int) -> SimInstant:
        """Advance to an absolute true time (no-op when already there)."""
        if true_ns < self._true_ns:
            raise ValueError(f"clock {self.id} cannot advance backwards "
                             f"({true_ns} < {self._true_ns})")
        if true_ns > self._true_ns:
            self.advance(true_ns - self._true_ns)
        return self.local_time()

    def local_time(self) -> SimInstant:
        reported = self._exact_ns + self._noise_ns
        if reported > self._reported_floor:
            self._reported_floor = reported
        return self._reported_floor

    def read_timestamp(self) -> SimInstant:
        """Local time quantized to the resolution; successive reads never decrease."""
        value = self.local_time()
        quantized = (value // self.resolution_ns) * self.resolution_ns
        if self._last_read is not None and quantized < self._last_read:
            quantized = self._last_read
        self._last_read = quantized
        return quantized

    def apply_phase_step(self, delta_ns: int) -> None:
        """Step the local phase (servo corrections); may be negative."""
        self._exact_ns += int(delta_ns)

    def phase_error_ns(self) -> int:
        """Exact local-minus-true phase, noise excluded (test/oracle hook)."""
        return self._exact_ns - self._true_ns


def servo_update(clock: ClockModel, offset_ns: int, delay_ns: int) -> int:
    """Apply one clamped PI correction toward zero offset; returns the step.

    The measured offset is local-minus-master, so the correction is subtracted
    from the local phase.  Non-integral input drops the servo to HOLDOVER.
    """
    servo = clock.servo
    if not isinstance(offset_ns, int) or not isinstance(delay_ns, int):
        servo.mode = ServoMode.HOLDOVER
        raise ValueError("servo_update requires integer offset/delay")
    servo.integ_term += offset_ns
    windup_limit = Fraction(servo.max_step_ns) / servo.integ_gain
    if servo.integ_term > windup_limit:
        servo.integ_term = windup_limit
    elif servo.integ_term < -windup_limit:
        servo.integ_term = -windup_limit
    raw = servo.prop_gain * offset_ns + servo.integ_gain * servo.integ_term
    correction = round(raw)
    if correction > servo.max_step_ns:
        correction = servo.max_step_ns
    elif correction < -servo.max_step_ns:
        correction = -servo.max_step_ns
    clock.apply_phase_step(-correction)
    servo.last_correction_ns = correction
    servo.mode = ServoMode.LOCKED
    return correction


def servo_holdover(clock: ClockModel) -> None:
    """Drop to holdover (sync source lost); the clock free-runs at its own rate."""
    clock.servo.mode = ServoMode.HOLDOVER


@dataclass(order=True)
class _Event:
    time_ns: int
    seq: int
    fn: Callable[[], None] = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


class EventHandle:
    __slots__ = ("_event",)

    def __init__(self, event: _Event) -> None:
        self._event = event

    def cancel(self) -> None:
        self._event.cancelled = True

    @property
    def cancelled(self) -> bool:
        return self._event.cancelled


class Scheduler:
    """Single global priority queue keyed on true time, FIFO on equal instants."""

    def __init__(self) -> None:
        self._heap: list[_Event] = []
        self._seq = itertools.count()
        self.now_ns: int = 0

    def schedule(self, time_ns: int, fn: Callable[[], None]) -> EventHandle:
        if time_ns < self.now_ns:
            raise ValueError(f"cannot schedule into the past ({time_ns} < {self.now_ns})")
        event = _Event(int(time_ns), next(self._seq), fn)
        heapq.heappush(self._heap, event)
        return EventHandle(event)

    def schedule_after(self, delay_ns: int, fn: Callable[[], None]) -> EventHandle:
        return self.schedule(self.now_ns + int(delay_ns), fn)

    def run_until(self, end_ns: int) -> None:
        """Run all events with time <= end_ns, then settle now at end_ns."""
        while self._heap and self._heap[0].time_ns <= end_ns:
            event = heapq.heappop(self._heap)
            if event.cancelled:
                continue
            self.now_ns = event.time_ns
            event.fn()
        if end_ns > self.now_ns:
            self.now_ns = end_ns

    def pending(self) -> int:
        return sum(1 for e in self._heap if not e.cancelled)
