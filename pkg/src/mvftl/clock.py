"""Virtual and wall-clock time sources.

All durations in this package are integer microseconds.  The virtual clock is
a plain settable counter: the flash device moves it forward as synchronous
operations complete, and benchmark drivers may rewind it when they switch
between logical workers (each worker carries its own notion of "now").  The
realtime clock maps the same interface onto the monotonic wall clock, where
waiting means actually sleeping and rewinding is impossible.
"""

from __future__ import annotations

import time


class VirtualClock:
    def __init__(self, start_us: int = 0):
        self._now = int(start_us)

    @property
    def now_us(self) -> int:
        return self._now

    def set_now(self, t_us: int) -> None:
        # Rewind is allowed: drivers replay per-worker timelines out of order.
        self._now = int(t_us)

    def wait_until(self, t_us: int) -> int:
        if t_us > self._now:
            self._now = int(t_us)
        return self._now

    def advance(self, dt_us: int) -> int:
        self._now += int(dt_us)
        return self._now


class RealtimeClock:
    def __init__(self):
        self._t0 = time.monotonic_ns()

    @property
    def now_us(self) -> int:
        return (time.monotonic_ns() - self._t0) // 1000

    def set_now(self, t_us: int) -> None:
        # Wall time cannot rewind; only waiting forward is meaningful.
        self.wait_until(t_us)

    def wait_until(self, t_us: int) -> int:
        now = self.now_us
        if t_us > now:
            time.sleep((t_us - now) / 1e6)
        return self.now_us

    def advance(self, dt_us: int) -> int:
        return self.wait_until(self.now_us + dt_us)


def make_clock(mode: str):
    if mode == "virtual":
        return VirtualClock()
    if mode == "realtime":
        return RealtimeClock()
    raise ValueError(f"unknown time mode: {mode!r}")
