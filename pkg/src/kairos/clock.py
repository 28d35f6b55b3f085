"""Per-node physical clocks with configurable fixed skew.

A node's reading is true time plus its skew, floored at zero. Monotonicity is
guaranteed even when consecutive calls land on the same microsecond: the seq
field breaks ties, so timestamps from one node never repeat or regress.
"""

from __future__ import annotations

from .types import Timestamp


class SkewedClock:
    __slots__ = ("node", "skew_us", "_last_micros", "_last_seq")

    def __init__(self, node: int, skew_us: int = 0):
        self.node = node
        self.skew_us = skew_us
        self._last_micros = -1
        self._last_seq = 0

    def now(self, true_now_us: int) -> Timestamp:
        micros = true_now_us + self.skew_us
        if micros < 0:
            micros = 0
        if micros <= self._last_micros:
            micros = self._last_micros
            self._last_seq += 1
        else:
            self._last_micros = micros
            self._last_seq = 0
        return Timestamp(micros, self.node, self._last_seq)
