"""Byte-traffic and scratch-allocation ledger.

The engine cannot observe real memory traffic the way a hardware profiler
would, so every kernel reports into a TrafficReport instead:

  * bytes_read / bytes_written count operand bytes at the point the kernel
    streams them through its working set.  Operands are counted once per
    scoring pair (re-touches of a tile that is still resident are cache hits
    by construction and are not re-counted).
  * peak_aux_bytes tracks the scratch buffers the kernel registers while they
    are live.  Outputs returned to the caller are not scratch.  Small O(tile)
    temporaries numpy creates inside a single expression are bounded by the
    registered buffers and are not tracked individually.
  * mac_count counts multiply-accumulate work as 2 * rows * cols * dim per
    similarity block, including masked padding positions (computing and then
    discarding padding is exactly the padding tax the packed layout removes).

Reports merge across workers: counters add, peaks take the max.
"""

from __future__ import annotations

from contextlib import contextmanager


class TrafficReport:
    """Exact counters for one run; mergeable monoid across workers."""

    __slots__ = ("bytes_read", "bytes_written", "peak_aux_bytes", "mac_count", "_aux_now")

    def __init__(self):
        self.bytes_read = 0
        self.bytes_written = 0
        self.peak_aux_bytes = 0
        self.mac_count = 0
        self._aux_now = 0

    def add_read(self, nbytes: int) -> None:
        self.bytes_read += int(nbytes)

    def add_write(self, nbytes: int) -> None:
        self.bytes_written += int(nbytes)

    def add_macs(self, count: int) -> None:
        self.mac_count += int(count)

    def alloc(self, nbytes: int) -> None:
        self._aux_now += int(nbytes)
        if self._aux_now > self.peak_aux_bytes:
            self.peak_aux_bytes = self._aux_now

    def release(self, nbytes: int) -> None:
        self._aux_now -= int(nbytes)

    @contextmanager
    def scratch(self, *arrays):
        """Register numpy scratch buffers for the duration of a block."""
        total = sum(a.nbytes for a in arrays)
        self.alloc(total)
        try:
            yield
        finally:
            self.release(total)

    def merge(self, other: "TrafficReport") -> "TrafficReport":
        """Fold another worker's report into this one (in place)."""
        self.bytes_read += other.bytes_read
        self.bytes_written += other.bytes_written
        self.mac_count += other.mac_count
        self.peak_aux_bytes = max(self.peak_aux_bytes, other.peak_aux_bytes)
        return self

    def as_dict(self) -> dict:
        return {
            "bytes_read": self.bytes_read,
            "bytes_written": self.bytes_written,
            "peak_aux_bytes": self.peak_aux_bytes,
            "mac_count": self.mac_count,
        }

    def __repr__(self):
        return (
            f"TrafficReport(read={self.bytes_read}, written={self.bytes_written}, "
            f"peak_aux={self.peak_aux_bytes}, macs={self.mac_count})"
        )
