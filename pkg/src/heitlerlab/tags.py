"""Time-tag streams and their on-disk formats.

Binary layout (little endian)::

    b"QTG1" | resolution_ps: u64 | count: u64 | count * (channel: u8, time: u64)
"""
from __future__ import annotations

import csv
import hashlib
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import TagFormatError

MAGIC = b"QTG1"
RECORD_DTYPE = np.dtype([("channel", "u1"), ("time", "<u8")])  # packed, 9 bytes
_HEADER = np.dtype([("magic", "S4"), ("resolution", "<u8"), ("count", "<u8")])


@dataclass
class TagStream:
    """Detection records sorted by time; ``times`` are integer ticks of ``resolution`` ps."""

    channels: np.ndarray
    times: np.ndarray
    resolution: int = 1

    def __post_init__(self):
        self.channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        self.times = np.ascontiguousarray(self.times, dtype=np.uint64)
        if self.channels.shape != self.times.shape:
            raise TagFormatError("channels and times differ in length")

    def __len__(self):
        return len(self.times)

    @classmethod
    def from_unsorted(cls, channels, times, resolution=1):
        channels = np.asarray(channels, dtype=np.uint8)
        times = np.asarray(times, dtype=np.uint64)
        order = np.lexsort((channels, times))
        return cls(channels[order], times[order], resolution)

    def is_sorted(self) -> bool:
        return bool(np.all(self.times[1:] >= self.times[:-1]))

    def channel_times(self, channel: int) -> np.ndarray:
        """Times of one channel as int64 ticks."""
        return self.times[self.channels == channel].astype(np.int64)

    def times_ps(self, channel: int) -> np.ndarray:
        return self.channel_times(channel) * int(self.resolution)

    def counts(self) -> dict:
        ch, n = np.unique(self.channels, return_counts=True)
        return {int(c): int(k) for c, k in zip(ch, n)}

    def span_ps(self) -> int:
        if len(self) == 0:
            return 0
        return int(self.times[-1] - self.times[0]) * int(self.resolution)

    def shifted(self, ticks: int) -> "TagStream":
        return TagStream(self.channels.copy(), self.times + np.uint64(ticks), self.resolution)

    def relabeled(self, mapping: dict) -> "TagStream":
        lut = np.arange(256, dtype=np.uint8)
        for old, new in mapping.items():
            lut[old] = new
        return TagStream.from_unsorted(lut[self.channels], self.times, self.resolution)

    def to_records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=RECORD_DTYPE)
        rec["channel"] = self.channels
        rec["time"] = self.times
        return rec

    def to_bytes(self) -> bytes:
        head = np.array([(MAGIC, self.resolution, len(self))], dtype=_HEADER)
        return head.tobytes() + self.to_records().tobytes()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, TagStream):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and np.array_equal(self.channels, other.channels)
            and np.array_equal(self.times, other.times)
        )


def write_binary(path, tags: TagStream) -> None:
    if not tags.is_sorted():
        raise TagFormatError("refusing to write an unsorted tag stream")
    with open(path, "wb") as fh:
        fh.write(tags.to_bytes())


def read_binary(path) -> TagStream:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.itemsize:
        raise TagFormatError(f"{path}: truncated header")
    head = np.frombuffer(raw[: _HEADER.itemsize], dtype=_HEADER)[0]
    if head["magic"] != MAGIC:
        raise TagFormatError(f"{path}: bad magic {head['magic']!r}")
    count = int(head["count"])
    body = raw[_HEADER.itemsize:]
    if len(body) != count * RECORD_DTYPE.itemsize:
        raise TagFormatError(
            f"{path}: expected {count} records ({count * RECORD_DTYPE.itemsize} bytes), "
            f"found {len(body)} bytes"
        )
    rec = np.frombuffer(body, dtype=RECORD_DTYPE)
    tags = TagStream(rec["channel"].copy(), rec["time"].copy(), int(head["resolution"]))
    if not tags.is_sorted():
        raise TagFormatError(f"{path}: records are not sorted by time")
    return tags


def write_csv(path, tags: TagStream) -> None:
    """Interchange format: header ``channel,time_ps``, one detection per row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel", "time_ps"])
        t_ps = tags.times.astype(np.uint64) * np.uint64(tags.resolution)
        w.writerows(zip(tags.channels.tolist(), t_ps.tolist()))


def read_csv(path, resolution: int = 1) -> TagStream:
    with open(path, newline="") as fh:
        header = fh.readline().strip().replace(" ", "")
    if header != "channel,time_ps":
        raise TagFormatError(f"{path}: expected header 'channel,time_ps', got {header[:40]!r}")
    try:
        with warnings.catch_warnings():
            # an empty file (header only) is a valid, empty stream
            warnings.simplefilter("ignore", UserWarning)
            data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise TagFormatError(f"{path}: {exc}") from exc
    if data.size == 0:
        return TagStream(np.empty(0, np.uint8), np.empty(0, np.uint64), resolution)
    if np.any(data[:, 1] < 0) or np.any(data[:, 0] < 0):
        raise TagFormatError(f"{path}: negative channel or time")
    return TagStream.from_unsorted(data[:, 0], data[:, 1] // resolution, resolution)


def read_tags(path, resolution: int = 1) -> TagStream:
    """Dispatch on the file content: binary if it starts with the magic, else CSV."""
    if not os.path.exists(path):
        raise TagFormatError(f"no such tag file: {path}")
    with open(path, "rb") as fh:
        start = fh.read(4)
    if start == MAGIC:
        return read_binary(path)
    return read_csv(path, resolution)
