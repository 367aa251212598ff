"""Binary time-tag streams: one record per detection, grouped by trial.

Layout (all little-endian)::

    header
      magic             8 bytes   b"HOMTTAG\\0"
      version           u16
      trial_period_ps   u64
      n_trials          u64
      fingerprint       32 bytes  (SHA-256 of the producing configuration)
      metadata_len      u32
      metadata          metadata_len bytes of UTF-8 JSON (object)
    records, 13 bytes each
      trial             u32
      channel           u8        detector id, 1 or 2
      time_ps           u64       picoseconds from trial start

Records are sorted by ``(trial, time_ps)``.  Files can be appended to with
:class:`StreamWriter`.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator, NamedTuple

import numpy as np

MAGIC = b"HOMTTAG\x00"
VERSION = 1
RECORD_DTYPE = np.dtype([("trial", "<u4"), ("channel", "u1"), ("time", "<u8")])
RECORD_SIZE = RECORD_DTYPE.itemsize  # 13
_FIXED = struct.Struct("<8sHQQ32sI")
CSV_COLUMNS = "trial,channel,time_ps"

assert RECORD_SIZE == 13


class TimeTagFormatError(ValueError):
    pass


class BadMagicError(TimeTagFormatError):
    pass


class VersionMismatchError(TimeTagFormatError):
    pass


class TruncatedRecordError(TimeTagFormatError):
    def __init__(self, msg, offset):
        super().__init__(msg)
        self.offset = offset


class InvariantViolationError(TimeTagFormatError):
    def __init__(self, msg, offset=None):
        super().__init__(msg)
        self.offset = offset


class UnsortedRecordsError(TimeTagFormatError):
    pass


class TimeTagRecord(NamedTuple):
    trial: int
    channel: int
    time: int


@dataclass
class StreamHeader:
    trial_period: int
    n_trials: int
    config_fingerprint: bytes = bytes(32)
    metadata: dict = field(default_factory=dict)
    version: int = VERSION

    def __post_init__(self):
        if len(self.config_fingerprint) != 32:
            raise ValueError("config_fingerprint must be 32 bytes")

    def to_bytes(self) -> bytes:
        meta = json.dumps(self.metadata, sort_keys=True, separators=(",", ":")).encode()
        fixed = _FIXED.pack(
            MAGIC, self.version, self.trial_period, self.n_trials, self.config_fingerprint, len(meta)
        )
        return fixed + meta

    @property
    def size(self) -> int:
        return len(self.to_bytes())

    @classmethod
    def read(cls, f: BinaryIO) -> "StreamHeader":
        raw = f.read(_FIXED.size)
        if len(raw) < 8 or raw[:8] != MAGIC:
            raise BadMagicError(f"bad magic {raw[:8]!r}")
        if len(raw) < _FIXED.size:
            raise TruncatedRecordError("truncated header", len(raw))
        magic, version, period, n_trials, fp, mlen = _FIXED.unpack(raw)
        if version != VERSION:
            raise VersionMismatchError(f"unsupported version {version}, expected {VERSION}")
        meta = f.read(mlen)
        if len(meta) != mlen:
            raise TruncatedRecordError("truncated header metadata", _FIXED.size + len(meta))
        return cls(period, n_trials, fp, json.loads(meta.decode()) if mlen else {}, version)


def empty_records(n: int = 0) -> np.ndarray:
    return np.zeros(n, dtype=RECORD_DTYPE)


def make_records(trial, channel, time) -> np.ndarray:
    rec = np.empty(len(trial), dtype=RECORD_DTYPE)
    rec["trial"] = trial
    rec["channel"] = channel
    rec["time"] = time
    return rec


@dataclass
class TimeTagStream:
    """In-memory stream: header plus a structured record array."""

    header: StreamHeader
    records: np.ndarray

    @property
    def n_trials(self) -> int:
        return self.header.n_trials

    @property
    def trial_period(self) -> int:
        return self.header.trial_period

    def __len__(self) -> int:
        return len(self.records)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        write_stream(self.header, self.records, buf)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "TimeTagStream":
        return load_stream(io.BytesIO(data))

    def save(self, path) -> None:
        write_stream(self.header, self.records, path)


def _first_unsorted(rec: np.ndarray, prev: tuple[int, int] | None = None) -> int:
    """Index of the first record out of (trial, time) order, or -1."""
    if len(rec) == 0:
        return -1
    tr = rec["trial"].astype(np.int64)
    tm = rec["time"]
    if prev is not None:
        if (tr[0], int(tm[0])) < prev:
            return 0
    if len(rec) < 2:
        return -1
    dtr = np.diff(tr)
    bad = (dtr < 0) | ((dtr == 0) & (tm[1:] < tm[:-1]))
    idx = np.flatnonzero(bad)
    return int(idx[0]) + 1 if len(idx) else -1


def _first_invalid(rec: np.ndarray, header: StreamHeader) -> tuple[int, str]:
    ch = rec["channel"]
    bad = (ch < 1) | (ch > 2) | (rec["time"] >= header.trial_period) | (rec["trial"] >= header.n_trials)
    idx = np.flatnonzero(bad)
    if not len(idx):
        return -1, ""
    i = int(idx[0])
    r = rec[i]
    return i, f"record (trial={r['trial']}, channel={r['channel']}, time={r['time']})"


def _check_records(header: StreamHeader, records: np.ndarray, prev=None) -> None:
    i = _first_unsorted(records, prev)
    if i >= 0:
        raise UnsortedRecordsError(f"records not sorted by (trial, time) at index {i}")
    i, what = _first_invalid(records, header)
    if i >= 0:
        raise InvariantViolationError(f"{what} violates header bounds at index {i}")


class StreamWriter:
    """Incremental writer; records must arrive in (trial, time) order."""

    def __init__(self, dest, header: StreamHeader):
        self.header = header
        if isinstance(dest, (str, Path)):
            self._f = open(dest, "wb")
            self._owns = True
        else:
            self._f = dest
            self._owns = False
        self._f.write(header.to_bytes())
        self._last: tuple[int, int] | None = None
        self.n_written = 0

    def append(self, records: np.ndarray) -> None:
        records = np.asarray(records, dtype=RECORD_DTYPE)
        _check_records(self.header, records, self._last)
        if len(records):
            self._f.write(records.tobytes())
            self._last = (int(records["trial"][-1]), int(records["time"][-1]))
            self.n_written += len(records)

    def close(self) -> None:
        self._f.flush()
        if self._owns:
            self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_stream(header: StreamHeader, records: np.ndarray, dest) -> int:
    """Write a complete stream; returns the number of bytes written."""
    with StreamWriter(dest, header) as w:
        w.append(records)
    return header.size + RECORD_SIZE * len(records)


class RecordReader:
    """Lazy record iterator over an open stream.

    Iterating yields :class:`TimeTagRecord` tuples; :meth:`chunks` yields
    structured arrays of at most ``chunk_records`` records.  Memory use is
    bounded by the chunk size.  Invariants are checked as data is read and the
    first violation is reported with its byte offset.
    """

    def __init__(self, f: BinaryIO, header: StreamHeader, data_offset: int, owns: bool):
        self._f = f
        self.header = header
        self._offset = data_offset
        self._owns = owns

    def chunks(self, chunk_records: int = 1 << 16) -> Iterator[np.ndarray]:
        prev = None
        try:
            while True:
                raw = self._f.read(chunk_records * RECORD_SIZE)
                if not raw:
                    return
                n, rem = divmod(len(raw), RECORD_SIZE)
                if rem:
                    # a short read can only happen at end of file
                    raise TruncatedRecordError(
                        f"truncated record at byte offset {self._offset + n * RECORD_SIZE}",
                        self._offset + n * RECORD_SIZE,
                    )
                rec = np.frombuffer(raw, dtype=RECORD_DTYPE)
                i = _first_unsorted(rec, prev)
                if i >= 0:
                    off = self._offset + i * RECORD_SIZE
                    raise InvariantViolationError(f"records out of order at byte offset {off}", off)
                i, what = _first_invalid(rec, self.header)
                if i >= 0:
                    off = self._offset + i * RECORD_SIZE
                    raise InvariantViolationError(f"{what} invalid at byte offset {off}", off)
                prev = (int(rec["trial"][-1]), int(rec["time"][-1]))
                self._offset += len(raw)
                yield rec
        finally:
            self.close()

    def __iter__(self) -> Iterator[TimeTagRecord]:
        for rec in self.chunks():
            for t, c, s in zip(rec["trial"].tolist(), rec["channel"].tolist(), rec["time"].tolist()):
                yield TimeTagRecord(t, c, s)

    def read_all(self) -> np.ndarray:
        parts = list(self.chunks())
        return np.concatenate(parts) if parts else empty_records()

    def close(self) -> None:
        if self._owns and not self._f.closed:
            self._f.close()


def read_stream(source) -> tuple[StreamHeader, RecordReader]:
    if isinstance(source, (str, Path)):
        f = open(source, "rb")
        owns = True
    elif isinstance(source, (bytes, bytearray)):
        f = io.BytesIO(source)
        owns = True
    else:
        f, owns = source, False
    try:
        header = StreamHeader.read(f)
    except Exception:
        if owns:
            f.close()
        raise
    return header, RecordReader(f, header, header.size, owns)


def load_stream(source) -> TimeTagStream:
    header, reader = read_stream(source)
    return TimeTagStream(header, reader.read_all().copy())


def window_ps(window) -> tuple[int, int]:
    """Convert a ``(start_ns, stop_ns)`` window to integer picoseconds."""
    return int(round(float(window[0]) * 1000.0)), int(round(float(window[1]) * 1000.0))


def filter_window(records, window):
    """Keep records with ``start <= time < stop`` (window in ns), order preserved."""
    if isinstance(records, TimeTagStream):
        return TimeTagStream(records.header, filter_window(records.records, window))
    lo, hi = window_ps(window)
    t = records["time"]
    return records[(t >= lo) & (t < hi)]


def export_csv(records, dest=None) -> str:
    """Decimal text form: a ``trial,channel,time_ps`` header then one record per line."""
    if isinstance(records, TimeTagStream):
        records = records.records
    lines = [CSV_COLUMNS]
    lines.extend(
        f"{t},{c},{s}"
        for t, c, s in zip(records["trial"].tolist(), records["channel"].tolist(), records["time"].tolist())
    )
    text = "\n".join(lines) + "\n"
    if dest is not None:
        Path(dest).write_text(text)
    return text


def import_csv(text: str) -> np.ndarray:
    lines = text.strip().splitlines()
    if not lines or lines[0].strip() != CSV_COLUMNS:
        raise TimeTagFormatError(f"expected CSV header {CSV_COLUMNS!r}")
    body = lines[1:]
    if not body:
        return empty_records()
    arr = np.array([ln.split(",") for ln in body], dtype=np.uint64)
    return make_records(arr[:, 0], arr[:, 1], arr[:, 2])
