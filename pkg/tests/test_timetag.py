import io
import tracemalloc

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from homsim import timetag as tt

PERIOD = 5_618_000


def random_stream(rng, n_trials=50, max_records=200, period=PERIOD, meta=None):
    n = int(rng.integers(0, max_records + 1))
    trial = np.sort(rng.integers(0, n_trials, n)).astype(np.uint32)
    time = rng.integers(0, period, n).astype(np.uint64)
    order = np.lexsort((time, trial))
    rec = tt.make_records(trial[order], rng.integers(1, 3, n)[order], time[order])
    fp = rng.bytes(32)
    hdr = tt.StreamHeader(period, n_trials, fp, meta if meta is not None else {"seed": int(rng.integers(1 << 30))})
    return tt.TimeTagStream(hdr, rec)


def test_empty_stream_is_header_only():
    hdr = tt.StreamHeader(PERIOD, 0)
    buf = io.BytesIO()
    n = tt.write_stream(hdr, tt.empty_records(), buf)
    assert n == len(buf.getvalue()) == hdr.size
    back = tt.load_stream(buf.getvalue())
    assert back.header == hdr and len(back) == 0


@given(st.integers(0, 2**32 - 1))
def test_round_trip_identity(seed):
    s = random_stream(np.random.default_rng(seed), meta={"k": seed, "nested": {"x": [1, 2.5, "y"]}})
    back = tt.TimeTagStream.from_bytes(s.to_bytes())
    assert back.header == s.header
    assert back.records.tobytes() == s.records.tobytes()
    assert len(s.to_bytes()) == s.header.size + tt.RECORD_SIZE * len(s)


def test_file_size_arithmetic():
    class Counter:
        n = 0

        def write(self, b):
            self.n += len(b)

        def flush(self):
            pass

    hdr = tt.StreamHeader(PERIOD, 10_000_000)
    rec = tt.make_records(np.arange(10_000_000, dtype=np.uint32), np.ones(10_000_000), np.zeros(10_000_000))
    sink = Counter()
    assert tt.write_stream(hdr, rec, sink) == hdr.size + 130_000_000 == sink.n
    assert tt.RECORD_SIZE == 13


def test_errors():
    rng = np.random.default_rng(1)
    s = random_stream(rng, max_records=50)
    while len(s) < 10:
        s = random_stream(rng, max_records=50)
    raw = s.to_bytes()
    with pytest.raises(tt.BadMagicError):
        tt.load_stream(b"NOTMAGIC" + raw[8:])
    bad_version = raw[:8] + (2).to_bytes(2, "little") + raw[10:]
    with pytest.raises(tt.VersionMismatchError):
        tt.load_stream(bad_version)
    cut = s.header.size + 5 * tt.RECORD_SIZE + 4
    with pytest.raises(tt.TruncatedRecordError) as e:
        tt.load_stream(raw[:cut])
    assert e.value.offset == s.header.size + 5 * tt.RECORD_SIZE
    assert str(e.value.offset) in str(e.value)
    with pytest.raises(tt.TruncatedRecordError):
        tt.load_stream(raw[:20])
    # channel 7 in the fourth record
    b = bytearray(raw)
    off = s.header.size + 3 * tt.RECORD_SIZE
    b[off + 4] = 7
    with pytest.raises(tt.InvariantViolationError) as e:
        tt.load_stream(bytes(b))
    assert e.value.offset == off


def test_time_beyond_period_rejected():
    hdr = tt.StreamHeader(1000, 5)
    with pytest.raises(tt.InvariantViolationError):
        tt.write_stream(hdr, tt.make_records([0], [1], [1000]), io.BytesIO())
    with pytest.raises(tt.InvariantViolationError):
        tt.write_stream(hdr, tt.make_records([5], [1], [10]), io.BytesIO())


def test_unsorted_input_rejected():
    hdr = tt.StreamHeader(PERIOD, 10)
    with pytest.raises(tt.UnsortedRecordsError):
        tt.write_stream(hdr, tt.make_records([1, 0], [1, 1], [5, 5]), io.BytesIO())
    with pytest.raises(tt.UnsortedRecordsError):
        tt.write_stream(hdr, tt.make_records([1, 1], [1, 2], [9, 5]), io.BytesIO())
    buf = io.BytesIO()
    w = tt.StreamWriter(buf, hdr)
    w.append(tt.make_records([2], [1], [100]))
    with pytest.raises(tt.UnsortedRecordsError):
        w.append(tt.make_records([1], [1], [100]))


def test_appending_writer_matches_one_shot():
    s = random_stream(np.random.default_rng(3), max_records=500)
    buf = io.BytesIO()
    with tt.StreamWriter(buf, s.header) as w:
        for part in np.array_split(s.records, 7):
            w.append(part)
    assert buf.getvalue() == s.to_bytes()


def test_streaming_memory_is_bounded(tmp_path):
    n = 2_000_000
    rec = tt.make_records(np.arange(n, dtype=np.uint32), np.ones(n) + (np.arange(n) % 2), np.full(n, 7))
    path = tmp_path / "big.htt"
    tt.write_stream(tt.StreamHeader(PERIOD, n), rec, path)
    del rec
    tracemalloc.start()
    _, reader = tt.read_stream(path)
    total = 0
    for chunk in reader.chunks(1 << 14):
        total += int(np.count_nonzero(chunk["channel"] == 2))
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert total == n // 2
    assert peak < 2_000_000  # file is 26 MB


def test_record_iterator():
    s = random_stream(np.random.default_rng(4), max_records=30)
    _, reader = tt.read_stream(s.to_bytes())
    got = list(reader)
    assert got == [tt.TimeTagRecord(int(r["trial"]), int(r["channel"]), int(r["time"])) for r in s.records]


def test_filter_window_basics():
    s = random_stream(np.random.default_rng(5), max_records=300)
    full = tt.filter_window(s.records, (0, PERIOD / 1000))
    assert full.tobytes() == s.records.tobytes()
    assert len(tt.filter_window(s.records, (100.0, 100.0))) == 0
    win = tt.filter_window(s, (1000.0, 2000.0))
    assert np.all((win.records["time"] >= 1_000_000) & (win.records["time"] < 2_000_000))


def test_filter_window_half_uniform():
    rng = np.random.default_rng(6)
    n = 100_000
    t = np.sort(rng.integers(0, PERIOD, n))
    rec = tt.make_records(np.zeros(n, dtype=np.uint32), np.ones(n), t)
    k = len(tt.filter_window(rec, (0.0, PERIOD / 2000)))
    assert abs(k - n / 2) < 4 * np.sqrt(n / 4)


@given(st.integers(0, 2**32 - 1), st.floats(0, 5618), st.floats(0, 5618), st.floats(0, 1), st.floats(0, 1))
def test_nested_filter(seed, a, b, u, v):
    lo, hi = sorted((a, b))
    ilo = lo + u * (hi - lo)
    ihi = ilo + v * (hi - ilo)
    rec = random_stream(np.random.default_rng(seed)).records
    twice = tt.filter_window(tt.filter_window(rec, (lo, hi)), (ilo, ihi))
    once = tt.filter_window(rec, (ilo, ihi))
    assert twice.tobytes() == once.tobytes()


@given(st.integers(0, 2**32 - 1))
def test_csv_round_trip(seed):
    rec = random_stream(np.random.default_rng(seed)).records
    text = tt.export_csv(rec)
    back = tt.import_csv(text)
    assert back.tobytes() == rec.tobytes()
    assert tt.export_csv(back) == text


def test_csv_forms(tmp_path):
    assert tt.export_csv(tt.empty_records()) == "trial,channel,time_ps\n"
    assert tt.export_csv(tt.make_records([3], [2], [123456789012])).splitlines()[1] == "3,2,123456789012"
    p = tmp_path / "r.csv"
    tt.export_csv(tt.make_records([1], [1], [2]), p)
    assert tt.import_csv(p.read_text())["time"][0] == 2
    with pytest.raises(tt.TimeTagFormatError):
        tt.import_csv("a,b,c\n1,2,3\n")
