"""Time-tag and histogram file formats.

Binary tag format: 8-byte magic "PTAG0001", 2-byte little-endian version
(= 1), 8-byte little-endian record count, then 16 bytes per record:
8-byte little-endian unsigned timestamp in picoseconds, 1 channel byte
(0 = A, 1 = B), 7 reserved zero bytes. Records are sorted by timestamp,
ties broken by channel. Round trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .correlate import CoincidenceHistogram
from .detection import TimeTagStream
from .simulate import DecayHistogram

__all__ = [
    "TagFileError",
    "write_timetags",
    "read_timetags",
    "write_histogram_csv",
    "read_histogram_csv",
    "write_decay_csv",
    "read_decay_csv",
    "read_xy_csv",
]

MAGIC = b"PTAG0001"
VERSION = 1
_HEADER = struct.Struct("<8sHQ")
_RECORD_DTYPE = np.dtype([("t", "<u8"), ("ch", "u1"), ("pad", "u1", (7,))])
_CHANNEL_CODE = {"A": 0, "B": 1}
_CHANNEL_NAME = {0: "A", 1: "B"}


class TagFileError(ValueError):
    """Malformed time-tag file (bad magic, truncation, unsorted records, ...)."""


def write_timetags(path, streams) -> None:
    """Write one or more single-channel streams into one tag file.

    Records from all streams are merged and sorted by (timestamp, channel).
    """
    streams = list(streams)
    if not streams:
        raise ValueError("need at least one stream to write")
    total = sum(len(s) for s in streams)
    records = np.zeros(total, dtype=_RECORD_DTYPE)
    pos = 0
    for stream in streams:
        n = len(stream)
        records["t"][pos : pos + n] = stream.times_ps.astype(np.uint64)
        records["ch"][pos : pos + n] = _CHANNEL_CODE[stream.channel]
        pos += n
    order = np.lexsort((records["ch"], records["t"]))
    records = records[order]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, total))
        fh.write(records.tobytes())


def read_timetags(path, duration_ps=None) -> dict:
    """Read a tag file into per-channel streams, keyed 'A' / 'B'.

    The format carries no acquisition duration; pass duration_ps explicitly
    (e.g. from the scenario) or the largest timestamp is used.
    """
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise TagFileError("truncated file: header incomplete")
        magic, version, count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise TagFileError(f"bad magic {magic!r}")
        if version != VERSION:
            raise TagFileError(f"unsupported version {version}")
        payload = fh.read()
    if len(payload) != count * _RECORD_DTYPE.itemsize:
        raise TagFileError(
            f"truncated file: expected {count} records, "
            f"got {len(payload)} payload bytes"
        )
    records = np.frombuffer(payload, dtype=_RECORD_DTYPE)
    if np.any(records["pad"] != 0):
        raise TagFileError("nonzero reserved bytes")
    if np.any((records["ch"] != 0) & (records["ch"] != 1)):
        raise TagFileError("unknown channel byte")
    t = records["t"]
    if t.size > 1:
        dt = np.diff(t.astype(np.int64))
        if np.any(dt < 0):
            raise TagFileError("records not sorted by timestamp")
        ties = dt == 0
        if np.any(ties & (np.diff(records["ch"].astype(np.int16)) < 0)):
            raise TagFileError("timestamp ties not sorted by channel")
    if duration_ps is None:
        duration_ps = float(t.max()) if t.size else 1.0
    out = {}
    for code, name in _CHANNEL_NAME.items():
        sel = records["ch"] == code
        out[name] = TimeTagStream(
            times_ps=t[sel].astype(np.int64),
            channel=name,
            duration_ps=duration_ps,
        )
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_histogram_csv(path, hist: CoincidenceHistogram, g2=None, g2_err=None) -> None:
    """Coincidence histogram as CSV with metadata header comments.

    Columns: tau_ps_left_edge, counts, g2, g2_err. The header keeps the
    normalization metadata so the file parses back into an equal histogram.
    """
    n = hist.counts.size
    if g2 is None or g2_err is None:
        g2 = np.zeros(n)
        g2_err = np.zeros(n)
    with open(path, "w") as fh:
        fh.write("# coincidence-histogram v1\n")
        fh.write(f"# duration_ps={_fmt(hist.duration_ps)}\n")
        fh.write(f"# rate_a_cps={_fmt(hist.rate_a_cps)}\n")
        fh.write(f"# rate_b_cps={_fmt(hist.rate_b_cps)}\n")
        fh.write(f"# total_pairs={hist.total_pairs}\n")
        fh.write("tau_ps_left_edge,counts,g2,g2_err\n")
        for i in range(n):
            fh.write(
                f"{int(hist.bin_edges_ps[i])},{int(hist.counts[i])},"
                f"{_fmt(g2[i])},{_fmt(g2_err[i])}\n"
            )
        fh.write(f"# last_edge_ps={int(hist.bin_edges_ps[-1])}\n")


def _parse_csv(path):
    meta = {}
    rows = []
    header = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append(line.split(","))
    return meta, header, rows


def read_histogram_csv(path) -> CoincidenceHistogram:
    meta, header, rows = _parse_csv(path)
    if header is None or header[0] != "tau_ps_left_edge":
        raise ValueError(f"{path}: not a coincidence-histogram CSV")
    left = np.array([int(r[0]) for r in rows], dtype=np.int64)
    counts = np.array([int(r[1]) for r in rows], dtype=np.int64)
    last = int(meta.get("last_edge_ps", 2 * left[-1] - left[-2]))
    edges = np.append(left, last)
    return CoincidenceHistogram(
        bin_edges_ps=edges,
        counts=counts,
        total_pairs=int(meta["total_pairs"]),
        duration_ps=float(meta["duration_ps"]),
        rate_a_cps=float(meta["rate_a_cps"]),
        rate_b_cps=float(meta["rate_b_cps"]),
    )


def write_decay_csv(path, hist: DecayHistogram) -> None:
    """Delay-since-pulse-start histogram as CSV."""
    with open(path, "w") as fh:
        fh.write("# decay-histogram v1\n")
        fh.write(f"# period_ps={_fmt(hist.period_ps)}\n")
        fh.write("t_ps_left_edge,counts\n")
        for i in range(hist.counts.size):
            fh.write(f"{_fmt(hist.bin_edges_ps[i])},{int(hist.counts[i])}\n")
        fh.write(f"# last_edge_ps={_fmt(hist.bin_edges_ps[-1])}\n")


def read_decay_csv(path) -> DecayHistogram:
    meta, header, rows = _parse_csv(path)
    if header is None or header[0] != "t_ps_left_edge":
        raise ValueError(f"{path}: not a decay-histogram CSV")
    left = np.array([float(r[0]) for r in rows])
    counts = np.array([int(r[1]) for r in rows], dtype=np.int64)
    last = float(meta["last_edge_ps"])
    return DecayHistogram(
        bin_edges_ps=np.append(left, last),
        counts=counts,
        period_ps=float(meta["period_ps"]),
    )


def read_xy_csv(path):
    """Generic two-column CSV (x, y) with '#' comments; returns (x, y, meta)."""
    meta, header, rows = _parse_csv(path)
    if header is None or len(header) < 2:
        raise ValueError(f"{path}: expected a two-column CSV with a header")
    x = np.array([float(r[0]) for r in rows])
    y = np.array([float(r[1]) for r in rows])
    return x, y, meta
