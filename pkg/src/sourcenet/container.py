"""The ".snet" binary container for datasets and noise libraries.

Little-endian layout:

  header: magic "SNET", u16 version (=1), u8 kind (0 dataset, 1 noise),
          u32 n_records
  record: u32 id_len, id (UTF-8), u8 domain (0 synthetic, 1 pseudo_real,
          2 real), f32 lat, f32 lon, f32 depth, f32 label[6],
          u16 n_stations, u16 T
  station: f32 azimuth, f32 dist, f32 scalars[20], f32 p_win[6*T],
           f32 s_win[6*T]

Noise libraries reuse the same layout with kind=1: one single-station
record per noise trace, the three noise components in the first three
p_win rows and the shaping parameters in the leading scalar slots.
Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InvariantError, TruncatedFile
from .features import EventRecord, StationFeatures

MAGIC = b"SNET"
VERSION = 1
KIND_DATASET = 0
KIND_NOISE = 1

_DOMAIN_CODE = {"synthetic": 0, "pseudo_real": 1, "real": 2}
_DOMAIN_NAME = {v: k for k, v in _DOMAIN_CODE.items()}


def _f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise TruncatedFile(f"file truncated at byte {self.off} (needed {n} more)")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def f32(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").copy()


def _encode_record(out: bytearray, rec: EventRecord):
    ident = rec.id.encode("utf-8")
    t_len = rec.stations[0].window_len
    out += struct.pack("<I", len(ident))
    out += ident
    out += struct.pack("<B", _DOMAIN_CODE[rec.domain])
    out += struct.pack("<3f", rec.lat, rec.lon, rec.depth)
    out += _f32_bytes(rec.label)
    out += struct.pack("<HH", len(rec.stations), t_len)
    for s in rec.stations:
        out += struct.pack("<2f", s.azimuth, s.distance)
        out += _f32_bytes(s.scalars)
        out += _f32_bytes(s.p_win)
        out += _f32_bytes(s.s_win)


def _decode_record(r: _Reader, min_stations: int) -> EventRecord:
    (id_len,) = r.unpack("I")
    ident = r.take(id_len).decode("utf-8")
    (dom_code,) = r.unpack("B")
    if dom_code not in _DOMAIN_NAME:
        raise FormatError(f"unknown domain code {dom_code} in record {ident!r}")
    lat, lon, depth = r.unpack("3f")
    label = r.f32(6)
    n_st, t_len = r.unpack("HH")
    if n_st < min_stations:
        raise InvariantError(f"record {ident!r} has {n_st} stations (< {min_stations})")
    stations = []
    for _ in range(n_st):
        az, dist = r.unpack("2f")
        scalars = r.f32(20)
        p_win = r.f32(6 * t_len).reshape(6, t_len)
        s_win = r.f32(6 * t_len).reshape(6, t_len)
        stations.append(
            StationFeatures(azimuth=az, distance=dist, scalars=scalars, p_win=p_win, s_win=s_win)
        )
    return EventRecord(
        id=ident,
        lat=lat,
        lon=lon,
        depth=depth,
        stations=stations,
        label=label,
        domain=_DOMAIN_NAME[dom_code],
    )


def _encode(records, path, kind: int):
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HBI", VERSION, kind, len(records))
    for rec in records:
        _encode_record(out, rec)
    Path(path).write_bytes(bytes(out))


def _decode(path, expect_kind: int, min_stations: int) -> list[EventRecord]:
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    version, kind, n = r.unpack("HBI")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if kind != expect_kind:
        raise FormatError(f"container kind {kind}, expected {expect_kind}")
    records = [_decode_record(r, min_stations) for _ in range(n)]
    if r.off != len(r.data):
        raise FormatError(f"{len(r.data) - r.off} trailing bytes after last record")
    return records


def encode_dataset(records: list, path):
    """Write event records; refuses in-memory normalized records."""
    if any(rec.normalized for rec in records):
        raise InvariantError("normalized records cannot be serialized")
    if any(rec.n_stations < 5 for rec in records):
        raise InvariantError("dataset records need at least 5 stations")
    _encode(records, path, KIND_DATASET)


def decode_dataset(path) -> list:
    return _decode(path, KIND_DATASET, min_stations=5)


def encode_noise(lib, path):
    """Write a noise library (one pseudo-record per noise trace)."""
    from .psdr import NoiseLibrary  # local import to avoid a cycle

    assert isinstance(lib, NoiseLibrary)
    params = lib.spectral
    scalars = np.zeros(20, dtype=np.float32)
    keys = sorted(params)
    scalars[: len(keys)] = [params[k] for k in keys]
    records = []
    for i, trace in enumerate(lib.records):
        t_len = trace.shape[1]
        p_win = np.zeros((6, t_len), dtype=np.float32)
        p_win[:3] = trace
        records.append(
            EventRecord(
                id=f"noise_{i:04d}",
                lat=0.0,
                lon=0.0,
                depth=0.0,
                stations=[
                    StationFeatures(
                        azimuth=0.0,
                        distance=0.0,
                        scalars=scalars,
                        p_win=p_win,
                        s_win=np.zeros_like(p_win),
                    )
                ],
                label=np.zeros(6, dtype=np.float32),
                domain="synthetic",
            )
        )
    _encode(records, path, KIND_NOISE)


def decode_noise(path):
    from .psdr import NoiseLibrary

    records = _decode(path, KIND_NOISE, min_stations=1)
    if not records:
        raise FormatError("noise library holds no records")
    traces = [rec.stations[0].p_win[:3].copy() for rec in records]
    scal = records[0].stations[0].scalars
    spectral = {
        "bump_gain": float(scal[0]),
        "bump_hz": float(scal[1]),
        "bump_sigma_hz": float(scal[2]),
        "corner_hz": float(scal[3]),
    }
    return NoiseLibrary(records=traces, spectral=spectral)
