"""Per-station model inputs and dataset records.

Turns raw traces into the multi-modal station features the network
consumes: band-passed 6-second P/S windows, their log-magnitude spectra,
and a 20-entry scalar vector of geometric and amplitude metadata. Also
owns dataset-level normalization statistics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import butter, sosfilt

from .errors import DegenerateStat, InvariantError, TooShort
from .forward import EventGeom, StationGeom, SyntheticEvent, Trace, geo_to_local
from .mtmath import SourceLabel

BAND_HZ = (0.1, 2.0)
WINDOW_OFFSETS_S = (-1.0, 5.0)
WINDOW_LEN = 120  # 6 s at 20 Hz
N_SCALARS = 20
_RATIO_EPS = 1e-12

DOMAINS = ("synthetic", "pseudo_real", "real")


def bandpass(x: np.ndarray, lo: float = BAND_HZ[0], hi: float = BAND_HZ[1], rate: float = 20.0) -> np.ndarray:
    """Causal 4th-order Butterworth band-pass applied forward only."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 64:
        raise TooShort(f"need >= 64 samples, got {x.shape[-1]}")
    sos = butter(4, [lo, hi], btype="bandpass", fs=rate, output="sos")
    return sosfilt(sos, x, axis=-1)


def cut_window(
    samples: np.ndarray, pick_s: float, rate: float = 20.0, offsets=WINDOW_OFFSETS_S
) -> tuple[np.ndarray, bool]:
    """Exact fixed-length slice around a pick; zero-pads out-of-range parts.

    Returns (3 x T window, padded flag).
    """
    t_len = int(round((offsets[1] - offsets[0]) * rate))
    start = int(round((pick_s + offsets[0]) * rate))
    n = samples.shape[-1]
    win = np.zeros((samples.shape[0], t_len))
    lo = max(0, start)
    hi = min(n, start + t_len)
    padded = lo != start or hi != start + t_len
    if hi > lo:
        win[:, lo - start : hi - start] = samples[:, lo:hi]
    return win, padded


def spectral_channels(win: np.ndarray) -> np.ndarray:
    """log10(1 + |rFFT|) per component, linearly resampled to the window length."""
    t_len = win.shape[-1]
    mag = np.log10(1.0 + np.abs(np.fft.rfft(win, axis=-1)))
    xp = np.linspace(0.0, 1.0, mag.shape[-1])
    xq = np.linspace(0.0, 1.0, t_len)
    return np.stack([np.interp(xq, xp, row) for row in mag])


def scalar_vector(
    st: StationGeom,
    azimuth: float,
    dist_km: float,
    depth_km: float,
    p_win: np.ndarray,
    s_win: np.ndarray,
) -> np.ndarray:
    """Fixed-order 20-entry scalar feature vector.

    Layout: [st_lat, st_lon, azimuth, epicentral distance, source depth,
    6 P-channel peak amplitudes (log10(1+.) on the 3 time channels),
    the same 6 for S, 3 raw P/S time-channel amplitude ratios].
    """
    p_time = np.max(np.abs(p_win[:3]), axis=-1)
    p_spec = np.max(np.abs(p_win[3:]), axis=-1)
    s_time = np.max(np.abs(s_win[:3]), axis=-1)
    s_spec = np.max(np.abs(s_win[3:]), axis=-1)
    ratios = p_time / np.maximum(s_time, _RATIO_EPS)
    out = np.concatenate(
        [
            [st.lat, st.lon, azimuth, dist_km, depth_km],
            np.log10(1.0 + p_time),
            p_spec,
            np.log10(1.0 + s_time),
            s_spec,
            ratios,
        ]
    )
    assert out.shape == (N_SCALARS,)
    return out


@dataclass
class StationFeatures:
    """Model inputs for one station; azimuth/distance kept for diagnostics."""

    azimuth: float
    distance: float
    scalars: np.ndarray  # (20,) float32
    p_win: np.ndarray  # (6, T) float32
    s_win: np.ndarray  # (6, T) float32

    def __post_init__(self):
        self.scalars = np.asarray(self.scalars, dtype=np.float32)
        self.p_win = np.asarray(self.p_win, dtype=np.float32)
        self.s_win = np.asarray(self.s_win, dtype=np.float32)
        if self.scalars.shape != (N_SCALARS,):
            raise InvariantError(f"scalars must be ({N_SCALARS},)")
        if self.p_win.shape != self.s_win.shape or self.p_win.ndim != 2 or self.p_win.shape[0] != 6:
            raise InvariantError("windows must be (6, T) with matching shapes")
        for arr in (self.scalars, self.p_win, self.s_win):
            if not np.all(np.isfinite(arr)):
                raise InvariantError("station features must be finite")

    @property
    def window_len(self) -> int:
        return self.p_win.shape[1]


@dataclass
class EventRecord:
    """One event: unordered station features plus the regression label."""

    id: str
    lat: float
    lon: float
    depth: float
    stations: list
    label: np.ndarray  # (6,) float32: 5 dev components + mw
    domain: str = "synthetic"
    normalized: bool = False

    def __post_init__(self):
        self.label = np.asarray(self.label, dtype=np.float32)
        if self.label.shape != (6,):
            raise InvariantError("label must have 6 entries")
        if self.domain not in DOMAINS:
            raise InvariantError(f"unknown domain tag {self.domain!r}")
        if len(self.stations) < 1:
            raise InvariantError("event record needs at least one station")
        t0 = self.stations[0].window_len
        if any(s.window_len != t0 for s in self.stations):
            raise InvariantError("all stations must share the window length")

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def source_label(self) -> SourceLabel:
        return SourceLabel(dev=self.label[:5].astype(float), mw=float(self.label[5]))


def extract_station(trace: Trace, st: StationGeom, ev_geom: EventGeom) -> StationFeatures:
    """Filter, window, and summarize one station's trace."""
    dist, az = geo_to_local(ev_geom, st)
    filtered = bandpass(trace.samples, rate=trace.rate)
    p_time, _ = cut_window(filtered, trace.p_pick, trace.rate)
    s_time, _ = cut_window(filtered, trace.s_pick, trace.rate)
    p_win = np.vstack([p_time, spectral_channels(p_time)])
    s_win = np.vstack([s_time, spectral_channels(s_time)])
    scalars = scalar_vector(st, az, dist, ev_geom.depth, p_win, s_win)
    return StationFeatures(azimuth=az, distance=dist, scalars=scalars, p_win=p_win, s_win=s_win)


def extract_event(ev: SyntheticEvent, event_id: str) -> EventRecord:
    """Turn a simulated event into a model-ready record (order-preserving)."""
    feats = [extract_station(tr, st, ev.geom) for st, tr in ev.stations]
    return EventRecord(
        id=event_id,
        lat=ev.geom.lat,
        lon=ev.geom.lon,
        depth=ev.geom.depth,
        stations=feats,
        label=ev.label.as_vector().astype(np.float32),
        domain=ev.domain,
    )


@dataclass
class NormStats:
    """Z-score parameters for scalars plus a global waveform scale."""

    scalar_mean: np.ndarray  # (20,)
    scalar_std: np.ndarray  # (20,)
    wave_scale: float

    def __post_init__(self):
        self.scalar_mean = np.asarray(self.scalar_mean, dtype=float)
        self.scalar_std = np.asarray(self.scalar_std, dtype=float)
        if np.any(self.scalar_std <= 0) or self.wave_scale <= 0:
            raise InvariantError("normalization scales must be positive")

    def to_dict(self) -> dict:
        return {
            "scalar_mean": self.scalar_mean.tolist(),
            "scalar_std": self.scalar_std.tolist(),
            "wave_scale": self.wave_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            scalar_mean=np.array(d["scalar_mean"]),
            scalar_std=np.array(d["scalar_std"]),
            wave_scale=float(d["wave_scale"]),
        )


def fit_stats(records: list) -> NormStats:
    """Fit normalization statistics on a dataset (typically the train split)."""
    if not records:
        raise InvariantError("cannot fit statistics on an empty dataset")
    scalars = np.concatenate([[s.scalars for s in r.stations] for r in records]).astype(float)
    mean = scalars.mean(axis=0)
    std = scalars.std(axis=0)
    bad = std == 0.0
    if np.any(bad):
        warnings.warn(
            f"{int(bad.sum())} scalar feature(s) have zero variance; std clamped to 1",
            DegenerateStat,
        )
        std = np.where(bad, 1.0, std)
    peaks = np.concatenate(
        [
            [max(np.max(np.abs(s.p_win[:3])), np.max(np.abs(s.s_win[:3]))) for s in r.stations]
            for r in records
        ]
    )
    wave_scale = float(np.percentile(peaks, 95.0))
    if wave_scale <= 0.0:
        wave_scale = 1.0
    return NormStats(scalar_mean=mean, scalar_std=std, wave_scale=wave_scale)


def apply_norm(record: EventRecord, stats: NormStats) -> EventRecord:
    """Return a normalized copy; refuses records that are already normalized."""
    if record.normalized:
        raise InvariantError(f"record {record.id} is already normalized")
    stations = []
    for s in record.stations:
        p = s.p_win.astype(float)
        q = s.s_win.astype(float)
        p[:3] /= stats.wave_scale
        q[:3] /= stats.wave_scale
        stations.append(
            StationFeatures(
                azimuth=s.azimuth,
                distance=s.distance,
                scalars=((s.scalars.astype(float) - stats.scalar_mean) / stats.scalar_std),
                p_win=p,
                s_win=q,
            )
        )
    return replace(record, stations=stations, normalized=True)
