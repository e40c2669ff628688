"""Ray-theoretic far-field forward simulator over layered 1-D earth models.

Produces clean three-component velocity seismograms: direct and head-wave
travel times under Snell's law, double-couple radiation patterns, 1/R
geometric spreading, and a magnitude-scaled source pulse. Free surface,
attenuation, and site effects are deliberately absent; the domain
randomization stage stands in for them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import InvariantError, NoRay, NoStations, ParseError
from .mtmath import MomentTensor, SourceLabel, mt_to_label, radiation

EARTH_RADIUS_KM = 6371.0


@dataclass
class VelocityModel:
    """Layered 1-D model; the last layer is a half-space (thickness = inf)."""

    id: str
    thickness: np.ndarray  # km, inf for the half-space
    vp: np.ndarray  # km/s
    vs: np.ndarray  # km/s
    rho: np.ndarray  # g/cm^3

    def __post_init__(self):
        self.thickness = np.asarray(self.thickness, dtype=float)
        self.vp = np.asarray(self.vp, dtype=float)
        self.vs = np.asarray(self.vs, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        n = len(self.thickness)
        if n < 1:
            raise InvariantError("model needs at least one layer")
        if not (len(self.vp) == len(self.vs) == len(self.rho) == n):
            raise InvariantError("layer arrays must have equal length")
        if not np.all(self.vp > self.vs):
            raise InvariantError("vp must exceed vs in every layer")
        if not np.all(self.vs > 0):
            raise InvariantError("vs must be positive")
        if not np.all(self.rho > 0):
            raise InvariantError("rho must be positive")
        if n > 1 and not np.all(self.thickness[:-1] > 0):
            raise InvariantError("layer thickness must be positive above the half-space")
        if not math.isinf(self.thickness[-1]):
            raise InvariantError("last layer must be the half-space")

    @property
    def n_layers(self) -> int:
        return len(self.thickness)

    @property
    def tops(self) -> np.ndarray:
        """Depth of each layer top, km."""
        return np.concatenate([[0.0], np.cumsum(self.thickness[:-1])])

    def layer_at(self, depth_km: float) -> int:
        """Index of the layer containing the given depth."""
        return int(np.searchsorted(self.tops, depth_km, side="right")) - 1

    def velocities(self, phase: str) -> np.ndarray:
        if phase == "P":
            return self.vp
        if phase == "S":
            return self.vs
        raise ValueError(f"unknown phase {phase!r}")


def load_velocity_model(text: str, model_id: str = "model") -> VelocityModel:
    """Parse the layer-per-line text format.

    Each line: "thickness_km vp_km_s vs_km_s rho_g_cm3"; thickness 0 on the
    last line marks the half-space; '#' starts a comment.
    """
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        rows.append((lineno, vals))
    if not rows:
        raise ParseError("no layers found")
    for lineno, (th, vp, vs, rho) in rows:
        if not all(map(math.isfinite, (th, vp, vs, rho))):
            raise ParseError(f"line {lineno}: non-finite value")
    thickness = np.array([r[1][0] for r in rows])
    vp = np.array([r[1][1] for r in rows])
    vs = np.array([r[1][2] for r in rows])
    rho = np.array([r[1][3] for r in rows])
    if np.any(thickness < 0):
        raise InvariantError("negative layer thickness")
    if np.any(thickness[:-1] == 0):
        raise InvariantError("only the last line may have thickness 0 (half-space)")
    if thickness[-1] != 0:
        raise InvariantError("last line must have thickness 0 (half-space)")
    thickness = thickness.copy()
    thickness[-1] = math.inf
    return VelocityModel(id=model_id, thickness=thickness, vp=vp, vs=vs, rho=rho)


def format_velocity_model(model: VelocityModel) -> str:
    """Inverse of load_velocity_model (half-space written as thickness 0)."""
    lines = []
    for i in range(model.n_layers):
        th = 0.0 if math.isinf(model.thickness[i]) else model.thickness[i]
        lines.append(f"{th:g} {model.vp[i]:g} {model.vs[i]:g} {model.rho[i]:g}")
    return "\n".join(lines) + "\n"


@dataclass
class StationGeom:
    name: str
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise InvariantError(f"station latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon < 180.0:
            raise InvariantError(f"station longitude {self.lon} outside [-180, 180)")


@dataclass
class EventGeom:
    lat: float
    lon: float
    depth: float  # km
    origin_time: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.depth < 700.0:
            raise InvariantError(f"depth {self.depth} outside (0, 700) km")


def geo_to_local(ev: EventGeom, st: StationGeom) -> tuple[float, float]:
    """Epicentral distance (km) and azimuth (deg, clockwise from north).

    Equirectangular approximation; adequate for regional distances.
    """
    lat_mean = math.radians(0.5 * (ev.lat + st.lat))
    dx = EARTH_RADIUS_KM * math.radians(st.lon - ev.lon) * math.cos(lat_mean)
    dy = EARTH_RADIUS_KM * math.radians(st.lat - ev.lat)
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return 0.0, 0.0
    az = math.degrees(math.atan2(dx, dy)) % 360.0
    return dist, az


def _offsets_and_times(segments, vels, p):
    """Horizontal offset and time accumulated across layer segments at slowness p."""
    x = 0.0
    t = 0.0
    for seg, v in zip(segments, vels):
        s = p * v
        c = math.sqrt(max(0.0, 1.0 - s * s))
        if c <= 0.0:
            return math.inf, math.inf
        x += seg * s / c
        t += seg / (v * c)
    return x, t


def _upward_path(model: VelocityModel, depth_km: float, phase: str):
    """Per-layer path lengths from the source straight up to the surface.

    Zero-length segments (source exactly on an interface) are pruned so
    they do not constrain the ray parameter.
    """
    vels = model.velocities(phase)
    k = model.layer_at(depth_km)
    segments = np.array(list(model.thickness[:k]) + [depth_km - model.tops[k]])
    keep = segments > 0
    return segments[keep], vels[: k + 1][keep], k


def travel_time(
    model: VelocityModel, depth_km: float, dist_km: float, phase: str = "P"
) -> tuple[float, float]:
    """First-arrival time (s) and takeoff angle (deg from downward vertical).

    Evaluates the direct up-going ray (bisection on ray parameter) and every
    admissible head-wave branch along faster layers below the source, and
    returns the earlier arrival. Up-going rays have takeoff > 90 deg.
    """
    if not (0.0 < depth_km):
        raise NoRay("source must be below the surface")
    if dist_km < 0:
        raise NoRay("negative distance")
    segments, vels, k = _upward_path(model, depth_km, phase)
    if len(segments) == 0:
        raise NoRay("source has no upward path")
    v_up = vels[-1]  # velocity where the up-going ray leaves the source

    candidates = []

    # direct up-going ray
    if dist_km == 0.0:
        t = float(np.sum(segments / vels))
        candidates.append((t, 180.0))
    else:
        vmax = float(np.max(vels))
        p_hi = (1.0 - 1e-12) / vmax

        def miss(p):
            x, _ = _offsets_and_times(segments, vels, p)
            return x - dist_km

        try:
            hi = p_hi
            if miss(hi) < 0:
                raise NoRay("direct branch does not reach the station")
            p_star = brentq(miss, 0.0, hi, xtol=1e-14, maxiter=200)
            _, t = _offsets_and_times(segments, vels, p_star)
            takeoff = 180.0 - math.degrees(math.asin(min(1.0, p_star * v_up)))
            candidates.append((t, takeoff))
        except (ValueError, NoRay):
            pass

    # head waves refracted along each faster layer below the source
    all_vels = model.velocities(phase)
    tops = model.tops
    for m in range(k + 1, model.n_layers):
        v_head = all_vels[m]
        down_segs = [tops[k + 1] - depth_km] + list(model.thickness[k + 1 : m])
        down_vels = list(all_vels[k : m])
        up_segs = list(model.thickness[:m])
        up_vels = list(all_vels[:m])
        leg_vmax = max(down_vels + up_vels)
        if v_head <= leg_vmax:
            continue
        p_c = 1.0 / v_head
        x_down, t_down = _offsets_and_times(down_segs, down_vels, p_c)
        x_up, t_up = _offsets_and_times(up_segs, up_vels, p_c)
        x_legs = x_down + x_up
        if dist_km + 1e-12 < x_legs:
            continue
        t = t_down + t_up + (dist_km - x_legs) / v_head
        takeoff = math.degrees(math.asin(min(1.0, p_c * all_vels[k])))
        candidates.append((t, takeoff))

    if not candidates:
        raise NoRay(f"no ray connects depth {depth_km} km to distance {dist_km} km")
    return min(candidates, key=lambda c: c[0])


@dataclass
class SimConfig:
    rate: float = 20.0  # Hz
    duration: float = 90.0  # s

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.rate))


@dataclass
class Trace:
    """Three-component ground velocity (rows Z, N, E) with theoretical picks."""

    samples: np.ndarray  # 3 x L
    rate: float
    p_pick: float  # s
    s_pick: float  # s

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[0] != 3:
            raise InvariantError("trace must be 3 x L")
        if not np.all(np.isfinite(self.samples)):
            raise InvariantError("trace samples must be finite")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def copy(self) -> "Trace":
        return Trace(self.samples.copy(), self.rate, self.p_pick, self.s_pick)


@dataclass
class SyntheticEvent:
    geom: EventGeom
    stations: list  # of (StationGeom, Trace)
    label: SourceLabel
    model_id: str
    domain: str = "synthetic"
    dropped: int = 0  # stations discarded as unreachable

    def __post_init__(self):
        if len(self.stations) < 1:
            raise NoStations("event has no stations")


def source_time_function(mw: float, rate: float = 20.0) -> np.ndarray:
    """Unit-peak, zero-mean derivative-of-Gaussian pulse.

    Half-duration tau = 0.5 * 10^(0.25*(mw-3)) s, clipped to [0.2, 3] s;
    pulse spans ceil(6*tau*rate) samples.
    """
    if not math.isfinite(mw):
        raise ValueError("mw must be finite")
    tau = 0.5 * 10.0 ** (0.5 * (mw - 3.0) / 2.0)
    tau = min(3.0, max(0.2, tau))
    n = int(math.ceil(6.0 * tau * rate))
    t = (np.arange(n) - (n - 1) / 2.0) / rate
    sigma = tau / 2.0
    pulse = t * np.exp(-0.5 * (t / sigma) ** 2)
    peak = np.max(np.abs(pulse))
    return pulse / peak


def _ray_unit_ned(takeoff_deg: float, azimuth_deg: float) -> np.ndarray:
    """Unit ray direction at the source in north-east-down coordinates."""
    i = math.radians(takeoff_deg)
    az = math.radians(azimuth_deg)
    return np.array([math.sin(i) * math.cos(az), math.sin(i) * math.sin(az), math.cos(i)])


def _add_pulse(samples: np.ndarray, start_idx: int, polarization_zne: np.ndarray, pulse: np.ndarray):
    """Accumulate polarization (x) pulse into the trace, clipped at the edges."""
    n = samples.shape[1]
    lo = max(0, start_idx)
    hi = min(n, start_idx + len(pulse))
    if hi <= lo:
        return
    seg = pulse[lo - start_idx : hi - start_idx]
    samples[:, lo:hi] += np.outer(polarization_zne, seg)


def _ned_to_zne(v: np.ndarray) -> np.ndarray:
    return np.array([-v[2], v[0], v[1]])


def simulate_event(
    mt: MomentTensor,
    geom: EventGeom,
    stations: list,
    model: VelocityModel,
    cfg: SimConfig | None = None,
) -> SyntheticEvent:
    """Simulate clean three-component records for every reachable station.

    P and S far-field pulses are placed at their theoretical arrival times
    with amplitude radiation(gamma) / (4 pi rho v^3 R 1e9) on the ray
    direction (P) or the transverse S vector, R being the straight-line
    source-receiver distance. Stations with no connecting ray (or with S
    arriving beyond the trace window) are dropped.
    """
    if cfg is None:
        cfg = SimConfig()
    label = mt_to_label(mt)
    pulse = source_time_function(label.mw, cfg.rate)
    src_layer = model.layer_at(geom.depth)
    rho = model.rho[src_layer]
    alpha = model.vp[src_layer]
    beta = model.vs[src_layer]

    out = []
    dropped = 0
    for st in stations:
        dist, az = geo_to_local(geom, st)
        try:
            t_p, takeoff_p = travel_time(model, geom.depth, dist, "P")
            t_s, takeoff_s = travel_time(model, geom.depth, dist, "S")
        except NoRay:
            dropped += 1
            continue
        if t_s >= cfg.duration:
            dropped += 1
            continue
        r = math.hypot(dist, geom.depth)
        samples = np.zeros((3, cfg.n_samples))

        gamma_p = _ray_unit_ned(takeoff_p, az)
        p_amp, _ = radiation(mt, gamma_p)
        amp_p = p_amp / (4.0 * math.pi * rho * alpha**3 * r * 1e9)
        _add_pulse(samples, int(round(t_p * cfg.rate)), _ned_to_zne(gamma_p) * amp_p, pulse)

        gamma_s = _ray_unit_ned(takeoff_s, az)
        _, s_vec = radiation(mt, gamma_s)
        amp_s = s_vec / (4.0 * math.pi * rho * beta**3 * r * 1e9)
        _add_pulse(samples, int(round(t_s * cfg.rate)), _ned_to_zne(amp_s), pulse)

        out.append((st, Trace(samples, cfg.rate, t_p, t_s)))

    if not out:
        raise NoStations("no station is reachable from this source")
    return SyntheticEvent(
        geom=geom, stations=out, label=label, model_id=model.id, dropped=dropped
    )


def load_stations(text: str) -> list[StationGeom]:
    """Parse the "name lat lon" per-line station list; '#' starts a comment."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"line {lineno}: expected 'name lat lon'")
        try:
            out.append(StationGeom(parts[0], float(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    if not out:
        raise ParseError("no stations found")
    return out
