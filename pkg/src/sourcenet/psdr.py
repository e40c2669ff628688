"""Physics-structured domain randomization.

The stochastic operators that turn clean simulations into training data:
velocity-model libraries, per-station signal distortion (time shifts,
amplitude jitter, scattering coda), spectrally shaped noise injection,
station dropout, and the out-of-library pseudo-real generator used to
exercise the fine-tuning path. Every operator is deterministic given its
generator and leaves the source label untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoiseTooShort, TooFewStations
from .features import bandpass
from .forward import (
    EventGeom,
    SimConfig,
    SyntheticEvent,
    Trace,
    VelocityModel,
    simulate_event,
)
from .mtmath import MomentTensor

SNR_CLEAN = math.inf  # sentinel: skip noise injection entirely


@dataclass
class PsdrConfig:
    time_shift_max: float = 0.5  # s
    amp_sigma: float = 0.2  # log-normal sigma
    coda_rel_amp: tuple = (0.1, 0.5)
    coda_tau: tuple = (1.0, 5.0)  # s
    snr_range: tuple = (2.0, 20.0)  # log-uniform; (inf, inf) disables
    keep_prob: tuple = (0.6, 1.0)
    min_stations: int = 5
    model_library: tuple = ()

    def __post_init__(self):
        for name in ("coda_rel_amp", "coda_tau", "snr_range", "keep_prob"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} interval {lo, hi} not ordered")
        if not (0.0 <= self.keep_prob[0] and self.keep_prob[1] <= 1.0):
            raise ValueError("keep_prob must lie in [0, 1]")
        if self.time_shift_max < 0 or self.amp_sigma < 0:
            raise ValueError("time_shift_max and amp_sigma must be non-negative")
        if self.min_stations < 1:
            raise ValueError("min_stations must be >= 1")


@dataclass
class NoiseLibrary:
    """Spectrally shaped surrogate ambient noise; one 3 x L trace per record."""

    records: list  # of (3, L) float32 arrays
    spectral: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.records:
            raise ValueError("noise library needs at least one record")
        for rec in self.records:
            if not np.all(np.isfinite(rec)):
                raise ValueError("noise records must be finite")


def build_model_library(base: VelocityModel, n: int = 17, rng=None) -> list:
    """Perturbed copies of a base model; entry 0 is the base itself.

    vp/vs move by i.i.d. uniform +-8 percent, thicknesses by +-15 percent;
    if a perturbation would break vp > vs, vs falls back to the base vp/vs
    ratio applied to the new vp.
    """
    rng = np.random.default_rng() if rng is None else rng
    out = [base]
    for i in range(1, n):
        vp = base.vp * (1.0 + rng.uniform(-0.08, 0.08, size=base.n_layers))
        vs = base.vs * (1.0 + rng.uniform(-0.08, 0.08, size=base.n_layers))
        bad = vs >= vp
        vs[bad] = vp[bad] * (base.vs[bad] / base.vp[bad])
        thick = base.thickness.copy()
        if base.n_layers > 1:
            thick[:-1] = thick[:-1] * (1.0 + rng.uniform(-0.15, 0.15, size=base.n_layers - 1))
        out.append(
            VelocityModel(
                id=f"{base.id}_r{i:02d}", thickness=thick, vp=vp, vs=vs, rho=base.rho.copy()
            )
        )
    return out


def _shaped_noise(n_samples: int, rate: float, spectral: dict, rng) -> np.ndarray:
    """One 3-component record: PSD ~ 1/f plus a microseism-band bump, unit RMS."""
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / rate)
    weight = 1.0 / np.sqrt(np.maximum(freqs, spectral["corner_hz"]))
    weight += spectral["bump_gain"] * np.exp(
        -0.5 * ((freqs - spectral["bump_hz"]) / spectral["bump_sigma_hz"]) ** 2
    )
    weight[0] = 0.0
    out = np.empty((3, n_samples))
    for c in range(3):
        spec = np.fft.rfft(rng.standard_normal(n_samples))
        row = np.fft.irfft(spec * weight, n=n_samples)
        out[c] = row / np.sqrt(np.mean(row**2))
    return out


def build_noise_library(
    rng,
    n_records: int = 16,
    n_samples: int = 2700,
    rate: float = 20.0,
    spectral: dict | None = None,
) -> NoiseLibrary:
    """Generate the surrogate ambient-noise library.

    Real recordings can be substituted by writing a kind=noise container
    with the same record layout.
    """
    if spectral is None:
        spectral = {"corner_hz": 0.05, "bump_hz": 0.2, "bump_sigma_hz": 0.07, "bump_gain": 3.0}
    records = [
        _shaped_noise(n_samples, rate, spectral, rng).astype(np.float32) for _ in range(n_records)
    ]
    return NoiseLibrary(records=records, spectral=dict(spectral))


def distort(trace: Trace, cfg: PsdrConfig, rng) -> Trace:
    """Stochastic time shift, amplitude jitter, and post-arrival scattering coda.

    With a degenerate config (zero shift, zero sigma, zero coda) the input
    is returned bit-exactly.
    """
    out = trace.copy()
    rate = trace.rate
    n = trace.n_samples

    shift_s = rng.uniform(-cfg.time_shift_max, cfg.time_shift_max)
    max_n = int(math.floor(cfg.time_shift_max * rate))
    shift_n = int(np.clip(round(shift_s * rate), -max_n, max_n))
    if shift_n != 0:
        rolled = np.zeros_like(out.samples)
        if shift_n > 0:
            rolled[:, shift_n:] = out.samples[:, :-shift_n]
        else:
            rolled[:, :shift_n] = out.samples[:, -shift_n:]
        out.samples = rolled
        out.p_pick = out.p_pick + shift_n / rate
        out.s_pick = out.s_pick + shift_n / rate

    factor = math.exp(rng.normal(0.0, cfg.amp_sigma)) if cfg.amp_sigma > 0 else 1.0
    if factor != 1.0:
        out.samples = out.samples * factor

    for pick in (out.p_pick, out.s_pick):
        a = rng.uniform(*cfg.coda_rel_amp)
        tau = rng.uniform(*cfg.coda_tau)
        eta = rng.standard_normal((3, n))
        if a == 0.0:
            continue
        idx = int(round(pick * rate))
        if idx >= n:
            continue
        lo = max(0, idx - int(0.5 * rate))
        hi = min(n, idx + int(3.0 * rate))
        local_peak = np.max(np.abs(out.samples[:, lo:hi]), axis=1)
        t_rel = (np.arange(n - idx)) / rate
        envelope = np.exp(-t_rel / tau)
        eta_band = bandpass(eta)[:, idx:]
        rms = np.sqrt(np.mean(eta_band**2, axis=1, keepdims=True))
        eta_band = eta_band / np.maximum(rms, 1e-30)
        out.samples[:, idx:] += a * local_peak[:, None] * eta_band * envelope[None, :]
    return out


def inject_noise(trace: Trace, lib: NoiseLibrary, rng, snr_range=(2.0, 20.0)):
    """Add a scaled noise-library segment; returns (trace, realized snr).

    SNR is defined as (signal peak amplitude) / (noise RMS) and drawn
    log-uniformly. An infinite snr_range is the "clean" sentinel.
    """
    if math.isinf(snr_range[0]) and math.isinf(snr_range[1]):
        return trace, SNR_CLEAN
    n = trace.n_samples
    rec = lib.records[int(rng.integers(len(lib.records)))]
    if rec.shape[1] < n:
        raise NoiseTooShort(f"noise record has {rec.shape[1]} samples, trace needs {n}")
    start = int(rng.integers(rec.shape[1] - n + 1))
    seg = rec[:, start : start + n].astype(float)
    snr = float(np.exp(rng.uniform(math.log(snr_range[0]), math.log(snr_range[1]))))
    peak = float(np.max(np.abs(trace.samples)))
    rms = float(np.sqrt(np.mean(seg**2)))
    out = trace.copy()
    if peak > 0 and rms > 0:
        out.samples = out.samples + seg * (peak / (rms * snr))
    return out, snr


def dropout_stations(ev: SyntheticEvent, cfg: PsdrConfig, rng) -> SyntheticEvent:
    """Bernoulli station masking with a hard floor of min_stations survivors."""
    n = len(ev.stations)
    if n < cfg.min_stations:
        raise TooFewStations(f"{n} stations < floor {cfg.min_stations}")
    p = rng.uniform(*cfg.keep_prob)
    scores = rng.uniform(size=n)
    keep = scores < p
    short = cfg.min_stations - int(keep.sum())
    if short > 0:
        dropped = np.flatnonzero(~keep)
        restore = dropped[np.argsort(scores[dropped])[::-1][:short]]
        keep[restore] = True
    stations = [ev.stations[i] for i in range(n) if keep[i]]
    return replace(ev, stations=stations)


def augment_event(ev: SyntheticEvent, cfg: PsdrConfig, lib: NoiseLibrary, rng) -> SyntheticEvent:
    """Full randomization pipeline: distort, then add noise, then drop stations."""
    stations = []
    for st, trace in ev.stations:
        distorted = distort(trace, cfg, rng)
        noisy, _ = inject_noise(distorted, lib, rng, cfg.snr_range)
        stations.append((st, noisy))
    out = replace(ev, stations=stations)
    return dropout_stations(out, cfg, rng)


@dataclass
class EventParams:
    """Everything needed to realize one event end to end."""

    mt: MomentTensor
    geom: EventGeom
    stations: list
    base_model: VelocityModel
    psdr: PsdrConfig
    sim: SimConfig = field(default_factory=SimConfig)


PSEUDO_REAL_MODEL_JITTER = 0.15
PSEUDO_REAL_SNR = (1.0, 10.0)


def perturb_model(base: VelocityModel, rng, frac: float, model_id: str) -> VelocityModel:
    """Uniform +-frac perturbation of vp/vs/thickness (ratio-preserving fallback)."""
    vp = base.vp * (1.0 + rng.uniform(-frac, frac, size=base.n_layers))
    vs = base.vs * (1.0 + rng.uniform(-frac, frac, size=base.n_layers))
    bad = vs >= vp
    vs[bad] = vp[bad] * (base.vs[bad] / base.vp[bad])
    thick = base.thickness.copy()
    if base.n_layers > 1:
        thick[:-1] = thick[:-1] * (1.0 + rng.uniform(-frac, frac, size=base.n_layers - 1))
    return VelocityModel(id=model_id, thickness=thick, vp=vp, vs=vs, rho=base.rho.copy())


def make_pseudo_real(params: EventParams, lib: NoiseLibrary, rng) -> SyntheticEvent:
    """Simulate one event in a deliberately out-of-library domain.

    The velocity model is perturbed beyond the training library's +-8
    percent envelope, the coda range is doubled, and the SNR range drops
    to [1, 10]; the output is tagged domain="pseudo_real".
    """
    model = perturb_model(
        params.base_model, rng, PSEUDO_REAL_MODEL_JITTER, f"pseudo_{params.base_model.id}"
    )
    cfg = replace(
        params.psdr,
        coda_rel_amp=(2 * params.psdr.coda_rel_amp[0], 2 * params.psdr.coda_rel_amp[1]),
        snr_range=PSEUDO_REAL_SNR,
    )
    ev = simulate_event(params.mt, params.geom, params.stations, model, params.sim)
    ev = replace(ev, domain="pseudo_real")
    return augment_event(ev, cfg, lib, rng)
