import math

import numpy as np
import pytest
from scipy.signal import welch

from sourcenet import forward as fw
from sourcenet import mtmath as mm
from sourcenet import psdr
from sourcenet.errors import NoiseTooShort, TooFewStations

from test_forward import TWO_LAYER, ring_stations


@pytest.fixture(scope="module")
def base_model():
    return fw.load_velocity_model(TWO_LAYER, "base")


@pytest.fixture(scope="module")
def clean_event(base_model):
    geom = fw.EventGeom(lat=34.0, lon=-117.0, depth=9.0)
    mt = mm.sdr_to_mt(mm.DoubleCouple(75.0, 50.0, -30.0, m0=mm.mw_to_moment(4.2)))
    return fw.simulate_event(mt, geom, ring_stations(geom, n=10), base_model)


@pytest.fixture(scope="module")
def noise_lib():
    return psdr.build_noise_library(np.random.default_rng(5), n_records=4)


IDENTITY = psdr.PsdrConfig(
    time_shift_max=0.0,
    amp_sigma=0.0,
    coda_rel_amp=(0.0, 0.0),
    coda_tau=(1.0, 1.0),
    snr_range=(math.inf, math.inf),
    keep_prob=(1.0, 1.0),
)


class TestModelLibrary:
    def test_count_and_validity(self, base_model):
        lib = psdr.build_model_library(base_model, 17, np.random.default_rng(1))
        assert len(lib) == 17
        assert lib[0] is base_model
        for m in lib:
            assert np.all(m.vp > m.vs)

    def test_seeded_determinism(self, base_model):
        a = psdr.build_model_library(base_model, 17, np.random.default_rng(2))
        b = psdr.build_model_library(base_model, 17, np.random.default_rng(2))
        for ma, mb in zip(a, b):
            np.testing.assert_array_equal(ma.vp, mb.vp)
            np.testing.assert_array_equal(ma.thickness, mb.thickness)

    def test_perturbation_bounds(self, base_model):
        lib = psdr.build_model_library(base_model, 17, np.random.default_rng(3))
        for m in lib[1:]:
            assert np.all(np.abs(m.vp / base_model.vp - 1.0) <= 0.08 + 1e-12)
            assert np.all(np.abs(m.vs / base_model.vs - 1.0) <= 0.08 + 1e-12)
            ratio = m.thickness[:-1] / base_model.thickness[:-1]
            assert np.all(np.abs(ratio - 1.0) <= 0.15 + 1e-12)
            assert m.id != base_model.id


class TestNoiseLibrary:
    def test_unit_rms(self, noise_lib):
        for rec in noise_lib.records:
            rms = np.sqrt(np.mean(np.asarray(rec, dtype=float) ** 2, axis=1))
            np.testing.assert_allclose(rms, 1.0, atol=1e-6)

    def test_microseism_band_dominates(self, noise_lib):
        # independent check of the shaping: measured PSD at 0.2 Hz must
        # exceed the 2 Hz PSD by >= 6 dB
        rec = np.asarray(noise_lib.records[0], dtype=float)
        f, pxx = welch(rec, fs=20.0, nperseg=1024, axis=-1)
        psd = pxx.mean(axis=0)
        p_low = psd[np.argmin(np.abs(f - 0.2))]
        p_high = psd[np.argmin(np.abs(f - 2.0))]
        assert 10.0 * math.log10(p_low / p_high) >= 6.0

    def test_seeded_determinism(self):
        a = psdr.build_noise_library(np.random.default_rng(7), n_records=2)
        b = psdr.build_noise_library(np.random.default_rng(7), n_records=2)
        for ra, rb in zip(a.records, b.records):
            np.testing.assert_array_equal(ra, rb)


class TestDistort:
    def test_identity_config_bit_exact(self, clean_event):
        trace = clean_event.stations[0][1]
        out = psdr.distort(trace, IDENTITY, np.random.default_rng(0))
        assert np.array_equal(out.samples, trace.samples)
        assert out.p_pick == trace.p_pick and out.s_pick == trace.s_pick

    def test_pick_shift_bounded(self, clean_event):
        cfg = psdr.PsdrConfig()
        trace = clean_event.stations[0][1]
        rng = np.random.default_rng(1)
        for _ in range(200):
            out = psdr.distort(trace, cfg, rng)
            assert abs(out.p_pick - trace.p_pick) <= cfg.time_shift_max + 1e-12
            assert abs(out.s_pick - trace.s_pick) <= cfg.time_shift_max + 1e-12

    def test_coda_energy_present(self, clean_event):
        cfg = psdr.PsdrConfig(time_shift_max=0.0, amp_sigma=0.0, snr_range=(math.inf, math.inf))
        trace = clean_event.stations[0][1]
        out = psdr.distort(trace, cfg, np.random.default_rng(2))
        n_s = int(round(trace.s_pick * trace.rate))
        pulse_len = 130  # past the direct S pulse
        tail = out.samples[:, n_s + pulse_len :]
        clean_tail = trace.samples[:, n_s + pulse_len :]
        assert np.sum(tail**2) > np.sum(clean_tail**2)

    def test_seeded_determinism(self, clean_event):
        cfg = psdr.PsdrConfig()
        trace = clean_event.stations[0][1]
        a = psdr.distort(trace, cfg, np.random.default_rng(3))
        b = psdr.distort(trace, cfg, np.random.default_rng(3))
        np.testing.assert_array_equal(a.samples, b.samples)


class TestInjectNoise:
    def test_clean_sentinel(self, clean_event, noise_lib):
        trace = clean_event.stations[0][1]
        out, snr = psdr.inject_noise(trace, noise_lib, np.random.default_rng(0), (math.inf, math.inf))
        assert snr == psdr.SNR_CLEAN
        assert np.array_equal(out.samples, trace.samples)

    def test_realized_snr(self, clean_event, noise_lib):
        trace = clean_event.stations[0][1]
        rng = np.random.default_rng(1)
        out, snr = psdr.inject_noise(trace, noise_lib, rng, (2.0, 20.0))
        assert 2.0 <= snr <= 20.0
        noise = out.samples - trace.samples
        peak = np.max(np.abs(trace.samples))
        realized = peak / np.sqrt(np.mean(noise**2))
        assert realized == pytest.approx(snr, rel=0.01)

    def test_add_subtract_restores(self, clean_event, noise_lib):
        trace = clean_event.stations[0][1]
        out, _ = psdr.inject_noise(trace, noise_lib, np.random.default_rng(2), (5.0, 5.0))
        again, _ = psdr.inject_noise(trace, noise_lib, np.random.default_rng(2), (5.0, 5.0))
        restored = out.samples - (again.samples - trace.samples)
        np.testing.assert_allclose(restored, trace.samples, atol=1e-6 * np.max(np.abs(trace.samples)))

    def test_too_short(self, clean_event):
        lib = psdr.NoiseLibrary(records=[np.zeros((3, 100), dtype=np.float32) + 1.0])
        with pytest.raises(NoiseTooShort):
            psdr.inject_noise(clean_event.stations[0][1], lib, np.random.default_rng(0), (5.0, 5.0))


class TestDropout:
    def test_keep_all(self, clean_event):
        cfg = psdr.PsdrConfig(keep_prob=(1.0, 1.0))
        out = psdr.dropout_stations(clean_event, cfg, np.random.default_rng(0))
        assert len(out.stations) == len(clean_event.stations)

    def test_floor_enforced(self, clean_event):
        cfg = psdr.PsdrConfig(keep_prob=(0.0, 0.0), min_stations=5)
        for seed in range(50):
            out = psdr.dropout_stations(clean_event, cfg, np.random.default_rng(seed))
            assert len(out.stations) == 5

    def test_too_few_input(self, clean_event):
        cfg = psdr.PsdrConfig(min_stations=len(clean_event.stations) + 1)
        with pytest.raises(TooFewStations):
            psdr.dropout_stations(clean_event, cfg, np.random.default_rng(0))

    def test_seeded_determinism(self, clean_event):
        cfg = psdr.PsdrConfig(keep_prob=(0.5, 0.9))
        a = psdr.dropout_stations(clean_event, cfg, np.random.default_rng(4))
        b = psdr.dropout_stations(clean_event, cfg, np.random.default_rng(4))
        assert [s.name for s, _ in a.stations] == [s.name for s, _ in b.stations]


class TestAugmentEvent:
    def test_identity_config(self, clean_event, noise_lib):
        out = psdr.augment_event(clean_event, IDENTITY, noise_lib, np.random.default_rng(0))
        assert len(out.stations) == len(clean_event.stations)
        for (s1, t1), (s2, t2) in zip(clean_event.stations, out.stations):
            assert s1.name == s2.name
            np.testing.assert_array_equal(t1.samples, t2.samples)

    def test_label_untouched(self, clean_event, noise_lib):
        cfg = psdr.PsdrConfig()
        out = psdr.augment_event(clean_event, cfg, noise_lib, np.random.default_rng(1))
        np.testing.assert_array_equal(out.label.dev, clean_event.label.dev)
        assert out.label.mw == clean_event.label.mw

    def test_full_determinism(self, clean_event, noise_lib):
        cfg = psdr.PsdrConfig()
        a = psdr.augment_event(clean_event, cfg, noise_lib, np.random.default_rng(2))
        b = psdr.augment_event(clean_event, cfg, noise_lib, np.random.default_rng(2))
        for (_, t1), (_, t2) in zip(a.stations, b.stations):
            np.testing.assert_array_equal(t1.samples, t2.samples)


class TestPseudoReal:
    def make_params(self, base_model, seed=0):
        rng = np.random.default_rng(seed)
        geom = fw.EventGeom(lat=34.0, lon=-117.0, depth=10.0)
        return psdr.EventParams(
            mt=mm.sample_uniform_dc(rng, (3.5, 4.5)),
            geom=geom,
            stations=ring_stations(geom, n=8),
            base_model=base_model,
            psdr=psdr.PsdrConfig(),
        )

    def test_out_of_library_id(self, base_model, noise_lib):
        params = self.make_params(base_model)
        lib_ids = {m.id for m in psdr.build_model_library(base_model, 17, np.random.default_rng(0))}
        ev = psdr.make_pseudo_real(params, noise_lib, np.random.default_rng(1))
        assert ev.model_id not in lib_ids
        assert ev.domain == "pseudo_real"

    def test_seeded_determinism(self, base_model, noise_lib):
        params = self.make_params(base_model)
        a = psdr.make_pseudo_real(params, noise_lib, np.random.default_rng(2))
        b = psdr.make_pseudo_real(params, noise_lib, np.random.default_rng(2))
        for (_, t1), (_, t2) in zip(a.stations, b.stations):
            np.testing.assert_array_equal(t1.samples, t2.samples)

    def test_heavier_coda_than_default(self, base_model, noise_lib):
        # Monte-Carlo comparison of tail-to-P energy over matched events
        def tail_ratio(ev):
            num = den = 0.0
            for _, tr in ev.stations:
                n_p = int(round(tr.p_pick * tr.rate))
                n_s = int(round(tr.s_pick * tr.rate))
                tail = tr.samples[:, n_s + 130 :]
                pwin = tr.samples[:, n_p : n_p + 130]
                num += float(np.sum(tail**2))
                den += float(np.sum(pwin**2)) + 1e-30
            return num / den

        ratios_default, ratios_pseudo = [], []
        for seed in range(100):
            params = self.make_params(base_model, seed=seed)
            ev_clean = fw.simulate_event(params.mt, params.geom, params.stations, base_model)
            aug = psdr.augment_event(ev_clean, params.psdr, noise_lib, np.random.default_rng(seed))
            pseudo = psdr.make_pseudo_real(params, noise_lib, np.random.default_rng(seed))
            ratios_default.append(tail_ratio(aug))
            ratios_pseudo.append(tail_ratio(pseudo))
        assert np.mean(ratios_pseudo) > np.mean(ratios_default)
