import math

import numpy as np
import pytest

from sourcenet import forward as fw
from sourcenet import mtmath as mm
from sourcenet.errors import InvariantError, NoRay, ParseError

TWO_LAYER = "10 6.0 3.5 2.7\n0 8.0 4.5 3.3\n"


def halfspace(vp=6.0, vs=3.5, rho=2.7):
    return fw.VelocityModel("hs", [math.inf], [vp], [vs], [rho])


class TestLoadVelocityModel:
    def test_two_layer(self):
        model = fw.load_velocity_model(TWO_LAYER)
        assert model.n_layers == 2
        assert model.thickness[0] == 10.0
        assert math.isinf(model.thickness[1])
        np.testing.assert_allclose(model.vp, [6.0, 8.0])

    def test_vs_exceeding_vp_rejected(self):
        with pytest.raises(InvariantError):
            fw.load_velocity_model("10 3.0 3.5 2.7")

    def test_empty_rejected(self):
        with pytest.raises(ParseError):
            fw.load_velocity_model("")
        with pytest.raises(ParseError):
            fw.load_velocity_model("# only a comment\n")

    def test_bad_field_count(self):
        with pytest.raises(ParseError, match="line 1"):
            fw.load_velocity_model("10 6.0 3.5")

    def test_comments_and_round_trip(self):
        text = "# crust\n10 6.0 3.5 2.7  # upper\n0 8.0 4.5 3.3\n"
        model = fw.load_velocity_model(text)
        again = fw.load_velocity_model(fw.format_velocity_model(model))
        np.testing.assert_array_equal(model.vp, again.vp)
        np.testing.assert_array_equal(model.thickness, again.thickness)


class TestGeoToLocal:
    def test_due_north(self):
        ev = fw.EventGeom(lat=34.0, lon=-117.0, depth=10.0)
        st = fw.StationGeom("N", 34.1, -117.0)
        dist, az = fw.geo_to_local(ev, st)
        assert dist == pytest.approx(6371.0 * math.radians(0.1), rel=1e-6)
        assert dist == pytest.approx(11.119, abs=5e-3)
        assert az == 0.0

    def test_coincident(self):
        ev = fw.EventGeom(lat=34.0, lon=-117.0, depth=10.0)
        st = fw.StationGeom("X", 34.0, -117.0)
        assert fw.geo_to_local(ev, st) == (0.0, 0.0)

    def test_due_east_at_equator(self):
        ev = fw.EventGeom(lat=0.0, lon=10.0, depth=10.0)
        st = fw.StationGeom("E", 0.0, 10.1)
        dist, az = fw.geo_to_local(ev, st)
        assert az == pytest.approx(90.0, abs=1e-9)
        assert dist == pytest.approx(6371.0 * math.radians(0.1), rel=1e-6)

    def test_quadrants(self):
        ev = fw.EventGeom(lat=0.0, lon=0.0, depth=10.0)
        _, az_sw = fw.geo_to_local(ev, fw.StationGeom("SW", -0.1, -0.1))
        assert 180.0 < az_sw < 270.0


class TestTravelTime:
    def test_vertical_ray(self):
        t, takeoff = fw.travel_time(halfspace(), 10.0, 0.0, "P")
        assert t == pytest.approx(10.0 / 6.0, rel=1e-9)
        assert takeoff == pytest.approx(180.0)

    def test_straight_ray(self):
        t, takeoff = fw.travel_time(halfspace(), 10.0, 10.0, "P")
        assert t == pytest.approx(math.sqrt(200.0) / 6.0, rel=1e-9)
        assert takeoff == pytest.approx(135.0, abs=1e-6)

    def test_two_layer_against_fermat_grid(self):
        # brute-force Fermat oracle: minimize refracted path time over a grid
        # of interface crossing offsets (direct leg + head-wave legs).
        model = fw.load_velocity_model(TWO_LAYER)
        depth, dist = 5.0, 60.0
        t_impl, takeoff = fw.travel_time(model, depth, dist, "P")

        direct = math.sqrt(depth**2 + dist**2) / 6.0
        # down from 5 km to the 10 km interface, along at 8 km/s, up 10 km
        x1 = np.linspace(0.0, 30.0, 400)[:, None]
        x2 = np.linspace(0.0, dist, 250)[None, :]
        t_ref = (
            np.sqrt(25.0 + x1**2) / 6.0
            + np.sqrt(100.0 + x2**2) / 6.0
            + np.clip(dist - x1 - x2, 0.0, None) / 8.0
        )
        mask = (x1 + x2) <= dist
        t_oracle = min(direct, float(t_ref[mask].min()))
        assert t_impl == pytest.approx(t_oracle, abs=1e-3)
        assert takeoff < 90.0  # head wave leaves downward

    def test_monotone_in_distance(self):
        model = halfspace()
        times = [fw.travel_time(model, 8.0, d, "P")[0] for d in np.linspace(0, 120, 40)]
        assert np.all(np.diff(times) >= 0)

    def test_s_slower_than_p(self):
        model = fw.load_velocity_model(TWO_LAYER)
        for dist in (0.0, 5.0, 30.0, 90.0, 200.0):
            tp, _ = fw.travel_time(model, 7.0, dist, "P")
            ts, _ = fw.travel_time(model, 7.0, dist, "S")
            assert ts > tp

    def test_bad_inputs(self):
        with pytest.raises(NoRay):
            fw.travel_time(halfspace(), 0.0, 10.0, "P")
        with pytest.raises(NoRay):
            fw.travel_time(halfspace(), 10.0, -1.0, "P")


class TestSourceTimeFunction:
    def test_anchor_point(self):
        pulse = fw.source_time_function(3.0, rate=20.0)
        assert len(pulse) == math.ceil(6 * 0.5 * 20)
        assert np.max(np.abs(pulse)) == pytest.approx(1.0)

    def test_zero_mean(self):
        for mw in (1.0, 3.0, 4.5, 6.0):
            pulse = fw.source_time_function(mw)
            assert abs(pulse.sum()) <= 1e-6

    def test_tau_scaling_and_clipping(self):
        # tau doubles every two magnitude units until the 3 s ceiling
        n3 = len(fw.source_time_function(3.0))
        n5 = len(fw.source_time_function(5.0))
        assert n5 == math.ceil(6 * min(3.0, 0.5 * 10.0 ** 0.5) * 20)
        assert n5 > n3
        n9 = len(fw.source_time_function(9.0))
        assert n9 == math.ceil(6 * 3.0 * 20)  # clipped at 3 s
        n_low = len(fw.source_time_function(-5.0))
        assert n_low == math.ceil(6 * 0.2 * 20)  # clipped at 0.2 s


def ring_stations(ev, n=8, radius_deg=0.5, prefix="R"):
    out = []
    for i in range(n):
        az = 2 * math.pi * i / n
        out.append(
            fw.StationGeom(
                f"{prefix}{i}",
                ev.lat + radius_deg * math.cos(az),
                ev.lon + radius_deg * math.sin(az) / math.cos(math.radians(ev.lat)),
            )
        )
    return out


class TestSimulateEvent:
    def setup_method(self):
        self.model = fw.load_velocity_model(TWO_LAYER)
        self.geom = fw.EventGeom(lat=34.0, lon=-117.0, depth=8.0)
        self.stations = ring_stations(self.geom)
        self.mt = mm.sdr_to_mt(mm.DoubleCouple(30.0, 60.0, 45.0, m0=mm.mw_to_moment(4.0)))

    def test_pick_alignment(self):
        ev = fw.simulate_event(self.mt, self.geom, self.stations, self.model)
        for st, trace in ev.stations:
            dist, _ = fw.geo_to_local(self.geom, st)
            t_p, _ = fw.travel_time(self.model, self.geom.depth, dist, "P")
            assert trace.p_pick == pytest.approx(t_p)
            idx = int(round(trace.p_pick * trace.rate))
            # the pulse starts exactly at the pick sample
            assert np.all(trace.samples[:, : idx - 1] == 0.0)

    def test_s_after_p_everywhere(self):
        ev = fw.simulate_event(self.mt, self.geom, self.stations, self.model)
        for _, trace in ev.stations:
            assert trace.s_pick > trace.p_pick

    def test_amplitude_inverse_distance(self):
        # scaling depth and distance together keeps the takeoff angle fixed
        # while doubling R, so the P peak must halve
        mt = mm.sdr_to_mt(mm.DoubleCouple(0.0, 45.0, 90.0, m0=1e15))
        model = halfspace()

        def p_peak(dist_km, depth_km):
            geom = fw.EventGeom(lat=0.0, lon=0.0, depth=depth_km)
            st = [fw.StationGeom("A", math.degrees(dist_km / 6371.0), 0.0)]
            ev = fw.simulate_event(mt, geom, st, model)
            tr = ev.stations[0][1]
            n0 = int(round(tr.p_pick * tr.rate))
            n1 = int(round(tr.s_pick * tr.rate))
            return np.max(np.abs(tr.samples[:, n0:n1]))

        ratio = p_peak(40.0, 2.0) / p_peak(80.0, 4.0)
        assert ratio == pytest.approx(2.0, rel=0.01)

    def test_linear_in_m0(self):
        # the pulse is unit-peak regardless of its duration, so P-window
        # peaks scale exactly with M0
        ev1 = fw.simulate_event(self.mt, self.geom, self.stations, self.model)
        mt10 = mm.MomentTensor(self.mt.m * 10.0)
        ev10 = fw.simulate_event(mt10, self.geom, self.stations, self.model)
        for (_, t1), (_, t10) in zip(ev1.stations, ev10.stations):
            n0 = int(round(t1.p_pick * t1.rate))
            n1 = int(round(t1.s_pick * t1.rate))
            p1 = np.max(np.abs(t1.samples[:, n0:n1]))
            p10 = np.max(np.abs(t10.samples[:, n0:n1]))
            assert p10 / p1 == pytest.approx(10.0, rel=1e-6)

    def test_nodal_station_quiet(self):
        # strike-slip source: stations on the strike line see nodal P
        mt = mm.sdr_to_mt(mm.DoubleCouple(0.0, 90.0, 0.0, m0=1e15))
        geom = fw.EventGeom(lat=0.0, lon=0.0, depth=10.0)
        nodal = fw.StationGeom("NODAL", 0.45, 0.0)  # due north
        lobe = fw.StationGeom("LOBE", 0.45 * math.cos(math.radians(45)), 0.45 * math.sin(math.radians(45)))
        ev = fw.simulate_event(mt, geom, [nodal, lobe], halfspace())
        traces = {st.name: tr for st, tr in ev.stations}

        def p_peak(tr):
            n0 = int(round(tr.p_pick * tr.rate))
            n1 = int(round(tr.s_pick * tr.rate))
            return np.max(np.abs(tr.samples[:, n0 : max(n0 + 1, n1 - 5)]))

        assert p_peak(traces["NODAL"]) < 0.01 * p_peak(traces["LOBE"])

    def test_deterministic(self):
        ev1 = fw.simulate_event(self.mt, self.geom, self.stations, self.model)
        ev2 = fw.simulate_event(self.mt, self.geom, self.stations, self.model)
        for (s1, t1), (s2, t2) in zip(ev1.stations, ev2.stations):
            assert s1.name == s2.name
            np.testing.assert_array_equal(t1.samples, t2.samples)

    def test_label_attached(self):
        ev = fw.simulate_event(self.mt, self.geom, self.stations, self.model)
        expect = mm.mt_to_label(self.mt)
        np.testing.assert_allclose(ev.label.dev, expect.dev)
        assert ev.label.mw == pytest.approx(4.0)


class TestLoadStations:
    def test_parse(self):
        sts = fw.load_stations("# net\nAAA 34.0 -117.0\nBBB 33.5 -116.25\n")
        assert [s.name for s in sts] == ["AAA", "BBB"]
        assert sts[1].lon == -116.25

    def test_errors(self):
        with pytest.raises(ParseError):
            fw.load_stations("AAA 34.0\n")
        with pytest.raises(ParseError):
            fw.load_stations("")
