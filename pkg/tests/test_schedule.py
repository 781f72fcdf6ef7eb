import math

import numpy as np
import pytest

from tmqubit.atom import AtomModel
from tmqubit.schedule import (
    BuilderConfig,
    Clean530,
    ClockPulse,
    Measure,
    MwPulse,
    ParseError,
    Probe410,
    RfSweep,
    Schedule,
    ScheduleError,
    ScheduleMetadata,
    Wait,
    build_clock_coherence,
    build_cp,
    build_rabi_scan,
    build_ramsey,
    build_shelving_readout,
    build_state_prep,
    parse_sequence,
    serialize_sequence,
)


@pytest.fixture(scope="module")
def model():
    return AtomModel()


class TestParser:
    def test_three_event_oneliner(self):
        s = parse_sequence("mw pi 0deg; wait 80ms; mw pi/2 0deg")
        assert len(s.events) == 3
        assert isinstance(s.events[0], MwPulse)
        assert s.events[0].pulse_area == pytest.approx(math.pi)
        assert isinstance(s.events[1], Wait)
        assert s.events[1].duration == pytest.approx(0.08)
        assert s.events[2].pulse_area == pytest.approx(math.pi / 2)

    def test_empty_input_valid(self, model):
        s = parse_sequence("")
        assert s.events == ()
        s.validate(model)

    def test_comments_and_blank_lines(self):
        s = parse_sequence("# a comment\n\nwait 1ms  # trailing\n")
        assert len(s.events) == 1

    def test_negative_duration_reports_line(self):
        with pytest.raises(ParseError) as err:
            parse_sequence("wait -1ms")
        assert err.value.line == 1

    def test_error_line_number(self):
        with pytest.raises(ParseError) as err:
            parse_sequence("wait 1ms\nbogus 2ms\n")
        assert err.value.line == 2

    def test_unknown_argument(self):
        with pytest.raises(ParseError):
            parse_sequence("wait 1ms frobnicate=3")

    def test_units(self):
        s = parse_sequence("mw pi 90deg detuning=2.5kHz\nwait 250us\n")
        assert s.events[0].phase == pytest.approx(math.pi / 2)
        assert s.events[0].detuning == pytest.approx(2500.0)
        assert s.events[1].duration == pytest.approx(250e-6)

    def test_unknown_transition_caught_by_validation(self, model):
        with pytest.raises(ScheduleError):
            parse_sequence("mw pi 0deg transition=g41-g31", model=model)

    def test_pragmas(self):
        s = parse_sequence("@name demo\n@bias_field 100mG\n@var T 0.5\nwait 1ms\n")
        assert s.metadata.name == "demo"
        assert s.metadata.bias_field == pytest.approx(0.1)
        assert dict(s.metadata.scan_vars)["T"] == 0.5


class TestSerializer:
    def _random_schedule(self, rng) -> Schedule:
        events = []
        for _ in range(rng.integers(0, 8)):
            kind = rng.integers(0, 7)
            if kind == 0:
                events.append(MwPulse(duration=float(rng.uniform(0, 5e-3)),
                                      rabi_frequency=float(rng.uniform(100, 5000)),
                                      detuning=float(rng.uniform(-50, 50)),
                                      phase=float(rng.uniform(0, 2 * math.pi))))
            elif kind == 1:
                events.append(ClockPulse(duration=float(rng.uniform(0, 2e-3)),
                                         rabi_frequency=float(rng.uniform(1e3, 1e4)),
                                         transition="g30-m20" if rng.random() < 0.5 else "g40-m30"))
            elif kind == 2:
                events.append(RfSweep(duration=float(rng.uniform(1e-3, 1e-2)),
                                      f_start=float(rng.uniform(7e5, 9e5)),
                                      f_stop=float(rng.uniform(7e5, 9e5))))
            elif kind == 3:
                events.append(Probe410(target_F=int(rng.choice([3, 4])),
                                       duration=float(rng.uniform(0, 1e-3))))
            elif kind == 4:
                events.append(Clean530(duration=float(rng.uniform(0, 5e-3)),
                                       s=float(rng.uniform(0.5, 2.0))))
            elif kind == 5:
                events.append(Wait(float(rng.uniform(0, 10.0))))
            else:
                events.append(Measure(label=str(rng.choice(["N4", "N3", "N4_mf0", "N3_mf0"])),
                                      target_F=int(rng.choice([3, 4]))))
        meta = ScheduleMetadata(name="random", bias_field=float(rng.uniform(0.05, 1.0)),
                                initial_state="g30" if rng.random() < 0.5 else None,
                                scan_vars=(("T", float(rng.uniform(0, 1))),))
        return Schedule(tuple(events), meta)

    def test_roundtrip_property(self, model):
        rng = np.random.default_rng(1234)
        for _ in range(60):
            s = self._random_schedule(rng)
            text = serialize_sequence(s)
            back = parse_sequence(text, model=model)
            assert back == s

    def test_duration_is_sum(self):
        rng = np.random.default_rng(7)
        s = self._random_schedule(rng)
        assert s.duration == sum(ev.duration for ev in s.events)

    def test_golden_serialization(self):
        # the canonical line format is frozen: loaders and golden files
        # depend on it byte for byte
        golden = (
            "@name state_prep\n"
            "@bias_field 0.6\n"
            "@initial_state g4m4\n"
            "rf_sweep duration=0.005 f_start=800000.0 f_stop=785000.0\n"
            "mw transition=g40-g30 duration=0.002 rabi=1570.7963267948965 "
            "detuning=0.0 phase=0.0\n"
            "clean target_f=4 duration=0.003 s=1.0 detuning=614000000.0\n"
            "mw transition=g40-g30 duration=0.002 rabi=1570.7963267948965 "
            "detuning=0.0 phase=0.0\n"
        )
        assert serialize_sequence(build_state_prep()) == golden


class TestBuilders:
    def test_state_prep_default(self):
        s = build_state_prep()
        assert len(s.events) == 4
        # sweep + pi pulse + clean = 10 ms, plus the theta pulse
        assert s.duration == pytest.approx(10e-3 + 2e-3)
        assert isinstance(s.events[0], RfSweep)
        assert isinstance(s.events[1], MwPulse)
        assert s.events[1].pulse_area == pytest.approx(math.pi)
        assert isinstance(s.events[2], Clean530)
        assert s.events[2].duration == pytest.approx(3e-3)

    def test_state_prep_theta_zero(self):
        s = build_state_prep(theta=0.0)
        assert len(s.events) == 3

    def test_cp0_equals_ramsey(self):
        cfg = BuilderConfig()
        a = build_cp(0, 0.5, 2.0, cfg)
        b = build_ramsey(0.5, 2.0, cfg)
        assert a.events == b.events

    def test_cp1_is_hahn_echo(self):
        s = build_cp(1, 1.0)
        kinds = [type(ev).__name__ for ev in s.events]
        assert kinds == ["MwPulse", "Wait", "MwPulse", "Wait", "MwPulse"]
        assert s.events[0].pulse_area == pytest.approx(math.pi / 2)
        assert s.events[2].pulse_area == pytest.approx(math.pi)
        assert s.events[1].duration == pytest.approx(0.5)
        assert s.events[3].duration == pytest.approx(0.5)

    def test_cp_spacing(self):
        s = build_cp(4, 2.0)
        waits = [ev.duration for ev in s.events if isinstance(ev, Wait)]
        assert waits[0] == pytest.approx(0.25)
        assert waits[-1] == pytest.approx(0.25)
        for w in waits[1:-1]:
            assert w == pytest.approx(0.5)
        assert sum(waits) == pytest.approx(2.0)

    def test_ramsey_zero_time_is_back_to_back(self):
        s = build_ramsey(0.0, 0.0)
        areas = [ev.pulse_area for ev in s.events if isinstance(ev, MwPulse)]
        assert sum(areas) == pytest.approx(math.pi)

    def test_negative_rejected(self):
        with pytest.raises(ScheduleError):
            build_ramsey(-1.0)
        with pytest.raises(ScheduleError):
            build_cp(-1, 1.0)
        with pytest.raises(ScheduleError):
            build_rabi_scan(-0.1)

    def test_readout_has_four_measures(self):
        s = build_shelving_readout()
        measures = s.measure_events()
        assert len(measures) == 4
        assert [m.label for m in measures] == ["N4", "N3", "N4_mf0", "N3_mf0"]
        for m in measures:
            assert m.duration == pytest.approx(0.4e-3 + 4e-3)

    def test_double_mode_has_four_clock_pulses(self):
        s = build_clock_coherence("double", 0.05)
        clocks = [ev for ev in s.events if isinstance(ev, ClockPulse)]
        # four storage pulses plus the four readout shelving pulses
        assert len(clocks) == 8
        pre_readout = clocks[:4]
        assert {ev.transition for ev in pre_readout} == {"g40-m30", "g30-m20"}

    def test_single_mode_has_two_clock_pulses(self):
        s = build_clock_coherence("single", 0.05)
        non_readout = [ev for ev in s.events[:-8] if isinstance(ev, ClockPulse)]
        assert len(non_readout) == 2

    def test_bad_mode(self):
        with pytest.raises(ScheduleError):
            build_clock_coherence("triple", 0.1)

    def test_builders_validate(self, model):
        for s in (build_state_prep(), build_ramsey(1.0, 3.0), build_cp(8, 10.0),
                  build_rabi_scan(0.5), build_shelving_readout(),
                  build_clock_coherence("single", 0.1),
                  build_clock_coherence("double", 0.1)):
            s.validate(model)
