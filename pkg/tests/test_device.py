import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from swsk.device import DeviceSim, OutOfScenario, derive_seed, generate_frame, run_device
from swsk.frames import FrameFlags, decode_frame
from swsk.scenario import Segment, WorkerProfile, WorkerScript


PROFILE = WorkerProfile(hr_base=70, gsr_base=5.0, body_temp_base=36.8, spo2_base=98)


def script(*segments: Segment, worker_id: str = "w1") -> WorkerScript:
    return WorkerScript(worker_id, PROFILE, tuple(segments))


def quiet_frame(scr, t_s, **kw):
    rng = random.Random(0)
    return generate_frame(PROFILE, scr, t_s, rng, duration_s=600,
                          sigma_hr=0, sigma_gsr=0, sigma_temp=0, **kw)


def test_baseline_formula_exact():
    for t in (0, 7, 33, 59):
        frame = quiet_frame(script(), t)
        expected_hr = 70 + 3 * math.sin(2 * math.pi * t / 60)
        assert frame.hr == round(expected_hr)
        assert frame.gsr == round(5.0 * 100)
        assert frame.body_temp == round(36.8 * 100)
        assert frame.spo2 == 98


def test_full_intensity_episode_after_ramp():
    episode = Segment("stress_episode", {"start_s": 100, "end_s": 200, "intensity": 1.0})
    t = 130  # >= start + 10 s ramp
    frame = quiet_frame(script(episode), t)
    assert frame.hr == round(70 + 3 * math.sin(2 * math.pi * t / 60) + 40)
    assert frame.gsr == round(2 * 5.0 * 100)
    assert frame.body_temp == round((36.8 + 0.3) * 100)


def test_ramp_is_linear_over_first_10s():
    episode = Segment("stress_episode", {"start_s": 100, "end_s": 200, "intensity": 1.0})
    frame = quiet_frame(script(episode), 105)  # halfway up the ramp
    assert frame.gsr == round(5.0 * 1.5 * 100)


def test_button_press_flag():
    press = Segment("button_press", {"at_s": 30})
    assert quiet_frame(script(press), 30).flags & FrameFlags.BUTTON_ESTOP
    assert not quiet_frame(script(press), 29).flags & FrameFlags.BUTTON_ESTOP
    assert not quiet_frame(script(press), 31).flags & FrameFlags.BUTTON_ESTOP


def test_sensor_fault_sentinel():
    fault = Segment("sensor_fault", {"at_s": 10, "field": "hr"})
    frame = quiet_frame(script(fault), 15)
    assert frame.hr == 0
    assert frame.flags & FrameFlags.SENSOR_FAULT
    before = quiet_frame(script(fault), 5)
    assert before.hr != 0 and not before.flags & FrameFlags.SENSOR_FAULT


def test_out_of_scenario():
    with pytest.raises(OutOfScenario):
        quiet_frame(script(), 601)


def test_run_device_count_and_seq():
    frames = run_device(script(), duration_s=60, sample_rate_hz=1, seed=9, emit=lambda b: None)
    assert len(frames) == 60
    seqs = [decode_frame(b).seq for b in frames]
    assert seqs == list(range(60))


def test_run_device_deterministic():
    a = run_device(script(), 120, 1, seed=42, emit=lambda b: None)
    b = run_device(script(), 120, 1, seed=42, emit=lambda b: None)
    assert a == b
    c = run_device(script(), 120, 1, seed=43, emit=lambda b: None)
    assert a != c


def test_per_worker_seed_streams_differ():
    assert derive_seed(42, "w1") != derive_seed(42, "w2")
    assert derive_seed(42, "w1") == derive_seed(42, "w1")


def test_spo2_drop_linear():
    drop = Segment("spo2_drop", {"start_s": 100, "end_s": 140, "target_pct": 86})
    assert quiet_frame(script(drop), 120).spo2 == round((98 + 86) / 2)
    assert quiet_frame(script(drop), 140).spo2 == 86
    assert quiet_frame(script(drop), 150).spo2 == 98


def test_alert_led_quick_rule():
    drop = Segment("spo2_drop", {"start_s": 0, "end_s": 1, "target_pct": 85})
    frame = quiet_frame(script(drop), 1)
    assert frame.flags & FrameFlags.ALERT_LED_ON
    sim = DeviceSim(script(drop), 10, 1, 0, emit=lambda b: None)
    sim.tick(1000)
    assert sim.alert.led_on


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32), t=st.floats(0, 600),
       intensity=st.floats(0, 1), start=st.floats(0, 500))
def test_frames_always_valid(seed, t, intensity, start):
    episode = Segment("stress_episode",
                      {"start_s": start, "end_s": start + 100, "intensity": intensity})
    rng = random.Random(seed)
    frame = generate_frame(PROFILE, script(episode), t, rng, duration_s=600)
    frame.validate()
    # encodable and round-trippable
    from swsk.frames import encode_frame
    assert decode_frame(encode_frame(frame)) == frame


def test_monotone_stress_injection():
    episode = Segment("stress_episode", {"start_s": 50, "end_s": 150, "intensity": 0.7})
    for t in range(0, 200, 5):
        with_ep = quiet_frame(script(episode), t)
        without = quiet_frame(script(), t)
        assert with_ep.hr >= without.hr
        assert with_ep.gsr >= without.gsr
