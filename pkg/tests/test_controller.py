import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from receptosim.controller import (
    BELOW,
    DECREASE,
    INCREASE,
    Controller,
    ControllerConfig,
    ControllerState,
    classify,
    compute_rate,
    tick,
)
from receptosim.errors import ConfigError, SchedulerError

CFG = ControllerConfig()
TICK = CFG.tick_interval


def drive(classes, site="thorax", warmup=2):
    """Feed a controller so that tick k (after warm-up) classifies as classes[k].

    The rate uses the oldest of the three buffered samples (two ticks back),
    so each new sample is chosen relative to that one.
    """
    ctrl = Controller(ControllerConfig(site=site))
    zs, t = [], 0.0
    for _ in range(warmup):
        t = round(t + TICK, 9)
        zs.append(1e6)
        ctrl.tick(1e6, t)
    step = {DECREASE: -5000.0, INCREASE: 5000.0, BELOW: -1000.0}
    for cls in classes:
        t = round(t + TICK, 9)
        z = zs[-2] + step[cls] * 2 * TICK / CFG.buffer_span
        zs.append(z)
        ctrl.tick(z, t)
    return ctrl


def test_buffer_holds_three_samples():
    assert CFG.buffer_capacity == 3
    st_ = ControllerState(CFG)
    for k in range(5):
        st_.push_z(k, float(k))
    assert st_.z_buffer == [(2, 2.0), (3, 3.0), (4, 4.0)]


def test_rate_is_end_to_end_difference_per_span():
    assert compute_rate([(0.0, 10.0)], 3.0) == 0.0
    assert compute_rate([(0.0, 0.0), (1.4, 5.0), (2.8, -2800.0)], 3.0) == pytest.approx(-3000.0)


def test_threshold_is_strict():
    assert classify(-2000.0, CFG) == BELOW
    assert classify(2000.0, CFG) == BELOW
    assert classify(-2000.001, CFG) == DECREASE
    assert classify(2000.001, CFG) == INCREASE
    assert classify(float("nan"), CFG) == BELOW


@pytest.mark.parametrize("window", list(itertools.product([DECREASE, INCREASE, BELOW], repeat=5)))
def test_trigger_iff_five_consecutive_decreases(window):
    ctrl = drive(window)
    assert bool(ctrl.state.reactions) == all(c == DECREASE for c in window)


def test_led_events_follow_classification():
    ctrl = drive([DECREASE, INCREASE, BELOW])
    leds = [e for e in ctrl.events if e.kind == "led"][2:]
    assert [(e.led_color, e.pattern) for e in leds] == [
        ("red", "blink4_at_4Hz"), ("yellow", "blink4_at_4Hz"), ("both", "single_500ms")]


def test_reaction_timing_and_lockout():
    ctrl = drive([DECREASE] * 60)
    t0, t_end = ctrl.state.reactions[0]
    assert t_end - t0 == pytest.approx(65.0, abs=1e-12)
    flaps = [e for e in ctrl.events if e.kind == "flap"]
    assert flaps[0].t == t0 and flaps[0].flap_active and flaps[0].power == 6.6
    assert flaps[1].t == pytest.approx(t0 + 5.0, abs=1e-12) and not flaps[1].flap_active
    starts = [r[0] for r in ctrl.state.reactions]
    assert all(b - a >= 65.0 for a, b in zip(starts, starts[1:]))
    assert len(starts) >= 2
    rapid = [e for e in ctrl.events if e.pattern == "rapid10"]
    assert [e.t for e in rapid] == starts


def test_wing_site_never_flaps():
    ctrl = drive([DECREASE] * 30, site="wing")
    assert not ctrl.state.reactions
    assert not [e for e in ctrl.events if e.kind == "flap" or e.pattern == "rapid10"]
    assert [e for e in ctrl.events if e.led_color == "red"]


def test_early_tick_is_rejected():
    state = ControllerState(CFG)
    tick(state, CFG, 1e6, 1.4)
    with pytest.raises(SchedulerError):
        tick(state, CFG, 1e6, 2.0)


def test_log_line_format():
    ctrl = drive([DECREASE] * 5)
    line = [e for e in ctrl.events if e.kind == "flap"][0].log_line()
    assert line == "t=9.800 kind=flap color=- pattern=- flap=1 power_W=6.600"
    assert ctrl.log_lines()[0] == "t=1.400 kind=led color=both pattern=single500 flap=0 power_W=0.000"


def test_finish_flushes_pending_flap_off():
    ctrl = drive([DECREASE] * 5)
    assert sum(1 for e in ctrl.events if e.kind == "flap") == 1
    ctrl.finish(100.0)
    assert sum(1 for e in ctrl.events if e.kind == "flap") == 2


@given(st.lists(st.floats(1e3, 1e7), min_size=1, max_size=40))
def test_events_are_time_ordered(zs):
    ctrl = Controller()
    for k, z in enumerate(zs):
        ctrl.tick(z, round((k + 1) * TICK, 9))
    ts = [e.t for e in ctrl.events]
    assert ts == sorted(ts)


@pytest.mark.parametrize(
    "kw, path",
    [({"rate_threshold": 0.0}, "controller.rate_threshold"),
     ({"flap_on": 10.0}, "controller.reaction_duration"),
     ({"pulse_ms": 800.0}, "controller.pulse_ms"),
     ({"site": "leg"}, "controller.site")],
)
def test_config_validation_names_field(kw, path):
    with pytest.raises(ConfigError) as exc:
        ControllerConfig(**kw)
    assert exc.value.path == path
