"""Embedded decision logic of the receptor board.

Mirrors the firmware loop: every 1.4 s a new impedance estimate enters a 3 s
ring buffer, the end-to-end difference is classified against a 2 kOhm
threshold and shown on the LEDs, and five consecutive decreases at the thorax
start a 65 s reaction (5 s wing flap at 6.6 W, then 60 s of cooling).
State lives in fixed-size rings so the logic ports to a microcontroller.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, SchedulerError

DECREASE = "decrease"
INCREASE = "increase"
BELOW = "below_threshold"

LOG_PATTERN = {"blink4_at_4Hz": "blink4", "single_500ms": "single500", "rapid10": "rapid10", None: "-"}


@dataclass(frozen=True)
class ControllerConfig:
    tick_interval: float = 1.4
    pulse_ms: float = 200.0
    buffer_span: float = 3.0
    rate_threshold: float = 2000.0  # Ohm per buffer span
    glitch_count: int = 5
    reaction_duration: float = 65.0
    flap_on: float = 5.0
    flap_power: float = 6.6
    flap_cooldown: float = 60.0
    site: str = "thorax"

    def __post_init__(self):
        for name in ("tick_interval", "pulse_ms", "buffer_span", "rate_threshold", "glitch_count",
                     "reaction_duration", "flap_on", "flap_power", "flap_cooldown"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"controller.{name}", "must be positive")
        if abs(self.flap_on + self.flap_cooldown - self.reaction_duration) > 1e-9:
            raise ConfigError("controller.reaction_duration", "must equal flap_on + flap_cooldown")
        if 2 * self.pulse_ms * 1e-3 >= self.tick_interval:
            raise ConfigError("controller.pulse_ms", "pulse pair must fit inside one tick")
        if self.site not in ("thorax", "wing"):
            raise ConfigError("controller.site", "must be 'thorax' or 'wing'")

    @property
    def buffer_capacity(self) -> int:
        return max(2, math.ceil(self.buffer_span / self.tick_interval))

    @property
    def flap_energy(self) -> float:
        return self.flap_power * self.flap_on


@dataclass(frozen=True)
class OutputEvent:
    t: float
    kind: str  # "led" | "flap"
    led_color: str | None = None  # "red" | "yellow" | "both"
    pattern: str | None = None  # "blink4_at_4Hz" | "single_500ms" | "rapid10"
    flap_active: bool = False
    power: float = 0.0

    def log_line(self) -> str:
        return (
            f"t={self.t:.3f} kind={self.kind} color={self.led_color or '-'} "
            f"pattern={LOG_PATTERN[self.pattern]} flap={int(self.flap_active)} power_W={self.power:.3f}"
        )


def compute_rate(z_buffer, buffer_span: float = 3.0) -> float:
    """End-to-end impedance change scaled to one buffer span, Ohm per span.

    ``z_buffer`` is a time-ordered sequence of (t, Z).  Fewer than two entries
    yields 0.0, which classifies as below threshold.
    """
    if len(z_buffer) < 2:
        return 0.0
    (t_old, z_old), (t_new, z_new) = z_buffer[0], z_buffer[-1]
    if t_new <= t_old:
        return 0.0
    if math.isinf(z_old) and math.isinf(z_new):
        return 0.0
    return (z_new - z_old) * buffer_span / (t_new - t_old)


def classify(rate: float, cfg: ControllerConfig) -> str:
    if math.isnan(rate) or not abs(rate) > cfg.rate_threshold:
        return BELOW
    return DECREASE if rate < 0 else INCREASE


def flap_schedule(t_trigger: float, cfg: ControllerConfig) -> list[OutputEvent]:
    """Flap on for ``flap_on`` seconds, then off for the cooldown."""
    return [
        OutputEvent(t_trigger, "flap", flap_active=True, power=cfg.flap_power),
        OutputEvent(t_trigger + cfg.flap_on, "flap", flap_active=False, power=0.0),
    ]


class ControllerState:
    """Fixed-capacity rings plus mode bookkeeping."""

    def __init__(self, cfg: ControllerConfig):
        self.cfg = cfg
        cap = cfg.buffer_capacity
        self._zt = [0.0] * cap
        self._zv = [0.0] * cap
        self._zn = 0
        self._zhead = 0
        self.glitch_ring = [False] * cfg.glitch_count
        self._ghead = 0
        self.mode = "idle"
        self.t_end = -math.inf
        self.last_tick = -math.inf
        self.flap_off_at = math.inf
        self.reactions: list[tuple[float, float]] = []

    @property
    def z_buffer(self) -> list[tuple[float, float]]:
        cap = len(self._zt)
        start = (self._zhead - self._zn) % cap
        return [(self._zt[(start + k) % cap], self._zv[(start + k) % cap]) for k in range(self._zn)]

    def push_z(self, t, z):
        cap = len(self._zt)
        self._zt[self._zhead] = t
        self._zv[self._zhead] = z
        self._zhead = (self._zhead + 1) % cap
        self._zn = min(self._zn + 1, cap)

    def push_glitch(self, flag: bool):
        self.glitch_ring[self._ghead] = flag
        self._ghead = (self._ghead + 1) % len(self.glitch_ring)

    def clear_glitch(self):
        for k in range(len(self.glitch_ring)):
            self.glitch_ring[k] = False
        self._ghead = 0

    @property
    def flap_active(self) -> bool:
        return self.flap_off_at < math.inf


def _due_events(state: ControllerState, t: float) -> list[OutputEvent]:
    events = []
    if state.flap_off_at <= t:
        events.append(OutputEvent(state.flap_off_at, "flap", flap_active=False, power=0.0))
        state.flap_off_at = math.inf
    if state.mode == "reaction" and t >= state.t_end:
        state.mode = "idle"
    return events


def tick(state: ControllerState, cfg: ControllerConfig, z: float, t: float):
    """One controller cycle. Returns (state, events); ``state`` is updated in place."""
    if t < state.last_tick + cfg.tick_interval - 1e-9:
        raise SchedulerError(f"tick at t={t:.3f} s arrives before last tick + interval")
    state.last_tick = t
    events = _due_events(state, t)

    state.push_z(t, z)
    cls = classify(compute_rate(state.z_buffer, cfg.buffer_span), cfg)
    flap, power = state.flap_active, (cfg.flap_power if state.flap_active else 0.0)
    if cls == DECREASE:
        events.append(OutputEvent(t, "led", "red", "blink4_at_4Hz", flap, power))
    elif cls == INCREASE:
        events.append(OutputEvent(t, "led", "yellow", "blink4_at_4Hz", flap, power))
    else:
        events.append(OutputEvent(t, "led", "both", "single_500ms", flap, power))

    state.push_glitch(cls == DECREASE)
    if all(state.glitch_ring) and cfg.site == "thorax" and state.mode == "idle":
        state.mode = "reaction"
        state.t_end = t + cfg.reaction_duration
        state.reactions.append((t, state.t_end))
        on, off = flap_schedule(t, cfg)
        events.append(OutputEvent(t, "led", "red", "rapid10", True, cfg.flap_power))
        events.append(on)
        state.flap_off_at = off.t
        state.clear_glitch()
    return state, events


def flush(state: ControllerState, t: float) -> list[OutputEvent]:
    """Emit events scheduled at or before ``t`` (end of a run)."""
    return _due_events(state, t)


class Controller:
    """Convenience wrapper holding config, state and the event log."""

    def __init__(self, cfg: ControllerConfig | None = None):
        self.cfg = cfg or ControllerConfig()
        self.state = ControllerState(self.cfg)
        self.events: list[OutputEvent] = []

    def tick(self, z: float, t: float) -> list[OutputEvent]:
        _, new = tick(self.state, self.cfg, z, t)
        self.events.extend(new)
        return new

    def finish(self, t: float) -> list[OutputEvent]:
        new = flush(self.state, t)
        self.events.extend(new)
        return new

    def log_lines(self) -> list[str]:
        return [e.log_line() for e in self.events]
