"""Receptor channel: RC model with UV polarons and the bipolar-pulse divider readout.

The receptor sits on the low side of a divider with a 460 kOhm trimmer, so the
10-bit code grows with receptor impedance.  Each readout is a pulse pair of
opposite polarity; the ADC is ratiometric to Vcc and averages eight samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ADC_MAX = 1023
DIVIDER_R = 460e3
VCC = 4.2
PULSE_MS = 200.0
N_AVG = 8
PEIS_FREQ = 115.0
PEIS_AMPLITUDE = 0.010

SITES = ("thorax", "wing")


@dataclass
class ElectrodePair:
    id: int
    location: tuple[float, float]
    region: list[int]
    site: str = "thorax"
    gap: float = 130.0  # um
    wire_diameter: float = 30.0  # um

    def __post_init__(self):
        if self.gap <= 0:
            raise ValueError("electrode gap must be positive")
        if not self.region:
            raise ValueError(f"electrode pair {self.id} senses no cells")
        if self.site not in SITES:
            raise ValueError(f"unknown site {self.site!r}")


@dataclass(frozen=True)
class ReceptorElectrical:
    R_py: float = 5e6
    R_ppy: float = 400e3
    C_py: float = 1e-9
    C_ppy: float = 10e-9
    beta: float = 0.05

    def __post_init__(self):
        if not self.R_ppy < self.R_py:
            raise ValueError("converted material must conduct better (R_ppy < R_py)")
        if not self.C_ppy > self.C_py:
            raise ValueError("converted material must be more capacitive (C_ppy > C_py)")
        if min(self.R_ppy, self.C_py, self.beta) <= 0:
            raise ValueError("electrical parameters must be positive")


@dataclass(frozen=True)
class AdcSample:
    t: float
    code: int
    polarity: str

    def __post_init__(self):
        if not 0 <= self.code <= ADC_MAX:
            raise ValueError("ADC code outside 10-bit range")
        if self.polarity not in "+-" or len(self.polarity) != 1:
            raise ValueError("polarity must be '+' or '-'")


def polaron_step(p, irradiance, params, x, dt):
    """Exact relaxation toward alpha_p * x * I * tau_p over ``dt``; vectorisable."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    decay = math.exp(-dt / params.tau_p)
    steady = params.alpha_p * np.asarray(x) * np.asarray(irradiance) * params.tau_p
    out = np.asarray(p) * decay + steady * (1.0 - decay)
    return float(out) if np.ndim(out) == 0 else out


def effective_resistance(elec: ReceptorElectrical, x_mean: float, p_mean: float) -> float:
    if not 0.0 <= x_mean <= 1.0:
        raise ValueError("mean conversion must lie in [0, 1]")
    base = 1.0 / (x_mean / elec.R_ppy + (1.0 - x_mean) / elec.R_py)
    return base / (1.0 + elec.beta * p_mean)


def effective_capacitance(elec: ReceptorElectrical, x_mean: float) -> float:
    # Converted and pristine fractions act as capacitors in parallel.
    return x_mean * elec.C_ppy + (1.0 - x_mean) * elec.C_py


def quantize(v, vcc=VCC) -> int:
    """Round-half-up ratiometric 10-bit code."""
    return int(min(ADC_MAX, max(0, math.floor(ADC_MAX * v / vcc + 0.5))))


def _divider(r_eff, divider_R, vcc):
    if math.isinf(r_eff):
        return vcc, math.inf
    if r_eff <= 0:
        return 0.0, 0.0
    return vcc * r_eff / (divider_R + r_eff), divider_R * r_eff / (divider_R + r_eff)


def _pulse_voltage(t, v0, v_inf, tau):
    return v_inf + (v0 - v_inf) * np.exp(-t / tau)


def sample_times(pulse_ms=PULSE_MS, n_avg=N_AVG):
    """Midpoints of ``n_avg`` equal bins covering the final half of the pulse, s."""
    T = pulse_ms * 1e-3
    return T / 2 + (np.arange(n_avg) + 0.5) * (T / 2) / n_avg


@dataclass
class PulseReading:
    positive: AdcSample
    negative: AdcSample
    v_mean: tuple[float, float]
    charge: tuple[float, float] = field(default=(0.0, 0.0))  # C delivered by each pulse (magnitudes)

    @property
    def code(self) -> float:
        return 0.5 * (self.positive.code + self.negative.code)

    @property
    def net_charge(self) -> float:
        return self.charge[0] - self.charge[1]


def pulse_readout(
    r_eff: float,
    capacitance: float = 0.0,
    t: float = 0.0,
    divider_R: float = DIVIDER_R,
    vcc: float = VCC,
    pulse_ms: float = PULSE_MS,
    n_avg: int = N_AVG,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> PulseReading:
    """Emulate one alternating-polarity pulse pair starting at ``t``.

    Both pulses are read in their own polarity frame, so a linear receptor
    gives the same code twice.  The second pulse starts from the charge left
    by the first (reversed), which is what keeps the net charge near zero.
    """
    if vcc <= 0:
        raise ValueError("Vcc must be positive")
    v_inf, r_par = _divider(r_eff, divider_R, vcc)
    tau = r_par * capacitance if math.isfinite(r_par) else math.inf
    T = pulse_ms * 1e-3
    ts = sample_times(pulse_ms, n_avg)
    samples, means, charges = [], [], []
    v_start = 0.0
    for k, polarity in enumerate("+-"):
        if tau == 0.0:
            v = np.full(n_avg, v_inf)
            v_end = v_inf
        elif math.isinf(tau):
            v = np.full(n_avg, v_start)
            v_end = v_start
        else:
            v = _pulse_voltage(ts, v_start, v_inf, tau)
            v_end = float(_pulse_voltage(np.array([T]), v_start, v_inf, tau)[0])
        v_bar = float(np.mean(v))
        if noise_std > 0:
            v_bar += float((rng or np.random.default_rng(0)).normal(0.0, noise_std))
        means.append(v_bar)
        samples.append(AdcSample(t + k * T, quantize(v_bar, vcc), polarity))
        # Charge through the divider resistor: integral of (Vcc - V) / R_div.
        if tau == 0.0 or math.isinf(tau):
            q = (vcc - v_inf) * T / divider_R
        else:
            q = ((vcc - v_inf) * T - (v_start - v_inf) * tau * (1.0 - math.exp(-T / tau))) / divider_R
        charges.append(q)
        v_start = -v_end
    return PulseReading(samples[0], samples[1], (means[0], means[1]), (charges[0], charges[1]))


def estimate_impedance(code: int, divider_R: float = DIVIDER_R) -> float:
    """Impedance estimate from a (possibly averaged) code; ``inf`` flags open circuit."""
    if not 0 <= code <= ADC_MAX:
        raise ValueError(f"code {code} outside 0..{ADC_MAX}")
    if code >= ADC_MAX:
        return math.inf
    return divider_R * code / (ADC_MAX - code)


def pe_is_reference(r_eff: float, capacitance: float, freq: float = PEIS_FREQ, amplitude: float = PEIS_AMPLITUDE) -> float:
    """|Z| of the parallel RC at a single frequency (amplitude does not enter a linear model)."""
    if freq <= 0:
        raise ValueError("frequency must be positive")
    return r_eff / math.sqrt(1.0 + (2.0 * math.pi * freq * r_eff * capacitance) ** 2)
