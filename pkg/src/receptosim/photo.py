"""UV irradiance field and self-inhibiting photopolymerisation of pyrrole.

Sources carry a calibrated irradiance at the target plane (W/m^2) rather than
a power/distance model.  Contact masks are opaque polygons whose shadow is
blurred by a Gaussian of width ``blur_sigma`` (scattering by surface
roughness).  Conversion follows first-order (1 - x) kinetics above a
synthesis threshold; the observable is 580 nm transmittance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq, curve_fit
from scipy.special import ndtr, ndtri

from .errors import CalibrationError

TARGET_SLOPE = -0.018  # 1/s, normalised 580 nm transmittance
TARGET_RESOLUTION_MM = 0.3
DEFAULT_T_INF = 0.25
SYNTHESIS_IRRADIANCE = 100.0  # W/m^2, 1.6 W LED at 43 mm
TEST_IRRADIANCE = 30.0  # W/m^2, 0.9 W LED at 20 mm
SYNTHESIS_THRESHOLD = 50.0
EXPOSURE_S = 60.0
FIT_WINDOW_S = 5.0
TRACE_DT = 0.1
# 10-90 % rise distance of an erf edge, in units of sigma.
EDGE_WIDTH_PER_SIGMA = 2.0 * float(ndtri(0.9))

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


@dataclass
class UvSource:
    id: int
    label: str
    calibrated_irradiance: float
    nominal_power: float = 0.0
    distance: float = 0.0
    wavelength: float = 365.0
    schedule: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.calibrated_irradiance < 0:
            raise ValueError(f"source {self.id}: negative irradiance")
        ivs = sorted((float(a), float(b)) for a, b in self.schedule)
        for a, b in ivs:
            if b <= a:
                raise ValueError(f"source {self.id}: empty schedule interval ({a}, {b})")
        for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
            if a1 < b0:
                raise ValueError(f"source {self.id}: schedule intervals overlap")
        self.schedule = ivs

    def is_on(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.schedule)


def make_synthesis_source(schedule=((0.0, EXPOSURE_S),), sid=1) -> UvSource:
    return UvSource(sid, "synthesis", SYNTHESIS_IRRADIANCE, nominal_power=1.6, distance=43.0, schedule=list(schedule))


def make_test_source(schedule=(), sid=2) -> UvSource:
    return UvSource(sid, "test", TEST_IRRADIANCE, nominal_power=0.9, distance=20.0, schedule=list(schedule))


@dataclass
class MaskPattern:
    """Opaque polygons (target-plane mm) blurred by a Gaussian of ``blur_sigma`` mm."""

    polygons: list[list[tuple[float, float]]]
    blur_sigma: float

    def __post_init__(self):
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be positive")
        self.polygons = [[(float(x), float(y)) for x, y in poly] for poly in self.polygons]
        for poly in self.polygons:
            if len(poly) < 3:
                raise ValueError("mask polygons need at least three vertices")

    def transmission(self, points) -> np.ndarray:
        """Clear fraction at each (x, y) point after blurring the opaque shadow."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        shadow = np.zeros(len(pts))
        for poly in self.polygons:
            shadow += np.array([_blurred_coverage(poly, px, py, self.blur_sigma) for px, py in pts])
        return np.clip(1.0 - shadow, 0.0, 1.0)


def _blurred_coverage(poly, px, py, sigma):
    """Gaussian-weighted area of a polygon around (px, py).

    The y-integral has a closed form per boundary crossing, so only x is
    integrated numerically, piecewise between vertex abscissae and +-3 sigma.
    """
    v = np.asarray(poly)
    x1, y1 = v[:, 0], v[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    area2 = np.sum(x1 * y2 - x2 * y1)
    orient = 1.0 if area2 > 0 else -1.0
    sign = -np.sign(x2 - x1) * orient
    lo, hi = px - 8.0 * sigma, px + 8.0 * sigma
    breaks = np.unique(np.concatenate(([lo, px - 3.0 * sigma, px + 3.0 * sigma, hi], x1[(x1 > lo) & (x1 < hi)])))
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        xs = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
        w = 0.5 * (b - a) * _GL_W
        xa, xb = np.minimum(x1, x2)[:, None], np.maximum(x1, x2)[:, None]
        inside = (xs[None, :] >= xa) & (xs[None, :] < xb)
        dx = np.where(x2 != x1, x2 - x1, 1.0)[:, None]
        ye = y1[:, None] + (y2 - y1)[:, None] * (xs[None, :] - x1[:, None]) / dx
        strip = np.sum(np.where(inside, sign[:, None] * ndtr((ye - py) / sigma), 0.0), axis=0)
        gx = np.exp(-0.5 * ((xs - px) / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))
        total += float(np.sum(w * gx * strip))
    return total


def irradiance_at(point, sources, masks, t: float) -> float:
    """Irradiance at a target-plane point (mm), W/m^2."""
    clear = 1.0
    for mask in masks:
        clear *= float(mask.transmission([point])[0])
    return sum(src.calibrated_irradiance for src in sources if src.is_on(t)) * clear


def irradiance_field(points, sources, masks, t: float) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    clear = np.ones(len(pts))
    for mask in masks:
        clear *= mask.transmission(pts)
    return clear * sum(src.calibrated_irradiance for src in sources if src.is_on(t))


@dataclass(frozen=True)
class SynthesisParams:
    k_p: float  # (W/m^2)^-1 s^-1
    I_syn: float = SYNTHESIS_THRESHOLD
    T_inf: float = DEFAULT_T_INF
    alpha_p: float = 0.02  # polaron generation per (W/m^2 s) of converted material
    tau_p: float = 4.0  # s

    def __post_init__(self):
        if min(self.k_p, self.I_syn, self.T_inf, self.alpha_p, self.tau_p) <= 0 or self.T_inf >= 1:
            raise ValueError("synthesis parameters must be positive with T_inf < 1")


def conversion_step(x, irradiance, k_p, I_syn, dt, precursor=True):
    """Exact exponential step of dx/dt = k_p I (1 - x); vectorisable."""
    active = np.asarray(precursor) & (np.asarray(irradiance) >= I_syn)
    stepped = 1.0 - (1.0 - x) * np.exp(-k_p * np.asarray(irradiance) * dt)
    return np.where(active, stepped, x)


def advance_conversion(cell, irradiance: float, params: SynthesisParams, dt: float):
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = float(conversion_step(cell.conversion, irradiance, params.k_p, params.I_syn, dt, cell.precursor_present))
    return replace(cell, conversion=x)


def transmittance_580(x, params: SynthesisParams):
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0) or np.any(x_arr > 1):
        raise ValueError("conversion must lie in [0, 1]")
    T = params.T_inf + (1.0 - params.T_inf) * (1.0 - x_arr)
    return float(T) if np.ndim(T) == 0 else T


def exposure_trace(params: SynthesisParams, irradiance=SYNTHESIS_IRRADIANCE, duration=EXPOSURE_S, dt=TRACE_DT):
    """Transmittance of a pristine, infused cell under constant irradiance, stepped at ``dt``."""
    n = int(round(duration / dt))
    t = np.arange(n + 1) * dt
    x = np.zeros(n + 1)
    for k in range(n):
        x[k + 1] = conversion_step(x[k], irradiance, params.k_p, params.I_syn, dt)
    return t, transmittance_580(x, params)


def fit_initial_slope(t, T, window=FIT_WINDOW_S) -> float:
    sel = np.asarray(t) <= window + 1e-9
    slope, _ = np.polyfit(np.asarray(t)[sel], np.asarray(T)[sel], 1)
    return float(slope)


def fit_plateau(t, T) -> float:
    """Asymptote A of a least-squares fit T = A + B exp(-c t)."""
    t, T = np.asarray(t), np.asarray(T)
    c0 = max(-fit_initial_slope(t, T) / max(T[0] - T[-1], 1e-9), 1e-3)
    popt, _ = curve_fit(lambda s, a, b, c: a + b * np.exp(-c * s), t, T, p0=(T[-1], T[0] - T[-1], c0), maxfev=10000)
    return float(popt[0])


def closed_form_rate(target_slope, T_inf, I_ref) -> float:
    """k_p such that the instantaneous slope at t = 0 equals ``target_slope``."""
    return abs(target_slope) / ((1.0 - T_inf) * I_ref)


def calibrate_kinetics(target_slope=TARGET_SLOPE, T_inf=DEFAULT_T_INF, I_ref=SYNTHESIS_IRRADIANCE, **extra) -> SynthesisParams:
    """Find k_p so the least-squares slope over the first 5 s of a simulated
    trace at ``I_ref`` equals ``target_slope``.

    The instantaneous-slope closed form seeds the search; curvature of the
    exponential makes the fitted slope a few percent shallower than it.
    """
    if not target_slope < 0:
        raise CalibrationError("target slope must be negative", {"slope": target_slope})
    if not 0 < T_inf < 1 or not I_ref > 0:
        raise CalibrationError("need 0 < T_inf < 1 and I_ref > 0", {"T_inf": T_inf, "I_ref": I_ref})
    I_syn = extra.pop("I_syn", min(SYNTHESIS_THRESHOLD, I_ref))
    if I_syn > I_ref:
        raise CalibrationError("reference irradiance is below the synthesis threshold", {"I_syn": I_syn})
    k0 = closed_form_rate(target_slope, T_inf, I_ref)

    def residual(k):
        p = SynthesisParams(k, I_syn=I_syn, T_inf=T_inf, **extra)
        t, T = exposure_trace(p, I_ref, duration=FIT_WINDOW_S)
        return fit_initial_slope(t, T) - target_slope

    try:
        k = brentq(residual, 0.5 * k0, 4.0 * k0, xtol=1e-14 * k0, rtol=1e-12)
    except ValueError as exc:
        raise CalibrationError("slope calibration did not bracket a root", {"k0": k0}) from exc
    params = SynthesisParams(k, I_syn=I_syn, T_inf=T_inf, **extra)
    err = abs(residual(k) / target_slope)
    if err > 0.01:
        raise CalibrationError("slope calibration did not converge", {"relative_slope_error": err})
    return params


def edge_profile(blur_sigma, params: SynthesisParams, irradiance=SYNTHESIS_IRRADIANCE, exposure=EXPOSURE_S, dt=TRACE_DT, half_span=None, step=None):
    """Conversion along a line crossing a straight mask edge at x = 0.

    The mask is opaque for x < 0. Returns (x mm, conversion).
    """
    half_span = half_span or 6.0 * blur_sigma
    step = step or blur_sigma / 200.0
    x = np.arange(-half_span, half_span + step / 2, step)
    big = 1e3
    mask = MaskPattern([[(-big, -big), (0.0, -big), (0.0, big), (-big, big)]], blur_sigma)
    # A straight edge blurs to a normal CDF; evaluate that closed form on the
    # dense scan and spot-check it against the polygon integrator.
    clear = ndtr(x / blur_sigma)
    probe = mask.transmission([(x[0], 0.0), (0.0, 0.0), (x[-1], 0.0)])
    if not np.allclose(probe, clear[[0, len(x) // 2, -1]], atol=1e-6):
        raise RuntimeError("mask integrator disagrees with the straight-edge closed form")
    intensity = irradiance * clear
    conv = np.zeros_like(x)
    for _ in range(int(round(exposure / dt))):
        conv = conversion_step(conv, intensity, params.k_p, params.I_syn, dt)
    return x, conv


def rise_width(x, y, lo=0.1, hi=0.9) -> float:
    """Distance between the lo and hi crossings of a rising profile normalised to its range."""
    y = np.asarray(y, dtype=float)
    span = y[-1] - y[0]
    if span <= 0:
        return math.nan
    yn = (y - y[0]) / span
    return _first_crossing(x, yn, hi) - _first_crossing(x, yn, lo)


def _first_crossing(x, y, level):
    k = int(np.argmax(y >= level))
    if k == 0:
        return float(x[0])
    x0, x1, y0, y1 = x[k - 1], x[k], y[k - 1], y[k]
    return float(x0 + (level - y0) * (x1 - x0) / (y1 - y0))


def conversion_edge_width(blur_sigma, params, **kw) -> float:
    x, conv = edge_profile(blur_sigma, params, **kw)
    return rise_width(x, conv)


def calibrate_blur(resolution=TARGET_RESOLUTION_MM, params: SynthesisParams | None = None, tol=0.02, **kw) -> float:
    """blur_sigma (mm) whose exposed conversion edge has 10-90 % width ``resolution``.

    The profile depends on x only through x / sigma, so the width is linear in
    sigma; one rescale from the optical guess lands on target, a few secant
    passes absorb scan discretisation.
    """
    if resolution <= 0:
        raise CalibrationError("resolution must be positive", {"resolution": resolution})
    params = params or calibrate_kinetics()
    sigma = resolution / EDGE_WIDTH_PER_SIGMA
    width = math.nan
    for _ in range(8):
        width = conversion_edge_width(sigma, params, **kw)
        if not math.isfinite(width) or width <= 0:
            raise CalibrationError("exposure produced no conversion edge", {"sigma": sigma})
        if abs(width - resolution) <= 0.1 * tol * resolution:
            return sigma
        sigma *= resolution / width
    if abs(width - resolution) <= tol * resolution:
        return sigma
    raise CalibrationError("blur calibration did not converge", {"width": width, "target": resolution})
