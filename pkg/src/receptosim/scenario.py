"""Scenario files, the multi-rate run loop, calibration and run outputs.

A scenario is a TOML document (``schema = 1``) naming the network, fluids,
pump, UV sources, masks, receptors and time steps.  ``run`` interleaves the
modules in a fixed order on every chemistry step (fluid, infusion,
chemistry, polarons) and, on controller ticks, reads each receptor and feeds
its controller.
"""
from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import controller as ctl
from .errors import CalibrationError, ConfigError, ReceptosimError, SimulationError
from .infusion import make_cells, step_depth
from .network import (
    ML,
    FluidSpec,
    Node,
    PorousZone,
    PumpSchedule,
    VascularNetwork,
    VeinSegment,
    build_demo_network,
    simulate_fill,
    total_filled_volume,
)
from .photo import (
    EDGE_WIDTH_PER_SIGMA,
    MaskPattern,
    SynthesisParams,
    UvSource,
    calibrate_blur,
    calibrate_kinetics,
    closed_form_rate,
    conversion_step,
    conversion_edge_width,
    exposure_trace,
    fit_initial_slope,
    transmittance_580,
)
from .receptor import (
    ElectrodePair,
    ReceptorElectrical,
    effective_capacitance,
    effective_resistance,
    estimate_impedance,
    pe_is_reference,
    polaron_step,
    pulse_readout,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1


@dataclass
class Receptor:
    pair: ElectrodePair
    electrical: ReceptorElectrical = field(default_factory=ReceptorElectrical)
    controller: ctl.ControllerConfig = field(default_factory=ctl.ControllerConfig)


@dataclass
class Scenario:
    name: str
    network: dict | None  # None selects the demo moth body
    fluids: list[tuple[float, FluidSpec]]
    pump: PumpSchedule
    sources: list[UvSource]
    masks: list[MaskPattern]
    receptors: list[Receptor]
    synthesis: SynthesisParams
    t_end: float
    dt_fluid: float = 0.1
    dt_chem: float = 0.1
    dt_electrical: float = 0.001
    seed: int = 0
    cells_per_side: int = 4
    noise_std: float = 0.0

    def build_network(self) -> VascularNetwork:
        return build_demo_network() if self.network is None else network_from_dict(self.network)

    def without_source(self, label: str) -> Scenario:
        return replace(self, name=f"{self.name}-no-{label}", sources=[s for s in self.sources if s.label != label])


# --------------------------------------------------------------------------
# parsing


def _req(d, key, path, kind=float):
    if key not in d:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return _as(d[key], f"{path}.{key}" if path else key, kind)


def _opt(d, key, path, default, kind=float):
    return default if key not in d else _as(d[key], f"{path}.{key}" if path else key, kind)


def _as(value, path, kind):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return value
    if kind is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a table, got {value!r}")
        return value
    raise TypeError(kind)


def _wrap(path, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ConfigError:
        raise
    except (ValueError, ReceptosimError) as exc:
        raise ConfigError(path, str(exc)) from exc


def network_from_dict(d: dict, path: str = "network") -> VascularNetwork:
    nodes = {}
    for i, nd in enumerate(_req(d, "nodes", path, list)):
        p = f"{path}.nodes[{i}]"
        nid = _req(nd, "id", p, int)
        pos = _req(nd, "position", p, list)
        nodes[nid] = _wrap(p, Node, nid, (float(pos[0]), float(pos[1])), _opt(nd, "kind", p, "junction", str))
    segments = []
    for i, sd in enumerate(_req(d, "segments", path, list)):
        p = f"{path}.segments[{i}]"
        ends = _req(sd, "endpoints", p, list)
        if len(ends) != 2:
            raise ConfigError(f"{p}.endpoints", "expected two node ids")
        segments.append(
            _wrap(
                p,
                VeinSegment,
                _req(sd, "id", p, int),
                (int(ends[0]), int(ends[1])),
                _req(sd, "length", p),
                _opt(sd, "width", p, 1.0),
                _opt(sd, "height", p, 1.4),
                _opt(sd, "filled_fraction", p, 0.0),
            )
        )
    zones = []
    for i, zd in enumerate(d.get("zones", [])):
        p = f"{path}.zones[{i}]"
        center = zd.get("center")
        zones.append(
            _wrap(
                p,
                PorousZone,
                _req(zd, "id", p, int),
                _req(zd, "attached_node", p, int),
                _req(zd, "footprint_area", p),
                _opt(zd, "layer_count", p, 3, int),
                _opt(zd, "layer_height", p, 0.1),
                _opt(zd, "porosity", p, 0.75),
                _opt(zd, "saturation", p, 0.0),
                center=None if center is None else (float(center[0]), float(center[1])),
            )
        )
    return _wrap(path, VascularNetwork, nodes, segments, zones)


def load_network(path) -> VascularNetwork:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return network_from_dict(doc.get("network", doc))


def masks_from_list(items, path="masks") -> list[MaskPattern]:
    out = []
    for i, md in enumerate(items):
        p = f"{path}[{i}]"
        polys = [[(float(x), float(y)) for x, y in poly] for poly in _req(md, "polygons", p, list)]
        out.append(_wrap(p, MaskPattern, polys, _req(md, "blur_sigma", p)))
    return out


def load_masks(path) -> list[MaskPattern]:
    with open(path, "rb") as fh:
        return masks_from_list(tomllib.load(fh).get("masks", []))


def scenario_from_dict(doc: dict, base_dir: Path | None = None) -> Scenario:
    schema = doc.get("schema")
    if schema != SCHEMA_VERSION:
        raise ConfigError("schema", f"unsupported schema version {schema!r} (expected {SCHEMA_VERSION})")
    t_end = _req(doc, "t_end", "")
    if t_end < 0:
        raise ConfigError("t_end", "must be non-negative")
    dt_fluid = _opt(doc, "dt_fluid", "", 0.1)
    dt_chem = _opt(doc, "dt_chem", "", 0.1)
    dt_el = _opt(doc, "dt_electrical", "", 0.001)
    for key, val in (("dt_fluid", dt_fluid), ("dt_chem", dt_chem), ("dt_electrical", dt_el)):
        if val <= 0:
            raise ConfigError(key, "must be positive")

    net_doc = _opt(doc, "network", "", {"demo": True}, dict)
    if net_doc.get("demo", False):
        network = None
    elif "file" in net_doc:
        with open((base_dir or Path(".")) / net_doc["file"], "rb") as fh:
            loaded = tomllib.load(fh)
        network = loaded.get("network", loaded)
    else:
        network = net_doc

    fluids = []
    for i, fd in enumerate(_opt(doc, "fluids", "", [{}], list)):
        p = f"fluids[{i}]"
        fluids.append(
            (
                _opt(fd, "t_start", p, 0.0),
                _wrap(
                    p,
                    FluidSpec,
                    _opt(fd, "viscosity", p, 2.4e-3),
                    _opt(fd, "surface_tension", p, 0.0),
                    _opt(fd, "contact_angle", p, 0.0),
                    _opt(fd, "precursor_concentration", p, 1.0),
                    _opt(fd, "label", p, "precursor cocktail Py:initiator:CAP 15:30:1", str),
                ),
            )
        )
    fluids.sort(key=lambda item: item[0])

    pump_doc = _opt(doc, "pump", "", {}, dict)
    intervals = []
    for i, iv in enumerate(_opt(pump_doc, "intervals", "pump", [], list)):
        if not isinstance(iv, list) or len(iv) != 3:
            raise ConfigError(f"pump.intervals[{i}]", "expected [t_start, t_end, Q]")
        intervals.append(tuple(_as(v, f"pump.intervals[{i}]", float) for v in iv))
    pump = _wrap("pump", PumpSchedule, tuple(intervals))

    sources = []
    for i, sd in enumerate(_opt(doc, "sources", "", [], list)):
        p = f"sources[{i}]"
        sched = [tuple(_as(v, f"{p}.schedule", float) for v in iv) for iv in _opt(sd, "schedule", p, [], list)]
        sources.append(
            _wrap(
                p,
                UvSource,
                _req(sd, "id", p, int),
                _req(sd, "label", p, str),
                _req(sd, "calibrated_irradiance", p),
                _opt(sd, "nominal_power", p, 0.0),
                _opt(sd, "distance", p, 0.0),
                _opt(sd, "wavelength", p, 365.0),
                sched,
            )
        )

    masks = masks_from_list(_opt(doc, "masks", "", [], list))
    if "mask_file" in doc:
        masks += load_masks((base_dir or Path(".")) / _as(doc["mask_file"], "mask_file", str))

    syn = _opt(doc, "synthesis", "", {}, dict)
    if "k_p" in syn:
        synthesis = _wrap(
            "synthesis",
            SynthesisParams,
            _req(syn, "k_p", "synthesis"),
            _opt(syn, "I_syn", "synthesis", 50.0),
            _opt(syn, "T_inf", "synthesis", 0.25),
            _opt(syn, "alpha_p", "synthesis", 0.02),
            _opt(syn, "tau_p", "synthesis", 4.0),
        )
    else:
        synthesis = _wrap(
            "synthesis",
            calibrate_kinetics,
            _opt(syn, "target_slope", "synthesis", -0.018),
            _opt(syn, "T_inf", "synthesis", 0.25),
            _opt(syn, "I_ref", "synthesis", 100.0),
            I_syn=_opt(syn, "I_syn", "synthesis", 50.0),
            alpha_p=_opt(syn, "alpha_p", "synthesis", 0.02),
            tau_p=_opt(syn, "tau_p", "synthesis", 4.0),
        )

    scen = Scenario(
        name=_opt(doc, "name", "", "scenario", str),
        network=network,
        fluids=fluids,
        pump=pump,
        sources=sources,
        masks=masks,
        receptors=[],
        synthesis=synthesis,
        t_end=t_end,
        dt_fluid=dt_fluid,
        dt_chem=dt_chem,
        dt_electrical=dt_el,
        seed=_opt(doc, "seed", "", 0, int),
        cells_per_side=_opt(doc, "cells_per_side", "", 4, int),
        noise_std=_opt(doc, "noise_std", "", 0.0),
    )
    net = _wrap("network", scen.build_network)
    cells = make_cells(net, scen.cells_per_side)

    for i, rd in enumerate(_opt(doc, "receptors", "", [], list)):
        p = f"receptors[{i}]"
        loc = _req(rd, "location", p, list)
        location = (float(loc[0]), float(loc[1]))
        if "region" in rd:
            region = [int(c) for c in _as(rd["region"], f"{p}.region", list)]
            known = {c.id for c in cells}
            bad = [c for c in region if c not in known]
            if bad:
                raise ConfigError(f"{p}.region", f"unknown cell ids {bad}")
        else:
            radius = _opt(rd, "region_radius", p, 0.0)
            region = _cells_near(cells, location, radius)
        site = _opt(rd, "site", p, "thorax", str)
        pair = _wrap(
            p,
            ElectrodePair,
            _req(rd, "id", p, int),
            location,
            region,
            site,
            _opt(rd, "gap", p, 130.0),
            _opt(rd, "wire_diameter", p, 30.0),
        )
        ed = _opt(rd, "electrical", p, {}, dict)
        elec = _wrap(
            f"{p}.electrical",
            ReceptorElectrical,
            **{k: _as(v, f"{p}.electrical.{k}", float) for k, v in ed.items()},
        )
        cd = dict(_opt(rd, "controller", p, {}, dict))
        cd.setdefault("site", site)
        try:
            cfg = ctl.ControllerConfig(**cd)
        except TypeError as exc:
            raise ConfigError(f"{p}.controller", str(exc)) from exc
        except ConfigError as exc:
            raise ConfigError(f"{p}.{exc.path}", str(exc).split(": ", 1)[-1]) from exc
        scen.receptors.append(Receptor(pair, elec, cfg))

    for i, r in enumerate(scen.receptors):
        ratio = r.controller.tick_interval / scen.dt_chem
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError(f"receptors[{i}].controller.tick_interval", "must be an integer multiple of dt_chem")
    ratio = scen.dt_fluid / scen.dt_chem
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError("dt_fluid", "must be an integer multiple of dt_chem")
    return scen


def _cells_near(cells, location, radius):
    d = [(np.hypot(c.position[0] - location[0], c.position[1] - location[1]), c.id) for c in cells]
    inside = [cid for dist, cid in d if dist <= radius]
    return inside or [min(d)[1]]


def load_scenario(path_or_name) -> Scenario:
    """Load a scenario file, or a bundled scenario by name (e.g. ``"fig4"``)."""
    path = Path(path_or_name)
    if not path.exists():
        bundled = resources.files("receptosim") / "scenarios" / f"{path_or_name}.toml"
        if not bundled.is_file():
            raise ConfigError("scenario", f"no such file or bundled scenario: {path_or_name}")
        return scenario_from_dict(tomllib.loads(bundled.read_text()))
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("scenario", f"not valid TOML: {exc}") from exc
    return scenario_from_dict(doc, path.parent)


# --------------------------------------------------------------------------
# run


@dataclass
class RunOutput:
    series: dict[str, tuple[list[str], list[tuple]]]
    events: dict[int, list[ctl.OutputEvent]]
    summary: dict
    cells: list[tuple]

    def event_lines(self, receptor_id: int) -> list[str]:
        return [e.log_line() for e in self.events[receptor_id]]


def _fluid_at(fluids, t):
    current = fluids[0][1] if fluids else FluidSpec()
    for t0, fl in fluids:
        if t0 <= t:
            current = fl
    return current


def run(scenario: Scenario) -> RunOutput:
    sc = scenario
    net = sc.build_network()
    cells = make_cells(net, sc.cells_per_side)
    n_cells = len(cells)
    pos = np.array([c.position for c in cells]).reshape(n_cells, 2)
    index = {c.id: k for k, c in enumerate(cells)}
    zone_of = np.array([c.zone for c in cells])
    zones = {z.id: z for z in net.zones}

    # Wetting order inside each zone: nearest to the feed node first.
    wet_rank = np.zeros(n_cells)
    for z in net.zones:
        nx, ny = net.nodes[z.attached_node].position
        ranked = sorted(z.cell_grid, key=lambda cid: (np.hypot(pos[index[cid], 0] - nx, pos[index[cid], 1] - ny), cid))
        for r, cid in enumerate(ranked):
            wet_rank[index[cid]] = (r + 0.5) / len(ranked)

    clear = np.ones(n_cells)
    for m in sc.masks:
        clear *= m.transmission(pos) if n_cells else 1.0

    depth = np.zeros(n_cells)
    precursor = np.zeros(n_cells, dtype=bool)
    x = np.zeros(n_cells)
    p = np.zeros(n_cells)
    rng = np.random.default_rng(sc.seed)

    controllers = {r.pair.id: ctl.Controller(r.controller) for r in sc.receptors}
    regions = {r.pair.id: np.array([index[c] for c in r.pair.region]) for r in sc.receptors}
    tick_every = {r.pair.id: int(round(r.controller.tick_interval / sc.dt_chem)) for r in sc.receptors}
    fluid_every = int(round(sc.dt_fluid / sc.dt_chem))

    series = {
        "fill": (["t", "filled_volume_ml", "injected_ml", "overflow_ml", "fill_fraction"], []),
        "conversion": (["t", "mean_conversion", "max_conversion", "converted_cells", "mean_depth_um"], []),
        "transmittance": (["t", "receptor", "T"], []),
        "impedance": (["t", "receptor", "code", "Z_ohm"], []),
        "readout": (["t", "receptor", "polarity", "code", "Z_ohm"], []),
        "peis": (["t", "receptor", "Z_abs_ohm"], []),
        "irradiance": (["t", "receptor", "I_W_m2"], []),
    }
    summary = {
        "scenario": sc.name,
        "t_end": sc.t_end,
        "total_volume_ml": net.total_volume / ML,
        "fill_complete_s": None,
        "synthesis_onset_s": None,
        "first_polaron_response_s": None,
        "first_red_blink_s": {},
        "first_flap_s": None,
        "reaction_count": 0,
        "flap_energy_J": 0.0,
    }

    n_steps = int(round(sc.t_end / sc.dt_chem))
    t_fluid = 0.0
    for k in range(1, n_steps + 1):
        t0, t = (k - 1) * sc.dt_chem, k * sc.dt_chem
        fluid = _fluid_at(sc.fluids, t0)
        try:
            if k % fluid_every == 0 and not (net.is_full() and sc.pump.integrate(t_fluid, t) == 0):
                simulate_fill(net, sc.pump, fluid, t_fluid, t)
        except ReceptosimError as exc:
            raise SimulationError("vasc_net", t, str(exc)) from exc
        if k % fluid_every == 0:
            t_fluid = t
        if summary["fill_complete_s"] is None and net.is_full():
            summary["fill_complete_s"] = round(t, 9)

        sat = np.array([zones[zid].saturation for zid in zone_of]) if n_cells else np.zeros(0)
        wet = (sat > 0) & ((sat >= wet_rank) | (sat >= 1.0))
        depth = np.where(wet, step_depth(depth, sc.dt_chem), depth)
        if fluid.precursor_concentration > 0:
            precursor |= wet

        irr = clear * sum(s.calibrated_irradiance for s in sc.sources if s.is_on(t0))
        # Polarons form on the material converted when the step begins.
        x_prev = x
        x = np.asarray(conversion_step(x, irr, sc.synthesis.k_p, sc.synthesis.I_syn, sc.dt_chem, precursor))
        p = np.asarray(polaron_step(p, irr, sc.synthesis, x_prev, sc.dt_chem))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise SimulationError("photo_synth", t, "non-finite conversion or polaron state")

        if summary["synthesis_onset_s"] is None and np.any(x > 0):
            summary["synthesis_onset_s"] = round(t, 9)
        series["fill"][1].append(
            (t, total_filled_volume(net) / ML, sc.pump.integrate(0.0, t) / ML, net.overflow_volume / ML,
             total_filled_volume(net) / net.total_volume)
        )
        series["conversion"][1].append(
            (t, float(x.mean()) if n_cells else 0.0, float(x.max()) if n_cells else 0.0, int(np.sum(x > 0.01)),
             float(depth.mean()) if n_cells else 0.0)
        )

        pulses = []
        for r in sc.receptors:
            rid = r.pair.id
            reg = regions[rid]
            x_bar, p_bar = float(x[reg].mean()), float(p[reg].mean())
            if summary["first_polaron_response_s"] is None and p_bar > 0:
                summary["first_polaron_response_s"] = round(t, 9)
            if k % tick_every[rid]:
                continue
            series["transmittance"][1].append((t, rid, transmittance_580(x_bar, sc.synthesis)))
            series["irradiance"][1].append((t, rid, float(irr[reg].mean())))
            r_eff = effective_resistance(r.electrical, x_bar, p_bar)
            cap = effective_capacitance(r.electrical, x_bar)
            reading = pulse_readout(r_eff, cap, t, pulse_ms=r.controller.pulse_ms, noise_std=sc.noise_std, rng=rng)
            z_hat = estimate_impedance(reading.code)
            for smp in (reading.positive, reading.negative):
                pulses.append((round(smp.t, 9), rid, smp.polarity, smp.code, estimate_impedance(smp.code)))
            series["impedance"][1].append((t, rid, reading.code, z_hat))
            series["peis"][1].append((t, rid, pe_is_reference(r_eff, cap)))
            new = controllers[rid].tick(z_hat, round(t, 9))
            for ev in new:
                if ev.kind == "led" and ev.led_color == "red" and rid not in summary["first_red_blink_s"]:
                    summary["first_red_blink_s"][rid] = ev.t
                if ev.kind == "flap" and ev.flap_active and summary["first_flap_s"] is None:
                    summary["first_flap_s"] = ev.t

        # pulse pairs of different receptors overlap in time; keep the log time-ordered
        series["readout"][1].extend(sorted(pulses, key=lambda row: (row[0], row[1])))

    for c in controllers.values():
        c.finish(sc.t_end)
    summary["reaction_count"] = sum(len(c.state.reactions) for c in controllers.values())
    summary["flap_energy_J"] = sum(
        c.cfg.flap_energy * sum(1 for e in c.events if e.kind == "flap" and e.flap_active) for c in controllers.values()
    )
    summary["first_red_blink_s"] = {str(k): v for k, v in sorted(summary["first_red_blink_s"].items())}
    cell_rows = [
        (c.id, float(depth[index[c.id]]), int(precursor[index[c.id]]), float(x[index[c.id]]), float(p[index[c.id]]))
        for c in cells
    ]
    return RunOutput(series, {rid: c.events for rid, c in controllers.items()}, summary, cell_rows)


# --------------------------------------------------------------------------
# outputs


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6g}"
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_outputs(out: RunOutput, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in out.series.items():
        write_csv(out_dir / f"{name}.csv", header, rows)
    write_csv(out_dir / "cells.csv", ["cell_id", "depth_um", "precursor", "conversion", "polaron"], out.cells)
    for rid in sorted(out.events):
        (out_dir / f"events_{rid}.log").write_text("".join(line + "\n" for line in out.event_lines(rid)))
    (out_dir / "summary.json").write_text(json.dumps(out.summary, indent=2, sort_keys=True) + "\n")
    return out_dir


# --------------------------------------------------------------------------
# calibration


def calibrate(targets: dict | None = None, out_dir=None) -> dict:
    """Fit kinetic rate and mask blur to the transmittance slope and lithography resolution."""
    t = dict(targets or {})
    slope = float(t.get("slope", -0.018))
    resolution = float(t.get("resolution", 0.3))
    T_inf = float(t.get("T_inf", 0.25))
    I_ref = float(t.get("I_ref", 100.0))
    I_syn = float(t.get("I_syn", 50.0))
    if not slope < 0:
        raise CalibrationError("slope target must be negative", {"slope": slope})
    params = calibrate_kinetics(slope, T_inf, I_ref, I_syn=I_syn)
    sigma = calibrate_blur(resolution, params)
    tt, T = exposure_trace(params, I_ref)
    fitted = fit_initial_slope(tt, T)
    width = conversion_edge_width(sigma, params)
    report = {
        "targets": {"slope": slope, "resolution_mm": resolution, "T_inf": T_inf, "I_ref": I_ref, "I_syn": I_syn},
        "k_p": params.k_p,
        "k_p_times_I_ref": params.k_p * I_ref,
        "closed_form_k_p_times_I_ref": closed_form_rate(slope, T_inf, I_ref) * I_ref,
        "blur_sigma_mm": sigma,
        "optical_blur_sigma_mm": resolution / EDGE_WIDTH_PER_SIGMA,
        "residuals": {
            "slope_rel": (fitted - slope) / abs(slope),
            "edge_width_rel": (width - resolution) / resolution,
        },
        "params": {"k_p": params.k_p, "I_syn": params.I_syn, "T_inf": params.T_inf,
                   "alpha_p": params.alpha_p, "tau_p": params.tau_p},
    }
    if abs(report["residuals"]["slope_rel"]) > 0.01 or abs(report["residuals"]["edge_width_rel"]) > 0.02:
        raise CalibrationError("calibration residuals exceed tolerance", report["residuals"])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "calibration.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    report["synthesis"] = params
    return report


# --------------------------------------------------------------------------
# single-receptor bench


@dataclass
class BenchTrace:
    t: list[float]
    codes: list[float]
    z: list[float]
    conversion: list[float]
    controller: ctl.Controller


def simulate_receptor(
    irradiance,
    t_end: float,
    synthesis: SynthesisParams,
    x0: float = 0.0,
    precursor: bool = True,
    elec: ReceptorElectrical | None = None,
    cfg: ctl.ControllerConfig | None = None,
    dt: float = 0.1,
) -> BenchTrace:
    """Drive one receptor patch with ``irradiance(t)`` (W/m^2, sampled at step start).

    Same interleave as ``run``: chemistry, polarons, then a pulse readout and a
    controller tick on every tick boundary.
    """
    elec = elec or ReceptorElectrical()
    cfg = cfg or ctl.ControllerConfig()
    controller = ctl.Controller(cfg)
    every = int(round(cfg.tick_interval / dt))
    x, p = x0, 0.0
    out = BenchTrace([], [], [], [], controller)
    for k in range(1, int(round(t_end / dt)) + 1):
        t0, t = (k - 1) * dt, round(k * dt, 9)
        irr = irradiance(t0)
        x_prev = x
        x = float(conversion_step(x, irr, synthesis.k_p, synthesis.I_syn, dt, precursor))
        p = polaron_step(p, irr, synthesis, x_prev, dt)
        if k % every:
            continue
        r_eff = effective_resistance(elec, x, p)
        reading = pulse_readout(r_eff, effective_capacitance(elec, x), t, pulse_ms=cfg.pulse_ms)
        z = estimate_impedance(reading.code)
        controller.tick(z, t)
        out.t.append(t)
        out.codes.append(reading.code)
        out.z.append(z)
        out.conversion.append(x)
    controller.finish(t_end)
    return out
