"""Printed vascular network: geometry, quasi-static Stokes flow and front filling.

Geometry is kept in millimetres (as printed); hydraulics run in SI units.
Liquid enters at the inlet node and spreads through vein segments (explicit
channels) and porous zones (rectilinear infill treated as a lumped Darcy
sink).  Air is displaced with zero back pressure, so every advancing front is
a fixed-pressure sink at ``-p_cap``.
"""
from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .errors import DegenerateNetworkError, GeometryError, SimulationError, TopologyError

MM = 1e-3
MM2 = 1e-6
MM3 = 1e-9
ML = 1e-6

NODE_KINDS = ("inlet", "junction", "terminal")

# Floor on the liquid column length used for a fresh front, as a fraction of
# the full element. Keeps conductances finite at the instant of wetting.
MIN_COLUMN = 1e-3
# Explicit Euler cap: no front moves more than this fraction per sub-step.
MAX_ADVANCE = 0.1
_FULL_TOL = 1e-12


@dataclass
class Node:
    id: int
    position: tuple[float, float]
    kind: str = "junction"

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise GeometryError(f"node {self.id}: unknown kind {self.kind!r}")


@dataclass
class VeinSegment:
    """Rectangular channel between two nodes.

    ``filled_fraction`` is the total liquid fraction of the lumen;
    ``fill_from_b`` is the part of it that entered through ``endpoints[1]``
    (non-zero only on loops, where a vein is wetted from both sides).
    """

    id: int
    endpoints: tuple[int, int]
    length: float
    width: float = 1.0
    height: float = 1.4
    filled_fraction: float = 0.0
    fill_from_b: float = 0.0

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0 or self.height <= 0:
            raise GeometryError(f"segment {self.id}: dimensions must be positive")
        if not 0.0 <= self.filled_fraction <= 1.0:
            raise GeometryError(f"segment {self.id}: filled_fraction outside [0, 1]")

    @property
    def fill_from_a(self) -> float:
        return self.filled_fraction - self.fill_from_b

    @property
    def lumen_volume(self) -> float:
        """Lumen volume in m^3."""
        return self.length * self.width * self.height * MM3

    @property
    def is_full(self) -> bool:
        return self.filled_fraction >= 1.0

    def hydraulic_radius(self) -> float:
        """Half the hydraulic diameter, in m (equals r for a round tube)."""
        w, h = self.width * MM, self.height * MM
        return w * h / (w + h)


@dataclass
class PorousZone:
    id: int
    attached_node: int
    footprint_area: float
    layer_count: int = 3
    layer_height: float = 0.1
    porosity: float = 0.75
    saturation: float = 0.0
    cell_grid: list[int] = field(default_factory=list)
    center: tuple[float, float] | None = None

    def __post_init__(self):
        if self.footprint_area < 0 or self.layer_count < 1 or self.layer_height <= 0:
            raise GeometryError(f"zone {self.id}: invalid geometry")
        if not 0.0 < self.porosity <= 1.0:
            raise GeometryError(f"zone {self.id}: porosity must lie in (0, 1]")
        if not 0.0 <= self.saturation <= 1.0:
            raise GeometryError(f"zone {self.id}: saturation outside [0, 1]")

    @property
    def thickness(self) -> float:
        return self.layer_count * self.layer_height

    @property
    def pore_volume(self) -> float:
        """Pore volume in m^3."""
        return self.footprint_area * self.thickness * self.porosity * MM3

    @property
    def permeability(self) -> float:
        """Parallel-plate permeability k = phi * h_layer^2 / 12, in m^2."""
        return self.porosity * (self.layer_height * MM) ** 2 / 12.0

    def resistance(self, fluid: FluidSpec) -> float:
        """Darcy resistance of the wetted part of the zone, Pa s / m^3.

        Lumped over a square footprint of side l: R = mu * l / (k * l * H), so
        the footprint cancels; the wetted length grows with saturation.
        """
        full = fluid.viscosity / (self.permeability * self.thickness * MM)
        return full * max(self.saturation, MIN_COLUMN)

    def capillary_pressure(self, fluid: FluidSpec) -> float:
        return 2.0 * fluid.surface_tension * math.cos(math.radians(fluid.contact_angle)) / (
            self.layer_height * MM
        )


@dataclass(frozen=True)
class FluidSpec:
    viscosity: float = 2.4e-3
    surface_tension: float = 0.0
    contact_angle: float = 0.0
    precursor_concentration: float = 1.0
    label: str = "precursor cocktail Py:initiator:CAP 15:30:1"

    def __post_init__(self):
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")
        if not 0.0 <= self.precursor_concentration <= 1.0:
            raise ValueError("precursor_concentration must lie in [0, 1]")


@dataclass(frozen=True)
class PumpSchedule:
    """Piecewise-constant flow rate, intervals of (t_start, t_end, Q [m^3/s])."""

    intervals: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        ivs = tuple(sorted((float(a), float(b), float(q)) for a, b, q in self.intervals))
        for a, b, q in ivs:
            if b <= a or q < 0:
                raise ValueError(f"bad pump interval ({a}, {b}, {q})")
        for (_, b0, _), (a1, _, _) in zip(ivs, ivs[1:]):
            if a1 < b0:
                raise ValueError("pump intervals overlap")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def constant(cls, q, t_start=0.0, t_end=math.inf):
        return cls(((t_start, t_end, q),))

    def rate(self, t: float) -> float:
        for a, b, q in self.intervals:
            if a <= t < b:
                return q
        return 0.0

    def breakpoints(self):
        return sorted({x for a, b, _ in self.intervals for x in (a, b) if math.isfinite(x)})

    def integrate(self, t0: float, t1: float) -> float:
        """Volume pumped over [t0, t1], m^3."""
        return sum(q * max(0.0, min(b, t1) - max(a, t0)) for a, b, q in self.intervals)


@dataclass
class VascularNetwork:
    nodes: dict[int, Node]
    segments: list[VeinSegment]
    zones: list[PorousZone] = field(default_factory=list)
    wetted: set[int] = field(default_factory=set)
    overflow_volume: float = 0.0

    def __post_init__(self):
        inlets = [n.id for n in self.nodes.values() if n.kind == "inlet"]
        if len(inlets) != 1:
            raise TopologyError(f"expected exactly one inlet, found {len(inlets)}")
        self.inlet = inlets[0]
        for seg in self.segments:
            for nid in seg.endpoints:
                if nid not in self.nodes:
                    raise TopologyError(f"segment {seg.id} references unknown node {nid}")
        for zone in self.zones:
            if zone.attached_node not in self.nodes:
                raise TopologyError(f"zone {zone.id} attached to unknown node {zone.attached_node}")
        self.wetted.add(self.inlet)
        for seg in self.segments:
            if seg.is_full:
                self.wetted.update(seg.endpoints)
            else:
                if seg.fill_from_a > 0:
                    self.wetted.add(seg.endpoints[0])
                if seg.fill_from_b > 0:
                    self.wetted.add(seg.endpoints[1])
        for zone in self.zones:
            if zone.saturation > 0:
                self.wetted.add(zone.attached_node)

    @property
    def total_volume(self) -> float:
        return sum(s.lumen_volume for s in self.segments) + sum(z.pore_volume for z in self.zones)

    @property
    def porous_footprint(self) -> float:
        """Sum of zone footprints, mm^2."""
        return sum(z.footprint_area for z in self.zones)

    def is_full(self) -> bool:
        return all(s.is_full for s in self.segments) and all(z.saturation >= 1.0 for z in self.zones)

    def check_connected(self):
        adj = {nid: [] for nid in self.nodes}
        for seg in self.segments:
            a, b = seg.endpoints
            adj[a].append(b)
            adj[b].append(a)
        seen = {self.inlet}
        queue = deque([self.inlet])
        while queue:
            for nb in adj[queue.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        missing = sorted(set(self.nodes) - seen)
        if missing:
            raise TopologyError(f"nodes unreachable from inlet: {missing}")


def hydraulic_resistance(seg: VeinSegment, fluid: FluidSpec) -> float:
    """Poiseuille resistance of a rectangular duct, Pa s / m^3."""
    return duct_resistance(seg.length * MM, seg.width * MM, seg.height * MM, fluid.viscosity)


def duct_resistance(length, width, height, viscosity):
    """R = 12 mu L / (w h^3 (1 - 0.63 h/w)) with h the smaller side (SI units)."""
    if width <= 0 or height <= 0 or length < 0:
        raise GeometryError("duct dimensions must be positive")
    h, w = min(width, height), max(width, height)
    return 12.0 * viscosity * length / (w * h**3 * (1.0 - 0.63 * h / w))


@dataclass
class FlowSolution:
    """Result of one quasi-static solve. Flows in m^3/s, pressures in Pa.

    ``segment_flows`` is signed a->b for full veins and the total inflow for
    partially filled ones; ``column_flows`` is keyed by (segment id, wetted
    end node) and holds the flow feeding each advancing front.
    """

    t: float
    pump_flow: float
    pressures: dict[int, float]
    segment_flows: dict[int, float]
    column_flows: dict[tuple[int, int], float] = field(default_factory=dict)
    zone_flows: dict[int, float] = field(default_factory=dict)
    vent_flows: dict[int, float] = field(default_factory=dict)


def _capillary(seg, fluid):
    return 2.0 * fluid.surface_tension * math.cos(math.radians(fluid.contact_angle)) / seg.hydraulic_radius()


def solve_pressures(net: VascularNetwork, pump: PumpSchedule, t: float, fluid: FluidSpec) -> FlowSolution:
    """Kirchhoff solve over the wetted part of the network.

    Sinks are the advancing fronts (vein columns and unsaturated zones). Once
    nothing is left to fill, wetted terminal nodes vent at ambient pressure.
    A sink that would draw negative flow (capillary suction stronger than
    supply) is closed and the system re-solved, so fill never recedes.
    """
    net.check_connected()
    q_pump = pump.rate(t)
    wet = sorted(net.wetted)
    index = {nid: i for i, nid in enumerate(wet)}

    conductors = []  # (i, j, g, seg_id) between wetted nodes
    sinks = []  # (key, i, g, p_fixed)
    for seg in net.segments:
        a, b = seg.endpoints
        r = hydraulic_resistance(seg, fluid)
        if seg.is_full:
            if a not in index or b not in index:
                raise SimulationError("vasc_net", t, f"full segment {seg.id} has a dry endpoint")
            if a != b:
                conductors.append((index[a], index[b], 1.0 / r, seg.id))
            continue
        p_front = -_capillary(seg, fluid)
        for end, col in ((a, seg.fill_from_a), (b, seg.fill_from_b)):
            if end in index:
                sinks.append((("seg", seg.id, end), index[end], 1.0 / (r * max(col, MIN_COLUMN)), p_front))
    for zone in net.zones:
        if zone.saturation < 1.0 and zone.attached_node in index:
            sinks.append(
                (("zone", zone.id), index[zone.attached_node], 1.0 / zone.resistance(fluid), -zone.capillary_pressure(fluid))
            )
    vents = []
    if not sinks:
        vents = [nid for nid in wet if net.nodes[nid].kind == "terminal"]
    fixed = {index[nid] for nid in vents}

    n = len(wet)
    active = list(sinks)
    while True:
        if not active and not fixed:
            if q_pump > 0:
                raise DegenerateNetworkError("pump is running but the wetted network has no outlet")
            p = np.zeros(n)
            break
        p = _nodal_solve(n, conductors, active, fixed, index[net.inlet], q_pump)
        closed = [s for s in active if s[2] * (p[s[1]] - s[3]) < -1e-15 * max(q_pump, 1e-30)]
        if not closed:
            break
        active = [s for s in active if s not in closed]

    sol = FlowSolution(t=t, pump_flow=q_pump, pressures={nid: float(p[index[nid]]) for nid in wet}, segment_flows={})
    for i, j, g, sid in conductors:
        sol.segment_flows[sid] = float(g * (p[i] - p[j]))
    active_keys = {s[0] for s in active}
    for key, i, g, pf in sinks:
        q = float(g * (p[i] - pf)) if key in active_keys else 0.0
        if q <= 1e-12 * g * max(abs(p[i]), abs(pf)):
            q = 0.0  # round-off, not flow
        if key[0] == "seg":
            sol.column_flows[(key[1], key[2])] = q
            sol.segment_flows[key[1]] = sol.segment_flows.get(key[1], 0.0) + q
        else:
            sol.zone_flows[key[1]] = q
    for nid in vents:
        i = index[nid]
        q = q_pump if nid == net.inlet else 0.0
        for a, b, _, sid in conductors:
            if b == i:
                q += sol.segment_flows[sid]
            elif a == i:
                q -= sol.segment_flows[sid]
        sol.vent_flows[nid] = q
    for seg in net.segments:
        sol.segment_flows.setdefault(seg.id, 0.0)
    return sol


def _nodal_solve(n, conductors, sinks, fixed, inlet_index, q_pump):
    """Solve G p = b for the free nodes; ``fixed`` node indices sit at 0 Pa."""
    free = [i for i in range(n) if i not in fixed]
    pos = {i: k for k, i in enumerate(free)}
    m = len(free)
    p = np.zeros(n)
    if m == 0:
        return p
    rows, cols, vals = [], [], []
    rhs = np.zeros(m)
    for i, j, g, _ in conductors:
        for u, v in ((i, j), (j, i)):
            if u in pos:
                rows.append(pos[u])
                cols.append(pos[u])
                vals.append(g)
                if v in pos:
                    rows.append(pos[u])
                    cols.append(pos[v])
                    vals.append(-g)
    for _, i, g, pf in sinks:
        if i in pos:
            rows.append(pos[i])
            cols.append(pos[i])
            vals.append(g)
            rhs[pos[i]] += g * pf
    if inlet_index in pos:
        rhs[pos[inlet_index]] += q_pump
    mat = coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsc()
    if m == 1:
        d = mat[0, 0]
        sol = np.array([rhs[0] / d]) if d != 0 else np.array([np.nan])
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MatrixRankWarning)
            sol = np.atleast_1d(spsolve(mat, rhs))
    if not np.all(np.isfinite(sol)):
        raise DegenerateNetworkError("singular nodal system")
    p[free] = sol
    return p


def flux_residuals(net: VascularNetwork, sol: FlowSolution) -> dict[int, float]:
    """Kirchhoff imbalance |injected - leaving| at each wetted node, m^3/s."""
    balance = {nid: 0.0 for nid in sol.pressures}
    balance[net.inlet] += sol.pump_flow
    segs = {s.id: s for s in net.segments}
    for sid, seg in segs.items():
        if seg.is_full and seg.endpoints[0] in balance:
            a, b = seg.endpoints
            balance[a] -= sol.segment_flows[sid]
            balance[b] += sol.segment_flows[sid]
    for (_, end), q in sol.column_flows.items():
        balance[end] -= q
    zones = {z.id: z for z in net.zones}
    for zid, q in sol.zone_flows.items():
        balance[zones[zid].attached_node] -= q
    for nid, q in sol.vent_flows.items():
        balance[nid] -= q
    return {nid: abs(v) for nid, v in balance.items()}


def advance_front(net: VascularNetwork, flows: FlowSolution, fluid: FluidSpec, dt: float) -> VascularNetwork:
    """Apply one explicit Euler step of the given flows to the fill state (in place).

    Completed veins wet their far node. Liquid that would overfill a front is
    booked to ``overflow_volume`` so the volume ledger always closes.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    segs = {s.id: s for s in net.segments}
    for (sid, end), q in flows.column_flows.items():
        if q <= 0:
            continue
        seg = segs[sid]
        vol = q * dt
        room = (1.0 - seg.filled_fraction) * seg.lumen_volume
        add = min(vol, room)
        frac = add / seg.lumen_volume
        net.overflow_volume += vol - add
        seg.filled_fraction = seg.filled_fraction + frac
        if end == seg.endpoints[1] and end != seg.endpoints[0]:
            seg.fill_from_b += frac
        if seg.filled_fraction >= 1.0 - _FULL_TOL:
            seg.filled_fraction = 1.0
            seg.fill_from_b = min(seg.fill_from_b, 1.0)
            net.wetted.update(seg.endpoints)
    zones = {z.id: z for z in net.zones}
    for zid, q in flows.zone_flows.items():
        if q <= 0:
            continue
        zone = zones[zid]
        vol = q * dt
        room = (1.0 - zone.saturation) * zone.pore_volume
        add = min(vol, room)
        net.overflow_volume += vol - add
        zone.saturation = 1.0 if zone.pore_volume == 0 else zone.saturation + add / zone.pore_volume
        if zone.saturation >= 1.0 - _FULL_TOL:
            zone.saturation = 1.0
    for q in flows.vent_flows.values():
        net.overflow_volume += max(q, 0.0) * dt
    return net


def stable_substep(net: VascularNetwork, flows: FlowSolution) -> float:
    """Largest sub-step that keeps every front within MAX_ADVANCE and lands exactly on completions."""
    best = math.inf
    segs = {s.id: s for s in net.segments}
    for (sid, _), q in flows.column_flows.items():
        if q > 0:
            seg = segs[sid]
            per_frac = seg.lumen_volume / q
            best = min(best, MAX_ADVANCE * per_frac, (1.0 - seg.filled_fraction) * per_frac)
    zones = {z.id: z for z in net.zones}
    for zid, q in flows.zone_flows.items():
        if q > 0:
            zone = zones[zid]
            per_frac = zone.pore_volume / q
            best = min(best, MAX_ADVANCE * per_frac, (1.0 - zone.saturation) * per_frac)
    return best


def total_filled_volume(net: VascularNetwork) -> float:
    """Liquid held in veins and pores, m^3."""
    return sum(s.filled_fraction * s.lumen_volume for s in net.segments) + sum(
        z.saturation * z.pore_volume for z in net.zones
    )


def simulate_fill(net, pump, fluid, t0, t1, max_substeps=1_000_000):
    """Advance the fill state from t0 to t1 with adaptive explicit sub-steps."""
    t = t0
    cuts = [b for b in pump.breakpoints() if t0 < b < t1]
    steps = 0
    while t1 - t > 1e-12 * max(1.0, abs(t1)):
        horizon = min([t1] + [b for b in cuts if b > t])
        flows = solve_pressures(net, pump, t, fluid)
        if flows.pump_flow == 0.0 and not any(q > 0 for q in flows.column_flows.values()) and not any(
            q > 0 for q in flows.zone_flows.values()
        ):
            t = horizon
            continue
        dt = min(horizon - t, stable_substep(net, flows))
        if dt <= 0:
            raise SimulationError("vasc_net", t, "non-positive sub-step")
        advance_front(net, flows, fluid, dt)
        t += dt
        steps += 1
        if steps > max_substeps:
            raise SimulationError("vasc_net", t, "sub-step budget exhausted")
    return net


# Demo moth body: thorax inlet, abdomen and four wings. Footprints in mm^2 sum
# to the 175 cm^2 vascular shadow area.
_DEMO_NODES = [
    (0, (0.0, 0.0), "inlet"),
    (1, (0.0, -10.0), "junction"),
    (2, (0.0, -50.0), "terminal"),
    (3, (15.0, -5.0), "junction"),
    (4, (45.0, 10.0), "junction"),
    (5, (80.0, 20.0), "terminal"),
    (6, (-15.0, -5.0), "junction"),
    (7, (-45.0, 10.0), "junction"),
    (8, (-80.0, 20.0), "terminal"),
    (9, (15.0, -20.0), "junction"),
    (10, (40.0, -40.0), "junction"),
    (11, (65.0, -60.0), "terminal"),
    (12, (-15.0, -20.0), "junction"),
    (13, (-40.0, -40.0), "junction"),
    (14, (-65.0, -60.0), "terminal"),
]
_DEMO_SEGMENTS = [(0, 1), (1, 2), (1, 3), (3, 4), (4, 5), (1, 6), (6, 7), (7, 8), (1, 9), (9, 10), (10, 11), (1, 12), (12, 13), (13, 14)]
_DEMO_ZONES = [
    # (attached node, footprint mm^2)
    (1, 1200.0),
    (2, 1300.0),
    (4, 2200.0),
    (5, 2000.0),
    (7, 2200.0),
    (8, 2000.0),
    (10, 1800.0),
    (11, 1500.0),
    (13, 1800.0),
    (14, 1500.0),
]
DEMO_VOLUME = 3.0 * ML


def build_demo_network(total_volume: float = DEMO_VOLUME) -> VascularNetwork:
    """Moth-shaped reference body with one inlet at the thorax.

    Zone porosity is the effective void fraction that brings lumen plus pore
    volume to ``total_volume``.
    """
    nodes = {nid: Node(nid, pos, kind) for nid, pos, kind in _DEMO_NODES}
    segments = []
    for sid, (a, b) in enumerate(_DEMO_SEGMENTS):
        (xa, ya), (xb, yb) = nodes[a].position, nodes[b].position
        segments.append(VeinSegment(sid, (a, b), length=math.hypot(xb - xa, yb - ya), width=1.0, height=1.4))
    lumen = sum(s.lumen_volume for s in segments)
    bulk = sum(area for _, area in _DEMO_ZONES) * 3 * 0.1 * MM3
    porosity = (total_volume - lumen) / bulk
    if not 0.0 < porosity <= 1.0:
        raise GeometryError("requested volume cannot be met by the demo geometry")
    zones = [
        PorousZone(zid, node, area, porosity=porosity, center=nodes[node].position)
        for zid, (node, area) in enumerate(_DEMO_ZONES)
    ]
    return VascularNetwork(nodes, segments, zones)
