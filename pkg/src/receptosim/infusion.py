"""Precursor infusion from wetted vasculature into the printed PETG matrix.

Depth follows a capped square-root law, composed on depth squared so that
sub-stepping is exact.  Stored precursor survives drying.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

REFERENCE_DEPTH_UM = 10.0
REFERENCE_TIME_S = 20.0
MAX_DEPTH_UM = 10.0  # 20 % of a 50 um print-line radius


@dataclass
class MatrixCell:
    id: int
    zone: int
    position: tuple[float, float]
    infusion_depth: float = 0.0  # um
    precursor_present: bool = False
    conversion: float = 0.0
    polaron_density: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.infusion_depth <= MAX_DEPTH_UM:
            raise ValueError(f"cell {self.id}: infusion depth outside [0, {MAX_DEPTH_UM}] um")
        if not 0.0 <= self.conversion <= 1.0:
            raise ValueError(f"cell {self.id}: conversion outside [0, 1]")
        if self.polaron_density < 0:
            raise ValueError(f"cell {self.id}: negative polaron density")


def infusion_coefficient() -> float:
    """Effective diffusivity D in m^2/s such that sqrt(D * 20 s) = 10 um."""
    return (REFERENCE_DEPTH_UM * 1e-6) ** 2 / REFERENCE_TIME_S


def infusion_depth(t: float) -> float:
    """Depth in um reached from a dry start after ``t`` seconds of wetting."""
    return min(MAX_DEPTH_UM, math.sqrt(infusion_coefficient() * t) * 1e6)


def step_depth(depth_um, dt):
    """Vectorisable depth update; accepts floats or numpy arrays."""
    d2 = infusion_coefficient() * 1e12 * dt
    return np.minimum(MAX_DEPTH_UM, np.sqrt(np.square(depth_um) + d2))


def advance_infusion(cell: MatrixCell, wetted: bool, dt: float) -> MatrixCell:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not wetted:
        return cell
    return replace(cell, infusion_depth=float(step_depth(cell.infusion_depth, dt)), precursor_present=True)


def make_cells(net, cells_per_side: int = 4, start_id: int = 0) -> list[MatrixCell]:
    """Lay a square grid of cells over every porous zone and record the ids on the zone."""
    cells = []
    next_id = start_id
    for zone in net.zones:
        cx, cy = zone.center if zone.center is not None else net.nodes[zone.attached_node].position
        side = math.sqrt(zone.footprint_area)
        pitch = side / cells_per_side
        offsets = [(k + 0.5) * pitch - side / 2 for k in range(cells_per_side)]
        zone.cell_grid = []
        for oy in offsets:
            for ox in offsets:
                cells.append(MatrixCell(next_id, zone.id, (cx + ox, cy + oy)))
                zone.cell_grid.append(next_id)
                next_id += 1
    return cells


def wetted_cells(net, cells_by_id) -> dict[int, bool]:
    """Cells wet in order of distance from the zone's feed node as saturation rises."""
    wet = {}
    for zone in net.zones:
        nx, ny = net.nodes[zone.attached_node].position
        ranked = sorted(
            zone.cell_grid,
            key=lambda cid: (math.hypot(cells_by_id[cid].position[0] - nx, cells_by_id[cid].position[1] - ny), cid),
        )
        n = len(ranked)
        for rank, cid in enumerate(ranked):
            wet[cid] = zone.saturation > 0 and zone.saturation >= (rank + 0.5) / n
        if zone.saturation >= 1.0:
            for cid in ranked:
                wet[cid] = True
    return wet
