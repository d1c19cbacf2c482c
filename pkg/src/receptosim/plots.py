"""PNG figures rebuilt from the CSVs and event logs of a run directory."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SERIES = ("transmittance", "impedance", "events", "fill")


def _read_csv(path: Path):
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _by_receptor(rows, key):
    out = {}
    for r in rows:
        out.setdefault(r["receptor"], ([], []))
        out[r["receptor"]][0].append(float(r["t"]))
        out[r["receptor"]][1].append(float(r[key]))
    return out


def _read_events(run_dir: Path):
    events = {}
    for path in sorted(run_dir.glob("events_*.log")):
        rid = path.stem.split("_", 1)[1]
        rows = []
        for line in path.read_text().splitlines():
            fields = dict(item.split("=", 1) for item in line.split())
            rows.append(fields)
        events[rid] = rows
    return events


def _plot_transmittance(ax, run_dir):
    for rid, (t, y) in _by_receptor(_read_csv(run_dir / "transmittance.csv"), "T").items():
        ax.plot(t, y, label=f"receptor {rid}")
    ax.set_ylabel("T(580 nm)")


def _plot_impedance(ax, run_dir):
    for rid, (t, y) in _by_receptor(_read_csv(run_dir / "impedance.csv"), "Z_ohm").items():
        ax.plot(t, [v / 1e3 for v in y], label=f"receptor {rid}")
    irr = _by_receptor(_read_csv(run_dir / "irradiance.csv"), "I_W_m2")
    for t, y in irr.values():
        # Shade UV-on ticks so dips can be compared with exposure.
        for k in range(1, len(t)):
            if y[k] > 0:
                ax.axvspan(t[k - 1], t[k], color="violet", alpha=0.08, lw=0)
        break
    ax.set_ylabel("Z estimate (kOhm)")


def _plot_events(ax, run_dir):
    colors = {"red": "tab:red", "yellow": "gold", "both": "0.6"}
    events = sorted(_read_events(run_dir).items())
    for row, (rid, rows) in enumerate(events):
        for ev in rows:
            t = float(ev["t"])
            if ev["kind"] == "led":
                ax.plot(t, row, "|", color=colors.get(ev["color"], "k"), ms=10)
            elif ev["flap"] == "1":
                ax.plot(t, row + 0.3, "v", color="tab:blue")
    ax.set_yticks(range(len(events)), [f"receptor {rid}" for rid, _ in events])


def _plot_fill(ax, run_dir):
    rows = _read_csv(run_dir / "fill.csv")
    t = [float(r["t"]) for r in rows]
    ax.plot(t, [float(r["filled_volume_ml"]) for r in rows], label="filled")
    ax.plot(t, [float(r["injected_ml"]) for r in rows], "--", label="injected")
    ax.set_ylabel("volume (mL)")


_PLOTTERS = {
    "transmittance": _plot_transmittance,
    "impedance": _plot_impedance,
    "events": _plot_events,
    "fill": _plot_fill,
}


def plot(run_dir, which, out_dir=None) -> list[Path]:
    """Write ``plot_<which>.png`` for each requested series; returns the paths."""
    names = [which] if isinstance(which, str) else list(which)
    unknown = [n for n in names if n not in _PLOTTERS]
    if unknown:
        raise ValueError(f"unknown series {unknown[0]!r}; choose from {', '.join(SERIES)}")
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory {run_dir} does not exist")
    out_dir = Path(out_dir) if out_dir else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in names:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        _PLOTTERS[name](ax, run_dir)
        ax.set_xlabel("t (s)")
        ax.set_title(name)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"plot_{name}.png"
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths
