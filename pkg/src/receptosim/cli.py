"""Command line entry point: ``receptosim run|calibrate|validate|plot``.

Exit codes: 0 success, 1 criterion or calibration failure, 2 configuration
error, 3 runtime error.  ``RECEPTOSIM_OUT`` overrides the default output
directory.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .errors import CalibrationError, ConfigError, ReceptosimError
from .scenario import tomllib

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def default_out(sub: str) -> Path:
    return Path(os.environ.get("RECEPTOSIM_OUT", "receptosim_out")) / sub


def _json_default(obj):
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    return str(obj)


def cmd_run(args) -> int:
    from .scenario import load_scenario, run, write_outputs

    scen = load_scenario(args.scenario)
    out_dir = Path(args.out) if args.out else default_out(scen.name)
    out = run(scen)
    write_outputs(out, out_dir)
    s = out.summary
    print(f"wrote {out_dir}  fill={s['fill_complete_s']} onset={s['synthesis_onset_s']} "
          f"reactions={s['reaction_count']}")
    return EXIT_OK


def _load_targets(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError("targets", f"no such file: {path}")
    text = path.read_text()
    try:
        doc = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError("targets", f"cannot parse {path.name}: {exc}") from exc
    doc = doc.get("targets", doc)
    for key, value in doc.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"targets.{key}", "must be a number")
    return doc


def cmd_calibrate(args) -> int:
    from .scenario import calibrate

    targets = _load_targets(args.targets) if args.targets else {}
    out_dir = Path(args.out) if args.out else default_out("calibration")
    report = calibrate(targets, out_dir)
    print(f"k_p*I_ref={report['k_p_times_I_ref']:.6g} 1/s  blur_sigma={report['blur_sigma_mm']:.6g} mm  "
          f"residuals={report['residuals']}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .acceptance import validate

    overrides = {}
    for item in args.set or []:
        key, _, value = item.partition("=")
        for kind in (int, float, str):
            try:
                overrides[key] = kind(value)
                break
            except ValueError:
                continue
    results = validate(args.filter or "", overrides or None)
    if not results:
        print(f"no criterion matches prefix {args.filter!r}", file=sys.stderr)
        return EXIT_CONFIG
    for c in results:
        print(c.line())
    failed = [c.id for c in results if not c.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(
            json.dumps([c.as_dict() for c in results], indent=2, default=_json_default) + "\n")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_plot(args) -> int:
    from .plots import plot

    paths = plot(args.run_dir, args.which, args.out)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .plots import SERIES

    ap = argparse.ArgumentParser(prog="receptosim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario file (or bundled name, e.g. fig4)")
    p.add_argument("scenario")
    p.add_argument("--out", help="output directory (default $RECEPTOSIM_OUT/<name>)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="fit kinetics and mask blur to targets")
    p.add_argument("--targets", help="TOML or JSON with slope, resolution, T_inf")
    p.add_argument("--out", help="directory for calibration.json")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("validate", help="run the acceptance criteria")
    p.add_argument("--filter", help="criterion id prefix, e.g. AC07")
    p.add_argument("--report", help="write a JSON report here")
    p.add_argument("--set", action="append", metavar="FIELD=VALUE",
                   help="override a controller setting (fault injection), e.g. rate_threshold=0")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plot", help="render figures from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--which", choices=SERIES, action="append", required=True)
    p.add_argument("--out", help="image directory (default: the run directory)")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"calibration failed: {exc} residuals={exc.residuals}", file=sys.stderr)
        return EXIT_FAIL
    except (ReceptosimError, OSError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
