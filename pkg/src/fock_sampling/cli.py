"""Command line entry point: ``fock-sampling {sweep,exact-ideal,enumerate,fit,peak}``.

Exit codes: 0 success, 2 configuration error, 3 some sweep cells failed,
4 enumeration guard exceeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys

from .analysis import fit_linear_shift_3d, fit_power_law_2d
from .experiment import ConfigError, load_config, read_sweep_csv, run_exact_ideal, run_sweep, shift_points, sweep_peaks
from .modes import build_mode_set
from .oracle import DEFAULT_MAX_STATES, EnumerationGuardError, enumerate_exact

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3
EXIT_GUARD = 4


def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    raise TypeError(type(o))


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.output:
        cfg = dataclasses.replace(cfg, output_dir=args.output)
    outcome = run_sweep(cfg)
    print(f"ran {outcome.ran} cells, skipped {outcome.skipped}, failed {len(outcome.failures)}; "
          f"wrote {len(outcome.rows)} rows to {cfg.output_dir}/sweep.csv")
    for f in outcome.failures:
        print(f"FAILED {f['cell']}: {f['error']}", file=sys.stderr)
    return EXIT_PARTIAL if outcome.failures else EXIT_OK


def cmd_exact_ideal(args) -> int:
    cfg = load_config(args.config)
    out = args.output or cfg.output_dir
    rows = run_exact_ideal(cfg, out, tail_tol=args.tail_tol)
    print(f"wrote {len(rows)} rows to {out}/exact_ideal.csv")
    return EXIT_OK


def cmd_enumerate(args) -> int:
    if args.config:
        from .experiment import tomllib

        with open(args.config, "rb") as fh:
            raw = tomllib.load(fh).get("enumerate", {})
        for key in ("atoms", "dim", "e_cut", "coupling", "beta", "max_states"):
            if getattr(args, key) is None and key in raw:
                setattr(args, key, raw[key])
    missing = [k for k in ("atoms", "e_cut", "beta") if getattr(args, k) is None]
    if missing:
        raise ConfigError(f"enumerate needs {', '.join('--' + k.replace('_', '-') for k in missing)}")
    modes = build_mode_set(args.dim or 1, None, float(args.e_cut))
    try:
        ex = enumerate_exact(int(args.atoms), modes, float(args.coupling or 0.0), float(args.beta),
                             max_states=int(args.max_states or DEFAULT_MAX_STATES))
    except EnumerationGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    payload = {
        "N": ex.n_atoms, "dim": modes.dim, "n_modes": modes.n_modes, "g": ex.coupling, "beta": ex.beta,
        "n_states": ex.n_states,
        "canonical": {"mean_n0": ex.mean_n0, "std_n0": ex.std_n0, "var_n0": ex.std_n0**2},
        "modal_shell": ex.modal_shell.__dict__,
        "shells": [s.__dict__ for s in ex.shells],
    }
    text = json.dumps(payload, indent=2)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _load_rows(paths, allow_mixed):
    rows = []
    for p in paths:
        rows.extend(read_sweep_csv(p))
    hashes = {r.get("config_hash") for r in rows}
    if len(hashes) > 1 and not allow_mixed:
        raise ConfigError(f"inputs come from {len(hashes)} different configs; pass --allow-mixed to combine them")
    return rows


def cmd_peak(args) -> int:
    rows = _load_rows(args.inputs, args.allow_mixed)
    peaks = sweep_peaks(rows, args.ideal_reference, args.cutoff_factor)
    print(json.dumps({"peaks": peaks}, indent=2, default=_json_default))
    return EXIT_OK


def cmd_fit(args) -> int:
    rows = _load_rows(args.inputs, args.allow_mixed)
    peaks = sweep_peaks(rows, args.ideal_reference, args.cutoff_factor)
    pts = shift_points(peaks, args.kind, args.ensemble)
    try:
        fit = fit_linear_shift_3d(pts) if args.kind == "linear-3d" else fit_power_law_2d(pts)
    except ValueError as exc:
        raise ConfigError(f"insufficient design for {args.kind}: {exc}") from exc
    text = fit.to_json(indent=2)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fock-sampling", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="run sampler cells over (N, g, T, replica)")
    s.add_argument("config")
    s.add_argument("-o", "--output", help="output directory (overrides config and FSS_OUTPUT_DIR)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("exact-ideal", help="exact ideal-gas curves from the canonical recurrence")
    s.add_argument("config")
    s.add_argument("-o", "--output")
    s.add_argument("--tail-tol", type=float, default=None, help="warn when the cutoff tail exceeds this")
    s.set_defaults(func=cmd_exact_ideal)

    s = sub.add_parser("enumerate", help="exact statistics of a tiny 1D system by brute force")
    s.add_argument("--config", help="TOML file with an [enumerate] table")
    s.add_argument("--atoms", type=int)
    s.add_argument("--dim", type=int)
    s.add_argument("--e-cut", dest="e_cut", type=float)
    s.add_argument("--coupling", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--max-states", dest="max_states", type=int)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_enumerate)

    for name, func, helptext in (("peak", cmd_peak, "peak temperatures from sweep CSVs"),
                                 ("fit", cmd_fit, "fit interaction shifts from sweep CSVs")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("inputs", nargs="+", help="sweep.csv files")
        s.add_argument("--ideal-reference", choices=("exact", "sampled"), default="exact")
        s.add_argument("--cutoff-factor", type=float, default=16.0)
        s.add_argument("--allow-mixed", action="store_true")
        if name == "fit":
            s.add_argument("--kind", choices=("linear-3d", "power-2d"), required=True)
            s.add_argument("--ensemble", choices=("canonical", "microcanonical"), default="canonical")
            s.add_argument("-o", "--output")
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
