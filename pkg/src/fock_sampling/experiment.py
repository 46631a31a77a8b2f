"""Experiment configuration, sweep orchestration and file outputs.

A sweep is a set of cells ``(N, g, T, replica)``, each one independent chain.
Finished cells are stored under ``<output>/cells/`` and listed in
``<output>/manifest.json``; a rerun skips them.  Per-cell seeds are

    int.from_bytes(sha256(f"fss-cell:{seed}:{N}:{g:.17g}:{T:.17g}:{replica}").digest()[:8], "little")

which depends only on the master seed and the cell coordinates.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analysis import (
    ConcaveFitError,
    EdgeMaximumError,
    PeakEstimate,
    SweepResult,
    default_temperature_grid,
    find_peak,
    fit_linear_shift_3d,
    fit_power_law_2d,
    gas_parameter_to_coupling,
    matched_ideal_peak,
    refine_grid,
    relative_shift,
)
from .ensembles import (
    ESTIMATE_COLUMNS,
    InsufficientSamplesError,
    canonical_stats,
    merge_series,
    microcanonical_stats,
)
from .modes import build_mode_set
from .oracle import ideal_fluctuation_curve, ideal_peak
from .sampler import ChainConfig, SampleSeries, default_burn_in, run_chain

log = logging.getLogger(__name__)

__all__ = [
    "Cell",
    "ConfigError",
    "ExperimentConfig",
    "SWEEP_COLUMNS",
    "cell_seed",
    "load_config",
    "read_sweep_csv",
    "run_exact_ideal",
    "run_sweep",
    "shift_points",
    "sweep_peaks",
]

SWEEP_COLUMNS = ESTIMATE_COLUMNS + ("gas_param", "replicas", "t_norm", "std_norm", "config_hash")
EXACT_COLUMNS = ("N", "T", "mean_n0", "std_n0", "method_tag")
ENSEMBLES = ("canonical", "microcanonical")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs.  All quantities are dimensionless.

    Exactly one of ``couplings`` and ``gas_params`` is given.  Temperatures
    are either explicit (``temperatures``) or placed automatically around the
    ideal-gas peak of each atom number (``auto_grid``).
    """

    atom_counts: tuple
    dim: int = 3
    aspect: tuple | None = None
    couplings: tuple | None = None
    gas_params: tuple | None = None
    temperatures: tuple | None = None
    auto_grid: bool = False
    grid_points: int = 15
    grid_span: tuple = (0.6, 1.4)
    refine_passes: int = 0
    refine_points: int = 6
    ensembles: tuple = ENSEMBLES
    steps: int = 10_000_000
    burn_in: int | None = None
    thin: int | None = None
    max_records: int = 1_000_000
    replicas: int = 1
    seed: int = 0
    cutoff_factor: float = 16.0
    cutoff_check: bool = False
    ideal_reference: str = "exact"
    fit: str | None = None
    output_dir: str = "fss-output"
    workers: int = 1
    plot: bool = False

    def __post_init__(self):
        def bad(msg):
            raise ConfigError(msg)

        if self.dim not in (1, 2, 3):
            bad(f"dim must be 1, 2 or 3, got {self.dim}")
        if not self.atom_counts or any(int(n) != n or n < 1 for n in self.atom_counts):
            bad("atom_counts must be a non-empty list of positive integers")
        if (self.couplings is None) == (self.gas_params is None):
            bad("give exactly one of couplings and gas_params")
        if self.gas_params is not None and self.dim != 3:
            bad("gas parameters are defined for 3D boxes only; give couplings instead")
        values = self.couplings if self.couplings is not None else self.gas_params
        if not values or any(v < 0 for v in values):
            bad("couplings/gas_params must be a non-empty list of non-negative numbers")
        if self.aspect is not None and (len(self.aspect) != self.dim or min(self.aspect) < 1):
            bad("aspect needs one ratio >= 1 per dimension")
        if self.temperatures is None and not self.auto_grid:
            bad("give temperatures or set auto_grid")
        if self.temperatures is not None:
            if self.auto_grid:
                bad("temperatures and auto_grid are mutually exclusive")
            if any(t <= 0 for t in self.temperatures):
                bad("temperatures must be positive")
        if self.auto_grid and self.grid_points < 7:
            bad("auto grids need at least 7 points to locate a peak")
        unknown = set(self.ensembles) - set(ENSEMBLES)
        if unknown or not self.ensembles:
            bad(f"ensembles must be drawn from {ENSEMBLES}, got {self.ensembles}")
        if self.steps < 1 or self.replicas < 1 or self.workers < 1 or self.max_records < 100:
            bad("steps, replicas and workers must be positive; max_records at least 100")
        if self.burn_in is not None and self.burn_in < 0:
            bad("burn_in must be non-negative")
        if self.refine_passes < 0:
            bad("refine_passes must be non-negative")
        if self.thin is not None and self.thin < 1:
            bad("thin must be at least 1")
        if self.cutoff_factor <= 0:
            bad("cutoff_factor must be positive")
        if self.ideal_reference not in ("exact", "sampled"):
            bad("ideal_reference must be 'exact' or 'sampled'")
        if self.fit not in (None, "linear-3d", "power-2d"):
            bad("fit must be 'linear-3d' or 'power-2d'")
        if self.fit == "linear-3d" and self.gas_params is None:
            bad("the linear-3d fit needs gas_params")

    @classmethod
    def from_dict(cls, raw: dict, env=None) -> "ExperimentConfig":
        env = os.environ if env is None else env
        raw = dict(raw)
        temps = raw.pop("temperatures", None)
        if isinstance(temps, dict):
            if temps.get("auto"):
                raw["auto_grid"] = True
                raw.setdefault("grid_points", temps.get("points", 15))
                raw.setdefault("grid_span", temps.get("span", (0.6, 1.4)))
                raw.setdefault("refine_passes", temps.get("refine_passes", 0))
                raw.setdefault("refine_points", temps.get("refine_points", 6))
            elif "values" in temps:
                raw["temperatures"] = temps["values"]
            elif {"start", "stop", "num"} <= temps.keys():
                raw["temperatures"] = np.linspace(temps["start"], temps["stop"], int(temps["num"])).tolist()
            else:
                raise ConfigError("temperatures needs 'values', 'start/stop/num' or 'auto = true'")
        elif temps is not None:
            raw["temperatures"] = temps
        if "FSS_OUTPUT_DIR" in env:
            raw["output_dir"] = env["FSS_OUTPUT_DIR"]
        if "FSS_WORKERS" in env:
            raw["workers"] = int(env["FSS_WORKERS"])
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("atom_counts", "aspect", "couplings", "gas_params", "temperatures", "grid_span", "ensembles"):
            if raw.get(key) is not None:
                raw[key] = tuple(raw[key])
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def physics_dict(self) -> dict:
        """Fields that influence results; output location and worker count excluded."""
        d = dataclasses.asdict(self)
        for key in ("output_dir", "workers", "plot"):
            d.pop(key)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.physics_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def coupling_points(self, n_atoms: int) -> list[tuple[float, float | None]]:
        """``(g, gas_param)`` pairs for one atom number."""
        if self.couplings is not None:
            return [(float(g), None) for g in self.couplings]
        return [(gas_parameter_to_coupling(x, n_atoms, self.aspect), float(x)) for x in self.gas_params]


def load_config(path, env=None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw, env=env)


@dataclass(frozen=True)
class Cell:
    n_atoms: int
    coupling: float
    gas_param: float | None
    temperature: float
    replica: int

    @property
    def key(self) -> str:
        return f"N{self.n_atoms}_g{self.coupling:.17g}_T{self.temperature:.17g}_r{self.replica}"

    @property
    def group(self) -> tuple:
        return (self.n_atoms, self.coupling)


def cell_seed(master: int, n_atoms: int, coupling: float, temperature: float, replica: int) -> int:
    text = f"fss-cell:{master}:{n_atoms}:{coupling:.17g}:{temperature:.17g}:{replica}"
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def chain_config(cfg: ExperimentConfig, cell: Cell, cutoff_scale: float = 1.0) -> ChainConfig:
    n = cell.n_atoms
    burn = default_burn_in(n, cfg.dim) if cfg.burn_in is None else cfg.burn_in
    steps = max(cfg.steps, burn + 1)
    thin = n if cfg.thin is None else cfg.thin
    thin = max(thin, math.ceil((steps - burn) / cfg.max_records))
    seed = cell_seed(cfg.seed, n, cell.coupling, cell.temperature, cell.replica)
    if cutoff_scale != 1.0:
        seed = cell_seed(cfg.seed, n, cell.coupling, cell.temperature, -1)
    return ChainConfig(n, 1.0 / cell.temperature, cell.coupling, steps=steps, burn_in=burn, thin=thin, seed=seed)


def _mode_set(cfg: ExperimentConfig, temperature: float, cutoff_scale: float = 1.0):
    return build_mode_set(cfg.dim, cfg.aspect, cfg.cutoff_factor * cutoff_scale * temperature)


def _run_cell(cfg: ExperimentConfig, cell: Cell, path: str, cutoff_scale: float = 1.0) -> dict:
    chain = chain_config(cfg, cell, cutoff_scale)
    modes = _mode_set(cfg, cell.temperature, cutoff_scale)
    series = run_chain(chain, modes)
    tmp = path + ".tmp.npz"
    np.savez(tmp, n0=series.n0.astype(np.int32), energy=series.energy, steps=series.steps,
             acceptance=np.array([series.acceptance_rate]), seed=np.array([chain.seed], dtype=np.uint64))
    os.replace(tmp, path)
    return {"key": cell.key, "records": len(series), "acceptance": series.acceptance_rate}


def _load_cell(cfg: ExperimentConfig, cell: Cell, path: str) -> SampleSeries:
    data = np.load(path)
    chain = chain_config(cfg, cell)
    modes_key = (cfg.dim, tuple(float(a) for a in (cfg.aspect or (1.0,) * cfg.dim)),
                 float(cfg.cutoff_factor * cell.temperature))
    return SampleSeries(
        steps=data["steps"], n0=data["n0"].astype(np.int64), energy=data["energy"],
        config=chain, modes_key=modes_key, acceptance_rate=float(data["acceptance"][0]),
    )


class _Manifest:
    """Set of finished cell keys, rewritten atomically after each completion."""

    def __init__(self, path: str, config_hash: str):
        self.path = path
        self.config_hash = config_hash
        self.done: set[str] = set()
        if os.path.exists(path):
            with open(path) as fh:
                payload = json.load(fh)
            if payload.get("config_hash") != config_hash:
                raise ConfigError(
                    f"{path} belongs to config {payload.get('config_hash')}, not {config_hash}; "
                    "use a fresh output directory"
                )
            self.done = set(payload.get("cells", []))

    def add(self, key: str) -> None:
        self.done.add(key)
        tmp = self.path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump({"config_hash": self.config_hash, "cells": sorted(self.done)}, fh, indent=0)
        os.replace(tmp, self.path)


@dataclass
class SweepOutcome:
    rows: list
    peaks: list
    failures: list = field(default_factory=list)
    cutoff_checks: list = field(default_factory=list)
    skipped: int = 0
    ran: int = 0


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: str, columns, rows, config_hash: str) -> None:
    body = io.StringIO()
    writer = csv.writer(body, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write(f"# generated={stamp}\n")
        fh.write(body.getvalue())
    os.replace(tmp, path)


def read_sweep_csv(path) -> list[dict]:
    """Rows of a sweep or exact-curve CSV with numeric fields converted."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = []
    for raw in csv.DictReader(lines):
        row = {}
        for k, v in raw.items():
            if v == "" or v is None:
                row[k] = None
            elif k in ("ensemble", "config_hash", "method_tag"):
                row[k] = v
            elif k in ("N", "dim", "replicas"):
                row[k] = int(v)
            else:
                row[k] = float(v)
        rows.append(row)
    return rows


def _estimate_rows(cfg, n_atoms, coupling, gas_param, temperature, series, config_hash):
    rows = []
    for ens in cfg.ensembles:
        try:
            est = canonical_stats(series) if ens == "canonical" else microcanonical_stats(series)
            vals = (est.mean_n0, est.std_n0, est.se_mean, est.se_std, est.n_samples)
        except InsufficientSamplesError as exc:
            log.warning("N=%d g=%g T=%g %s: %s", n_atoms, coupling, temperature, ens, exc)
            vals = (math.nan,) * 5
        rows.append({
            "N": n_atoms, "dim": cfg.dim, "g": coupling, "T": temperature, "ensemble": ens,
            "mean_n0": vals[0], "std_n0": vals[1], "se_mean": vals[2], "se_std": vals[3],
            "n_samples": vals[4], "gas_param": gas_param, "replicas": series.n_replicas,
            "config_hash": config_hash,
        })
    return rows


def _sweep_of(rows, ensemble) -> SweepResult | None:
    sel = sorted((r for r in rows if r["ensemble"] == ensemble and np.isfinite(r["std_n0"])),
                 key=lambda r: r["T"])
    if not sel:
        return None
    se = np.array([r["se_std"] if r["se_std"] and r["se_std"] > 0 else np.nan for r in sel], dtype=float)
    return SweepResult(
        temperatures=np.array([r["T"] for r in sel]),
        std_n0=np.array([r["std_n0"] for r in sel]),
        se_std=None if np.any(~np.isfinite(se)) else se,
        config_tag=(sel[0]["dim"], sel[0]["N"], sel[0]["g"]),
    )


def _peak_or_none(sweep: SweepResult | None, seed: int = 0) -> tuple[PeakEstimate | None, str | None]:
    if sweep is None or len(sweep) < 7:
        return None, "fewer than 7 temperatures"
    try:
        return find_peak(sweep, random_state=seed), None
    except (EdgeMaximumError, ConcaveFitError) as exc:
        return None, str(exc)


def sweep_peaks(rows: list[dict], ideal_reference: str = "exact", cutoff_factor: float = 16.0,
                aspect=None) -> list[dict]:
    """Peak temperature, height and relative shift for every ``(N, g, ensemble)`` in ``rows``.

    The ideal reference for each ``(N, ensemble)`` is the ``g = 0`` sweep when
    present; canonical references fall back to the exact recurrence when
    ``ideal_reference == "exact"`` or no ``g = 0`` sweep exists.  Exact
    references report the true ideal peak as ``t_p0``/``peak0`` and compute
    the shift against :func:`matched_ideal_peak` (``t_p0_ref``/``peak0_ref``).
    """
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["N"], r["g"], r["ensemble"]), []).append(r)
    peaks = {}
    for (n, g, ens), sel in sorted(groups.items()):
        est, why = _peak_or_none(_sweep_of(sel, ens))
        peaks[(n, g, ens)] = (est, why, sel)
    exact_cache = {}
    out = []
    for (n, g, ens), (est, why, sel) in sorted(peaks.items()):
        first = sel[0]
        ref, ref_kind, t0, p0 = None, None, None, None
        if ens == "canonical" and (ideal_reference == "exact" or (n, 0.0, ens) not in peaks):
            if n not in exact_cache:
                exact_cache[n] = ideal_peak(n, first["dim"], aspect, cutoff_factor)
            t0, p0 = exact_cache[n]
            ref_kind = "exact"
            if est is not None:
                temps = sorted({r["T"] for r in sel if r["std_n0"] is not None and np.isfinite(r["std_n0"])})
                try:
                    ref = matched_ideal_peak(n, temps, est.t_p, dim=first["dim"], aspect=aspect,
                                             cutoff_factor=cutoff_factor)
                except (EdgeMaximumError, ConcaveFitError) as exc:
                    log.warning("N=%s g=%s: matched ideal reference failed (%s); using the exact peak", n, g, exc)
                    ref = PeakEstimate(t0, 0.0, p0, 0.0, (t0, t0))
        elif (n, 0.0, ens) in peaks and peaks[(n, 0.0, ens)][0] is not None:
            ref, ref_kind = peaks[(n, 0.0, ens)][0], "sampled"
            t0, p0 = ref.t_p, ref.peak_value
        entry = {
            "N": n, "dim": first["dim"], "g": g, "gas_param": first.get("gas_param"), "ensemble": ens,
            "t_p": None, "t_p_err": None, "peak": None, "peak_err": None,
            "t_p0": t0, "peak0": p0,
            "t_p0_ref": None if ref is None else ref.t_p, "peak0_ref": None if ref is None else ref.peak_value,
            "reference": ref_kind, "shift": None, "shift_err": None, "note": why,
        }
        if est is not None:
            entry.update(t_p=est.t_p, t_p_err=est.t_p_err, peak=est.peak_value, peak_err=est.peak_err)
            if ref is not None:
                if g == 0.0 and ref_kind == "sampled":
                    entry.update(shift=0.0, shift_err=0.0)
                else:
                    s, e = relative_shift(est, ref)
                    entry.update(shift=s, shift_err=e)
        out.append(entry)
    return out


def shift_points(peaks: list[dict], kind: str, ensemble: str = "canonical") -> list[tuple]:
    """Fit inputs from peak entries with ``g > 0``."""
    pts = []
    for p in peaks:
        if p["ensemble"] != ensemble or p["g"] == 0 or p["shift"] is None:
            continue
        if kind == "linear-3d":
            if p.get("gas_param") is None:
                raise ConfigError("linear-3d fits need gas parameters in the sweep")
            pts.append((p["gas_param"], p["shift"], p["shift_err"]))
        else:
            pts.append((p["N"], p["g"], p["shift"], p["shift_err"]))
    return pts


def _plan_cells(cfg: ExperimentConfig, temps_for) -> list[Cell]:
    cells = []
    for n in cfg.atom_counts:
        for g, x in cfg.coupling_points(int(n)):
            for t in temps_for(int(n), g):
                for r in range(cfg.replicas):
                    cells.append(Cell(int(n), g, x, float(t), r))
    return cells


def run_sweep(cfg: ExperimentConfig, output_dir: str | None = None) -> SweepOutcome:
    """Run every cell not already in the manifest and write the sweep outputs.

    Writes ``sweep.csv`` (one row per ``(N, g, T, ensemble)``), ``peaks.json``
    and, when a fit is configured, ``fit.json``.
    """
    out_dir = output_dir or cfg.output_dir
    cell_dir = os.path.join(out_dir, "cells")
    os.makedirs(cell_dir, exist_ok=True)
    config_hash = cfg.config_hash()
    manifest = _Manifest(os.path.join(out_dir, "manifest.json"), config_hash)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump({"config_hash": config_hash, **cfg.physics_dict()}, fh, indent=2, sort_keys=True, default=list)

    outcome = SweepOutcome(rows=[], peaks=[])
    grids: dict = {}
    if cfg.auto_grid:
        for n in cfg.atom_counts:
            t_p, _ = ideal_peak(int(n), cfg.dim, cfg.aspect, cfg.cutoff_factor)
            base = default_temperature_grid(t_p, cfg.grid_points, cfg.grid_span)
            for g, _ in cfg.coupling_points(int(n)):
                grids[(int(n), g)] = [float(t) for t in base]
    else:
        for n in cfg.atom_counts:
            for g, _ in cfg.coupling_points(int(n)):
                grids[(int(n), g)] = [float(t) for t in cfg.temperatures]

    def execute(cells):
        todo = []
        for c in cells:
            path = os.path.join(cell_dir, c.key + ".npz")
            if c.key in manifest.done and os.path.exists(path):
                outcome.skipped += 1
            else:
                todo.append((c, path))
        if cfg.workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [(c, pool.submit(_run_cell, cfg, c, p)) for c, p in todo]
                for c, fut in futures:
                    _finish(c, fut.result, manifest, outcome)
        else:
            for c, p in todo:
                _finish(c, lambda: _run_cell(cfg, c, p), manifest, outcome)

    for refine_pass in range(cfg.refine_passes + 1):
        if refine_pass > 0:
            for (n, g), temps in grids.items():
                rows = _aggregate(cfg, n, g, temps, cell_dir, config_hash, manifest)
                new = set()
                for ens in cfg.ensembles:
                    sel = sorted((r for r in rows if r["ensemble"] == ens and np.isfinite(r["std_n0"])),
                                 key=lambda r: r["T"])
                    if len(sel) >= 3:
                        new.update(float(t) for t in refine_grid([r["T"] for r in sel],
                                                                 [r["std_n0"] for r in sel], cfg.refine_points))
                grids[(n, g)] = sorted(set(temps) | new)
        execute(_plan_cells(cfg, lambda n, g: grids[(n, g)]))

    rows = []
    for (n, g), temps in sorted(grids.items()):
        rows.extend(_aggregate(cfg, n, g, temps, cell_dir, config_hash, manifest))
    peaks = sweep_peaks(rows, cfg.ideal_reference, cfg.cutoff_factor, cfg.aspect)
    ref = {(p["N"], p["ensemble"]): (p["t_p0"], p["peak0"]) for p in peaks if p["t_p0"] is not None}
    for r in rows:
        t0, p0 = ref.get((r["N"], r["ensemble"]), (None, None))
        if t0 is not None:
            r["t_norm"] = r["T"] / t0
            r["std_norm"] = r["std_n0"] / p0
    outcome.rows = rows
    outcome.peaks = peaks

    if cfg.cutoff_check:
        outcome.cutoff_checks = _cutoff_checks(cfg, grids, cell_dir, manifest, outcome)

    _write_csv(os.path.join(out_dir, "sweep.csv"), SWEEP_COLUMNS, rows, config_hash)
    with open(os.path.join(out_dir, "peaks.json"), "w") as fh:
        json.dump({"config_hash": config_hash, "peaks": peaks}, fh, indent=2, allow_nan=True)
    if cfg.fit is not None:
        try:
            pts = shift_points(peaks, cfg.fit)
            fit = fit_linear_shift_3d(pts) if cfg.fit == "linear-3d" else fit_power_law_2d(pts)
            with open(os.path.join(out_dir, "fit.json"), "w") as fh:
                fh.write(fit.to_json(indent=2))
        except ValueError as exc:
            log.warning("fit skipped: %s", exc)
    if outcome.failures:
        with open(os.path.join(out_dir, "failures.json"), "w") as fh:
            json.dump(outcome.failures, fh, indent=2)
    if cfg.plot:
        from .plotting import plot_sweep

        plot_sweep(rows, out_dir)
    return outcome


def _finish(cell, result_fn, manifest, outcome):
    try:
        result_fn()
    except Exception as exc:  # noqa: BLE001 -- reported per cell
        log.error("cell %s failed: %s", cell.key, exc)
        outcome.failures.append({"cell": cell.key, "error": f"{type(exc).__name__}: {exc}"})
        return
    manifest.add(cell.key)
    outcome.ran += 1


def _aggregate(cfg, n, g, temps, cell_dir, config_hash, manifest):
    gas = dict(cfg.coupling_points(n)).get(g)
    rows = []
    for t in sorted(temps):
        series = []
        for r in range(cfg.replicas):
            cell = Cell(n, g, gas, float(t), r)
            path = os.path.join(cell_dir, cell.key + ".npz")
            if cell.key in manifest.done and os.path.exists(path):
                series.append(_load_cell(cfg, cell, path))
        if not series:
            continue
        rows.extend(_estimate_rows(cfg, n, g, gas, float(t), merge_series(series), config_hash))
    return rows


def _cutoff_checks(cfg, grids, cell_dir, manifest, outcome):
    checks = []
    for (n, g), temps in sorted(grids.items()):
        t = sorted(temps)[len(temps) // 2]
        cell = Cell(n, g, dict(cfg.coupling_points(n)).get(g), float(t), 0)
        path = os.path.join(cell_dir, cell.key + ".npz")
        if not os.path.exists(path):
            continue
        base = canonical_stats(_load_cell(cfg, cell, path))
        wide_path = os.path.join(cell_dir, cell.key + "_cut1.5.npz")
        if not os.path.exists(wide_path):
            _run_cell(cfg, cell, wide_path, cutoff_scale=1.5)
        wide = canonical_stats(_load_cell(cfg, cell, wide_path))
        diff = abs(wide.mean_n0 - base.mean_n0)
        err = math.hypot(wide.se_mean, base.se_mean)
        ok = diff <= err
        if not ok:
            warnings.warn(
                f"N={n} g={g:g} T={t:g}: <N_0> moves by {diff:.3g} (> {err:.3g}) with a 1.5x mode cutoff",
                RuntimeWarning,
            )
        checks.append({"N": n, "g": g, "T": t, "mean_n0": base.mean_n0, "mean_n0_wide": wide.mean_n0,
                       "difference": diff, "error": err, "ok": ok})
    return checks


def run_exact_ideal(cfg: ExperimentConfig, output_dir: str | None = None, tail_tol: float | None = None) -> list[dict]:
    """Exact ideal-gas curves on the configured grid; writes ``exact_ideal.csv``."""
    out_dir = output_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for n in cfg.atom_counts:
        n = int(n)
        if cfg.auto_grid:
            t_p, _ = ideal_peak(n, cfg.dim, cfg.aspect, cfg.cutoff_factor)
            temps = default_temperature_grid(t_p, cfg.grid_points, cfg.grid_span)
        else:
            temps = np.asarray(cfg.temperatures, dtype=float)
        curve = ideal_fluctuation_curve(n, temps, dim=cfg.dim, aspect=cfg.aspect,
                                        cutoff_factor=cfg.cutoff_factor, tail_tol=tail_tol)
        for t, mean, std in zip(curve.temperatures, curve.mean_n0, curve.std_n0):
            rows.append({"N": n, "T": float(t), "mean_n0": float(mean), "std_n0": float(std),
                         "method_tag": "recurrence"})
    _write_csv(os.path.join(out_dir, "exact_ideal.csv"), EXACT_COLUMNS, rows, cfg.config_hash())
    return rows
