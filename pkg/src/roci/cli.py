"""Command-line entry point: ``roci {simulate,samplesize,interim,analyze,preset}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, fp
from .config import RunConfig, load_config, preset_path
from .errors import DataError, RociError
from .inference import Method, analyze
from .interim import Sided, Varying, interim_grid, bracket_note, size_interim
from .montecarlo import PerfReport, default_workers, performance, run_replicates
from .samplesize import power_grid, recommend_n, smooth_curve, validate_bootstrap

log = logging.getLogger("roci")

INTERIM_COLUMNS = ["alpha", "sided", "power", "p0", "p1", "hr", "events", "n_total", "control_events", "sim_power", "error"]


class Run:
    """Collects output files for one command and writes the manifest."""

    def __init__(self, command: str, cfg: RunConfig, out_dir: Path):
        self.command = command
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.results: dict = {}
        self.notes: list[str] = []
        self.started = time.time()

    def write_csv(self, name: str, header, rows):
        path = self.out / name
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow(["" if v is None else v for v in row])
        self.files.append(name)
        return path

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.files):
            h.update(name.encode())
            h.update(b"\0")
            h.update((self.out / name).read_bytes())
            h.update(b"\0")
        return h.hexdigest()

    def finish(self, status: str = "complete", error: str | None = None) -> dict:
        manifest = {
            "command": self.command,
            "status": status,
            "engine_version": __version__,
            "config": self.cfg.to_dict(),
            "wall_clock_seconds": round(time.time() - self.started, 3),
            "outputs": sorted(self.files),
            "fingerprint": self.fingerprint(),
            "results": self.results,
            "notes": self.notes,
        }
        if error:
            manifest["error"] = error
        (self.out / f"manifest_{self.command}.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
        return manifest


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _arm_label(v: float) -> str:
    return f"{v:g}"


def perf_header(grid):
    return (["scenario", "N", "method", "rule", "nsim"]
            + [f"share_{_arm_label(v)}" for v in grid.values]
            + ["optimal_power", "opt_lo", "opt_hi", "acceptable_power", "type1_error", "diag_failures"])


def perf_row(r: PerfReport, method, rule):
    return ([r.scenario, r.N, Method(method).value, rule.value if hasattr(rule, "value") else rule, r.nsim]
            + list(r.selection_dist)
            + [r.optimal_power.value, r.optimal_power.lo, r.optimal_power.hi,
               r.acceptable_power.value, r.type1_error.value, r.failures])


def perf_summary(r: PerfReport) -> dict:
    return {
        "scenario": r.scenario, "N": r.N, "nsim": r.nsim,
        "optimal_power": [r.optimal_power.value, r.optimal_power.lo, r.optimal_power.hi],
        "acceptable_power": [r.acceptable_power.value, r.acceptable_power.lo, r.acceptable_power.hi],
        "type1_error": [r.type1_error.value, r.type1_error.lo, r.type1_error.hi],
        "control_share": r.control_share,
        "intermediate_powers": {str(k): v for k, v in r.intermediate_powers.items()},
        "diag_failures": r.failures,
    }


# -- commands ----------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, run: Run, scenarios=None, n_values=None, method=None, workers=1, seed=None):
    grid, margin = cfg.arm_grid(), cfg.margin_obj()
    if scenarios is None:
        scenarios = cfg.simulate.scenarios
    names = [s.name for s in cfg.scenario_list()] if scenarios is None else list(scenarios)
    if not names:
        raise DataError("no scenarios selected")
    n_values = n_values or cfg.simulate.n_values
    mc = cfg.mc_config(method=method, seed=seed)
    reports = []
    for name in names:
        sc = cfg.scenario(name)
        rows = []
        for N in n_values:
            counts = run_replicates(sc, grid, N, margin, mc, workers)
            rep = performance(counts, sc, grid, margin)
            reports.append(rep)
            rows.append(perf_row(rep, mc.method, mc.rule))
            log.info("%s N=%d optimal=%.3f type1=%.3f", name, N, rep.optimal_power.value, rep.type1_error.value)
        run.write_csv(f"simulate_{name}.csv", perf_header(grid), rows)
    run.results["simulate"] = [perf_summary(r) for r in reports]
    cap = cfg.performance.type1_cap
    for r in reports:
        if r.type1_error.value > cap:
            run.notes.append(f"{r.scenario} N={r.N}: type I error {r.type1_error.value:.3f} exceeds cap {cap}")
    return reports


def cmd_samplesize(cfg: RunConfig, run: Run, workers=1, seed=None):
    grid, margin = cfg.arm_grid(), cfg.margin_obj()
    ss = cfg.samplesize
    sc = cfg.scenario(ss.scenario)
    mc = cfg.mc_config(method="delta", seed=seed)
    curve = power_grid(sc, grid, margin, ss.n_values, mc, workers)
    run.write_csv("power_curve.csv", ["N", "power", "mc_se"], curve.points)
    smooth_curve(curve, ss.span, ss.dense_step)
    if curve.smoothed:
        run.write_csv("power_smooth.csv", ["N", "power_smooth"], curve.smoothed)
    run.results["power_curve"] = [list(p) for p in curve.points]
    n = recommend_n(curve, cfg.performance.target_power, ss.granularity)
    run.results["recommended_n"] = n
    boot = cfg.mc_config(method="bootstrap", nsim=ss.validation_nsim, B=ss.validation_B, seed=seed)
    res = validate_bootstrap(sc, grid, margin, n, cfg.performance.target_power, ss.inflation_step, boot,
                             ss.granularity, ss.max_inflation_rounds, workers)
    run.write_csv("samplesize_validation.csv", perf_header(grid), [perf_row(r, "bootstrap", boot.rule) for r in res.rounds])
    run.results["samplesize"] = {
        "recommended_n": res.recommended_n,
        "validation_power": [res.validation_power, res.validation_lo, res.validation_hi],
        "validated": res.validated,
        "final_n": res.final_n,
        "inflation_step": res.inflation_step,
        "rounds": [perf_summary(r) for r in res.rounds],
    }
    return curve, res


def cmd_interim(cfg: RunConfig, run: Run, simulate=None, seed=None):
    spec = cfg.interim_spec()
    sim = cfg.interim.simulate if simulate is None else simulate
    seed = cfg.mc.master_seed if seed is None else seed
    nsim = cfg.interim.sim_nsim
    two = size_interim(replace(spec, sided=Sided.TWO), sim, nsim, seed)
    one = size_interim(replace(spec, sided=Sided.ONE), sim, nsim, seed)
    design_rows = []
    for r in (two, one):
        design_rows.append([r.spec.alpha, r.spec.sided.value, r.spec.power, r.spec.p0, r.spec.p1, r.hr,
                            r.events_required, r.n_total, r.control_events, r.sim_power, ""])
    run.write_csv("interim_design.csv", INTERIM_COLUMNS, design_rows)
    note = bracket_note(two, one)
    run.notes.append(note)
    run.results["interim"] = {
        "two_sided": {"events": two.events_required, "n_total": two.n_total, "control_events": two.control_events, "sim_power": two.sim_power},
        "one_sided": {"events": one.events_required, "n_total": one.n_total, "control_events": one.control_events, "sim_power": one.sim_power},
        "selected": {"sided": spec.sided.value, "n_total": (two if spec.sided is Sided.TWO else one).n_total},
    }
    grids = {
        Varying.ALPHA_BY_P0: cfg.interim.p0_values,
        Varying.ALPHA_BY_P1: cfg.interim.p1_values,
        Varying.ALPHA_BY_POWER: cfg.interim.power_values,
    }
    for varying, values in grids.items():
        rows = interim_grid(varying, spec, cfg.interim.alpha_values, values, sim, nsim, seed)
        run.write_csv(f"interim_{varying.value}.csv", INTERIM_COLUMNS, [[r[c] for c in INTERIM_COLUMNS] for r in rows])
        for r in rows:
            if r["error"]:
                run.notes.append(f"{varying.value} alpha={r['alpha']} {r}: {r['error']}")
    return two, one, note


def read_dataset(path, grid) -> fp.TrialDataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset {path} does not exist")
    rows = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["arm_value", "n", "events"]:
            raise DataError(f"{path}:1: expected header 'arm_value,n,events', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                x, n, e = float(row[0]), int(row[1]), int(row[2])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            match = [j for j, v in enumerate(grid.values) if abs(v - x) <= 1e-9]
            if not match:
                raise DataError(f"{path}:{lineno}: arm value {x:g} is not on the configured grid {list(grid.values)}")
            if match[0] in rows:
                raise DataError(f"{path}:{lineno}: duplicate arm value {x:g}")
            rows[match[0]] = (n, e)
    missing = [grid.values[j] for j in range(len(grid)) if j not in rows]
    if missing:
        raise DataError(f"{path}: no rows for arm values {missing}")
    return fp.TrialDataset(grid, [rows[j][0] for j in range(len(grid))], [rows[j][1] for j in range(len(grid))])


def cmd_analyze(cfg: RunConfig, run: Run, dataset_path, method=None, seed=None):
    grid, margin = cfg.arm_grid(), cfg.margin_obj()
    data = read_dataset(dataset_path, grid)
    seed = cfg.mc.master_seed if seed is None else seed
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rec = analyze(data, margin, method or cfg.methods.method, cfg.methods.rule, cfg.methods.B, seed,
                      cfg.methods.fp.scale, cfg.fit_control(), cfg.candidates())
    run.notes.extend(str(w.message) for w in caught)
    table = rec.table(grid)
    run.write_csv("analysis.csv", ["arm_value", "n", "events", "rr_hat", "lower_bound", "passing", "selected"],
                  [[t["arm_value"], data.n[j], data.events[j], t["rr_hat"], t["lower_bound"], t["passing"], t["selected"]]
                   for j, t in enumerate(table)])
    run.results["analysis"] = {
        "method": rec.method.value,
        "powers": list(rec.model.powers),
        "scale": rec.model.scale,
        "beta": rec.model.beta.tolist(),
        "deviance": rec.model.deviance,
        "fallback": rec.model.fallback,
        "selected_arm": grid.values[rec.decision.selected_index],
        "rule": rec.decision.rule.value,
    }
    run.results["estimand"] = cfg.to_dict()["estimand"]
    return rec


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roci", description="Design simulations for response-over-continuous-intervention trials.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="run configuration file (TOML)")
        sp.add_argument("--out", help="output directory (default: output_dir from the config)")
        sp.add_argument("--seed", type=int, help="override mc.master_seed")

    sp = sub.add_parser("simulate", help="operating characteristics per scenario and N")
    common(sp)
    sp.add_argument("--scenario", action="append", help="scenario name (repeatable; default all)")
    sp.add_argument("--n", action="append", type=int, help="total sample size (repeatable)")
    sp.add_argument("--method", choices=[m.value for m in Method])
    sp.add_argument("--workers", type=int, default=None)

    sp = sub.add_parser("samplesize", help="power curve, smoothing, recommendation and bootstrap check")
    common(sp)
    sp.add_argument("--workers", type=int, default=None)

    sp = sub.add_parser("interim", help="events and sample size for the interim survival comparison")
    common(sp)
    sp.add_argument("--simulate", action="store_true", help="add log-rank simulated power to every cell")

    sp = sub.add_parser("analyze", help="analyse a trial dataset (CSV arm_value,n,events)")
    common(sp)
    sp.add_argument("dataset")
    sp.add_argument("--method", choices=[m.value for m in Method])

    sp = sub.add_parser("preset", help="print a shipped configuration")
    sp.add_argument("name", nargs="?", default="refine_lung")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "preset":
        path = preset_path(args.name)
        if not path.exists():
            print(f"error: no preset named {args.name!r}", file=sys.stderr)
            return 2
        sys.stdout.write(path.read_text())
        return 0
    try:
        cfg = load_config(args.config)
    except RociError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return exc.exit_code
    run = Run(args.command, cfg, Path(args.out or cfg.output_dir))
    workers = getattr(args, "workers", None) or default_workers()
    try:
        if args.command == "simulate":
            cmd_simulate(cfg, run, args.scenario, args.n, args.method, workers, args.seed)
        elif args.command == "samplesize":
            cmd_samplesize(cfg, run, workers, args.seed)
        elif args.command == "interim":
            cmd_interim(cfg, run, True if args.simulate else None, args.seed)
        elif args.command == "analyze":
            cmd_analyze(cfg, run, args.dataset, args.method, args.seed)
    except RociError as exc:
        run.finish("incomplete", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - reported as a numerical/internal failure
        run.finish("incomplete", repr(exc))
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 5
    manifest = run.finish()
    for note in run.notes:
        print(f"note: {note}")
    print(json.dumps({"outputs": manifest["outputs"], "fingerprint": manifest["fingerprint"],
                      "results": manifest["results"]}, indent=2, default=_json_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
