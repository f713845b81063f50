"""Interim sample-size grids (alpha against p0, p1 and power) as plot-ready CSVs.

    python scripts/interim_figures.py --out results/interim --simulate --nsim 2000
"""

import argparse
from pathlib import Path

from roci.cli import Run, cmd_interim
from roci.config import load_config, preset_path


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(preset_path()))
    ap.add_argument("--out", default="results/interim")
    ap.add_argument("--simulate", action="store_true", help="add log-rank simulated power per cell")
    ap.add_argument("--nsim", type=int, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.nsim is not None:
        cfg.interim.sim_nsim = args.nsim
    run = Run("interim", cfg, Path(args.out))
    two, one, note = cmd_interim(cfg, run, simulate=args.simulate or None)
    run.finish()
    for r in (two, one):
        sim = "" if r.sim_power is None else f", simulated power {r.sim_power:.3f}"
        print(f"{r.spec.sided.value}-sided: hr={r.hr:.4f} D={r.events_required} n={r.n_total} "
              f"control events={r.control_events}{sim}")
    print(note)
    print("wrote", ", ".join(run.files), "to", args.out)


if __name__ == "__main__":
    main()
