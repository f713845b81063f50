"""Full REFINE-Lung design run: power curve, sample-size choice, type I check.

Runs the shipped preset through the same steps as ``roci samplesize`` and
``roci simulate`` and prints a short report. Expect about 20 minutes on one core
(the bootstrap runs dominate); pass ``--workers`` to spread them out.

    python scripts/refine_lung_design.py --out results/refine_lung
"""

import argparse
import time
from pathlib import Path

from roci.cli import Run, cmd_samplesize, cmd_simulate
from roci.config import load_config, preset_path
from roci.montecarlo import default_workers


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(preset_path()))
    ap.add_argument("--out", default="results/refine_lung")
    ap.add_argument("--workers", type=int, default=default_workers())
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config)
    out = Path(args.out)

    t0 = time.perf_counter()
    run = Run("samplesize", cfg, out)
    curve, res = cmd_samplesize(cfg, run, args.workers, args.seed)
    run.finish()
    print(f"delta power curve over N = {curve.points[0][0]}..{curve.points[-1][0]} "
          f"({time.perf_counter() - t0:.0f} s)")
    print(f"  recommended N       {res.recommended_n}")
    print(f"  bootstrap power     {res.validation_power:.3f} [{res.validation_lo:.3f}, {res.validation_hi:.3f}]")
    for r in res.rounds[1:]:
        print(f"  inflated to N={r.N}  power {r.optimal_power.value:.3f}")
    print(f"  final N             {res.final_n} (validated: {res.validated})")

    t0 = time.perf_counter()
    margins = [s.name for s in cfg.scenario_list() if s.name != cfg.samplesize.scenario]
    run = Run("simulate", cfg, out)
    reports = cmd_simulate(cfg, run, margins, [res.final_n], "bootstrap", args.workers, args.seed)
    run.finish()
    print(f"type I error at N={res.final_n}, bootstrap ({time.perf_counter() - t0:.0f} s)")
    for r in reports:
        print(f"  {r.scenario:10s} {r.type1_error.value:.3f} [{r.type1_error.lo:.3f}, {r.type1_error.hi:.3f}]")
    for note in run.notes:
        print(f"note: {note}")


if __name__ == "__main__":
    main()
