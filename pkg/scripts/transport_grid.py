"""Method comparison on the transport scenario, printed as a force/smoothness table.

    python3 scripts/transport_grid.py --seeds 5 --demos 24
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from imprsl import cli, regnet
from imprsl.datamodel import TABLE_I
from imprsl.harness import learning, scenario, synth


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="transport", choices=["transport", "taichi", "sawing"])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--demos", type=int, default=24)
    ap.add_argument("--held-out", type=int, default=4)
    ap.add_argument("--absolute-damping", action="store_true",
                    help="damp absolute TCP velocity instead of velocity relative to the reference")
    args = ap.parse_args()

    subject = TABLE_I[synth.COLLABORATOR_ROW]
    t0 = time.perf_counter()
    demos = synth.synth_demos(args.scenario, args.demos, 0)
    skill = learning.fit_skill(demos, subject)
    reg, _ = learning.train_regulator(demos[:-args.held_out], subject, regnet.TrainConfig(seed=0))
    print(f"learned skill and regulator in {time.perf_counter() - t0:.0f} s")

    config = scenario.ScenarioConfig()
    if args.absolute_damping:
        config = replace(config, wbc=replace(config.wbc, relative_velocity=False))
    rows = []
    for seed in range(args.seeds):
        trial = scenario.make_trial(args.scenario, seed)
        n = int(round(trial.spec.duration / skill.dt)) + 1
        sched, _, _ = learning.plan(skill, trial.spec.start, trial.spec.goal, n=n)
        for method in scenario.METHODS:
            r = scenario.run_scenario(args.scenario, method, seed, sched, reg, config, trial)
            m = r.metrics()
            for a, ax in enumerate(cli.AXES):
                rows.append({"method": method, "axis": ax, "force_mean": m["force_mean"][a],
                             "smoothness": m["smoothness"][a], "failed": int(r.failed)})
        print(f"seed {seed} done ({time.perf_counter() - t0:.0f} s)")
    agg = cli.aggregate(rows, scenario.METHODS)
    cli.print_table(agg)
    t = cli.trend_check(agg)
    print(f"trend: force X/Y {'PASS' if t['force'] else 'FAIL'}; smoothness lowest on "
          f"{t['smoothness_axes']}/3 axes -> {'PASS' if t['passed'] else 'FAIL'}")
    if any(r["failed"] for r in rows):
        print("some runs failed:", sorted({r["method"] for r in rows if r["failed"]}))
    return 0 if np.isfinite([r["force_mean"] for r in rows]).all() else 1


if __name__ == "__main__":
    raise SystemExit(main())
