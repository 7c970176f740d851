"""Write schedule/weighting CSVs for the fixed schedules and summarise where each puts its weight.

    python3 scripts/schedule_csvs.py --out-dir runs/schedules
"""

import argparse
from pathlib import Path

import numpy as np

from vdmkit.schedule import NoiseSchedule, ScheduleEndpoints, analysis_table, write_analysis_csv


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--grid-size", type=int, default=1001)
    p.add_argument("--gamma0", type=float, default=None, help="rescale every schedule to these endpoints")
    p.add_argument("--gamma1", type=float, default=None)
    a = p.parse_args()

    a.out_dir.mkdir(parents=True, exist_ok=True)
    ends = ScheduleEndpoints(a.gamma0, a.gamma1) if a.gamma0 is not None else None
    print("schedule,gamma(0),gamma(1),weight ratio log-SNR in [-4,2] vs [5,9]")
    for kind in ("log-snr-linear", "beta-linear", "alpha-cosine"):
        sched = NoiseSchedule(kind, ends)
        write_analysis_csv(sched, a.out_dir / f"{kind}.csv", a.grid_size)
        tab = analysis_table(sched, a.grid_size)
        keep = np.isfinite(tab[:, 6])
        g, w = tab[keep, 1], tab[keep, 6]
        ratio = np.interp(np.linspace(-2, 4, 61), g, w).mean() / np.interp(np.linspace(-9, -5, 41), g, w).mean()
        print(f"{kind},{tab[0, 1]:.4f},{tab[-1, 1]:.4f},{ratio:.3f}")


if __name__ == "__main__":
    main()
