"""Estimator variance: low-discrepancy vs iid times, and learned vs log-SNR-linear schedule.

    python3 scripts/variance_comparison.py runs/cont
"""

import argparse
import math
from pathlib import Path

import numpy as np

from vdmkit import autodiff as ad
from vdmkit.checkpoint import load_checkpoint
from vdmkit.data import ToyDataset
from vdmkit.evaluation import PairedDraws, per_example_bpd
from vdmkit.losses import LN2, bpd_estimator_variance, continuous_diffusion_loss, iid_times, low_discrepancy_times
from vdmkit.model import VDModel
from vdmkit.schedule import NoiseSchedule


def batch_variance(model, x, sampler, repeats, rng):
    k, d = x.shape
    est = []
    for _ in range(repeats):
        t = (low_discrepancy_times(k, rng.uniform()) if sampler == "low-discrepancy" else iid_times(k, rng)).times
        with ad.no_grad():
            v = ad.value_of(continuous_diffusion_loss(x, model.schedule, model.denoiser, t, rng.standard_normal((k, d))))
        est.append(np.mean(v) / (d * LN2))
    return float(np.var(est, ddof=1))


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("run_dir", type=Path)
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()

    model = load_checkpoint(a.run_dir / "model.ckpt").model()
    x = ToyDataset.load(a.run_dir / "data.npz").test
    rng = np.random.default_rng(a.seed)
    for sampler in ("low-discrepancy", "iid"):
        print(f"{sampler:16s} variance of a 128-example batch estimate: "
              f"{batch_variance(model, x[:128], sampler, a.repeats, rng):.3e}")

    linear = VDModel(NoiseSchedule("log-snr-linear", model.schedule.endpoints), model.denoiser, model.V)
    draws = PairedDraws.make(x.shape[0], x.shape[1], 16, 4, seed=a.seed)
    for name, m in (("learned", model), ("log-snr-linear", linear)):
        var = bpd_estimator_variance(x[:256], m.schedule, m.denoiser, 64, np.random.default_rng(a.seed))
        b = per_example_bpd(m, x, draws, None)
        print(f"{name:16s} single-draw variance {var:.4f}  continuous bound {b.mean():.4f} "
              f"+- {b.std(ddof=1) / math.sqrt(b.size):.4f} bpd")


if __name__ == "__main__":
    main()
