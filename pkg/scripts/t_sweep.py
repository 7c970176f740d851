"""Bound (and optionally bits-back net bpd) over T_eval for one or more checkpoints.

    python3 scripts/t_sweep.py runs/cont runs/disc100 --bits-back > sweep.csv
"""

import argparse
from pathlib import Path

from vdmkit.checkpoint import load_checkpoint
from vdmkit.data import ToyDataset
from vdmkit.evaluation import evaluate, format_table


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("run_dirs", type=Path, nargs="+", help="directories written by train_toy.py")
    p.add_argument("--T-eval", default="10,100,250,500,1000,10000,inf")
    p.add_argument("--n-samples", type=int, default=16)
    p.add_argument("--bits-back", action="store_true", help="also compress the test split (finite T only)")
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()

    T_evals = [None if tok == "inf" else int(tok) for tok in a.T_eval.split(",")]
    rows = []
    for run in a.run_dirs:
        ckpt = load_checkpoint(run / "model.ckpt")
        data = ToyDataset.load(run / "data.npz")
        ckpt.check_dataset(data.config.digest())
        tc = ckpt.train_config
        T_train = tc.T_train if tc is not None and tc.mode == "discrete" else None
        rows += evaluate(ckpt.model(), data.test, T_evals, T_train=T_train, n_samples=a.n_samples,
                         seed=a.seed, bits_back=a.bits_back)
    print(format_table(rows))


if __name__ == "__main__":
    main()
