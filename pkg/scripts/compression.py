"""Bits-back net bpd against the bound on the toy test split, with and without cleaning.

    python3 scripts/compression.py runs/cont --T-eval 10,100
"""

import argparse
import time
from pathlib import Path

import numpy as np

from vdmkit.bitsback import CodecConfig, CodecModel, bbans_decode, bbans_encode, net_bpd
from vdmkit.checkpoint import load_checkpoint
from vdmkit.data import ToyDataset
from vdmkit.evaluation import PairedDraws, per_example_bpd


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("run_dir", type=Path)
    p.add_argument("--T-eval", default="10,100")
    p.add_argument("--n", type=int, default=None, help="number of test examples (default: all)")
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()

    m = load_checkpoint(a.run_dir / "model.ckpt").model()
    x = ToyDataset.load(a.run_dir / "data.npz").test[:a.n]
    draws = PairedDraws.make(x.shape[0], x.shape[1], 16, 4, seed=a.seed)
    print("T_eval,clean,bound_bpd,net_bpd,gap,lossless,seconds")
    for T in (int(s) for s in a.T_eval.split(",")):
        model = CodecModel(m.schedule, m.denoiser, T, m.V)
        bound = per_example_bpd(m, x, draws, T).mean()
        for clean in (True, False):
            t0 = time.time()
            blob = bbans_encode(x, model, seed=a.seed, cfg=CodecConfig(clean=clean))
            ok = np.array_equal(bbans_decode(blob, model), x)
            net = net_bpd(blob)
            print(f"{T},{clean},{bound:.4f},{net:.4f},{net - bound:+.4f},{ok},{time.time() - t0:.1f}", flush=True)


if __name__ == "__main__":
    main()
