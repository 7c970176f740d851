"""Train the toy model and write a checkpoint next to its dataset.

    python3 scripts/train_toy.py --out-dir runs/cont
    python3 scripts/train_toy.py --out-dir runs/disc100 --mode discrete --T-train 100
"""

import argparse
import time
from pathlib import Path

import numpy as np

from vdmkit.checkpoint import Checkpoint, save_checkpoint
from vdmkit.data import make_dataset
from vdmkit.model import ModelConfig, VDModel
from vdmkit.training import TrainConfig, Trainer


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--steps", type=int, default=9000)
    p.add_argument("--mode", choices=["continuous", "discrete"], default="continuous")
    p.add_argument("--T-train", type=int, default=None)
    p.add_argument("--no-variance-min", action="store_true")
    p.add_argument("--width", type=int, default=ModelConfig.width)
    p.add_argument("--n-blocks", type=int, default=ModelConfig.n_blocks)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()

    a.out_dir.mkdir(parents=True, exist_ok=True)
    data = make_dataset(d=64, V=16, n_train=4096, n_test=1024, seed=0)
    data.save(a.out_dir / "data.npz")
    mcfg = ModelConfig(width=a.width, n_blocks=a.n_blocks)
    tcfg = TrainConfig(mode=a.mode, T_train=a.T_train, steps=a.steps, batch_size=128, lr=2e-3,
                       variance_min=not a.no_variance_min, log_every=100, seed=a.seed)
    rng = np.random.default_rng(a.seed)
    trainer = Trainer(VDModel.init(mcfg, rng), data.train, tcfg, rng)
    t0 = time.time()

    def progress(log):
        if log.step % 500 == 0:
            print(f"step {log.step:6d}  loss {log.loss_bpd:.4f} bpd  gamma0 {log.gamma0:+.3f}  "
                  f"gamma1 {log.gamma1:+.3f}  {time.time() - t0:.0f}s", flush=True)

    trainer.run(callback=progress)
    path = save_checkpoint(Checkpoint.from_trainer(trainer, mcfg, data.config.digest()), a.out_dir / "model.ckpt")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
