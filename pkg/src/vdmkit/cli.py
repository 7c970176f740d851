"""Command line entry point.

Every failure is reported as a single JSON line on stderr with a nonzero exit
code; successful commands print JSON lines (or CSV for tables) on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bitsback import CodecConfig, CodecModel, CompressedBlob, bbans_decode, bbans_encode, net_bpd
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import DataConfig, ToyDataset, make_dataset
from .errors import ConfigurationError, VDMError
from .evaluation import evaluate, format_table
from .model import ModelConfig, VDModel
from .sampling import sample
from .schedule import KINDS, NoiseSchedule, ScheduleEndpoints, write_analysis_csv
from .training import TrainConfig, Trainer
from .ans import CoderConfig


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", message, code=2)


def _fail(kind: str, message: str, code: int = 1):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(code)


def _emit(**fields):
    print(json.dumps(fields, default=float))


def _t_list(text: str):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        out.append(None if tok in ("inf", "continuous") else int(tok))
    return out


# --- commands -------------------------------------------------------------------------------


def cmd_make_data(a):
    cfg = DataConfig(d=a.d, V=a.V, n_train=a.n_train, n_test=a.n_test, seed=a.seed,
                     distribution=a.distribution, n_components=a.n_components, component_std=a.component_std)
    ds = make_dataset(cfg)
    ds.save(a.out)
    _emit(command="make-data", out=str(a.out), train=list(ds.train.shape), test=list(ds.test.shape),
          dataset_hash=cfg.digest())


def cmd_train(a):
    ds = ToyDataset.load(a.data)
    if a.resume:
        ckpt = load_checkpoint(a.resume)
        ckpt.check_dataset(ds.config.digest())
        trainer = ckpt.trainer(ds.train)
        mcfg = ckpt.model_config
        steps = a.steps if a.steps is not None else max(0, trainer.config.steps - trainer.step_count)
    else:
        mcfg = ModelConfig(d=ds.config.d, V=ds.config.V, schedule=a.schedule, gamma0=a.gamma0, gamma1=a.gamma1,
                           schedule_width=a.schedule_width, width=a.width, n_blocks=a.n_blocks,
                           emb_dim=a.emb_dim, fourier_min=a.fourier_min, fourier_max=a.fourier_max)
        steps = a.steps if a.steps is not None else TrainConfig.steps
        tcfg = TrainConfig(mode=a.mode, T_train=a.T_train, steps=steps, batch_size=a.batch_size, lr=a.lr,
                           schedule_lr=a.schedule_lr, ema_decay=a.ema_decay, variance_min=a.variance_min,
                           time_sampler=a.time_sampler, log_every=a.log_every, seed=a.seed)
        rng = np.random.default_rng(a.seed)
        trainer = Trainer(VDModel.init(mcfg, rng), ds.train, tcfg, rng)
    digest = ds.config.digest()
    log_fh = open(a.log, "w") if a.log else None
    if log_fh:
        log_fh.write("step,loss_bpd,var_bpd,gamma0,gamma1\n")

    def on_step(log):
        if a.log_every and log.step % a.log_every == 0:
            line = f"{log.step},{log.loss_bpd:.6f},{log.var_bpd:.6f},{log.gamma0:.6f},{log.gamma1:.6f}"
            if log_fh:
                log_fh.write(line + "\n")
            _emit(step=log.step, loss_bpd=log.loss_bpd, var_bpd=log.var_bpd)
        if a.checkpoint_every and log.step % a.checkpoint_every == 0:
            save_checkpoint(Checkpoint.from_trainer(trainer, mcfg, digest), a.out)

    try:
        trainer.run(steps, on_step)
    finally:
        if log_fh:
            log_fh.close()
    save_checkpoint(Checkpoint.from_trainer(trainer, mcfg, digest), a.out)
    _emit(command="train", out=str(a.out), steps=trainer.step_count)


def _load_model_and_data(a):
    ckpt = load_checkpoint(a.checkpoint)
    ds = ToyDataset.load(a.data)
    ckpt.check_dataset(ds.config.digest())
    return ckpt, ckpt.model(use_ema=not a.raw_weights), ds.split(a.split)


def cmd_eval(a):
    ckpt, model, x = _load_model_and_data(a)
    tcfg = ckpt.train_config
    t_train = None if tcfg is None or tcfg.mode == "continuous" else tcfg.T_train
    rows = evaluate(model, x, _t_list(a.T_eval), T_train=t_train, n_samples=a.n_samples, seed=a.seed,
                    bits_back=a.bits_back)
    table = format_table(rows)
    if a.out:
        Path(a.out).write_text(table + "\n")
    print(table)


def cmd_sample(a):
    ckpt = load_checkpoint(a.checkpoint)
    out = sample(ckpt.model(use_ema=not a.raw_weights), a.T, a.n, a.seed)
    np.save(a.out, out)
    _emit(command="sample", out=str(a.out), shape=list(out.shape))


def _codec_config(a):
    return CodecConfig(coder=CoderConfig(64, 32, a.precision), resolution=a.resolution, clean=not a.no_clean)


def cmd_compress(a):
    _, model, x = _load_model_and_data(a)
    cm = CodecModel(model.schedule, model.denoiser, a.T_eval, model.V)
    blob = bbans_encode(x, cm, a.seed, _codec_config(a))
    Path(a.out).write_bytes(blob.to_bytes())
    ref = evaluate(model, x, [a.T_eval], n_samples=a.n_samples, seed=a.seed)[0]
    _emit(command="compress", out=str(a.out), examples=int(x.shape[0]), net_bpd=net_bpd(blob),
          neg_vlb_bpd=ref.bpd, neg_vlb_se=ref.se, stored_bytes=len(blob.to_bytes()))


def cmd_decompress(a):
    ckpt = load_checkpoint(a.checkpoint)
    model = ckpt.model(use_ema=not a.raw_weights)
    blob = CompressedBlob.from_bytes(Path(a.inp).read_bytes())
    cm = CodecModel(model.schedule, model.denoiser, blob.T, model.V)
    x = bbans_decode(blob, cm)
    np.save(a.out, x)
    _emit(command="decompress", out=str(a.out), shape=list(x.shape))


def cmd_schedule_analyze(a):
    out_dir = Path(a.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    ends = ScheduleEndpoints(a.gamma0, a.gamma1) if a.gamma0 is not None and a.gamma1 is not None else None
    if (a.gamma0 is None) != (a.gamma1 is None):
        raise ConfigurationError("give both --gamma0 and --gamma1 or neither")
    for kind in a.schedules.split(","):
        kind = kind.strip()
        if kind == "learned-monotonic":
            if not a.checkpoint:
                raise ConfigurationError("learned-monotonic analysis needs --checkpoint")
            sched = load_checkpoint(a.checkpoint).model().schedule
        else:
            sched = NoiseSchedule(kind, ends)
        written.append(str(write_analysis_csv(sched, out_dir / f"{kind}.csv", a.grid_size)))
    _emit(command="schedule-analyze", files=written)


# --- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vdm", description="Variational diffusion models on toy data.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-data", help="generate a toy dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    d = DataConfig()
    s.add_argument("--d", type=int, default=d.d)
    s.add_argument("--V", type=int, default=d.V)
    s.add_argument("--n-train", type=int, default=d.n_train)
    s.add_argument("--n-test", type=int, default=d.n_test)
    s.add_argument("--distribution", default=d.distribution)
    s.add_argument("--n-components", type=int, default=d.n_components)
    s.add_argument("--component-std", type=float, default=d.component_std)
    s.set_defaults(fn=cmd_make_data)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--resume")
    m, t = ModelConfig(), TrainConfig()
    s.add_argument("--mode", choices=("continuous", "discrete"), default=t.mode)
    s.add_argument("--T-train", type=int, default=t.T_train)
    s.add_argument("--steps", type=int, help=f"default {t.steps}; on resume, the remaining steps")
    s.add_argument("--batch-size", type=int, default=t.batch_size)
    s.add_argument("--lr", type=float, default=t.lr)
    s.add_argument("--schedule-lr", type=float, default=None)
    s.add_argument("--ema-decay", type=float, default=t.ema_decay)
    s.add_argument("--variance-min", dest="variance_min", action="store_true", default=None)
    s.add_argument("--no-variance-min", dest="variance_min", action="store_false")
    s.add_argument("--time-sampler", choices=("low-discrepancy", "iid-uniform"), default=t.time_sampler)
    s.add_argument("--schedule", choices=KINDS, default=m.schedule)
    s.add_argument("--gamma0", type=float, default=m.gamma0)
    s.add_argument("--gamma1", type=float, default=m.gamma1)
    s.add_argument("--schedule-width", type=int, default=m.schedule_width)
    s.add_argument("--width", type=int, default=m.width)
    s.add_argument("--n-blocks", type=int, default=m.n_blocks)
    s.add_argument("--emb-dim", type=int, default=m.emb_dim)
    s.add_argument("--fourier-min", type=int, default=m.fourier_min)
    s.add_argument("--fourier-max", type=int, default=m.fourier_max)
    s.add_argument("--log-every", type=int, default=t.log_every)
    s.add_argument("--log", help="CSV file for the training log")
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.set_defaults(fn=cmd_train)

    def model_args(s, data=True):
        s.add_argument("--checkpoint", required=True)
        if data:
            s.add_argument("--data", required=True)
            s.add_argument("--split", choices=("train", "test"), default="test")
        s.add_argument("--raw-weights", action="store_true", help="use raw instead of EMA weights")

    s = sub.add_parser("eval", help="evaluate the bound over T_eval values")
    model_args(s)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--T-eval", default="10,100,250,500,1000,inf")
    s.add_argument("--n-samples", type=int, default=16)
    s.add_argument("--bits-back", action="store_true")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sample", help="ancestral sampling")
    model_args(s, data=False)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--T", type=int, default=1000)
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sample)

    def codec_args(s):
        s.add_argument("--precision", type=int, default=CoderConfig().precision)
        s.add_argument("--resolution", type=float, default=CodecConfig().resolution)
        s.add_argument("--no-clean", action="store_true")

    s = sub.add_parser("compress", help="bits-back compress a data split")
    model_args(s)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--T-eval", type=int, default=100)
    s.add_argument("--n-samples", type=int, default=16)
    s.add_argument("--out", required=True)
    codec_args(s)
    s.set_defaults(fn=cmd_compress)

    s = sub.add_parser("decompress", help="decode a compressed blob")
    model_args(s, data=False)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_decompress)

    s = sub.add_parser("schedule-analyze", help="write schedule/weighting CSVs")
    s.add_argument("--schedules", default="log-snr-linear,beta-linear,alpha-cosine")
    s.add_argument("--gamma0", type=float)
    s.add_argument("--gamma1", type=float)
    s.add_argument("--checkpoint")
    s.add_argument("--grid-size", type=int, default=1001)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_schedule_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except VDMError as e:
        _fail(type(e).__name__, str(e))
    except OSError as e:
        _fail("IOError", f"{e.strerror or e}: {e.filename}" if e.filename else str(e))
    except (ValueError, TypeError) as e:
        _fail("ParameterError", str(e))
    return 0


if __name__ == "__main__":
    sys.exit(main())
