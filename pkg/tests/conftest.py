import time

import numpy as np
import pytest

from vdmkit import autodiff as ad
from vdmkit.checkpoint import Checkpoint, save_checkpoint
from vdmkit.data import make_dataset
from vdmkit.denoiser import DenoiserParams, FourierConfig
from vdmkit.model import ModelConfig, VDModel
from vdmkit.schedule import MonotonicNetParams, NoiseSchedule, ScheduleEndpoints
from vdmkit.training import TrainConfig, Trainer

# the toy setup shared by the acceptance tests and the CLI tests
TOY_DATA = dict(d=64, V=16, n_train=4096, n_test=1024, seed=0)
TOY_MODEL = ModelConfig()
TOY_TRAIN = TrainConfig(mode="continuous", steps=9000, batch_size=128, lr=2e-3, variance_min=True,
                        log_every=100, seed=0)


def random_denoiser(d, rng, out_scale=0.3, **kw):
    """Small denoiser whose output layer is not zero, so every weight has a gradient."""
    kw = {"fourier": FourierConfig(1, 2), "width": 12, "n_blocks": 1, "emb_dim": 4, **kw}
    den = DenoiserParams.init(d, rng, **kw)
    w = den.weights["out.w"]
    w.assign(rng.normal(0.0, out_scale, w.value.shape))
    den.weights["out.b"].assign(rng.normal(0.0, 0.1, d))
    return den


def random_learned_schedule(rng, width=8, endpoints=None):
    """Learned schedule with a visibly curved shape (l3 weights of order one)."""
    net = MonotonicNetParams.init(rng, width, l3_scale=1.0)
    return NoiseSchedule("learned-monotonic", endpoints or ScheduleEndpoints(-6.0, 6.0), net)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_data():
    return make_dataset(**TOY_DATA)


@pytest.fixture(scope="session")
def trained(toy_data, tmp_path_factory):
    """Continuous-time model with a variance-minimised schedule, trained once per session."""
    t0 = time.time()
    rng = np.random.default_rng(TOY_TRAIN.seed)
    trainer = Trainer(VDModel.init(TOY_MODEL, rng), toy_data.train, TOY_TRAIN, rng)
    trainer.run()
    path = tmp_path_factory.mktemp("toy") / "toy.ckpt"
    save_checkpoint(Checkpoint.from_trainer(trainer, TOY_MODEL, toy_data.config.digest()), path)
    data_path = path.with_name("toy.npz")
    toy_data.save(data_path)
    return {"trainer": trainer, "model": trainer.ema_model(), "data": toy_data, "ckpt": path,
            "data_path": data_path, "train_seconds": time.time() - t0}


@pytest.fixture(autouse=True)
def _fresh_grad_mode():
    # a failing test inside no_grad must not leak the mode into the next one
    yield
    ad._grad_enabled = True


def random_pmf(rng, k, precision):
    """Integer table over k symbols summing to 2^precision, every entry >= 1."""
    w = rng.dirichlet(np.ones(k))
    pmf = np.maximum(np.floor(w * (1 << precision)), 1).astype(np.int64)
    pmf[np.argmax(pmf)] += (1 << precision) - pmf.sum()
    return pmf


def ans_fuzz(rng, lanes, n_calls, config):
    """Random interleaving of pushes, pops and undos, unwound back to the start.

    Each call is one vectorised op over all lanes.  Pushes code random symbols;
    pops draw symbols from the message (as bits-back does); undo reverses the
    most recent op.  Returns (number of lane-operations, mismatches).
    """
    from vdmkit import ans

    start = ans.random_state(lanes, 4 * lanes, rng, config)
    state, log, mismatches, ops = start, [], 0, 0
    tables = [random_pmf(rng, k, config.precision) for k in (2, 3, 17, 256)]
    tables += [np.stack([random_pmf(rng, k, config.precision) for _ in range(lanes)]) for k in (2, 5, 40)]
    for _ in range(n_calls):
        r = rng.random()
        if log and r < 0.3:
            kind, pmf, sym, before = log.pop()
            if kind == "push":
                got, state = ans.ans_pop(state, pmf)
                mismatches += int(np.sum(got != sym))
            else:
                state = ans.ans_push(state, sym, pmf)
            mismatches += int(not state.same_as(before)) if rng.random() < 0.01 else 0
        elif r < 0.75 or state.stream_words < lanes:
            pmf = tables[rng.integers(len(tables))]
            sym = rng.integers(0, pmf.shape[-1], lanes)
            log.append(("push", pmf, sym, state))
            state = ans.ans_push(state, sym, pmf)
        else:
            pmf = tables[rng.integers(len(tables))]
            sym, new = ans.ans_pop(state, pmf)
            log.append(("pop", pmf, sym, state))
            state = new
        ops += lanes
    while log:
        kind, pmf, sym, _ = log.pop()
        if kind == "push":
            got, state = ans.ans_pop(state, pmf)
            mismatches += int(np.sum(got != sym))
        else:
            state = ans.ans_push(state, sym, pmf)
        ops += lanes
    return ops, mismatches + int(not state.same_as(start))


# --- acceptance summary ---------------------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """report(n, ok, detail): record a PASS/FAIL line for acceptance criterion n, then assert it."""

    def report(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[n] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
