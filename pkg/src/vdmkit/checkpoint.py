"""Versioned little-endian checkpoint files.

Layout: magic ``VDMK``, u32 version, u64 manifest length, UTF-8 JSON manifest,
then raw float64 (little-endian) arrays.  The manifest lists every array as
(group, name, shape, offset) next to the configs, RNG state and step count.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, MismatchError
from .model import ModelConfig, VDModel
from .training import TrainConfig, Trainer

MAGIC = b"VDMK"
VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    ema: dict[str, np.ndarray] = field(default_factory=dict)
    train_config: TrainConfig | None = None
    optimizer: dict = field(default_factory=dict)
    rng_state: dict | None = None
    dataset_hash: str = ""
    step: int = 0
    version: int = VERSION

    def model(self, use_ema: bool = True) -> VDModel:
        m = VDModel.init(self.model_config, np.random.default_rng(0))
        m.load_values(self.ema if (use_ema and self.ema) else self.params)
        return m

    def check_dataset(self, digest: str):
        if self.dataset_hash and digest != self.dataset_hash:
            raise MismatchError("checkpoint was trained on a different dataset configuration")

    @classmethod
    def from_trainer(cls, trainer: Trainer, model_config: ModelConfig, dataset_hash: str) -> "Checkpoint":
        return cls(model_config, trainer.model.named_values(), {k: v.copy() for k, v in trainer.ema.items()},
                   trainer.config, trainer.optimizer.state_dict(), trainer.rng.bit_generator.state,
                   dataset_hash, trainer.step_count)

    def trainer(self, data) -> Trainer:
        """Rebuild a trainer that continues exactly where this checkpoint stopped."""
        model = self.model(use_ema=False)
        rng = np.random.default_rng()
        if self.rng_state is not None:
            rng.bit_generator.state = self.rng_state
        tr = Trainer(model, data, self.train_config or TrainConfig(), rng, ema={k: v.copy() for k, v in self.ema.items()})
        if self.optimizer:
            tr.optimizer.load_state_dict(self.optimizer)
        return tr


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    arrays = []
    entries = []
    offset = 0

    def add(group, name, arr):
        nonlocal offset
        shape = list(np.shape(arr))  # ascontiguousarray promotes 0-d to 1-d
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"group": group, "name": name, "shape": shape, "offset": offset})
        arrays.append(a.tobytes())
        offset += a.nbytes

    for k in sorted(ckpt.params):
        add("params", k, ckpt.params[k])
    for k in sorted(ckpt.ema):
        add("ema", k, ckpt.ema[k])
    for slot in ("m", "v"):
        for k in sorted(ckpt.optimizer.get(slot, {})):
            add(f"adam_{slot}", k, ckpt.optimizer[slot][k])
    manifest = {
        "model_config": asdict(ckpt.model_config),
        "train_config": asdict(ckpt.train_config) if ckpt.train_config else None,
        "adam_t": int(ckpt.optimizer.get("t", 0)),
        "rng_state": ckpt.rng_state,
        "dataset_hash": ckpt.dataset_hash,
        "step": ckpt.step,
        "arrays": entries,
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(a)
    return path


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    try:
        version, n = struct.unpack("<IQ", data[4:16])
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        manifest = json.loads(data[16:16 + n].decode())
        body = data[16 + n:]
        groups: dict[str, dict[str, np.ndarray]] = {}
        for e in manifest["arrays"]:
            count = int(np.prod(e["shape"], dtype=np.int64))
            raw = body[e["offset"]: e["offset"] + 8 * count]
            if len(raw) != 8 * count:
                raise FormatError("truncated checkpoint payload")
            arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(e["shape"])
            groups.setdefault(e["group"], {})[e["name"]] = arr
        tc = manifest.get("train_config")
        optimizer = {"t": manifest.get("adam_t", 0), "m": groups.get("adam_m", {}), "v": groups.get("adam_v", {})}
        return Checkpoint(ModelConfig(**manifest["model_config"]), groups.get("params", {}), groups.get("ema", {}),
                          TrainConfig(**tc) if tc else None, optimizer, manifest.get("rng_state"),
                          manifest.get("dataset_hash", ""), int(manifest.get("step", 0)), version)
    except (KeyError, ValueError, TypeError, struct.error) as e:
        raise FormatError(f"malformed checkpoint: {e}") from None
