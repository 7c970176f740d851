"""Toy datasets on a V-level grid in [-1, 1]."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError
from .losses import grid_levels

DISTRIBUTIONS = ("mixture", "uniform")


@dataclass(frozen=True)
class DataConfig:
    d: int = 64
    V: int = 16
    n_train: int = 4096
    n_test: int = 512
    seed: int = 0
    distribution: str = "mixture"
    n_components: int = 8
    component_std: float = 0.15
    mean_range: float = 0.6

    def validate(self):
        if self.V < 2:
            raise ParameterError("V must be at least 2")
        if self.d < 1:
            raise ParameterError("d must be at least 1")
        if self.n_train < 0 or self.n_test < 0:
            raise ParameterError("split sizes must be nonnegative")
        if self.distribution not in DISTRIBUTIONS:
            raise ParameterError(f"unknown distribution {self.distribution!r}")
        if self.n_components < 1 or not self.component_std > 0:
            raise ParameterError("mixture needs at least one component and a positive std")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


@dataclass
class ToyDataset:
    train: np.ndarray
    test: np.ndarray
    config: DataConfig

    def split(self, name: str) -> np.ndarray:
        if name not in ("train", "test"):
            raise ParameterError(f"unknown split {name!r}")
        return self.train if name == "train" else self.test

    def save(self, path) -> Path:
        path = Path(path)
        with open(path, "wb") as fh:
            np.savez(fh, train=self.train, test=self.test,
                     config=np.frombuffer(json.dumps(asdict(self.config)).encode(), dtype=np.uint8))
        return path

    @classmethod
    def load(cls, path) -> "ToyDataset":
        try:
            with np.load(path) as z:
                cfg = DataConfig(**json.loads(z["config"].tobytes().decode()))
                return cls(z["train"], z["test"], cfg)
        except (KeyError, ValueError, TypeError) as e:
            raise FormatError(f"not a toy dataset file: {e}") from None


def quantize(values, V: int) -> np.ndarray:
    idx = np.clip(np.rint((np.asarray(values) + 1.0) * (V - 1) / 2.0), 0, V - 1).astype(np.int64)
    return grid_levels(V)[idx]


def make_dataset(config: DataConfig | None = None, **overrides) -> ToyDataset:
    """Draw train and test examples from one seeded stream, then split by position."""
    cfg = config or DataConfig()
    if overrides:
        cfg = DataConfig(**{**asdict(cfg), **overrides})
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_train + cfg.n_test
    if cfg.distribution == "uniform":
        x = grid_levels(cfg.V)[rng.integers(0, cfg.V, size=(n, cfg.d))]
    else:
        means = rng.uniform(-cfg.mean_range, cfg.mean_range, size=(cfg.n_components, cfg.d))
        comp = rng.integers(0, cfg.n_components, size=n)
        x = quantize(means[comp] + cfg.component_std * rng.standard_normal((n, cfg.d)), cfg.V)
    return ToyDataset(x[: cfg.n_train].copy(), x[cfg.n_train:].copy(), cfg)


def empirical_entropy_bits(x, V: int) -> float:
    """Per-dimension entropy (bits) of the pooled histogram of level indices."""
    idx = np.rint((np.asarray(x) + 1.0) * (V - 1) / 2.0).astype(np.int64).ravel()
    p = np.bincount(idx, minlength=V) / idx.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())
