"""Variational diffusion models on discrete toy data, with bits-back coding."""

from . import autodiff
from .bitsback import (CodecConfig, CodecModel, CompressedBlob, bbans_decode, bbans_encode,
                       discretize_gaussian, net_bpd)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import DataConfig, ToyDataset, make_dataset
from .denoiser import DenoiserParams, FourierConfig, predict_noise
from .errors import *  # noqa: F401,F403
from .evaluation import EvalRow, PairedDraws, evaluate
from .losses import (VlbBreakdown, continuous_diffusion_loss, discrete_diffusion_loss, prior_loss,
                     recon_loss, vlb_bpd, weighted_continuous_loss)
from .model import ModelConfig, VDModel
from .sampling import sample
from .schedule import MonotonicNetParams, NoiseSchedule, ScheduleEndpoints
from .training import TrainConfig, Trainer

__version__ = "0.1.0"
