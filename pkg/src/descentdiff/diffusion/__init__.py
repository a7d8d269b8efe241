"""Denoising diffusion over scaled trajectory plans."""

from .checkpoint import (ArchitectureMismatchError, CheckpointError, CorruptCheckpointError,
                         load_checkpoint, save_checkpoint)
from .network import NetworkConfig, ScoreNetwork, build_network
from .sampling import InpaintMask, read_mask_file, reverse_step, sample
from .schedule import NoiseSchedule, build_cosine_schedule, forward_noise
from .training import TrainConfig, TrainState, train, training_step

__all__ = [
    "ArchitectureMismatchError", "CheckpointError", "CorruptCheckpointError", "InpaintMask",
    "NetworkConfig", "NoiseSchedule", "ScoreNetwork", "TrainConfig", "TrainState",
    "build_cosine_schedule", "build_network", "forward_noise", "load_checkpoint",
    "read_mask_file", "reverse_step", "sample", "save_checkpoint", "train", "training_step",
]
