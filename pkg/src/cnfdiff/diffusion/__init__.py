"""Diffusion-based placement solver: graph encoding, denoiser, training and sampling."""
from .graph import HeteroGraph, UnplaceableCnf, build_hetero_graph
from .losses import LossContext, LossWeights, constraint_losses
from .model import Arch, DenoiserModel, denoise_predict, load_checkpoint, save_checkpoint
from .sampling import SampleResult, UntrainedModel, reverse_diffusion, sample
from .schedule import BadT, NoiseSchedule, cosine_schedule, forward_noise, reconstruct_y0
from .training import TrainConfig, TrainExample, make_examples, train

__all__ = [
    "HeteroGraph", "UnplaceableCnf", "build_hetero_graph", "LossContext", "LossWeights", "constraint_losses",
    "Arch", "DenoiserModel", "denoise_predict", "load_checkpoint", "save_checkpoint", "SampleResult",
    "UntrainedModel", "reverse_diffusion", "sample", "BadT", "NoiseSchedule", "cosine_schedule",
    "forward_noise", "reconstruct_y0", "TrainConfig", "TrainExample", "make_examples", "train",
]
