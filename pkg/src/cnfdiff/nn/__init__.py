"""Small numpy autodiff core used by the denoiser."""
from .layers import MLP, Dense, Embedding, Module, Sage
from .optim import Adam
from .tensor import NotScalar, ShapeMismatch, StaleTape, Tensor, backward, no_grad

__all__ = [
    "Tensor", "backward", "no_grad", "ShapeMismatch", "NotScalar", "StaleTape",
    "Module", "Dense", "MLP", "Sage", "Embedding", "Adam",
]
