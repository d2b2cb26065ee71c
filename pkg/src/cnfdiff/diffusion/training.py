"""Denoiser training: masked epsilon-prediction plus weighted constraint penalties."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import Instance, Placement
from ..nn import tensor as T
from ..nn.optim import Adam
from .graph import build_hetero_graph
from .losses import LOSS_NAMES, LossContext, LossWeights, constraint_losses, weighted_total
from .model import Arch, DenoiserModel, denoise_predict
from .schedule import cosine_schedule, forward_noise, reconstruct_y0

log = logging.getLogger(__name__)

TRAIN_LOG_SCHEMA = "train.v1"
# clean estimates are clipped to a margin around the {0, 1} data range before
# they feed the penalties (and the sampler's next state)
Y0_CLIP = (-1.0, 2.0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    steps_per_instance: int = 4
    lr: float = 1e-3
    T: int = 100
    hidden_dim: int = 64
    embed_dim: int = 8
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.as_dict()
        return d


@dataclass
class TrainExample:
    instance: Instance
    y0: np.ndarray  # F x C one-hot target

    def __post_init__(self):
        self.graph = build_hetero_graph(self.instance)
        self.ctx = LossContext(self.instance)
        if self.y0.shape != self.graph.mask.shape:
            raise ValueError("target matrix does not match the instance")
        if np.any(self.y0[~self.graph.mask] != 0):
            raise ValueError("target places a CNF on a forbidden cloud")


def make_examples(pairs) -> list[TrainExample]:
    """``pairs`` of ``(instance, placement)``; placements usually come from the exact solver."""
    out = []
    for inst, pl in pairs:
        y0 = pl.assign.astype(float) if isinstance(pl, Placement) else np.asarray(pl, dtype=float)
        out.append(TrainExample(inst, y0))
    return out


def train_step(model, example: TrainExample, t: int, noise: np.ndarray, schedule, weights: LossWeights):
    """Forward pass of one noisy sample; returns ``(total, denoise, {name: penalty})`` tensors."""
    g = example.graph
    mask = g.mask
    eps = np.where(mask, noise, 0.0)
    y_t = forward_noise(example.y0, t, eps, mask, schedule)
    eps_hat = denoise_predict(model, g, y_t, schedule.sigma[t])

    diff = T.sub(eps_hat, eps)
    denoise = T.scale(T.sum(T.square(diff)), 1.0 / max(int(mask.sum()), 1))

    y0_hat = T.clip(reconstruct_y0(y_t, eps_hat, t, schedule), *Y0_CLIP)
    P = T.masked_softmax(y0_hat, mask)
    penalties = constraint_losses(P, example.ctx)
    total = T.reshape(denoise, ()) + weighted_total(penalties, weights)
    return total, denoise, penalties


def train(examples: list[TrainExample], config: TrainConfig = TrainConfig(), model: DenoiserModel | None = None,
          progress=None):
    """Train (or continue training) a denoiser; returns ``(model, log)``.

    The log holds one record per epoch with the mean of every loss component.
    Everything random flows from ``config.seed``.
    """
    if not examples:
        raise ValueError("no training examples")
    if model is None:
        model = DenoiserModel(Arch(hidden_dim=config.hidden_dim, embed_dim=config.embed_dim), seed=config.seed)
    schedule = cosine_schedule(config.T)
    opt = Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng([int(config.seed) % 2**63, 1])

    epochs = []
    for epoch in range(config.epochs):
        sums = {"total": 0.0, "denoise": 0.0, **{k: 0.0 for k in LOSS_NAMES}}
        n = 0
        order = rng.permutation(len(examples))
        for idx in order:
            ex = examples[int(idx)]
            for _ in range(config.steps_per_instance):
                t = int(rng.integers(1, config.T + 1))
                noise = rng.standard_normal(ex.graph.mask.shape)
                opt.zero_grad()
                total, denoise, pens = train_step(model, ex, t, noise, schedule, config.weights)
                T.backward(total)
                opt.step()
                model.trained_steps += 1
                sums["total"] += float(total.data)
                sums["denoise"] += float(denoise.data)
                for k in LOSS_NAMES:
                    sums[k] += float(pens[k].data)
                n += 1
        rec = {"epoch": epoch + 1, **{k: v / n for k, v in sums.items()}}
        epochs.append(rec)
        if progress is not None:
            progress(rec)
        log.debug("epoch %d total=%.4f denoise=%.4f", epoch + 1, rec["total"], rec["denoise"])

    train_log = {
        "schema": TRAIN_LOG_SCHEMA,
        "config": config.to_dict(),
        "schedule_hash": schedule.digest(),
        "num_examples": len(examples),
        "epochs": epochs,
        "checkpoint_fingerprint": model.fingerprint(),
    }
    return model, train_log
