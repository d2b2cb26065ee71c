"""Reverse diffusion sampling and best-of-K selection."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from ..core import FeasibilityReport, Instance, Placement, check_feasibility, dumps_json, total_cost
from ..nn import tensor as T
from ..nn.tensor import no_grad
from .graph import build_hetero_graph
from .model import DenoiserModel
from .schedule import NoiseSchedule, cosine_schedule
from .training import Y0_CLIP

log = logging.getLogger(__name__)

SAMPLES_SCHEMA = "samples.v1"


class UntrainedModel(UserWarning):
    pass


@dataclass(frozen=True)
class Candidate:
    chain: int
    placement: Placement
    cost: float
    report: FeasibilityReport

    @property
    def feasible(self) -> bool:
        return self.report.feasible


@dataclass(frozen=True)
class SampleResult:
    candidates: tuple[Candidate, ...]  # ranked: feasible by cost, then infeasible by violation size
    schedule_T: int
    seed: int

    @property
    def best(self) -> Candidate:
        return self.candidates[0]

    @property
    def any_feasible(self) -> bool:
        return bool(self.candidates) and self.candidates[0].feasible

    @property
    def feasible_count(self) -> int:
        return sum(c.feasible for c in self.candidates)

    def to_json(self) -> dict:
        return {
            "schema": SAMPLES_SCHEMA,
            "T": self.schedule_T,
            "seed": self.seed,
            "num_samples": len(self.candidates),
            "any_feasible": self.any_feasible,
            "best_chain": self.best.chain if self.candidates else None,
            "samples": [
                {
                    "rank": r,
                    "chain": c.chain,
                    "cost": c.cost,
                    "feasible": c.feasible,
                    "placement": c.placement.to_json(),
                    "report": c.report.to_json(),
                }
                for r, c in enumerate(self.candidates)
            ],
        }

    def dumps(self) -> str:
        return dumps_json(self.to_json())


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) % 2**63, int(chain)])


def reverse_diffusion(model: DenoiserModel, instance: Instance, K: int, schedule: NoiseSchedule, seed: int) -> np.ndarray:
    """Run ``K`` independent reverse chains; returns the ``K x F x C`` final clean estimates.

    The instance encoding and the noise-level mixing are shared by all chains
    at a given step; only the pair decoder sees each chain's own state.  Each
    chain draws its noise from its own stream, so results do not depend on K
    or on how chains are grouped.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    g = build_hetero_graph(instance)
    mask = g.mask
    F, C = mask.shape
    rows, cols = g.tc_edges[:, 0], g.tc_edges[:, 1]
    Tn = schedule.T
    rngs = [chain_rng(seed, k) for k in range(K)]

    with no_grad():
        encoded = model.encode(g)
        y = np.stack([schedule.sigma[Tn] * np.where(mask, r.standard_normal((F, C)), 0.0) for r in rngs])
        y0_hat = y
        for t in range(Tn, 0, -1):
            mixed = model.mix(g, encoded, schedule.sigma[t])
            eps = model.decode_batch(g, mixed, y[:, rows, cols])
            eps_hat = np.zeros_like(y)
            eps_hat[:, rows, cols] = eps
            a = max(float(schedule.alpha_bar[t]), 1e-12)
            y0_hat = (y - schedule.sigma[t] * eps_hat) / np.sqrt(a)
            if t - 1 > 0:
                mu = np.sqrt(schedule.alpha_bar[t - 1]) * np.clip(y0_hat, *Y0_CLIP)
                zeta = np.stack([r.standard_normal((F, C)) for r in rngs])
                y = np.where(mask, mu + schedule.sigma[t - 1] * zeta, 0.0)
    return np.where(mask, y0_hat, 0.0)


def sample(model: DenoiserModel, instance: Instance, K: int = 50, schedule: NoiseSchedule | None = None,
           seed: int = 0) -> SampleResult:
    """Best-of-K placement sampling.  ``candidates[0]`` is the cheapest feasible
    sample, or, if none is feasible, the one with the smallest total violation."""
    if schedule is None:
        schedule = cosine_schedule(100)
    if getattr(model, "trained_steps", None) == 0:
        warnings.warn("sampling from an untrained model", UntrainedModel, stacklevel=2)
    mask = instance.allowed_mask()
    if mask.shape[0] and not mask.any(axis=1).all():
        raise ValueError("a CNF position has no allowed cloud")
    final = reverse_diffusion(model, instance, K, schedule, seed)
    C = instance.num_clouds
    cands = []
    for k in range(K):
        with no_grad():
            P = T.masked_softmax(T.Tensor(final[k]), mask).data
        choices = P.argmax(axis=1) if P.size else np.zeros(0, dtype=int)
        pl = Placement.from_choices(choices, C)
        cands.append(Candidate(k, pl, total_cost(instance, pl), check_feasibility(instance, pl)))
    cands.sort(key=lambda c: (0, c.cost, c.chain) if c.feasible else (1, c.report.total_magnitude(), c.chain))
    return SampleResult(tuple(cands), schedule.T, int(seed))
