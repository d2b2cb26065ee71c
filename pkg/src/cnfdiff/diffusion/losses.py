"""Differentiable expected-violation penalties on a row-stochastic assignment matrix."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..core import Instance, sfc_offsets
from ..nn import tensor as T
from ..nn.tensor import Tensor

LOSS_NAMES = ("cap", "rest", "adj", "bw", "delay", "place")


@dataclass(frozen=True)
class LossWeights:
    cap: float = 1.0
    rest: float = 1.0
    adj: float = 1.0
    bw: float = 1.0
    delay: float = 1.0
    place: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {k} must be finite and >= 0, got {v}")

    def as_dict(self):
        return asdict(self)


class LossContext:
    """Constant arrays an instance contributes to the penalties, built once."""

    def __init__(self, instance: Instance):
        net = instance.network
        C = net.num_clouds
        types = instance.position_types()
        cat = instance.cnf_catalog
        self.num_clouds = C
        self.mask = instance.allowed_mask()
        self.cpu = np.array([cat[m].cpu_demand for m in types], dtype=float).reshape(-1, 1)
        self.ram = np.array([cat[m].ram_demand for m in types], dtype=float).reshape(-1, 1)
        self.proc = np.array([cat[m].proc_delay for m in types], dtype=float)
        self.cpu_cap = net.cpu_capacity.reshape(-1, 1)
        self.ram_cap = net.ram_capacity.reshape(-1, 1)
        self.cpu_scale = float(net.cpu_capacity.mean())
        self.ram_scale = float(net.ram_capacity.mean())

        adj = net.adjacency
        self.nonadjacent = (~adj).astype(float)
        self.offdiag = 1.0 - np.eye(C)
        self.bandwidth = np.array(net.bandwidth, dtype=float)
        pos_bw = self.bandwidth[self.bandwidth > 0]
        self.bw_scale = float(pos_bw.mean()) if pos_bw.size else 1.0
        hop = np.zeros((C, C))
        linked = (self.bandwidth > 0) & (self.offdiag > 0)
        hop[linked] = instance.message_size / self.bandwidth[linked]
        self.hop_delay = hop

        edges = instance.flat_edges()
        self.src = np.array([e[0] for e in edges], dtype=int)
        self.dst = np.array([e[1] for e in edges], dtype=int)
        self.rate = np.array([e[2] for e in edges], dtype=float).reshape(-1, 1)

        # per SFC: local topological structure for the longest expected path
        self.sfcs = []
        k = 0
        for sfc, off in zip(instance.sfcs, sfc_offsets(instance)):
            preds = [[] for _ in sfc.nodes]
            for a, b, _ in sfc.dag_edges:
                preds[b].append((a, k))  # k indexes self.src/dst/rate
                k += 1
            self.sfcs.append((off, len(sfc), preds, float(sfc.delay_budget)))


def constraint_losses(P: Tensor, ctx: LossContext) -> dict[str, Tensor]:
    """Expected-violation penalties; all zero (entropy included) on a one-hot feasible ``P``."""
    P = T.const(P)
    F = P.shape[0]
    out = {}

    cpu_use = T.matmul(T.transpose(P), ctx.cpu)  # C x 1
    ram_use = T.matmul(T.transpose(P), ctx.ram)
    out["cap"] = (T.scale(T.sum(T.relu(cpu_use - ctx.cpu_cap)), 1.0 / ctx.cpu_scale)
                  + T.scale(T.sum(T.relu(ram_use - ctx.ram_cap)), 1.0 / ctx.ram_scale))

    out["rest"] = T.sum(T.mul(P, (~ctx.mask).astype(float)))

    if len(ctx.src):
        Ps = T.take_rows(P, ctx.src)  # E x C
        Pd = T.take_rows(P, ctx.dst)
        out["adj"] = T.sum(T.mul(T.matmul(Ps, ctx.nonadjacent), Pd))
        load = T.matmul(T.transpose(T.mul(Ps, np.repeat(ctx.rate, ctx.num_clouds, axis=1))), Pd)  # C x C
        over = T.mul(T.relu(load - ctx.bandwidth), ctx.offdiag)
        out["bw"] = T.scale(T.sum(over), 1.0 / ctx.bw_scale)
        hop = T.sum(T.mul(T.matmul(Ps, ctx.hop_delay), Pd), axis=1)  # E expected transmission delays
        hop = T.reshape(hop, (-1, 1))
    else:
        out["adj"] = T.Tensor(0.0)
        out["bw"] = T.Tensor(0.0)
        hop = None

    delay_terms = []
    for off, n, preds, budget in ctx.sfcs:
        finish = []
        for j in range(n):
            proc = T.Tensor(np.array([[ctx.proc[off + j]]]))
            best = None
            for p, k in preds[j]:
                cand = finish[p] + T.take_rows(hop, [k])
                best = cand if best is None else T.maximum(best, cand)
            finish.append(proc if best is None else best + proc)
        total = finish[0]
        for x in finish[1:]:
            total = T.maximum(total, x)
        scale = 1.0 / budget if budget > 0 else 1.0
        delay_terms.append(T.scale(T.relu(total - budget), scale))
    out["delay"] = T.sum(T.concat(delay_terms, axis=0)) if delay_terms else T.Tensor(0.0)

    out["place"] = T.scale(T.sum(T.plogp(P)), -1.0 / F) if F else T.Tensor(0.0)
    return out


def weighted_total(losses: dict[str, Tensor], weights: LossWeights) -> Tensor:
    total = None
    for name in LOSS_NAMES:
        w = getattr(weights, name)
        if w == 0:
            continue
        term = T.scale(T.reshape(losses[name], ()), w)
        total = term if total is None else total + term
    return total if total is not None else T.Tensor(0.0)
