from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeMismatch, Tensor


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class Module:
    """Parameter container; submodules and tensors are discovered by attribute order."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for k, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{k}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeMismatch(f"{name}: checkpoint {arr.shape} vs model {p.shape}")
            p.data = arr.copy()


class Dense(Module):
    def __init__(self, in_dim, out_dim, rng):
        self.weight = Tensor(glorot(rng, out_dim, in_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    @property
    def in_dim(self):
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class MLP(Module):
    """Dense stack with rectifiers between layers and none after the last."""

    def __init__(self, dims, rng):
        self.layers = [Dense(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1:
                x = T.relu(x)
        return x


class Embedding(Module):
    def __init__(self, num, dim, rng):
        self.table = Tensor(glorot(rng, num, dim), requires_grad=True)

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= self.table.shape[0]):
            raise IndexError(f"embedding id out of range [0, {self.table.shape[0]})")
        return T.take_rows(self.table, ids)


class Sage(Module):
    """Mean-aggregation message passing with optional edge attributes.

    ``out_v = act(W_self h_v + W_neigh mean_{u->v} [h_u || a_uv] + b)``; a node
    without in-edges keeps only the self term.  Source and destination node
    sets may differ (bipartite use).
    """

    def __init__(self, in_dim, out_dim, rng, edge_dim=0, src_dim=None, activation=True):
        src_dim = in_dim if src_dim is None else src_dim
        self.self_weight = Tensor(glorot(rng, out_dim, in_dim), requires_grad=True)
        self.neigh_weight = Tensor(glorot(rng, out_dim, src_dim + edge_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        self.edge_dim = edge_dim
        self.activation = activation

    def __call__(self, h_dst: Tensor, edges, edge_attrs=None, h_src: Tensor | None = None) -> Tensor:
        h_src = h_dst if h_src is None else h_src
        edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
        n_dst = h_dst.shape[0]
        if edges.size and (edges[:, 0].max() >= h_src.shape[0] or edges[:, 1].max() >= n_dst or edges.min() < 0):
            raise ShapeMismatch("sage: edge references a missing node")
        out = T.linear(h_dst, self.self_weight, self.bias)
        if len(edges):
            msg = T.take_rows(h_src, edges[:, 0])
            if self.edge_dim:
                if edge_attrs is None or edge_attrs.shape != (len(edges), self.edge_dim):
                    raise ShapeMismatch(f"sage: expected edge attrs of shape {(len(edges), self.edge_dim)}")
                msg = T.concat([msg, T.const(edge_attrs)], axis=1)
            agg = T.segment_mean(msg, edges[:, 1], n_dst)
            out = out + T.linear(agg, self.neigh_weight)
        return T.relu(out) if self.activation else out
