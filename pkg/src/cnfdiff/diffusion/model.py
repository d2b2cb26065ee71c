"""GNN noise predictor over the heterogeneous placement graph."""
from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..core import dumps_json
from ..nn import tensor as T
from ..nn.layers import MLP, Embedding, Module, Sage
from ..nn.tensor import ShapeMismatch, Tensor
from .graph import NUM_CLOUD_TYPES, NUM_RESTRICTION_KINDS, HeteroGraph

MODEL_SCHEMA = "model.v1"
SIGMA_FLOOR = 1e-4


@dataclass(frozen=True)
class Arch:
    hidden_dim: int = 64
    embed_dim: int = 8
    encoder_layers: int = 2


class DenoiserModel(Module):
    """Predicts the masked noise of a noisy assignment matrix.

    The forward pass is split so callers can reuse the parts that do not depend
    on the noisy matrix: :meth:`encode` (instance only), :meth:`mix` (adds the
    noise-level embedding and runs the bipartite exchange) and :meth:`decode`
    (per allowed pair, needs ``Y_t``).
    """

    def __init__(self, arch: Arch = Arch(), seed: int = 0):
        rng = np.random.default_rng(seed)
        D, E = arch.hidden_dim, arch.embed_dim
        self.arch = arch
        self.seed = seed
        self.trained_steps = 0
        self.cloud_type_embedding = Embedding(NUM_CLOUD_TYPES, E, rng)
        self.cnf_restriction_embedding = Embedding(NUM_RESTRICTION_KINDS, E, rng)
        self.time_mlp = MLP([1, D, D], rng)
        self.cloud_encoder = [Sage(3 + E if k == 0 else D, D, rng, edge_dim=1) for k in range(arch.encoder_layers)]
        self.cnf_encoder = [Sage(3 + E if k == 0 else D, D, rng, edge_dim=4) for k in range(arch.encoder_layers)]
        self.cross_t2c = Sage(D, D, rng)
        self.cross_c2t = Sage(D, D, rng)
        self.decoder = MLP([2 * D + 1, D, D, 1], rng)

    # -- pipeline stages ----------------------------------------------------

    def encode(self, g: HeteroGraph):
        x_c = T.concat([T.const(g.cloud_feats), self.cloud_type_embedding(g.cloud_type_ids)], axis=1)
        x_t = T.concat([T.const(g.cnf_feats), self.cnf_restriction_embedding(g.cnf_restriction_ids)], axis=1)
        for layer in self.cloud_encoder:
            x_c = layer(x_c, g.cc_edges, g.cc_attrs)
        for layer in self.cnf_encoder:
            x_t = layer(x_t, g.tt_edges, g.tt_attrs)
        return x_c, x_t

    def time_embedding(self, sigma: float) -> Tensor:
        z = np.array([[np.log(max(float(sigma), SIGMA_FLOOR))]])
        return T.reshape(self.time_mlp(T.const(z)), (self.arch.hidden_dim,))

    def mix(self, g: HeteroGraph, encoded, sigma: float):
        h_c, h_t = encoded
        t_emb = self.time_embedding(sigma)
        h_c = h_c + T.broadcast_rows(t_emb, h_c.shape[0])
        h_t = h_t + T.broadcast_rows(t_emb, h_t.shape[0])
        h_c2 = h_c + self.cross_t2c(h_c, g.tc_edges, h_src=h_t)
        h_t2 = h_t + self.cross_c2t(h_t, g.ct_edges, h_src=h_c2)
        return h_c2, h_t2

    def decode(self, g: HeteroGraph, mixed, y_pairs: Tensor) -> Tensor:
        """Scores for the allowed pairs; ``y_pairs`` is ``[B * P, 1]`` for ``B``
        stacked noisy matrices, output has the same shape."""
        h_c, h_t = mixed
        P = len(g.tc_edges)
        if y_pairs.shape[0] % max(P, 1) or y_pairs.shape[1:] != (1,):
            raise ShapeMismatch(f"decode: {y_pairs.shape} is not a stack of {P} pairs")
        reps = y_pairs.shape[0] // P if P else 0
        f_idx = np.tile(g.tc_edges[:, 0], reps)
        c_idx = np.tile(g.tc_edges[:, 1], reps)
        z = T.concat([T.take_rows(h_t, f_idx), T.take_rows(h_c, c_idx), y_pairs], axis=1)
        return self.decoder(z)

    def decode_batch(self, g: HeteroGraph, mixed, y_pairs: np.ndarray) -> np.ndarray:
        """Inference-only :meth:`decode` for ``y_pairs`` of shape ``[B, P]``.

        The first decoder layer is linear in ``[h_t || h_c || y]``, so it splits
        into a per-CNF part, a per-cloud part and a per-pair ``y`` column.  The
        first two are computed once and shared by every stacked matrix.
        """
        h_c, h_t = (np.asarray(getattr(h, "data", h)) for h in mixed)
        D = h_t.shape[1]
        first, *rest = self.decoder.layers
        W, b = first.weight.data, first.bias.data
        base = (h_t @ W[:, :D].T + b)[g.tc_edges[:, 0]] + (h_c @ W[:, D:2 * D].T)[g.tc_edges[:, 1]]
        z = base[None, :, :] + y_pairs[:, :, None] * W[:, 2 * D]
        for layer in rest:
            z = np.maximum(z, 0.0) @ layer.weight.data.T + layer.bias.data
        return z[:, :, 0]

    def __call__(self, g: HeteroGraph, y_t, sigma: float) -> Tensor:
        return denoise_predict(self, g, y_t, sigma)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def denoise_predict(model: DenoiserModel, g: HeteroGraph, y_t, sigma: float) -> Tensor:
    """Predicted noise ``F x C``; zero on forbidden pairs."""
    y = T.const(y_t)
    if y.shape != g.mask.shape:
        raise ShapeMismatch(f"noisy matrix {y.shape} vs mask {g.mask.shape}")
    mixed = model.mix(g, model.encode(g), sigma)
    rows, cols = g.tc_edges[:, 0], g.tc_edges[:, 1]
    y_pairs = T.reshape(T.gather_pairs(y, rows, cols), (-1, 1))
    scores = model.decode(g, mixed, y_pairs)
    return T.scatter_pairs(scores, rows, cols, g.mask.shape)


# --------------------------------------------------------------------------
# checkpoints


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "float64", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def save_checkpoint(model: DenoiserModel, path, extra: dict | None = None) -> None:
    doc = {
        "schema": MODEL_SCHEMA,
        "arch": asdict(model.arch),
        "seed": int(model.seed),
        "trained_steps": int(model.trained_steps),
        "params": {name: _encode_array(p.data) for name, p in model.named_parameters()},
        "extra": extra or {},
    }
    Path(path).write_text(dumps_json(doc))


def load_checkpoint(path) -> tuple[DenoiserModel, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"{path}: expected schema {MODEL_SCHEMA}")
    model = DenoiserModel(Arch(**doc["arch"]), seed=int(doc["seed"]))
    model.load_state_dict({k: _decode_array(v) for k, v in doc["params"].items()})
    model.trained_steps = int(doc.get("trained_steps", 0))
    return model, doc.get("extra", {})
