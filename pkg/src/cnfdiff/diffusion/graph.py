"""Heterogeneous conditioning graph built from an instance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Instance, sfc_offsets

NUM_CLOUD_TYPES = 3  # cloud tiers: edge, regional, core
RESTRICT_NONE, RESTRICT_PARTIAL, RESTRICT_PINNED = 0, 1, 2
NUM_RESTRICTION_KINDS = 3


class UnplaceableCnf(ValueError):
    pass


@dataclass(frozen=True)
class HeteroGraph:
    cloud_feats: np.ndarray         # C x 3  [cpu cap, ram cap, mean cost], standardized
    cloud_type_ids: np.ndarray      # C
    cnf_feats: np.ndarray           # F x 3  [cpu, ram, proc delay], standardized
    cnf_restriction_ids: np.ndarray  # F
    cc_edges: np.ndarray            # E_cc x 2 (src, dst)
    cc_attrs: np.ndarray            # E_cc x 1
    tt_edges: np.ndarray            # E_tt x 2
    tt_attrs: np.ndarray            # E_tt x 4  [rate, sfc budget, sfc id, hop index]
    tc_edges: np.ndarray            # P x 2 (cnf, cloud), the allowed pairs
    ct_edges: np.ndarray            # P x 2 (cloud, cnf)
    mask: np.ndarray                # F x C bool
    stats: dict                     # standardization constants, per feature block

    @property
    def num_clouds(self):
        return self.mask.shape[1]

    @property
    def num_cnfs(self):
        return self.mask.shape[0]


def _standardize(x: np.ndarray):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    if len(x) == 0:
        return x, {"mean": [0.0] * x.shape[1], "std": [1.0] * x.shape[1]}
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return (x - mu) / sd, {"mean": mu.tolist(), "std": sd.tolist()}


def build_hetero_graph(instance: Instance) -> HeteroGraph:
    net = instance.network
    C = net.num_clouds
    types = instance.position_types()
    F = len(types)
    mask = instance.allowed_mask()
    empty = np.flatnonzero(~mask.any(axis=1)) if F else []
    if len(empty):
        raise UnplaceableCnf(f"positions {list(map(int, empty))} have no allowed cloud")

    cat = instance.cnf_catalog
    mean_cost = instance.placement_cost.mean(axis=1) if instance.placement_cost.size else np.zeros(C)
    cloud_raw = np.column_stack([net.cpu_capacity, net.ram_capacity, mean_cost])
    cnf_raw = np.array([[cat[m].cpu_demand, cat[m].ram_demand, cat[m].proc_delay] for m in types]).reshape(F, 3)

    src, dst = np.nonzero((net.bandwidth > 0) & ~np.eye(C, dtype=bool))
    cc_edges = np.column_stack([src, dst]).astype(int).reshape(-1, 2)
    cc_raw = net.bandwidth[src, dst].reshape(-1, 1)

    tt, tt_raw = [], []
    for h, (sfc, off) in enumerate(zip(instance.sfcs, sfc_offsets(instance))):
        for k, (a, b, r) in enumerate(sfc.dag_edges):
            tt.append((off + a, off + b))
            tt_raw.append((r, sfc.delay_budget, h, k))
    tt_edges = np.array(tt, dtype=int).reshape(-1, 2)

    allowed_count = mask.sum(axis=1)
    restriction = np.where(allowed_count == C, RESTRICT_NONE,
                           np.where(allowed_count == 1, RESTRICT_PINNED, RESTRICT_PARTIAL)).astype(int)

    f_idx, c_idx = np.nonzero(mask)
    tc_edges = np.column_stack([f_idx, c_idx]).astype(int).reshape(-1, 2)

    # cpu and ram columns share constants across clouds and CNFs so capacity
    # and demand stay comparable after scaling
    pooled, s_res = _standardize(np.vstack([cloud_raw[:, :2], cnf_raw[:, :2]]))
    other_c, s1 = _standardize(cloud_raw[:, 2:])
    other_t, s2 = _standardize(cnf_raw[:, 2:])
    cloud_feats = np.column_stack([pooled[:C], other_c])
    cnf_feats = np.column_stack([pooled[C:], other_t]).reshape(F, 3)
    cc_attrs, s3 = _standardize(cc_raw)
    tt_attrs, s4 = _standardize(np.array(tt_raw, dtype=float).reshape(-1, 4))
    return HeteroGraph(
        cloud_feats=cloud_feats,
        cloud_type_ids=np.clip(net.tiers, 0, NUM_CLOUD_TYPES - 1).astype(int),
        cnf_feats=cnf_feats,
        cnf_restriction_ids=restriction,
        cc_edges=cc_edges,
        cc_attrs=cc_attrs,
        tt_edges=tt_edges,
        tt_attrs=tt_attrs,
        tc_edges=tc_edges,
        ct_edges=tc_edges[:, ::-1].copy(),
        mask=mask,
        stats={"resources": s_res, "cloud_cost": s1, "cnf_delay": s2, "cc": s3, "tt": s4},
    )
