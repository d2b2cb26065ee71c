"""Domain model for CNF chain placement: instances, placements and evaluators.

Rows of a placement matrix index CNF *positions* flattened as
``(sfc 0, pos 0), (sfc 0, pos 1), ..., (sfc 1, pos 0), ...``; columns index
clouds.  Everything here is a pure function of immutable inputs.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FLATTEN_VERSION = "flat.v1"
INSTANCE_SCHEMA = "instance.v1"
PLACEMENT_SCHEMA = "placement.v1"

# Absolute slack used for every "usage <= capacity" style comparison.
FEAS_TOL = 1e-9

VIOLATION_KINDS = ("OneCloud", "Adjacency", "Cpu", "Ram", "Bandwidth", "Delay", "TypeRestriction")


class InstanceError(ValueError):
    """Raised when an instance fails validation."""


class IncompletePlacement(ValueError):
    pass


class DisconnectedHop(ValueError):
    pass


def _frozen(arr, dtype=float):
    a = np.array(arr, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CloudNetwork:
    cpu_capacity: np.ndarray
    ram_capacity: np.ndarray
    bandwidth: np.ndarray
    allowed_types: tuple[frozenset, ...]
    tiers: np.ndarray = None
    symmetric: bool = True

    def __post_init__(self):
        object.__setattr__(self, "cpu_capacity", _frozen(self.cpu_capacity))
        object.__setattr__(self, "ram_capacity", _frozen(self.ram_capacity))
        object.__setattr__(self, "bandwidth", _frozen(self.bandwidth))
        object.__setattr__(self, "allowed_types", tuple(frozenset(int(m) for m in s) for s in self.allowed_types))
        tiers = np.zeros(len(self.cpu_capacity), dtype=int) if self.tiers is None else self.tiers
        object.__setattr__(self, "tiers", _frozen(tiers, dtype=int))

    @property
    def num_clouds(self) -> int:
        return len(self.cpu_capacity)

    @property
    def adjacency(self) -> np.ndarray:
        adj = self.bandwidth > 0
        np.fill_diagonal(adj, True)
        return adj


@dataclass(frozen=True)
class CnfType:
    type_id: int
    cpu_demand: float
    ram_demand: float
    proc_delay: float


@dataclass(frozen=True)
class Sfc:
    sfc_id: int
    nodes: tuple[int, ...]  # CNF type per position, topological order
    dag_edges: tuple[tuple[int, int, float], ...]
    delay_budget: float

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(int(m) for m in self.nodes))
        object.__setattr__(self, "dag_edges", tuple((int(a), int(b), float(r)) for a, b, r in self.dag_edges))

    def __len__(self):
        return len(self.nodes)

    def predecessors(self) -> list[list[tuple[int, float]]]:
        preds = [[] for _ in self.nodes]
        for a, b, r in self.dag_edges:
            preds[b].append((a, r))
        return preds

    @classmethod
    def chain(cls, sfc_id, nodes, rates, delay_budget):
        """Linear chain ``0 -> 1 -> ... -> n-1`` with the given per-hop rates."""
        edges = [(j, j + 1, r) for j, r in zip(range(len(nodes) - 1), rates)]
        return cls(sfc_id, tuple(nodes), tuple(edges), delay_budget)


@dataclass(frozen=True)
class Instance:
    network: CloudNetwork
    sfcs: tuple[Sfc, ...]
    cnf_catalog: tuple[CnfType, ...]
    placement_cost: np.ndarray  # C x M
    message_size: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sfcs", tuple(self.sfcs))
        object.__setattr__(self, "cnf_catalog", tuple(self.cnf_catalog))
        object.__setattr__(self, "placement_cost", _frozen(self.placement_cost))

    @property
    def num_clouds(self) -> int:
        return self.network.num_clouds

    @property
    def num_positions(self) -> int:
        return sum(len(s) for s in self.sfcs)

    def position_types(self) -> np.ndarray:
        return np.array([m for s in self.sfcs for m in s.nodes], dtype=int)

    def allowed_mask(self) -> np.ndarray:
        """F x C boolean: position f may be hosted on cloud c."""
        types = self.position_types()
        mask = np.zeros((len(types), self.num_clouds), dtype=bool)
        for c, allowed in enumerate(self.network.allowed_types):
            for f, m in enumerate(types):
                mask[f, c] = m in allowed
        return mask

    def flat_edges(self) -> list[tuple[int, int, float, int]]:
        """All SFC DAG edges as ``(row_src, row_dst, rate, sfc)`` over flattened rows."""
        out = []
        for h, (sfc, off) in enumerate(zip(self.sfcs, sfc_offsets(self))):
            for a, b, r in sfc.dag_edges:
                out.append((off + a, off + b, r, h))
        return out


# --------------------------------------------------------------------------
# flattening


def sfc_offsets(instance: Instance) -> list[int]:
    offs, acc = [], 0
    for s in instance.sfcs:
        offs.append(acc)
        acc += len(s)
    return offs


def flatten_index(instance: Instance) -> list[tuple[int, int]]:
    """Row ``f`` of the placement matrix corresponds to ``flatten_index(inst)[f] == (h, j)``.

    The inverse map is ``{hj: f for f, hj in enumerate(...)}``.
    """
    return [(h, j) for h, s in enumerate(instance.sfcs) for j in range(len(s))]


# --------------------------------------------------------------------------
# placements


@dataclass(frozen=True)
class Placement:
    assign: np.ndarray  # F x C of {0, 1}

    def __post_init__(self):
        object.__setattr__(self, "assign", _frozen(self.assign, dtype=np.int8))

    @classmethod
    def from_choices(cls, choices: Sequence[int], num_clouds: int) -> "Placement":
        a = np.zeros((len(choices), num_clouds), dtype=np.int8)
        a[np.arange(len(choices)), np.asarray(choices, dtype=int)] = 1
        return cls(a)

    @property
    def is_complete(self) -> bool:
        return bool(np.all(self.assign.sum(axis=1) == 1))

    def choices(self) -> tuple[int, ...]:
        if not self.is_complete:
            raise IncompletePlacement("placement has rows that do not sum to 1")
        return tuple(int(c) for c in self.assign.argmax(axis=1))

    def to_json(self) -> dict:
        return {"schema": PLACEMENT_SCHEMA, "flatten": FLATTEN_VERSION, "assign": self.assign.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Placement":
        if d.get("flatten", FLATTEN_VERSION) != FLATTEN_VERSION:
            raise ValueError(f"unsupported flattening {d.get('flatten')!r}")
        return cls(np.array(d["assign"], dtype=np.int8).reshape(len(d["assign"]), -1))


def _as_choices(instance: Instance, placement) -> tuple[int, ...]:
    if isinstance(placement, Placement):
        if placement.assign.shape != (instance.num_positions, instance.num_clouds):
            raise ValueError(f"placement shape {placement.assign.shape} does not match instance")
        return placement.choices()
    return tuple(int(c) for c in placement)


# --------------------------------------------------------------------------
# evaluators


def total_cost(instance: Instance, placement) -> float:
    choices = _as_choices(instance, placement)
    cost = 0.0
    for f, m in enumerate(instance.position_types()):
        cost += float(instance.placement_cost[choices[f], m])
    return cost


def _sfc_delay(sfc: Sfc, hosts, proc, bandwidth, message_size) -> float:
    n = len(sfc.nodes)
    finish = [0.0] * n
    preds = sfc.predecessors()
    for j in range(n):
        best = 0.0
        for p, _ in preds[j]:
            a, b = hosts[p], hosts[j]
            if a == b:
                hop = 0.0
            else:
                c = bandwidth[a][b]
                if c <= 0:
                    raise DisconnectedHop(f"positions {p}->{j} hosted on unlinked clouds {a}, {b}")
                hop = message_size / c
            best = max(best, finish[p] + hop)
        finish[j] = best + proc[sfc.nodes[j]]
    return max(finish) if n else 0.0


def sfc_delay(instance: Instance, placement, h: int) -> float:
    """End-to-end delay of SFC ``h``: the max over root->sink paths of
    processing delays plus ``message_size / bandwidth`` on every inter-cloud hop."""
    choices = _as_choices(instance, placement)
    off = sfc_offsets(instance)[h]
    sfc = instance.sfcs[h]
    hosts = choices[off:off + len(sfc)]
    proc = [t.proc_delay for t in instance.cnf_catalog]
    return _sfc_delay(sfc, hosts, proc, instance.network.bandwidth, instance.message_size)


def resource_usage(instance: Instance, placement) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cloud CPU, per-cloud RAM and per-ordered-link bandwidth usage.

    Works for any 0/1 matrix, so it is usable on malformed placements too.
    """
    x = _matrix(instance, placement)
    types = instance.position_types()
    cpu_d = np.array([instance.cnf_catalog[m].cpu_demand for m in types], dtype=float)
    ram_d = np.array([instance.cnf_catalog[m].ram_demand for m in types], dtype=float)
    C = instance.num_clouds
    cpu = x.T @ cpu_d if len(types) else np.zeros(C)
    ram = x.T @ ram_d if len(types) else np.zeros(C)
    bw = np.zeros((C, C))
    for src, dst, rate, _ in instance.flat_edges():
        bw += rate * np.outer(x[src], x[dst])
    np.fill_diagonal(bw, 0.0)
    return cpu, ram, bw


def _matrix(instance, placement) -> np.ndarray:
    if isinstance(placement, Placement):
        x = placement.assign.astype(float)
    else:
        x = Placement.from_choices(placement, instance.num_clouds).assign.astype(float)
    if x.shape != (instance.num_positions, instance.num_clouds):
        raise ValueError(f"placement shape {x.shape} does not match instance")
    return x


@dataclass(frozen=True)
class Violation:
    kind: str
    location: tuple
    magnitude: float


@dataclass(frozen=True)
class FeasibilityReport:
    violations: tuple[Violation, ...]

    @property
    def feasible(self) -> bool:
        return not self.violations

    def by_kind(self, kind: str) -> list[Violation]:
        return [v for v in self.violations if v.kind == kind]

    def total_magnitude(self) -> float:
        return float(sum(v.magnitude for v in self.violations))

    def to_json(self) -> dict:
        return {
            "feasible": self.feasible,
            "violations": [
                {"kind": v.kind, "location": list(v.location), "magnitude": v.magnitude} for v in self.violations
            ],
        }


def check_feasibility(instance: Instance, placement) -> FeasibilityReport:
    """Evaluate every constraint and collect violations.

    Malformed rows (not exactly one 1) produce ``OneCloud`` violations; the
    other inequalities are then evaluated on the raw 0/1 entries, except the
    delay of any SFC touching a malformed row or an unlinked hop, which is
    undefined and skipped.
    """
    x = _matrix(instance, placement)
    net = instance.network
    adj = net.adjacency
    types = instance.position_types()
    out: list[Violation] = []

    row_sums = x.sum(axis=1)
    for f, s in enumerate(row_sums):
        if s != 1:
            out.append(Violation("OneCloud", (f,), float(abs(s - 1))))

    bad_sfcs = set()
    idx = flatten_index(instance)
    for src, dst, _, h in instance.flat_edges():
        for i in np.flatnonzero(x[src]):
            for k in np.flatnonzero(x[dst]):
                if not adj[i, k]:
                    out.append(Violation("Adjacency", (h, idx[src][1], idx[dst][1], int(i), int(k)), 1.0))
                    bad_sfcs.add(h)

    cpu, ram, bw = resource_usage(instance, Placement(x))
    for i in range(instance.num_clouds):
        if cpu[i] > net.cpu_capacity[i] + FEAS_TOL:
            out.append(Violation("Cpu", (i,), float(cpu[i] - net.cpu_capacity[i])))
    for i in range(instance.num_clouds):
        if ram[i] > net.ram_capacity[i] + FEAS_TOL:
            out.append(Violation("Ram", (i,), float(ram[i] - net.ram_capacity[i])))
    for i in range(instance.num_clouds):
        for k in range(instance.num_clouds):
            if i != k and bw[i, k] > net.bandwidth[i, k] + FEAS_TOL:
                out.append(Violation("Bandwidth", (i, k), float(bw[i, k] - net.bandwidth[i, k])))

    proc = [t.proc_delay for t in instance.cnf_catalog]
    for h, (sfc, off) in enumerate(zip(instance.sfcs, sfc_offsets(instance))):
        rows = range(off, off + len(sfc))
        if h in bad_sfcs or any(row_sums[f] != 1 for f in rows):
            continue
        hosts = [int(np.argmax(x[f])) for f in rows]
        d = _sfc_delay(sfc, hosts, proc, net.bandwidth, instance.message_size)
        if d > sfc.delay_budget + FEAS_TOL:
            out.append(Violation("Delay", (h,), float(d - sfc.delay_budget)))

    for f, m in enumerate(types):
        for i in np.flatnonzero(x[f]):
            if m not in net.allowed_types[i]:
                out.append(Violation("TypeRestriction", (f, int(i)), 1.0))

    return FeasibilityReport(tuple(out))


# --------------------------------------------------------------------------
# validation and (de)serialization


def validate_instance(instance: Instance) -> None:
    net = instance.network
    C = net.num_clouds
    if C < 1:
        raise InstanceError("network has no clouds")
    if net.bandwidth.shape != (C, C) or net.ram_capacity.shape != (C,) or len(net.allowed_types) != C:
        raise InstanceError("network arrays disagree on the number of clouds")
    if np.any(net.cpu_capacity <= 0) or np.any(net.ram_capacity <= 0):
        raise InstanceError("capacities must be positive")
    if np.any(net.bandwidth < 0) or not np.all(np.isfinite(net.bandwidth)):
        raise InstanceError("bandwidth must be finite and non-negative")
    if net.symmetric and not np.array_equal(net.bandwidth, net.bandwidth.T):
        raise InstanceError("bandwidth declared symmetric but is not")
    if not _connected(net.adjacency):
        raise InstanceError("cloud graph is not connected")

    M = len(instance.cnf_catalog)
    for m, t in enumerate(instance.cnf_catalog):
        if t.type_id != m:
            raise InstanceError(f"catalog entry {m} has type_id {t.type_id}")
        if min(t.cpu_demand, t.ram_demand, t.proc_delay) < 0:
            raise InstanceError(f"type {m} has a negative demand or delay")
    if instance.placement_cost.shape != (C, M):
        raise InstanceError(f"placement_cost must be {C}x{M}")
    if not np.all(np.isfinite(instance.placement_cost)) or np.any(instance.placement_cost < 0):
        raise InstanceError("placement_cost must be finite and non-negative")
    if not instance.message_size > 0:
        raise InstanceError("message_size must be positive")

    for s in instance.sfcs:
        _validate_sfc(s, M)


def _validate_sfc(s: Sfc, num_types: int) -> None:
    n = len(s.nodes)
    if n == 0:
        raise InstanceError(f"sfc {s.sfc_id} is empty")
    if any(m < 0 or m >= num_types for m in s.nodes):
        raise InstanceError(f"sfc {s.sfc_id} references an unknown CNF type")
    indeg, outdeg = [0] * n, [0] * n
    for a, b, r in s.dag_edges:
        if not (0 <= a < b < n):
            raise InstanceError(f"sfc {s.sfc_id}: edge {a}->{b} breaks topological order")
        if r < 0:
            raise InstanceError(f"sfc {s.sfc_id}: negative rate")
        outdeg[a] += 1
        indeg[b] += 1
    roots = [j for j in range(n) if indeg[j] == 0]
    sinks = [j for j in range(n) if outdeg[j] == 0]
    if len(roots) != 1 or len(sinks) != 1:
        raise InstanceError(f"sfc {s.sfc_id} must have exactly one root and one sink")
    if s.delay_budget < 0:
        raise InstanceError(f"sfc {s.sfc_id}: negative delay budget")


def _connected(adj: np.ndarray) -> bool:
    n = len(adj)
    seen = {0}
    q = deque([0])
    while q:
        u = q.popleft()
        for v in np.flatnonzero(adj[u] | adj[:, u]):
            if v not in seen:
                seen.add(int(v))
                q.append(int(v))
    return len(seen) == n


def instance_to_json(instance: Instance) -> dict:
    net = instance.network
    return {
        "schema": INSTANCE_SCHEMA,
        "meta": dict(instance.meta),
        "network": {
            "num_clouds": net.num_clouds,
            "cpu_capacity": net.cpu_capacity.tolist(),
            "ram_capacity": net.ram_capacity.tolist(),
            "bandwidth": net.bandwidth.tolist(),
            "allowed_types": [sorted(s) for s in net.allowed_types],
            "tiers": net.tiers.tolist(),
            "symmetric": net.symmetric,
        },
        "cnf_catalog": [
            {"type_id": t.type_id, "cpu_demand": t.cpu_demand, "ram_demand": t.ram_demand, "proc_delay": t.proc_delay}
            for t in instance.cnf_catalog
        ],
        "sfcs": [
            {
                "sfc_id": s.sfc_id,
                "nodes": list(s.nodes),
                "dag_edges": [list(e) for e in s.dag_edges],
                "delay_budget": s.delay_budget,
            }
            for s in instance.sfcs
        ],
        "placement_cost": instance.placement_cost.tolist(),
        "message_size": instance.message_size,
    }


def instance_from_json(d: dict) -> Instance:
    if d.get("schema") != INSTANCE_SCHEMA:
        raise InstanceError(f"expected schema {INSTANCE_SCHEMA}, got {d.get('schema')!r}")
    try:
        n = d["network"]
        C = int(n["num_clouds"])
        net = CloudNetwork(
            cpu_capacity=n["cpu_capacity"],
            ram_capacity=n["ram_capacity"],
            bandwidth=np.array(n["bandwidth"], dtype=float).reshape(C, C),
            allowed_types=n["allowed_types"],
            tiers=n.get("tiers"),
            symmetric=bool(n.get("symmetric", True)),
        )
        catalog = [
            CnfType(int(t["type_id"]), float(t["cpu_demand"]), float(t["ram_demand"]), float(t["proc_delay"]))
            for t in d["cnf_catalog"]
        ]
        sfcs = [
            Sfc(int(s["sfc_id"]), s["nodes"], [tuple(e) for e in s["dag_edges"]], float(s["delay_budget"]))
            for s in d["sfcs"]
        ]
        cost = np.array(d["placement_cost"], dtype=float).reshape(C, len(catalog))
        inst = Instance(net, sfcs, catalog, cost, float(d["message_size"]), dict(d.get("meta", {})))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InstanceError):
            raise
        raise InstanceError(f"malformed instance: {exc}") from exc
    validate_instance(inst)
    return inst


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def save_instance(instance: Instance, path) -> None:
    Path(path).write_text(dumps_json(instance_to_json(instance)))


def load_instance(path) -> Instance:
    return instance_from_json(json.loads(Path(path).read_text()))


__all__ = [
    "CloudNetwork", "CnfType", "Sfc", "Instance", "Placement", "Violation", "FeasibilityReport",
    "InstanceError", "IncompletePlacement", "DisconnectedHop", "flatten_index", "total_cost",
    "sfc_delay", "resource_usage", "check_feasibility", "validate_instance", "instance_to_json",
    "instance_from_json", "save_instance", "load_instance",
]
