"""Seeded random instance generation, dataset fan-out and train/eval splits."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    CloudNetwork,
    CnfType,
    Instance,
    InstanceError,
    Placement,
    Sfc,
    check_feasibility,
    dumps_json,
    load_instance,
    resource_usage,
    save_instance,
    sfc_delay,
    validate_instance,
)

MANIFEST_SCHEMA = "dataset.v1"


class GenerationFailed(RuntimeError):
    pass


class BadCount(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    """Distribution of random instances.  Ranges are inclusive ``(lo, hi)``."""

    num_clouds: tuple = (2, 4)
    num_sfcs: tuple = (1, 2)
    chain_length: tuple = (2, 3)
    num_types: tuple = (3, 5)
    dag_branch_prob: float = 0.0
    cpu_capacity: tuple = (4, 12)
    ram_capacity: tuple = (4, 16)
    cpu_demand: tuple = (1, 4)
    ram_demand: tuple = (1, 4)
    bandwidth: tuple = (20, 100)
    rate: tuple = (5, 30)
    link_density: float = 0.5
    cost: tuple = (1, 40)
    proc_delay: tuple = (0.5, 2.0)
    message_size: float = 50.0
    delay_budget_slack: float = 1.5
    restriction_prob: float = 0.15
    guarantee_feasible: bool = True
    pinning: bool = False
    seed: int = 0

    def validate(self):
        for name in ("num_clouds", "num_sfcs", "chain_length", "num_types", "cpu_capacity", "ram_capacity",
                     "cpu_demand", "ram_demand", "bandwidth", "rate", "cost", "proc_delay"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range {lo}..{hi}")
        for name in ("dag_branch_prob", "link_density", "restriction_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        if self.num_clouds[0] < 1 or self.chain_length[0] < 1 or self.num_types[0] < 1:
            raise ValueError("clouds, chain length and types need at least 1")
        if self.delay_budget_slack < 1.0:
            raise ValueError("delay_budget_slack must be >= 1")
        if self.message_size <= 0:
            raise ValueError("message_size must be positive")


PRESETS = {
    # <= 4 clouds and <= 6 positions keeps every instance inside the brute-force guard
    "tiny": GenConfig(),
    "small": GenConfig(num_clouds=(3, 6), num_sfcs=(2, 3), chain_length=(2, 4), num_types=(4, 6),
                       dag_branch_prob=0.2, cpu_capacity=(6, 16), ram_capacity=(6, 20)),
    "medium": GenConfig(num_clouds=(5, 10), num_sfcs=(3, 5), chain_length=(3, 5), num_types=(5, 8),
                        dag_branch_prob=0.25, cpu_capacity=(8, 20), ram_capacity=(8, 24)),
}

HARD_CLOUD_COUNTS = (4, 6, 8, 10)


def hard_config(num_clouds: int) -> GenConfig:
    """Scaling preset: a fixed workload on a growing, sparse, tight network."""
    return GenConfig(
        num_clouds=(num_clouds, num_clouds),
        num_sfcs=(4, 4),
        chain_length=(3, 3),
        num_types=(6, 6),
        cpu_capacity=(3, 6),
        ram_capacity=(3, 6),
        cpu_demand=(2, 4),
        ram_demand=(2, 4),
        link_density=0.3,
        cost=(10, 40),
        restriction_prob=0.1,
        delay_budget_slack=2.0,
    )


def preset(name: str) -> GenConfig:
    if name in PRESETS:
        return PRESETS[name]
    if name.startswith("hard-"):
        return hard_config(int(name.split("-", 1)[1]))
    raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)} and hard-<clouds>")


def preset_configs(name: str, count: int) -> list[GenConfig]:
    """``count`` configs for a preset; ``hard`` cycles through its cloud counts."""
    if name == "hard":
        return [hard_config(HARD_CLOUD_COUNTS[i % len(HARD_CLOUD_COUNTS)]) for i in range(count)]
    return [preset(name)] * count


# --------------------------------------------------------------------------


def _randint(rng, rng_range):
    lo, hi = rng_range
    return int(rng.integers(lo, hi + 1))


def _uniform(rng, rng_range):
    lo, hi = rng_range
    return float(rng.uniform(lo, hi))


def _random_tree_links(rng, C, density):
    links = set()
    order = rng.permutation(C)
    for k in range(1, C):
        a, b = int(order[k]), int(order[rng.integers(0, k)])
        links.add((min(a, b), max(a, b)))
    for a in range(C):
        for b in range(a + 1, C):
            if (a, b) not in links and rng.random() < density:
                links.add((a, b))
    return sorted(links)


def _random_dag(rng, length, branch_prob):
    """Topologically ordered DAG: stages of one node or a two-node diamond."""
    stages = []
    remaining = length
    while remaining > 0:
        middle = stages and remaining >= 3
        if middle and rng.random() < branch_prob:
            stages.append(2)
            remaining -= 2
        else:
            stages.append(1)
            remaining -= 1
    # first and last stages are single nodes by construction (remaining >= 3)
    edges = []
    start = 0
    prev = None
    for width in stages:
        cur = list(range(start, start + width))
        if prev is not None:
            edges += [(a, b) for a in prev for b in cur]
        prev, start = cur, start + width
    return edges


def generate_instance(config: GenConfig, max_retries: int = 20) -> Instance:
    """Draw an instance; with ``guarantee_feasible`` a hidden witness placement
    is built first and capacities are raised until it fits."""
    config.validate()
    seed_seq = np.random.SeedSequence(int(config.seed) % 2**64)
    for attempt in range(max_retries):
        rng = np.random.default_rng(seed_seq.spawn(1)[0] if attempt else seed_seq)
        try:
            inst = _draw(rng, config)
        except _Retry:
            continue
        validate_instance(inst)
        return inst
    raise GenerationFailed(f"no valid instance after {max_retries} attempts (seed {config.seed})")


class _Retry(Exception):
    pass


def _draw(rng, cfg: GenConfig) -> Instance:
    C = _randint(rng, cfg.num_clouds)
    M = _randint(rng, cfg.num_types)
    H = _randint(rng, cfg.num_sfcs)

    tiers = rng.integers(0, 3, size=C)
    tier_scale = np.array([0.7, 1.0, 1.5])[tiers]
    cpu_cap = np.array([max(1, round(_randint(rng, cfg.cpu_capacity) * s)) for s in tier_scale], dtype=float)
    ram_cap = np.array([max(1, round(_randint(rng, cfg.ram_capacity) * s)) for s in tier_scale], dtype=float)

    bw = np.zeros((C, C))
    for a, b in _random_tree_links(rng, C, cfg.link_density):
        bw[a, b] = bw[b, a] = _randint(rng, cfg.bandwidth)

    catalog = [
        CnfType(m, float(_randint(rng, cfg.cpu_demand)), float(_randint(rng, cfg.ram_demand)),
                round(_uniform(rng, cfg.proc_delay), 3))
        for m in range(M)
    ]

    # cloud price level x type size factor, rounded to whole cost units
    lo, hi = cfg.cost
    price = rng.uniform(0.0, 1.0, size=C)
    size = rng.uniform(0.5, 1.0, size=M)
    noise = rng.uniform(0.85, 1.15, size=(C, M))
    cost = np.clip(np.rint(lo + (hi - lo) * np.outer(price, size) * noise), lo, hi)

    allowed = [set(range(M)) for _ in range(C)]
    for i in range(C):
        for m in range(M):
            if rng.random() < cfg.restriction_prob:
                allowed[i].discard(m)
    for m in range(M):
        if not any(m in s for s in allowed):
            allowed[int(rng.integers(0, C))].add(m)

    lengths = [_randint(rng, cfg.chain_length) for _ in range(H)]
    dags = [_random_dag(rng, L, cfg.dag_branch_prob) for L in lengths]
    rates = [[float(_randint(rng, cfg.rate)) for _ in e] for e in dags]

    if cfg.pinning:
        # one private type per position, allowed on its witness cloud only
        F = sum(lengths)
        M = F
        catalog = [
            CnfType(m, float(_randint(rng, cfg.cpu_demand)), float(_randint(rng, cfg.ram_demand)),
                    round(_uniform(rng, cfg.proc_delay), 3))
            for m in range(M)
        ]
        cost = np.rint(rng.uniform(lo, hi, size=(C, M)))
        node_types = []
        k = 0
        for L in lengths:
            node_types.append(list(range(k, k + L)))
            k += L
        allowed = [set(range(M)) for _ in range(C)]
    else:
        node_types = [[int(rng.integers(0, M)) for _ in range(L)] for L in lengths]

    adj = bw > 0
    np.fill_diagonal(adj, True)
    witness = []
    for h, (L, edges) in enumerate(zip(lengths, dags)):
        hosts = _witness_hosts(rng, L, edges, node_types[h], allowed, adj, cfg.pinning)
        witness += hosts

    if cfg.pinning:
        allowed = [set() for _ in range(C)]
        flat_types = [m for nt in node_types for m in nt]
        for f, i in enumerate(witness):
            allowed[i].add(flat_types[f])

    sfcs = [
        Sfc(h, node_types[h], [(a, b, r) for (a, b), r in zip(dags[h], rates[h])], 0.0)
        for h in range(H)
    ]
    net = CloudNetwork(cpu_cap, ram_cap, bw, [sorted(s) for s in allowed], tiers)
    inst = Instance(net, sfcs, catalog, cost, float(cfg.message_size), {"seed": int(cfg.seed)})

    wp = Placement.from_choices(witness, C)
    budgets = [math.ceil(sfc_delay(inst, wp, h) * cfg.delay_budget_slack * 1e6) / 1e6 for h in range(H)]
    sfcs = [replace(s, delay_budget=b) for s, b in zip(sfcs, budgets)]

    if cfg.guarantee_feasible or cfg.pinning:
        cpu_use, ram_use, bw_use = resource_usage(Instance(net, sfcs, catalog, cost, cfg.message_size), wp)
        if cfg.pinning:
            cpu_cap, ram_cap = cpu_use.copy(), ram_use.copy()
            cpu_cap[cpu_cap == 0] = 1.0
            ram_cap[ram_cap == 0] = 1.0
        else:
            cpu_cap = np.maximum(cpu_cap, cpu_use)
            ram_cap = np.maximum(ram_cap, ram_use)
        need = np.maximum(bw_use, bw_use.T)
        bw = np.where(bw > 0, np.maximum(bw, need), 0.0)
        net = CloudNetwork(cpu_cap, ram_cap, bw, [sorted(s) for s in allowed], tiers)

    inst = Instance(net, sfcs, catalog, cost, float(cfg.message_size), {"seed": int(cfg.seed)})
    if (cfg.guarantee_feasible or cfg.pinning) and not check_feasibility(inst, wp).feasible:
        raise _Retry
    return inst


def _witness_hosts(rng, L, edges, types, allowed, adj, free_types):
    """Random walk over the cloud graph that respects adjacency for every DAG edge.

    Types are made allowed where the walk needs them (repair), so a witness
    always exists.
    """
    C = len(adj)
    preds = [[] for _ in range(L)]
    for a, b in edges:
        preds[b].append(a)
    hosts = []
    for j in range(L):
        if preds[j]:
            ok = [i for i in range(C) if all(adj[hosts[p], i] for p in preds[j])]
        else:
            ok = list(range(C))
        good = [i for i in ok if free_types or types[j] in allowed[i]]
        pick = good if good else ok
        i = int(pick[rng.integers(0, len(pick))])
        allowed[i].add(types[j])
        hosts.append(i)
    return hosts


# --------------------------------------------------------------------------


def derive_seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(int(seed) % 2**64)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in ss.spawn(n)]


def generate_dataset(configs: list[GenConfig], seed: int) -> list[Instance]:
    out = []
    for k, (cfg, s) in enumerate(zip(configs, derive_seeds(seed, len(configs)))):
        inst = generate_instance(replace(cfg, seed=s))
        meta = dict(inst.meta, name=f"inst-{k:03d}", config_index=k)
        out.append(replace(inst, meta=meta))
    return out


def split_dataset(instances: list, train_count: int, seed: int) -> tuple[list, list]:
    """Seeded disjoint split; both halves keep the input order."""
    n = len(instances)
    if not 0 <= train_count <= n:
        raise BadCount(f"train_count {train_count} not in [0, {n}]")
    perm = np.random.default_rng(int(seed) % 2**64).permutation(n)
    chosen = set(int(i) for i in perm[:train_count])
    train = [x for i, x in enumerate(instances) if i in chosen]
    ev = [x for i, x in enumerate(instances) if i not in chosen]
    return train, ev


# --------------------------------------------------------------------------
# manifest


def write_dataset(out_dir, instances, train_count, seed, preset_name) -> Path:
    out = Path(out_dir)
    (out / "instances").mkdir(parents=True, exist_ok=True)
    train, _ = split_dataset(instances, train_count, seed)
    train_names = {x.meta["name"] for x in train}
    entries = []
    for inst in instances:
        rel = f"instances/{inst.meta['name']}.json"
        save_instance(inst, out / rel)
        entries.append({"path": rel, "split": "train" if inst.meta["name"] in train_names else "eval"})
    manifest = {"schema": MANIFEST_SCHEMA, "preset": preset_name, "seed": int(seed), "instances": entries}
    path = out / "dataset.json"
    path.write_text(dumps_json(manifest))
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    d = json.loads(path.read_text())
    if d.get("schema") != MANIFEST_SCHEMA:
        raise InstanceError(f"{path}: expected schema {MANIFEST_SCHEMA}")
    return d


def load_split(manifest_path, split: str | None = None) -> list[Instance]:
    """Instances of a manifest, optionally only those tagged ``split``."""
    manifest_path = Path(manifest_path)
    d = read_manifest(manifest_path)
    return [
        load_instance(manifest_path.parent / e["path"])
        for e in d["instances"]
        if split is None or e["split"] == split
    ]


def config_to_json(cfg: GenConfig) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}
