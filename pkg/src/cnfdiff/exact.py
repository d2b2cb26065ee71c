"""Exact minimum-cost placement by depth-first branch and bound, plus a brute-force oracle."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

from .core import (
    FEAS_TOL,
    Instance,
    Placement,
    _sfc_delay,
    check_feasibility,
    sfc_offsets,
    total_cost,
)

RESULT_SCHEMA = "result.v1"
DEFAULT_TIME_LIMIT = 600.0
ORACLE_GUARD = 10**7

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
TIMED_OUT = "TimedOut"


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ExactResult:
    status: str
    placement: Placement | None
    cost: float | None
    elapsed: float
    nodes_explored: int

    def to_json(self) -> dict:
        return {
            "schema": RESULT_SCHEMA,
            "status": self.status,
            "cost": self.cost,
            "elapsed": self.elapsed,
            "nodes_explored": self.nodes_explored,
            "placement": None if self.placement is None else self.placement.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ExactResult":
        pl = d.get("placement")
        return cls(
            d["status"],
            None if pl is None else Placement.from_json(pl),
            d.get("cost"),
            float(d["elapsed"]),
            int(d["nodes_explored"]),
        )


class _Timeout(Exception):
    pass


def solve_exact(instance: Instance, time_limit: float = DEFAULT_TIME_LIMIT, node_limit: int | None = None) -> ExactResult:
    """Minimum-cost feasible placement.

    Positions are assigned in flattened order.  Candidate clouds are tried in
    ascending cost and a leaf only replaces the incumbent if it is cheaper, or
    equally cheap and lexicographically smaller as a vector of cloud indices,
    so the returned optimum is unique for a given instance.

    ``node_limit`` is an optional deterministic budget; exhausting it reports
    ``TimedOut`` just like the wall-clock limit.
    """
    start = time.perf_counter()
    deadline = start + time_limit if time_limit is not None and math.isfinite(time_limit) else math.inf

    net = instance.network
    C = net.num_clouds
    types = [int(m) for m in instance.position_types()]
    F = len(types)
    cat = instance.cnf_catalog
    cost = instance.placement_cost
    cpu_d = [cat[m].cpu_demand for m in types]
    ram_d = [cat[m].ram_demand for m in types]
    cpu_cap = [float(v) + FEAS_TOL for v in net.cpu_capacity]
    ram_cap = [float(v) + FEAS_TOL for v in net.ram_capacity]
    bw = net.bandwidth.tolist()
    adj = net.adjacency.tolist()
    proc = [t.proc_delay for t in cat]

    # per position: allowed clouds sorted by (cost, index)
    cands = []
    for f, m in enumerate(types):
        allowed = [i for i in range(C) if m in net.allowed_types[i]]
        cands.append(sorted(allowed, key=lambda i: (cost[i, m], i)))
    pos_cost = [[float(cost[i, m]) for i in range(C)] for m in types]
    # suffix_min[f] = sum over positions >= f of the cheapest allowed cost
    suffix_min = [0.0] * (F + 1)
    for f in range(F - 1, -1, -1):
        cheapest = min((pos_cost[f][i] for i in cands[f]), default=math.inf)
        suffix_min[f] = suffix_min[f + 1] + cheapest

    # incoming DAG edges per flattened row, and the SFC completed at each row
    offs = sfc_offsets(instance)
    preds = [[] for _ in range(F)]
    completes = [None] * F
    for h, (sfc, off) in enumerate(zip(instance.sfcs, offs)):
        for a, b, r in sfc.dag_edges:
            preds[off + b].append((off + a, r))
        completes[off + len(sfc) - 1] = h

    cpu_use = [0.0] * C
    ram_use = [0.0] * C
    bw_use = [[0.0] * C for _ in range(C)]
    choice = [-1] * F
    best = {"cost": math.inf, "choice": None}
    nodes = 0

    def prefix_greater(d):
        inc = best["choice"]
        for k in range(d):
            if choice[k] != inc[k]:
                return choice[k] > inc[k]
        return False

    def dfs(f, partial):
        nonlocal nodes
        if f == F:
            if partial < best["cost"] or (partial == best["cost"] and tuple(choice) < best["choice"]):
                best["cost"] = partial
                best["choice"] = tuple(choice)
            return
        for i in cands[f]:
            c_new = partial + pos_cost[f][i]
            lb = c_new + suffix_min[f + 1]
            if lb > best["cost"]:
                # candidates are cost-sorted, so later ones are no better
                break
            if cpu_use[i] + cpu_d[f] > cpu_cap[i] or ram_use[i] + ram_d[f] > ram_cap[i]:
                continue
            ok = True
            for p, r in preds[f]:
                a = choice[p]
                if a != i and (not adj[a][i] or bw_use[a][i] + r > bw[a][i] + FEAS_TOL):
                    ok = False
                    break
            if not ok:
                continue

            nodes += 1
            if node_limit is not None and nodes > node_limit:
                raise _Timeout
            if (nodes & 1023) == 0 and time.perf_counter() > deadline:
                raise _Timeout

            choice[f] = i
            if lb == best["cost"] and best["choice"] is not None and prefix_greater(f + 1):
                choice[f] = -1
                continue
            h = completes[f]
            if h is not None:
                sfc = instance.sfcs[h]
                hosts = choice[offs[h]:offs[h] + len(sfc)]
                if _sfc_delay(sfc, hosts, proc, bw, instance.message_size) > sfc.delay_budget + FEAS_TOL:
                    choice[f] = -1
                    continue

            cpu_use[i] += cpu_d[f]
            ram_use[i] += ram_d[f]
            for p, r in preds[f]:
                a = choice[p]
                if a != i:
                    bw_use[a][i] += r
            dfs(f + 1, c_new)
            for p, r in preds[f]:
                a = choice[p]
                if a != i:
                    bw_use[a][i] -= r
            cpu_use[i] -= cpu_d[f]
            ram_use[i] -= ram_d[f]
            choice[f] = -1

    status = None
    try:
        if math.isfinite(suffix_min[0]):
            dfs(0, 0.0)
    except _Timeout:
        status = TIMED_OUT
    elapsed = time.perf_counter() - start

    if best["choice"] is None:
        placement = None
        value = None
    else:
        placement = Placement.from_choices(best["choice"], C)
        value = total_cost(instance, placement)
    if status is None:
        status = OPTIMAL if placement is not None else INFEASIBLE
    return ExactResult(status, placement, value, elapsed, nodes)


def brute_force_oracle(instance: Instance, guard: int = ORACLE_GUARD) -> list[tuple[Placement, float]]:
    """Every feasible complete placement with its cost, cheapest first.

    Enumeration is in lexicographic order of cloud-index vectors and the sort
    is stable, so ties keep that order.
    """
    C, F = instance.num_clouds, instance.num_positions
    if C**F > guard:
        raise TooLarge(f"{C}^{F} placements exceed the enumeration guard {guard}")
    out = []
    for choices in itertools.product(range(C), repeat=F):
        pl = Placement.from_choices(choices, C)
        if check_feasibility(instance, pl).feasible:
            out.append((pl, total_cost(instance, pl)))
    out.sort(key=lambda pc: pc[1])
    return out
