import json
from dataclasses import replace

import numpy as np
import pytest
from conftest import diamond_instance, line_instance
from oracles import cost_oracle, delay_oracle, violations_oracle

from cnfdiff.core import (
    CloudNetwork,
    CnfType,
    DisconnectedHop,
    IncompletePlacement,
    Instance,
    InstanceError,
    Placement,
    Sfc,
    check_feasibility,
    dumps_json,
    flatten_index,
    instance_from_json,
    instance_to_json,
    load_instance,
    resource_usage,
    save_instance,
    sfc_delay,
    sfc_offsets,
    total_cost,
    validate_instance,
)
from cnfdiff.scenarios import PRESETS, generate_dataset


def kinds(report):
    return sorted(v.kind for v in report.violations)


def test_cost_hand_values(line):
    assert total_cost(line, (0, 0, 0)) == 18.0
    assert total_cost(line, (0, 1, 2)) == 5.0 + 9.0 + 4.0
    assert total_cost(line, Placement.from_choices((2, 2, 2), 3)) == 7.0 + 1.0 + 4.0


def test_delay_chain_hand_values(line):
    assert sfc_delay(line, (0, 0, 0), 0) == pytest.approx(1.75, abs=1e-12)
    # hops 0->1 (20 / 10) and 1->2 (20 / 5)
    assert sfc_delay(line, (0, 1, 2), 0) == pytest.approx(1.75 + 2.0 + 4.0, abs=1e-12)
    assert sfc_delay(line, (1, 1, 0), 0) == pytest.approx(1.75 + 2.0, abs=1e-12)


def test_delay_diamond_takes_longest_branch(diamond):
    assert sfc_delay(diamond, (0, 0, 0, 0), 0) == pytest.approx(5.0)
    # slow branch (proc 3) crosses the link twice: 1 + 2 + 3 + 2 + 1
    assert sfc_delay(diamond, (0, 1, 0, 0), 0) == pytest.approx(9.0)
    # fast branch crossing: 1 + 2 + 1 + 2 + 1 = 7 < slow branch 1 + 3 + 1
    assert sfc_delay(diamond, (0, 0, 1, 0), 0) == pytest.approx(7.0)


def test_delay_unlinked_hop_raises(line):
    with pytest.raises(DisconnectedHop):
        sfc_delay(line, (0, 2, 2), 0)


def test_single_cloud_network_has_zero_hop_cost():
    net = CloudNetwork([10.0], [10.0], [[0.0]], [{0, 1}])
    cat = [CnfType(0, 1, 1, 0.5), CnfType(1, 1, 1, 0.25)]
    inst = Instance(net, [Sfc.chain(0, [0, 1, 0], [9.0, 9.0], 1.25)], cat, [[2.0, 3.0]], 100.0)
    validate_instance(inst)
    report = check_feasibility(inst, (0, 0, 0))
    assert report.feasible
    assert sfc_delay(inst, (0, 0, 0), 0) == pytest.approx(1.25)


def test_feasible_placement_has_no_violations(line):
    report = check_feasibility(line, (0, 0, 1))
    assert report.feasible and report.total_magnitude() == 0.0


def test_cpu_violation_magnitude(line):
    report = check_feasibility(line, (0, 0, 0))
    assert kinds(report) == ["Cpu"]
    (v,) = report.violations
    assert v.location == (0,) and v.magnitude == pytest.approx(2.0)


def test_adjacency_violation_location_and_delay_skip(line):
    report = check_feasibility(line, (0, 2, 2))
    adj = report.by_kind("Adjacency")
    assert [v.location for v in adj] == [(0, 0, 1, 0, 2)]
    assert not report.by_kind("Delay")


def test_delay_violation_magnitude():
    inst = line_instance(budget=5.0)
    report = check_feasibility(inst, (0, 1, 2))
    assert kinds(report) == ["Delay"]
    assert report.violations[0].magnitude == pytest.approx(7.75 - 5.0)


def test_bandwidth_violation_per_ordered_pair(line):
    sfc = Sfc.chain(0, [0, 1, 2], [12.0, 1.0], 100.0)
    inst = replace(line, sfcs=[sfc])
    report = check_feasibility(inst, (0, 1, 1))
    bw = report.by_kind("Bandwidth")
    assert [(v.location, v.magnitude) for v in bw] == [((0, 1), pytest.approx(2.0))]
    # reverse direction carries its own capacity
    assert check_feasibility(inst, (1, 0, 0)).by_kind("Bandwidth")[0].location == (1, 0)


def test_intra_cloud_traffic_uses_no_bandwidth(line):
    _, _, bw = resource_usage(line, (1, 1, 1))
    assert not bw.any()


def test_type_restriction_violation():
    inst = line_instance(allowed=[{0, 1, 2}, {0, 2}, {0, 1, 2}])
    report = check_feasibility(inst, (0, 1, 1))
    assert [v.location for v in report.by_kind("TypeRestriction")] == [(1, 1)]


def test_one_cloud_rows_reported(line):
    x = np.zeros((3, 3), dtype=int)
    x[0, 0] = 1
    x[1, 0] = x[1, 1] = 1
    report = check_feasibility(line, Placement(x))
    one = {v.location: v.magnitude for v in report.by_kind("OneCloud")}
    assert one == {(1,): 1.0, (2,): 1.0}
    assert not report.by_kind("Delay")


def test_incomplete_placement_choices_raise():
    with pytest.raises(IncompletePlacement):
        Placement(np.zeros((2, 2))).choices()


def test_flattening_order():
    a, b = line_instance(), diamond_instance()
    inst = replace(a, sfcs=[a.sfcs[0], replace(b.sfcs[0], nodes=(0, 1, 0, 0))])
    assert sfc_offsets(inst) == [0, 3]
    assert flatten_index(inst)[:5] == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]


def test_placement_json_round_trip(line):
    pl = Placement.from_choices((2, 0, 1), 3)
    back = Placement.from_json(json.loads(json.dumps(pl.to_json())))
    assert np.array_equal(back.assign, pl.assign)


def test_instance_json_round_trip(tmp_path):
    inst = generate_dataset([PRESETS["small"]], seed=4)[0]
    path = tmp_path / "i.json"
    save_instance(inst, path)
    back = load_instance(path)
    assert dumps_json(instance_to_json(back)) == path.read_text()
    assert np.array_equal(back.allowed_mask(), inst.allowed_mask())
    assert total_cost(back, [0] * back.num_positions) == total_cost(inst, [0] * inst.num_positions)


@pytest.mark.parametrize("mutate", [
    lambda d: d["network"].__setitem__("bandwidth", [[0, 1, 0], [1, 0, 0], [0, 0, 0]]),
    lambda d: d["sfcs"][0].__setitem__("dag_edges", [[1, 0, 3.0], [1, 2, 4.0]]),
    lambda d: d["network"].__setitem__("cpu_capacity", [4.0, -1.0, 4.0]),
])
def test_validate_rejects_bad_instances(line, mutate):
    d = json.loads(json.dumps(instance_to_json(line)))
    mutate(d)
    with pytest.raises(InstanceError):
        validate_instance(instance_from_json(d))


def test_evaluators_match_oracle_on_random_placements():
    rng = np.random.default_rng(11)
    insts = generate_dataset([replace(PRESETS["small"], guarantee_feasible=False)] * 6, seed=3)
    for inst in insts:
        F, C = inst.num_positions, inst.num_clouds
        for _ in range(15):
            ch = rng.integers(0, C, size=F)
            x = np.zeros((F, C), dtype=int)
            x[np.arange(F), ch] = 1
            assert total_cost(inst, ch) == pytest.approx(cost_oracle(inst, x), abs=1e-9)
            got = {(v.kind, v.location): v.magnitude for v in check_feasibility(inst, ch).violations}
            want = violations_oracle(inst, x)
            assert set(got) == set(want)
            for key, mag in want.items():
                assert abs(got[key] - mag) <= 1e-9
            for h in range(len(inst.sfcs)):
                ref = delay_oracle(inst, list(ch[sfc_offsets(inst)[h]:]), h)
                if ref is not None:
                    assert sfc_delay(inst, ch, h) == pytest.approx(ref, abs=1e-12)
