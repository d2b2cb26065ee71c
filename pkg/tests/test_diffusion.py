import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from conftest import line_instance

from cnfdiff.core import CloudNetwork, Instance, Placement, Sfc
from cnfdiff.diffusion import (
    Arch,
    BadT,
    DenoiserModel,
    LossContext,
    TrainConfig,
    UntrainedModel,
    build_hetero_graph,
    constraint_losses,
    cosine_schedule,
    denoise_predict,
    forward_noise,
    load_checkpoint,
    make_examples,
    reconstruct_y0,
    reverse_diffusion,
    sample,
    save_checkpoint,
    train,
)
from cnfdiff.diffusion.graph import RESTRICT_NONE, RESTRICT_PARTIAL, RESTRICT_PINNED, UnplaceableCnf
from cnfdiff.diffusion.training import Y0_CLIP
from cnfdiff.exact import solve_exact
from cnfdiff.nn import tensor as T
from cnfdiff.nn.tensor import Tensor, no_grad
from cnfdiff.scenarios import PRESETS, generate_dataset, generate_instance


def reference_alpha_bar(T_, s=0.008, max_beta=0.999):
    """Cosine retention written out per step with clipped betas."""
    f = [math.cos((t / T_ + s) / (1 + s) * math.pi / 2) ** 2 for t in range(T_ + 1)]
    out = [1.0]
    for t in range(1, T_ + 1):
        beta = min(1 - f[t] / f[t - 1], max_beta)
        out.append(out[-1] * (1 - beta))
    return np.array(out)


def trained(insts, epochs=3, seed=0, **kw):
    pairs = [(i, solve_exact(i).placement) for i in insts]
    return train(make_examples(pairs), TrainConfig(epochs=epochs, seed=seed, hidden_dim=16, **kw))


# -- schedule ---------------------------------------------------------------


@pytest.mark.parametrize("T_", [1, 2, 10, 100, 1000])
def test_cosine_schedule_identities(T_):
    s = cosine_schedule(T_)
    assert s.alpha_bar[0] == 1.0 and s.sigma[0] == 0.0
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.max(np.abs(s.alpha_bar + s.sigma**2 - 1)) <= 1e-12
    assert np.allclose(s.alpha_bar, reference_alpha_bar(T_), rtol=1e-10, atol=0)


def test_schedule_rejects_bad_T():
    for bad in (0, -3, 2.5):
        with pytest.raises(BadT):
            cosine_schedule(bad)


def test_forward_noise_limits():
    s = cosine_schedule(100)
    rng = np.random.default_rng(0)
    mask = rng.random((4, 3)) < 0.7
    y0 = np.where(mask, rng.integers(0, 2, (4, 3)), 0).astype(float)
    assert np.allclose(forward_noise(y0, 40, np.zeros((4, 3)), mask, s), np.sqrt(s.alpha_bar[40]) * y0)
    e = rng.standard_normal((4, 3))
    yT = forward_noise(y0, 100, e, mask, s)
    assert np.allclose(yT, s.sigma[100] * np.where(mask, e, 0.0), atol=1e-3)


def test_round_trip_every_step():
    s = cosine_schedule(100)
    rng = np.random.default_rng(1)
    mask = rng.random((6, 4)) < 0.8
    y0 = np.where(mask, rng.integers(0, 2, (6, 4)), 0).astype(float)
    for t in range(1, 101):
        e = np.where(mask, rng.standard_normal((6, 4)), 0.0)
        back = reconstruct_y0(forward_noise(y0, t, e, mask, s), e, t, s)
        assert np.max(np.abs(back - y0)) < 1e-9


def test_reconstruct_with_zero_noise_rescales():
    s = cosine_schedule(50)
    y = np.arange(6.0).reshape(2, 3)
    assert np.allclose(reconstruct_y0(y, np.zeros_like(y), 10, s), y / np.sqrt(s.alpha_bar[10]))


# -- graph ------------------------------------------------------------------


def test_graph_restriction_categories_and_edges():
    inst = line_instance(allowed=[{0, 1, 2}, {0, 2}, {0}])
    g = build_hetero_graph(inst)
    # type 0 everywhere, type 1 on cloud 0 only, type 2 on clouds 0 and 1
    assert g.cnf_restriction_ids.tolist() == [RESTRICT_NONE, RESTRICT_PINNED, RESTRICT_PARTIAL]
    assert sorted(map(tuple, g.cc_edges)) == [(0, 1), (1, 0), (1, 2), (2, 1)]
    assert sorted(map(tuple, g.tc_edges)) == [(0, 0), (0, 1), (0, 2), (1, 0), (2, 0), (2, 1)]
    assert np.array_equal(g.ct_edges, g.tc_edges[:, ::-1])
    assert g.tt_edges.tolist() == [[0, 1], [1, 2]]


def test_graph_resource_features_share_scale(line):
    g = build_hetero_graph(line)
    # cloud cpu capacity 4 vs CNF demands 1, 2, 3: ordering survives standardisation
    assert (g.cloud_feats[:, 0][:, None] > g.cnf_feats[:, 0][None, :]).all()
    mu, sd = g.stats["resources"]["mean"][0], g.stats["resources"]["std"][0]
    assert g.cloud_feats[0, 0] * sd + mu == pytest.approx(4.0)


def test_unplaceable_cnf_rejected(line):
    net = line.network
    bad = replace(line, network=CloudNetwork(net.cpu_capacity, net.ram_capacity, net.bandwidth,
                                              [{0, 2}, {0, 2}, {0, 2}]))
    with pytest.raises(UnplaceableCnf):
        build_hetero_graph(bad)


# -- losses -----------------------------------------------------------------


def losses_of(inst, P):
    with no_grad():
        return {k: float(v.data) for k, v in constraint_losses(Tensor(P), LossContext(inst)).items()}


def test_losses_vanish_on_feasible_one_hot(line):
    P = Placement.from_choices((0, 0, 1), 3).assign.astype(float)
    assert all(v == 0.0 for v in losses_of(line, P).values())


def test_capacity_loss_is_overload_over_mean_capacity(line):
    # cloud 0 carries cpu 1 + 2 + 3 = 6 against capacity 4
    P = Placement.from_choices((0, 0, 0), 3).assign.astype(float)
    out = losses_of(line, P)
    assert out["cap"] == pytest.approx(2.0 / 4.0)
    assert sum(v for k, v in out.items() if k != "cap") == 0.0


def test_entropy_of_two_way_split_is_ln2(line):
    P = np.zeros((3, 3))
    P[:, 0] = P[:, 1] = 0.5
    assert losses_of(line, P)["place"] == pytest.approx(math.log(2))


def test_restriction_adjacency_bandwidth_delay_losses(line):
    inst = line_instance(allowed=[{0, 1, 2}, {0, 2}, {0, 1, 2}])
    P = Placement.from_choices((0, 0, 1), 3).assign.astype(float) * 0.7
    P[1, 1] = 0.3  # type 1 is forbidden on cloud 1
    assert losses_of(inst, P)["rest"] == pytest.approx(0.3)

    assert losses_of(line, Placement.from_choices((0, 2, 2), 3).assign.astype(float))["adj"] == 1.0

    heavy = replace(line, sfcs=[Sfc.chain(0, [0, 1, 2], [12.0, 1.0], 100.0)])
    # 12 over a 10 link, normalised by the mean positive bandwidth 7.5
    assert losses_of(heavy, Placement.from_choices((0, 1, 1), 3).assign.astype(float))["bw"] == pytest.approx(2 / 7.5)

    tight = line_instance(budget=5.0)
    assert losses_of(tight, Placement.from_choices((0, 1, 2), 3).assign.astype(float))["delay"] == pytest.approx(2.75 / 5)


def test_expected_delay_is_linear_in_hop_probability(line):
    # CNF 1 sits on cloud 1 with probability q, otherwise with CNF 0 on cloud 0
    tight = line_instance(budget=1.0)
    for q in (0.25, 0.5):
        P = np.zeros((3, 3))
        P[0, 0] = 1.0
        P[1, 0], P[1, 1] = 1 - q, q
        P[2, 0], P[2, 1] = 1 - q, q
        # hop 0 -> 1: q * 2; hop 1 -> 2: both rows share the distribution, so
        # crossing mass is 2 q (1 - q) on a 0 <-> 1 link at cost 2 each
        expect = 1.75 + 2 * q + 2 * (2 * q * (1 - q)) - 1.0
        assert losses_of(tight, P)["delay"] == pytest.approx(expect / 1.0)


# -- model ------------------------------------------------------------------


def permuted(inst, perm):
    net = inst.network
    inv = np.argsort(perm)
    new_net = CloudNetwork(net.cpu_capacity[perm], net.ram_capacity[perm], net.bandwidth[np.ix_(perm, perm)],
                           [net.allowed_types[p] for p in perm], net.tiers[perm])
    return Instance(new_net, inst.sfcs, inst.cnf_catalog, inst.placement_cost[perm], inst.message_size), inv


def test_denoiser_is_cloud_permutation_equivariant():
    inst = generate_dataset([PRESETS["small"]], seed=5)[0]
    perm = np.random.default_rng(0).permutation(inst.num_clouds)
    inst2, _ = permuted(inst, perm)
    model = DenoiserModel(Arch(hidden_dim=16), seed=1)
    g, g2 = build_hetero_graph(inst), build_hetero_graph(inst2)
    y = np.where(g.mask, np.random.default_rng(1).standard_normal(g.mask.shape), 0.0)
    with no_grad():
        a = denoise_predict(model, g, y, 0.4).data
        b = denoise_predict(model, g2, y[:, perm], 0.4).data
    assert np.allclose(a[:, perm], b, atol=1e-10)


def test_mask_conservation_through_pipeline():
    inst = generate_dataset([replace(PRESETS["small"], restriction_prob=0.4)], seed=2)[0]
    g = build_hetero_graph(inst)
    forbidden = ~g.mask
    assert forbidden.any()
    rng = np.random.default_rng(0)
    s = cosine_schedule(100)
    y0 = Placement.from_choices(g.mask.argmax(axis=1), inst.num_clouds).assign.astype(float)
    y_t = forward_noise(y0, 37, rng.standard_normal(g.mask.shape), g.mask, s)
    model = DenoiserModel(Arch(hidden_dim=8), seed=0)
    with no_grad():
        eps = denoise_predict(model, g, y_t, s.sigma[37]).data
        y0_hat = reconstruct_y0(y_t, eps, 37, s)
        P = T.masked_softmax(Tensor(np.clip(y0_hat, *Y0_CLIP)), g.mask).data
    for arr in (y_t, eps, y0_hat, P):
        assert (arr[forbidden] == 0).all()
    model.trained_steps = 1
    out = reverse_diffusion(model, inst, 4, cosine_schedule(10), seed=0)
    assert (out[:, forbidden] == 0).all()


def test_zero_final_layer_predicts_zero_noise(line):
    model = DenoiserModel(Arch(hidden_dim=8), seed=0)
    last = model.decoder.layers[-1]
    last.weight.data = np.zeros_like(last.weight.data)
    g = build_hetero_graph(line)
    assert not denoise_predict(model, g, np.ones((3, 3)), 0.5).data.any()


def test_batched_decode_matches_reference(line):
    model = DenoiserModel(Arch(hidden_dim=8), seed=3)
    g = build_hetero_graph(line)
    with no_grad():
        mixed = model.mix(g, model.encode(g), 0.2)
        y = np.random.default_rng(0).standard_normal((4, len(g.tc_edges)))
        ref = model.decode(g, mixed, Tensor(y.reshape(-1, 1))).data.reshape(4, -1)
    assert np.allclose(model.decode_batch(g, mixed, y), ref, atol=1e-12)


def test_checkpoint_round_trip(tmp_path, line):
    model, _ = trained([line], epochs=1)
    save_checkpoint(model, tmp_path / "m.json", extra={"note": 1})
    back, extra = load_checkpoint(tmp_path / "m.json")
    assert extra == {"note": 1} and back.trained_steps == model.trained_steps
    assert back.fingerprint() == model.fingerprint()
    g = build_hetero_graph(line)
    with no_grad():
        assert np.array_equal(denoise_predict(model, g, np.ones((3, 3)), 0.3).data,
                              denoise_predict(back, g, np.ones((3, 3)), 0.3).data)


# -- training and sampling --------------------------------------------------


def test_training_is_deterministic():
    insts = generate_dataset([PRESETS["tiny"]] * 3, seed=4)
    m1, log1 = trained(insts, epochs=2, seed=9)
    m2, log2 = trained(insts, epochs=2, seed=9)
    assert m1.fingerprint() == m2.fingerprint() and log1 == log2
    assert len(log1["epochs"]) == 2 and log1["schedule_hash"] == cosine_schedule(100).digest()


def test_target_on_forbidden_pair_rejected():
    inst = line_instance(allowed=[{0, 1, 2}, {0, 2}, {0, 1, 2}])
    with pytest.raises(ValueError):
        make_examples([(inst, Placement.from_choices((1, 1, 1), 3))])


def test_sampling_deterministic_and_chain_independent(line, quiet):
    model, _ = trained([line], epochs=2)
    s = cosine_schedule(20)
    a = sample(model, line, K=5, schedule=s, seed=3)
    assert a.dumps() == sample(model, line, K=5, schedule=s, seed=3).dumps()
    small = reverse_diffusion(model, line, 2, s, seed=3)
    big = reverse_diffusion(model, line, 5, s, seed=3)
    assert np.allclose(small, big[:2], atol=1e-12)


def test_sampler_calls_denoiser_T_times(line):
    model, _ = trained([line], epochs=1)
    calls = []
    orig = model.mix
    model.mix = lambda *a: calls.append(a[2]) or orig(*a)
    s = cosine_schedule(25)
    reverse_diffusion(model, line, 3, s, seed=0)
    assert calls == [s.sigma[t] for t in range(25, 0, -1)]


def test_sample_ranking_and_report(line):
    model, _ = trained([line], epochs=2)
    res = sample(model, line, K=12, schedule=cosine_schedule(20), seed=0)
    doc = res.to_json()
    assert doc["schema"] == "samples.v1" and doc["num_samples"] == 12
    feas = [c for c in res.candidates if c.feasible]
    assert [c.cost for c in feas] == sorted(c.cost for c in feas)
    assert res.candidates[: len(feas)] == tuple(feas)
    assert all(not c.report.by_kind("TypeRestriction") for c in res.candidates)


def test_untrained_model_warns(line):
    with pytest.warns(UntrainedModel):
        sample(DenoiserModel(Arch(hidden_dim=4)), line, K=1, schedule=cosine_schedule(3))


def test_no_feasible_sample_reports_least_violation():
    # every placement violates cpu: demands exceed every capacity
    inst = line_instance(cpu=(0.5, 0.5, 0.5))
    model = DenoiserModel(Arch(hidden_dim=4))
    model.trained_steps = 1
    res = sample(model, inst, K=6, schedule=cosine_schedule(5), seed=0)
    assert not res.any_feasible and res.feasible_count == 0
    mags = [c.report.total_magnitude() for c in res.candidates]
    assert mags == sorted(mags)
