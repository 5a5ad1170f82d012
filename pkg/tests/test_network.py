import os

import numpy as np
import pytest

import mirnn.expr as E
from mirnn import intervals as iv
from mirnn import network as net
from mirnn.errors import ConfigError, DomainError, PartitionError

SPEC = net.LayerSpec(("x", "t"), ("u",))


def two_block_model(seed=0, mutual=0.05, ff=(0.5, 0.5, 0.5),
                    policy=None):
    part = iv.build_partition(0.0, 5.0, 2, mutual, near_width=0.05)
    params = net.init_params(SPEC, seed)
    policy = policy or iv.ConditioningPolicy.fixed(part.ends[0])
    return net.Model(params, part, policy, net.ForgetFactorSchedule(*ff))


def test_init_params_shapes():
    params = net.init_params(SPEC, 0)
    shapes = {k: v.shape for k, v in params.arrays.items()}
    assert shapes["w0:x"] == (1, 30) and shapes["w0:t"] == (1, 30)
    assert shapes["w1"] == (30, 30) and shapes["w3"] == (30, 30)
    assert shapes["wout:u"] == (30, 1)
    assert all(shapes[f"u{l}"] == (30, 30) for l in range(4))
    assert shapes["b0"] == (30,) and shapes["bout:u"] == (1,)


def test_init_params_deterministic_and_seed_sensitive():
    a = net.init_params(SPEC, 7)
    b = net.init_params(SPEC, 7)
    c = net.init_params(SPEC, 8)
    assert all(np.array_equal(a.arrays[k], b.arrays[k]) for k in a.arrays)
    assert any(not np.array_equal(a.arrays[k], c.arrays[k]) for k in a.arrays)


def test_init_params_biases_zero_weights_bounded():
    params = net.init_params(SPEC, 3)
    assert np.all(params.arrays["b2"] == 0.0)
    bound = np.sqrt(6.0 / 60.0)
    assert np.max(np.abs(params.arrays["w1"])) <= bound


def test_zero_width_layer_rejected():
    with pytest.raises(ConfigError):
        net.LayerSpec(("x", "t"), ("u",), (30, 0, 30))


def test_block_forward_ff_zero_matches_uncoupled():
    rng = np.random.default_rng(0)
    params = net.init_params(SPEC, 1)
    coords = {"x": rng.uniform(0, 4, 8), "t": rng.uniform(0, 5, 8)}
    base, state = net.block_forward(params, coords)
    hidden = net.HiddenState([rng.uniform(-0.9, 0.9, size=(8, 30))
                              for _ in range(4)], {})
    with_h0, _ = net.block_forward(params, coords, hidden, ff=0.0)
    with_h1, _ = net.block_forward(params, coords, hidden, ff=1.0)
    assert np.array_equal(base["u"], with_h0["u"])
    assert not np.array_equal(base["u"], with_h1["u"])


def test_activations_inside_tanh_range():
    rng = np.random.default_rng(2)
    params = net.init_params(SPEC, 2)
    coords = {"x": rng.uniform(0, 4, 100), "t": rng.uniform(0, 5, 100)}
    _, state = net.block_forward(params, coords)
    assert len(state.layers) == 4
    for layer in state.layers:
        assert np.all(np.abs(layer) < 1.0)


def test_forget_factor_continuity():
    rng = np.random.default_rng(4)
    params = net.init_params(SPEC, 4)
    coords = {"x": rng.uniform(0, 4, 16), "t": rng.uniform(0, 5, 16)}
    hidden = net.HiddenState([rng.uniform(-0.9, 0.9, size=(16, 30))
                              for _ in range(4)], {})
    ffs = np.linspace(0.0, 1.0, 21)
    outs = [net.block_forward(params, coords, hidden, ff=float(f))[0]["u"]
            for f in ffs]
    steps = [np.max(np.abs(a - b)) for a, b in zip(outs, outs[1:])]
    assert max(steps) < 0.2


def test_conditional_hidden_matches_block_one_activations():
    model = two_block_model()
    x = np.array([0.5, 1.5, 3.0])
    state = net.conditional_hidden(model.params, model.partition,
                                   model.schedule, {"x": x}, [2.55])
    _, direct = net.block_forward(model.params, {"x": x, "t": 2.55})
    for a, b in zip(state.layers, direct.layers):
        assert np.array_equal(a, b)


def test_conditional_hidden_empty_chain_absent():
    model = two_block_model()
    assert net.conditional_hidden(model.params, model.partition,
                                  model.schedule, {"x": [1.0]}, []) is None


def test_conditional_hidden_chain_too_long():
    model = two_block_model()
    with pytest.raises(PartitionError):
        net.conditional_hidden(model.params, model.partition, model.schedule,
                               {"x": [1.0]}, [2.0, 2.5])


def test_conditional_hidden_zero_schedule_is_standalone():
    part = iv.build_partition(0.0, 6.0, 3, 0.1, near_width=0.05)
    params = net.init_params(SPEC, 5)
    sched = net.ForgetFactorSchedule(0.0, 0.0, 0.0)
    x = np.array([1.0, 2.0])
    state = net.conditional_hidden(params, part, sched, {"x": x}, [2.0, 4.0])
    _, direct = net.block_forward(params, {"x": x, "t": 4.0})
    for a, b in zip(state.layers, direct.layers):
        assert np.array_equal(a, b)


def test_unroll_block_one_ignores_hidden_machinery():
    model = two_block_model()
    out = net.unroll(model, {"x": 1.0, "t": 0.7})
    assert list(out) == [1]
    fields, _ = net.block_forward(model.params, {"x": 1.0, "t": 0.7})
    assert out[1]["u"] == fields["u"].ravel()[0]


def test_unroll_mutual_query_two_predictions():
    model = two_block_model(mutual=0.1)
    out = net.unroll(model, {"x": 1.0, "t": 2.53})
    assert sorted(out) == [1, 2]


def test_unroll_outside_domain_raises():
    model = two_block_model()
    with pytest.raises(DomainError):
        net.unroll(model, {"x": 1.0, "t": 6.0})


def test_unroll_pure_across_batching():
    model = two_block_model()
    rng = np.random.default_rng(8)
    xs = rng.uniform(0, 4, 50)
    ts = rng.uniform(0, 5, 50)
    single = np.array([net.unroll(model, {"x": x, "t": t}).popitem()[1]["u"]
                       for x, t in zip(xs, ts)])
    batched = net.predict_batch(model, {"x": xs, "t": ts})
    merged = np.where(np.isnan(batched.get(2, {"u": np.full(50, np.nan)})["u"]),
                      batched[1]["u"] if 1 in batched else np.nan,
                      batched.get(2, {"u": np.full(50, np.nan)})["u"])
    assert np.array_equal(single, merged)
    # shuffled batch contexts give bitwise-identical per-point results
    for trial in range(5):
        perm = rng.permutation(50)
        again = net.predict_batch(model, {"x": xs[perm], "t": ts[perm]})
        for b, fields in again.items():
            orig = batched[b]["u"][perm]
            both = ~(np.isnan(orig) | np.isnan(fields["u"]))
            assert np.array_equal(fields["u"][both], orig[both])


def test_weight_sharing_single_parameter_set():
    model = two_block_model(mutual=0.1)
    before = net.unroll(model, {"x": 1.0, "t": 2.53})
    model.params.arrays["w1"][0, 0] += 0.05
    model._graph_cache.clear()
    after = net.unroll(model, {"x": 1.0, "t": 2.53})
    assert after[1]["u"] != before[1]["u"]
    assert after[2]["u"] != before[2]["u"]


def test_gradients_flow_through_conditioning_chain():
    model = two_block_model()
    plan = net.evaluation_plan(model.partition, model.policy, model.schedule,
                               2, (4.0, 4.0))
    coord_exprs = {c: E.inp(c) for c in SPEC.coords}
    fields, _ = net.chain_graph(SPEC, plan, coord_exprs)
    loss = E.mean(E.square(fields["u"]))
    grads = E.param_gradient(loss, {"x": np.ones((5, 1)),
                                    "t": np.full((5, 1), 4.0)},
                             model.params.arrays)
    # every weight, including the coupling maps, receives gradient
    assert all(np.any(g != 0.0) for name, g in grads.items()
               if name.startswith(("w", "u")))


def test_evaluation_plan_preceding_end_three_blocks():
    part = iv.build_partition(0.0, 6.0, 3, 0.1, near_width=0.05)
    sched = net.ForgetFactorSchedule(1.0, 0.3, 0.1)
    policy = iv.ConditioningPolicy.preceding_end()
    plan = net.evaluation_plan(part, policy, sched, 3, (5.0, 5.0))
    assert [l.block for l in plan] == [1, 2, 3]
    # each preceding block runs at its own interval end; the query runs live
    assert plan[0].time == part.ends[0]
    assert plan[1].time == part.ends[1]
    assert plan[2].time is None
    assert plan[0].ff_in is None
    assert plan[2].ff_in == 0.1  # query in remaining-independent region


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = two_block_model(seed=11)
    path = os.path.join(tmp_path, "ckpt.json")
    net.save_checkpoint(path, model.params, model.schedule)
    doc = net.load_checkpoint(path)
    params, schedule = net.params_from_doc(doc)
    assert schedule == model.schedule
    assert params.seed == model.params.seed
    for k, v in model.params.arrays.items():
        assert np.array_equal(params.arrays[k], v)
        assert params.arrays[k].dtype == np.float64
