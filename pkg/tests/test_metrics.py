import numpy as np
import pytest

from mirnn import intervals as iv
from mirnn import metrics as mx
from mirnn import network as net
from mirnn import physics as ph
from mirnn import trainer as tr
from mirnn.errors import ConfigError, DegenerateTargetError


def test_r_squared_exact_is_one():
    e = np.array([0.1, 0.4, -0.2, 0.9])
    assert mx.r_squared(e, e) == 1.0


def test_r_squared_mean_predictor_is_zero():
    e = np.array([1.0, 2.0, 3.0, 4.0])
    p = np.full(4, e.mean())
    assert mx.r_squared(p, e) == pytest.approx(0.0, abs=1e-15)


def test_r_squared_reversed_is_minus_three():
    assert mx.r_squared([2.0, 1.0, 0.0], [0.0, 1.0, 2.0]) == pytest.approx(-3.0)


def test_r_squared_degenerate_target():
    with pytest.raises(DegenerateTargetError):
        mx.r_squared([1.0, 2.0], [3.0, 3.0])


def test_relative_error_basics():
    e = np.array([1.0, -2.0, 0.5])
    assert mx.relative_error(e, e) == 0.0
    assert mx.relative_error(1.1 * e, e) == pytest.approx(0.1)
    with pytest.raises(DegenerateTargetError):
        mx.relative_error([0.0], [0.0])


def make_grid_eval(selected, exact, t, part):
    per_block = {}
    for b in range(1, part.n_blocks + 1):
        lo, hi = part.interval(b)
        own = (t >= lo) & (t <= hi)
        p = np.where(own, selected, np.nan)
        per_block[b] = {"u": p}
    return tr.GridEvaluation({"x": np.zeros_like(t), "t": t}, per_block,
                             {"u": selected}, {"u": exact}, part, 0.1, 0.1)


def test_mse_over_time_exact_predictor_zero_series():
    part = iv.build_partition(0.0, 5.0, 2, 0.1)
    t = np.linspace(0, 5, 200)
    e = np.sin(t)
    grid = make_grid_eval(e.copy(), e, t, part)
    slices = mx.mse_over_time(grid, 0.5)
    assert len(slices) == 10
    assert all(s.mse == 0.0 for s in slices)


def test_mse_over_time_slice_count_and_labels():
    part = iv.build_partition(0.0, 5.0, 2, 0.1)
    t = np.linspace(0, 5, 500)
    grid = make_grid_eval(np.zeros_like(t), np.sin(t), t, part)
    slices = mx.mse_over_time(grid, 0.4)
    assert len(slices) == 13  # ceil(5 / 0.4)
    assert slices[0].block == 1
    assert slices[-1].block == 2
    classes = {s.sub_interval for s in slices}
    assert "remaining" in classes


def test_mse_over_time_gap_markers():
    part = iv.build_partition(0.0, 5.0, 2, 0.1)
    t = np.array([0.05, 4.95])  # only the ends populated
    grid = make_grid_eval(np.zeros_like(t), np.ones_like(t), t, part)
    slices = mx.mse_over_time(grid, 0.5)
    assert slices[0].mse is not None
    assert slices[-1].mse is not None
    assert any(s.mse is None for s in slices[1:-1])


def test_block_transition_ratio_flat_series():
    part = iv.build_partition(0.0, 5.0, 2, 0.1)
    t = np.linspace(0, 5, 1000)
    pred = np.sin(t) + 1e-3
    grid = make_grid_eval(pred, np.sin(t), t, part)
    ratios = mx.block_transition_ratios(mx.mse_over_time(grid, 0.25), part)
    assert len(ratios) == 1
    assert ratios[0] == pytest.approx(1.0, rel=1e-6)


def test_per_block_mse_uses_own_predictions():
    part = iv.build_partition(0.0, 4.0, 2, 0.2)
    t = np.linspace(0, 4, 9)
    exact = np.zeros_like(t)
    grid = make_grid_eval(np.full_like(t, 2.0), exact, t, part)
    out = mx.per_block_mse(grid)
    assert out[1] == pytest.approx(4.0)
    assert out[2] == pytest.approx(4.0)


def test_grid_report_fields():
    part = iv.build_partition(0.0, 5.0, 2, 0.1)
    t = np.linspace(0, 5, 300)
    e = np.cos(t)
    grid = make_grid_eval(e + 0.01, e, t, part)
    rep = mx.grid_report(grid, metadata={"seed": 3})
    assert rep.r2 <= 1.0
    assert rep.mse == pytest.approx(1e-4)
    assert rep.metadata["seed"] == 3
    d = rep.as_dict()
    assert set(d) >= {"r2", "mse", "relative_error", "per_block_mse",
                      "n_grid_points", "metadata"}


def test_noise_experiment_zero_std_matches_baseline():
    problem = ph.burgers_problem()
    part = iv.build_partition(0.0, 5.0, 2, 0.1, near_width=0.05)
    policy = iv.ConditioningPolicy.fixed(part.ends[0])
    sched = net.ForgetFactorSchedule(0.5, 0.5, 0.5)
    cfg = tr.TrainConfig(epochs=25, seed=0,
                         sampling=ph.SamplingSpec(interior=60, boundary=12,
                                                  initial=12, mutual=12))
    rows, reports = mx.noise_experiment(
        problem, part, policy, sched, cfg,
        mx.NoiseExperimentConfig(stds=(0.0, 0.5), spacing=0.5,
                                 time_spacing=0.5))
    zero_rows = [r for r in rows if r.std == 0.0]
    # baseline pass plus the explicit std=0 pass: bitwise-identical MSEs
    assert len(zero_rows) == 2 * part.n_blocks
    first, second = zero_rows[:part.n_blocks], zero_rows[part.n_blocks:]
    assert [r.mse for r in first] == [r.mse for r in second]
    noisy = {r.block: r.mse for r in rows if r.std == 0.5}
    assert noisy != {r.block: r.mse for r in first}


def test_noise_experiment_rejects_negative_std():
    with pytest.raises(ConfigError):
        mx.NoiseExperimentConfig(stds=(-0.1,))


def test_noise_experiment_needs_two_blocks():
    problem = ph.burgers_problem()
    part = iv.build_partition(0.0, 5.0, 1, 0.0)
    with pytest.raises(ConfigError):
        mx.noise_experiment(problem, part,
                            iv.ConditioningPolicy.temporal_alignment(),
                            net.ForgetFactorSchedule(0.5, 0.5, 0.5),
                            tr.TrainConfig(epochs=1))


def test_noise_monotonicity_in_final_mutual_term():
    # statistical over 3 seeds: the final mutual-term loss does not decrease
    # as the injected noise level grows
    problem = ph.burgers_problem()
    part = iv.build_partition(0.0, 5.0, 2, 0.1, near_width=0.05)
    policy = iv.ConditioningPolicy.fixed(part.ends[0])
    sched = net.ForgetFactorSchedule(0.5, 0.5, 0.5)
    small = ph.SamplingSpec(interior=60, boundary=12, initial=12, mutual=24)
    stds = (0.0, 0.05, 0.5)
    finals = {s: [] for s in stds}
    for seed in (0, 1, 2):
        for std in stds:
            cfg = tr.TrainConfig(epochs=60, seed=seed, sampling=small,
                                 noise_std=std)
            res = tr.train(problem, part, policy, sched, cfg)
            finals[std].append(res.history.records[-1].mutual[0])
    means = [np.mean(finals[s]) for s in stds]
    assert means[0] <= means[1] <= means[2]
