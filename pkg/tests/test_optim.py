"""Descent loops: clipping, tuned step sizes, bounds, baselines."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from tokenwalk import optim
from tokenwalk.datasets import synth_linear
from tokenwalk.errors import ConfigError
from tokenwalk.optim import (
    THEOREM2_C,
    AveragingObjective,
    LogisticObjective,
    SgdConfig,
    clip,
    error_bound_theorem2,
    run_central_dpsgd,
    run_local_dpsgd,
    run_rw_dpsgd,
    step_size_theorem2,
)
from tokenwalk.walk import simulate


# --------------------------------------------------------------------------- #
# Clipping
# --------------------------------------------------------------------------- #


def test_clip_hand_values():
    g = np.array([3.0, 4.0])
    clipped = clip(g, 1.0)
    assert np.allclose(clipped, [0.6, 0.8])
    assert np.array_equal(clip(g, 10.0), g)  # inside the ball: untouched
    with pytest.raises(ConfigError):
        clip(g, 0.0)


@given(
    arrays(np.float64, 3, elements=st.floats(-100, 100)),
    st.floats(min_value=0.01, max_value=10.0),
)
def test_clip_properties(g, delta):
    out = clip(g, delta)
    assert np.linalg.norm(out) <= delta * (1 + 1e-12)
    # direction is preserved: the output is a nonnegative multiple of g
    if np.linalg.norm(g) > 0:
        cos = float(g @ out)
        assert cos >= 0.0


# --------------------------------------------------------------------------- #
# Analysis formulas
# --------------------------------------------------------------------------- #


def test_step_size_hand_value():
    # L = mu = 2, T = 1000, d0 = 100, tau = 3, zeta = 4
    arg = 1000 * 100 * 4.0 / (3.0 * THEOREM2_C * 2.0 * 3.0 * 16.0)
    expected = min(0.5, math.log(arg) / 2000.0)
    got = step_size_theorem2(2.0, 2.0, 1000, 100.0, 3.0, 4.0)
    assert got == expected
    assert got < 0.5  # log branch active for these numbers


def test_step_size_fallbacks():
    assert step_size_theorem2(2.0, 2.0, 1000, 100.0, 3.0, 0.0) == 0.5
    # huge heterogeneity drives the log argument below 1
    assert step_size_theorem2(2.0, 2.0, 10, 1.0, 3.0, 1e6) == 0.5
    with pytest.raises(ConfigError):
        step_size_theorem2(0.0, 2.0, 10, 1.0, 3.0, 1.0)


def test_error_bound_hand_recompute():
    l, mu, t, d0, tau, zeta = 2.0, 2.0, 1000, 100.0, 3.0, 4.0
    dim, sigma, delta, sigma_sgd = 2, 0.5, 1.0, 0.1
    got = error_bound_theorem2(l, mu, t, d0, tau, zeta, dim, sigma, delta, sigma_sgd)
    log_factor = math.log(t * mu**2 * d0 / (39.0 * l * tau * zeta**2))
    expected = (
        2.0 * math.exp(-t * mu / l) * d0
        + (
            39.0 * tau * zeta**2 * l / (mu**3 * t)
            + (dim * sigma**2 * delta**2 + sigma_sgd**2) * l / (mu**2 * t)
        )
        * log_factor
    )
    assert got == pytest.approx(expected, rel=1e-14)


def test_error_bound_clamps():
    # tiny T drives the log argument below 1: the factor clamps to 0,
    # leaving only the contraction term
    small = error_bound_theorem2(2.0, 2.0, 2, 1.0, 5.0, 10.0, 1, 0.0, 1.0, 0.0)
    assert small == pytest.approx(2.0 * math.exp(-2.0) * 1.0, rel=1e-12)
    # zero heterogeneity switches the factor to ln T
    zero_het = error_bound_theorem2(2.0, 2.0, 100, 1.0, 5.0, 0.0, 1, 1.0, 1.0, 0.0)
    noise = 1.0 * 2.0 / (4.0 * 100.0)
    assert zero_het == pytest.approx(
        2.0 * math.exp(-100.0) * 1.0 + noise * math.log(100.0), rel=1e-12
    )


# --------------------------------------------------------------------------- #
# Objectives
# --------------------------------------------------------------------------- #


def test_averaging_objective_formulas():
    obj = AveragingObjective(np.array([1.0, 3.0, 5.0, 7.0]))
    assert obj.n_nodes == 4 and obj.dim == 1
    assert obj.smoothness == 2.0 and obj.strong_convexity == 2.0
    assert np.array_equal(obj.optimum(), [4.0])
    assert obj.heterogeneity() == 6.0  # 2 * max|mean - y_v|
    x = np.array([2.0])
    assert np.array_equal(obj.gradient(1, x, None, None), [-2.0])
    # mean of ||x - y_v||^2 at x = 2: (1 + 1 + 9 + 25) / 4
    assert obj.objective_value(x) == 9.0
    assert obj.accuracy(x) is None


def test_averaging_objective_vector_values():
    vals = np.array([[0.0, 0.0], [2.0, 4.0]])
    obj = AveragingObjective(vals)
    assert obj.dim == 2
    assert np.array_equal(obj.optimum(), [1.0, 2.0])
    assert obj.heterogeneity() == pytest.approx(2.0 * math.sqrt(5.0))
    with pytest.raises(ConfigError):
        AveragingObjective(np.zeros((2, 2, 2)))


def test_logistic_gradient_matches_finite_differences():
    ds = synth_linear(6, 10, d=4, margin=0.2, seed=3)
    obj = LogisticObjective(ds, reg=0.05)
    rng = np.random.default_rng(0)
    x = rng.normal(size=4)

    def local_value(node: int, point: np.ndarray) -> float:
        feats, labels = obj._blocks[node]
        margins = labels * (feats @ point)
        return float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 * obj.reg * (point @ point))

    for node in (0, 3, 5):
        full = obj.gradient(node, x, rng, None)  # full local batch
        h = 1e-6
        numeric = np.zeros(4)
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            numeric[k] = (local_value(node, x + e) - local_value(node, x - e)) / (2 * h)
        assert np.allclose(full, numeric, atol=1e-6)


def test_logistic_minibatch_unbiased_in_expectation():
    ds = synth_linear(2, 40, d=3, margin=0.2, seed=1)
    obj = LogisticObjective(ds)
    x = np.array([0.1, -0.2, 0.3])
    full = obj.gradient(0, x, np.random.default_rng(0), None)
    draws = np.mean(
        [obj.gradient(0, x, np.random.default_rng(s), 5) for s in range(4000)], axis=0
    )
    assert np.allclose(draws, full, atol=0.01)


def test_logistic_accuracy_on_separable_data():
    ds = synth_linear(8, 20, d=4, margin=0.5, seed=2)
    obj = LogisticObjective(ds)
    # sanity: some direction classifies well above chance after a few steps
    cfg = SgdConfig(steps=2000, gamma=0.5, seed=0, batch_size=None)
    rec = run_local_dpsgd(obj, cfg, 8)
    assert rec.accuracy is not None
    assert rec.accuracy[-1] >= 0.9


def test_sgd_config_validation():
    with pytest.raises(ConfigError, match="steps"):
        SgdConfig(steps=-1)
    with pytest.raises(ConfigError, match="gamma"):
        SgdConfig(steps=10, gamma=-0.5)
    with pytest.raises(ConfigError, match="sigma"):
        SgdConfig(steps=10, sigma=-1.0)
    with pytest.raises(ConfigError, match="clip_threshold"):
        SgdConfig(steps=10, clip_threshold=0.0)
    with pytest.raises(ConfigError, match="schedule"):
        SgdConfig(steps=10, schedule="cosine")
    with pytest.raises(ConfigError, match="batch_size"):
        SgdConfig(steps=10, batch_size=0)


# --------------------------------------------------------------------------- #
# Run loops
# --------------------------------------------------------------------------- #


def _ring_setup(n=8, seed=4):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=n)
    from tokenwalk.graphs import GraphSpec, generate
    from tokenwalk.transition import with_self_loops

    tm = with_self_loops(generate(GraphSpec(family="ring", n=n)), 1.0 / 3.0)
    return tm, AveragingObjective(values)


def test_rw_run_bitwise_deterministic():
    tm, obj = _ring_setup()
    cfg = SgdConfig(steps=400, gamma=0.05, sigma=0.3, clip_threshold=2.0, seed=9)
    a = run_rw_dpsgd(tm, obj, cfg)
    b = run_rw_dpsgd(tm, obj, cfg)
    assert np.array_equal(a.final_x, b.final_x)
    assert np.array_equal(a.objective, b.objective)
    assert np.array_equal(a.trajectory.nodes, b.trajectory.nodes)


def test_rw_schedule_is_the_spawned_walk():
    tm, obj = _ring_setup()
    cfg = SgdConfig(steps=200, gamma=0.05, seed=31, start_node=3, burn_in=7)
    rec = run_rw_dpsgd(tm, obj, cfg)
    expected = simulate(
        tm, 3, 200, np.random.SeedSequence(31).spawn(3)[0], burn_in=7
    )
    assert np.array_equal(rec.trajectory.nodes, expected.nodes)


def test_cap_zero_and_no_noise_freezes_x():
    tm, obj = _ring_setup()
    cfg = SgdConfig(steps=100, gamma=0.1, sigma=0.0, x0=5.0, contribution_cap=0)
    rec = run_rw_dpsgd(tm, obj, cfg)
    assert np.array_equal(rec.final_x, [5.0])
    assert np.all(rec.objective == rec.objective[0])


def test_burn_in_defers_updates():
    tm, obj = _ring_setup()
    frozen = run_rw_dpsgd(tm, obj, SgdConfig(steps=50, gamma=0.1, x0=5.0, burn_in=50))
    assert np.array_equal(frozen.final_x, [5.0])


def test_non_private_rw_converges_to_mean():
    tm, obj = _ring_setup()
    # huge clip threshold: non-private runs should not truncate gradients
    cfg = SgdConfig(steps=20_000, gamma=None, x0=10.0, seed=1, clip_threshold=1e9)
    rec = run_rw_dpsgd(tm, obj, cfg)
    assert rec.sq_distance[-1] <= 1e-2 * float(np.var(obj.values))
    # the automatic step size came from the strongly convex analysis
    assert 0 < rec.gamma <= 0.5


def test_inverse_t_schedule_hand_trace():
    # single node, scalar value 0, x0 = 1: x_{k+1} = x_k (1 - 2 gamma / k)
    obj = AveragingObjective(np.array([0.0]))
    tm = __import__("tokenwalk.transition", fromlist=["from_array"]).from_array(
        np.array([[1.0]])
    )
    cfg = SgdConfig(
        steps=4, gamma=0.1, schedule="inverse_t", x0=1.0, trace_points=4, clip_threshold=10.0
    )
    rec = run_rw_dpsgd(tm, obj, cfg)
    x = 1.0
    for k in (1, 2, 3, 4):
        x = x - (0.1 / k) * 2.0 * x
    assert rec.final_x[0] == pytest.approx(x, rel=1e-14)


def test_inverse_t_respects_clipping():
    # same trace with a tight threshold: every gradient saturates at norm 1
    obj = AveragingObjective(np.array([0.0]))
    tm = __import__("tokenwalk.transition", fromlist=["from_array"]).from_array(
        np.array([[1.0]])
    )
    cfg = SgdConfig(steps=4, gamma=0.1, schedule="inverse_t", x0=1.0, trace_points=4)
    rec = run_rw_dpsgd(tm, obj, cfg)
    x = 1.0
    for k in (1, 2, 3, 4):
        x = x - (0.1 / k) * min(2.0 * x, 1.0)
    assert rec.final_x[0] == pytest.approx(x, rel=1e-14)


def test_local_baseline_runs_and_differs():
    tm, obj = _ring_setup()
    cfg = SgdConfig(steps=300, gamma=0.05, seed=6)
    rw = run_rw_dpsgd(tm, obj, cfg)
    local = run_local_dpsgd(obj, cfg, 8)
    assert local.algorithm == "local_dpsgd"
    assert local.trajectory is None
    assert not np.array_equal(rw.final_x, local.final_x)
    with pytest.raises(ConfigError, match="nodes"):
        run_local_dpsgd(obj, cfg, 5)


def test_central_converges_fast():
    _, obj = _ring_setup()
    cfg = SgdConfig(steps=200, gamma=0.25, batch_size=None, clip_threshold=1e9)
    rec = run_central_dpsgd(obj, cfg)
    assert rec.algorithm == "central_dpsgd"
    assert rec.sq_distance[-1] <= 1e-10
    # with sigma > 0, per-round noise std shrinks with n: still lands close
    noisy = run_central_dpsgd(obj, SgdConfig(steps=200, gamma=0.25, sigma=0.5, batch_size=None))
    assert noisy.sq_distance[-1] <= 5e-2


def test_node_count_mismatch_rejected():
    tm, _ = _ring_setup(8)
    other = AveragingObjective(np.zeros(5))
    with pytest.raises(ConfigError, match="nodes"):
        run_rw_dpsgd(tm, other, SgdConfig(steps=10))


def test_trace_recording_shape():
    tm, obj = _ring_setup()
    cfg = SgdConfig(steps=1000, gamma=0.05, trace_points=10)
    rec = run_rw_dpsgd(tm, obj, cfg)
    assert rec.stride == 100
    assert rec.ts[0] == 0 and rec.ts[-1] == 1000
    assert len(rec.ts) == len(rec.objective) == len(rec.sq_distance)


# --------------------------------------------------------------------------- #
# Persistence
# --------------------------------------------------------------------------- #


def test_save_run_csv(tmp_path):
    tm, obj = _ring_setup()
    rec = run_rw_dpsgd(tm, obj, SgdConfig(steps=100, gamma=0.05, trace_points=5))
    path = tmp_path / "run.csv"
    optim.save_run_csv(rec, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].split(",")[:3] == ["t", "objective", "sq_distance"]
    assert len(lines) == 1 + len(rec.ts)
    first = lines[1].split(",")
    assert int(first[0]) == 0
    assert float(first[1]) == pytest.approx(rec.objective[0])
    meta = json.loads((tmp_path / "run.csv.json").read_text())
    assert meta["algorithm"] == "rw_dpsgd"
    assert meta["stride"] == rec.stride
    assert meta["gamma"] == rec.gamma
