import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sstafed.errors import ConfigError, DimensionError, ParameterError, ProtocolError
from sstafed.fl import (
    AggregationStrategy,
    ModelUpdate,
    Operator,
    Server,
    aggregate,
    gsc_weights,
    local_train,
    recover_gradient,
    run_experiment,
)
from sstafed.model import SstaParams, init_params, loss_and_grad
from sstafed.numerics import make_rng
from sstafed.synthdata import partition

from .helpers import tiny_config


def upd(oid, w, n=1):
    return ModelUpdate(oid, 1, np.asarray(w, dtype=np.float64), n)


def operator_zero(cfg):
    part = partition(cfg.scenario, cfg.seed)
    return Operator(0, part.operator_train[0], part.operator_participants[0])


# -- gsc_weights -------------------------------------------------------------

def test_gsc_identical_pair():
    g = np.array([1.0, -2.0, 0.5])
    for tau in (0.1, 1.0, 1e6):
        r = gsc_weights([g, g], 0.0, tau)
        np.testing.assert_array_equal(r.matrix, np.ones((2, 2)))
        np.testing.assert_array_equal(r.mean_similarity, [1.0, 1.0])
        assert r.valid == (0, 1)
        np.testing.assert_array_equal(r.weights, [0.5, 0.5])


def test_gsc_hand_case():
    g = np.array([3.0, -1.0, 2.0])
    r = gsc_weights([g, g, -g], 0.0, 1.0)
    np.testing.assert_allclose(r.matrix, [[1, 1, -1], [1, 1, -1], [-1, -1, 1]], atol=1e-12)
    np.testing.assert_allclose(r.mean_similarity, [1 / 3, 1 / 3, -1 / 3], atol=1e-12)
    assert r.valid == (0, 1)
    np.testing.assert_allclose(r.weights, [0.5, 0.5, 0.0], atol=1e-12)
    assert r.weights[2] == 0.0


def test_gsc_no_filter_at_lower_bound():
    rng = np.random.default_rng(0)
    for _ in range(20):
        grads = list(rng.normal(size=(5, 8)))
        assert gsc_weights(grads, -1.0, 1.0).valid == tuple(range(5))


def test_gsc_empty_valid_set():
    r = gsc_weights([np.array([1.0, 0.0]), np.array([-1.0, 0.0])], 0.5, 1.0)
    assert r.stalled and not r.weights.any()


def test_gsc_zero_gradient_operator():
    r = gsc_weights([np.zeros(3), np.ones(3), np.ones(3)], 0.0, 1.0)
    assert r.matrix[0].tolist() == [0.0, 0.0, 0.0]
    assert r.mean_similarity[0] == 0.0


def test_gsc_errors():
    with pytest.raises(DimensionError):
        gsc_weights([np.ones(2), np.ones(3)], 0.0, 1.0)
    with pytest.raises(ProtocolError):
        gsc_weights([], 0.0, 1.0)


grad_stacks = st.integers(1, 6).flatmap(
    lambda t: arrays(np.float64, (t, 5), elements=st.floats(-10, 10, allow_nan=False))
)


@settings(max_examples=150, deadline=None)
@given(grad_stacks, st.floats(-1, 1), st.floats(0.05, 10), st.floats(1e-3, 1e3))
def test_gsc_invariants(grads, theta, tau, scale):
    r = gsc_weights(list(grads), theta, tau)
    assert np.array_equal(r.matrix, r.matrix.T)
    live = np.linalg.norm(grads, axis=1) >= 1e-12
    assert np.all(np.diag(r.matrix)[live] == 1.0)
    assert np.all(np.abs(r.mean_similarity) <= 1.0)
    assert np.all(r.weights >= 0)
    out = [t for t in range(len(grads)) if t not in r.valid]
    assert np.all(r.weights[out] == 0.0)
    if r.valid:
        assert abs(r.weights.sum() - 1.0) <= 1e-12
    # common positive rescaling changes nothing
    if np.all(np.linalg.norm(grads * scale, axis=1)[live] >= 1e-12) and not np.any(
        np.abs(np.linalg.norm(grads, axis=1) - 1e-12) < 1e-9
    ):
        s = gsc_weights(list(grads * scale), theta, tau)
        np.testing.assert_allclose(s.matrix, r.matrix, atol=1e-12)
        np.testing.assert_allclose(s.mean_similarity, r.mean_similarity, atol=1e-12)
        if s.valid == r.valid:
            np.testing.assert_allclose(s.weights, r.weights, atol=1e-12)


def test_gsc_infinite_temperature_is_uniform():
    grads = list(np.random.default_rng(1).normal(size=(4, 10)))
    r = gsc_weights(grads, -1.0, 1e6)
    np.testing.assert_allclose(r.weights, 0.25, atol=1e-6)


# -- recover / aggregate ---------------------------------------------------------

def test_recover_gradient_examples():
    assert not recover_gradient(upd(0, [1.0, 2.0]), [1.0, 2.0], 0.1).any()
    np.testing.assert_allclose(recover_gradient(upd(0, [0.9]), [1.0], 0.1), [-1.0], atol=1e-15)
    rng = np.random.default_rng(2)
    prev = rng.normal(size=6)
    ups = [upd(t, prev + rng.normal(size=6)) for t in range(3)]
    a = gsc_weights([recover_gradient(u, prev, 0.1) for u in ups], 0.0, 1.0)
    b = gsc_weights([recover_gradient(u, prev, 0.2) for u in ups], 0.0, 1.0)
    np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-12)
    np.testing.assert_allclose(recover_gradient(ups[0], prev, 0.2), recover_gradient(ups[0], prev, 0.1) / 2)
    with pytest.raises(DimensionError):
        recover_gradient(upd(0, [1.0]), [1.0, 2.0], 0.1)


def test_aggregate_examples():
    rng = np.random.default_rng(3)
    ws = rng.normal(size=(4, 7))
    ups = [upd(t, ws[t]) for t in range(4)]
    assert np.array_equal(aggregate(ups, [0, 0, 1, 0]), ws[2])
    np.testing.assert_array_equal(aggregate([upd(0, [0.0, 0.0]), upd(1, [2.0, 4.0])], [0.5, 0.5]), [1.0, 2.0])
    np.testing.assert_allclose(aggregate(ups, np.full(4, 0.25)), ws.mean(axis=0), atol=1e-12)
    with pytest.raises(ProtocolError):
        aggregate(ups, [0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.permutations(range(5)), st.integers(0, 1000))
def test_aggregate_permutation_invariant(perm, seed):
    rng = np.random.default_rng(seed)
    ws = rng.normal(size=(5, 6))
    delta = rng.dirichlet(np.ones(5))
    ups = [upd(t, ws[t]) for t in range(5)]
    shuffled = [ups[i] for i in perm]
    np.testing.assert_allclose(aggregate(shuffled, delta[list(perm)]), aggregate(ups, delta), atol=1e-12)


# -- local training --------------------------------------------------------------

def test_local_train_zero_lr_keeps_weights():
    cfg = tiny_config()
    op = operator_zero(cfg)
    w = init_params(cfg.model, 0).vector
    u = local_train(op, cfg.model, w, 3, 0.0, 4, cfg.strategy, make_rng(0))
    assert np.array_equal(u.weights, w)


def test_fedprox_large_penalty_pins_weights():
    cfg = tiny_config("fedprox", proximal=1e6)
    op = operator_zero(cfg)
    w = init_params(cfg.model, 0).vector
    u = local_train(op, cfg.model, w, 1, 0.01, 2, cfg.strategy, make_rng(0))
    assert np.abs(u.weights - w).max() < 1e-3
    free = local_train(op, cfg.model, w, 1, 0.01, 2, AggregationStrategy("fedavg"), make_rng(0))
    assert np.abs(free.weights - w).max() > 10 * np.abs(u.weights - w).max()


def test_single_full_batch_step_matches_oracle():
    cfg = tiny_config()
    op = operator_zero(cfg)
    p = init_params(cfg.model, 0)
    u = local_train(op, cfg.model, p.vector, 1, 0.01, len(op.data), cfg.strategy, make_rng(0))
    _, g, _ = loss_and_grad(p, op.data.frames, op.data.onehot())
    np.testing.assert_allclose(u.weights, p.vector - 0.01 * g, atol=1e-12, rtol=0)


def test_clipped_step_has_capped_length():
    cfg = tiny_config()
    op = operator_zero(cfg)
    p = init_params(cfg.model, 0)
    _, g, _ = loss_and_grad(p, op.data.frames, op.data.onehot())
    cap = 0.25 * np.linalg.norm(g)
    u = local_train(op, cfg.model, p.vector, 1, 0.01, len(op.data), cfg.strategy, make_rng(0), clip_norm=cap)
    np.testing.assert_allclose(u.weights, p.vector - 0.01 * cap * g / np.linalg.norm(g), atol=1e-12, rtol=0)
    loose = local_train(op, cfg.model, p.vector, 1, 0.01, len(op.data), cfg.strategy, make_rng(0),
                        clip_norm=2 * np.linalg.norm(g))
    np.testing.assert_allclose(loose.weights, p.vector - 0.01 * g, atol=1e-12, rtol=0)


def test_local_train_validates():
    cfg = tiny_config()
    op = operator_zero(cfg)
    with pytest.raises(DimensionError):
        local_train(op, cfg.model, np.zeros(3), 1, 0.01, 4, cfg.strategy, make_rng(0))
    with pytest.raises(ParameterError):
        local_train(op, cfg.model, init_params(cfg.model, 0).vector, 1, 0.01, 4, cfg.strategy, make_rng(0),
                    clip_norm=0.0)


def test_strategy_validation():
    for bad in (dict(kind="krum"), dict(tau=0.0), dict(theta=1.5), dict(proximal=-1.0), dict(weighting="median")):
        with pytest.raises(ConfigError):
            AggregationStrategy(**bad)


# -- rounds and experiments ----------------------------------------------------------

@pytest.mark.parametrize("kind", ["gsc", "fedavg", "fedprox"])
def test_single_operator_federation(kind):
    cfg = tiny_config(kind, operators=1, rounds=1)
    part = partition(cfg.scenario, cfg.seed)
    server = Server(cfg.model, part, cfg.strategy, seed=cfg.seed, local_epochs=1, lr=cfg.lr, batch_size=4)
    expected = local_train(server.operators[0], cfg.model, server.params.vector, 1, cfg.lr, 4, cfg.strategy,
                           make_rng(cfg.seed, "operator", 0, "round", 1), 1).weights
    server.run_round()
    assert np.array_equal(server.params.vector, expected)


def test_gsc_with_flat_weights_reduces_to_fedavg():
    a = run_experiment(tiny_config("gsc", rounds=3, theta=-1.0, tau=1e6))
    b = run_experiment(tiny_config("fedavg", rounds=3))
    for ra, rb in zip(a.records, b.records):
        assert np.abs(ra.weights - rb.weights).max() < 1e-6


def test_zero_rounds_evaluates_initial_model():
    res = run_experiment(tiny_config(rounds=0))
    assert res.records == []
    assert res.final_evaluation == res.initial_evaluation
    assert np.array_equal(res.params.vector, init_params(tiny_config().model, 0).vector)


def test_experiment_is_deterministic():
    a = run_experiment(tiny_config(rounds=3))
    b = run_experiment(tiny_config(rounds=3))
    for ra, rb in zip(a.records, b.records):
        assert np.array_equal(ra.weights, rb.weights)
        assert ra.operator_loss == rb.operator_loss
        assert ra.evaluation == rb.evaluation


def test_workers_do_not_change_results():
    a = run_experiment(tiny_config(rounds=2))
    b = run_experiment(dataclasses.replace(tiny_config(rounds=2), workers=3))
    assert np.array_equal(a.params.vector, b.params.vector)


def test_strategies_differ_only_in_strategy_fields():
    a = run_experiment(tiny_config("gsc", rounds=1))
    b = run_experiment(tiny_config("fedavg", rounds=1))
    ra, rb = a.records[0], b.records[0]
    # round 1 starts from the same global model, so local results and similarities agree
    assert ra.operator_loss == rb.operator_loss
    np.testing.assert_array_equal(ra.report.matrix, rb.report.matrix)
    assert ra.strategy != rb.strategy


def test_stalled_round_keeps_global_model():
    cfg = tiny_config("gsc", rounds=1, theta=1.0)
    part = partition(cfg.scenario, cfg.seed)
    server = Server(cfg.model, part, cfg.strategy, seed=0, local_epochs=1, lr=cfg.lr, batch_size=4)
    w0 = server.params.vector.copy()
    rec = server.run_round()
    assert rec.stalled and np.array_equal(server.params.vector, w0)


def test_operator_failure_is_logged():
    cfg = tiny_config(rounds=1)
    part = partition(cfg.scenario, cfg.seed)
    bad = init_params(cfg.model, 0)
    v = bad.vector.copy()
    v[0] = np.nan
    server = Server(cfg.model, part, cfg.strategy, seed=0, local_epochs=1, lr=cfg.lr, batch_size=4,
                    initial=SstaParams(cfg.model, v))
    with pytest.raises(Exception):
        server.run_round()
    assert server.failures and "round 1" in server.failures[0]


def test_results_split_trained_and_untrained():
    res = run_experiment(tiny_config(rounds=1))
    assert set(res.final_evaluation) == {"train", "validation", "test_trained", "test_untrained"}
    groups = {r["group"] for r in res.participants}
    assert groups == {"trained", "untrained"}
