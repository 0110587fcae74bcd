import math

import numpy as np
import pytest

from conftest import random_graph
from mdgcn.dyngcn import forward, init_model
from mdgcn.errors import NumericError, ParameterError, TrainingSetupError
from mdgcn.graph import ScaleGraph, build_scale_graphs, normalize_adjacency
from mdgcn.pipeline import fit
from mdgcn.superpixel import NodeLabels
from mdgcn.train import (
    OptimState,
    TrainConfig,
    adam_step,
    compute_gradients,
    loss,
    parse_variant,
    select_graphs,
    train,
)


def test_loss_examples():
    assert loss(np.full((1, 2), 0.5), np.array([[1.0, 0.0]]), [0]) == pytest.approx(math.log(2), rel=1e-15)
    assert loss(np.array([[0.9, 0.1]]), np.array([[1.0, 0.0]]), [0]) == pytest.approx(0.1053605, abs=5e-8)
    probs = np.array([[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]])
    y = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    assert loss(probs, y, [0, 2]) == pytest.approx(loss(probs, y, [0]) + loss(probs, y, [2]), rel=1e-15)
    assert loss(probs, y, [0, 2]) >= 0


def test_loss_errors():
    with pytest.raises(TrainingSetupError):
        loss(np.full((2, 2), 0.5), np.zeros((2, 2)), [])
    with pytest.raises(NumericError):
        loss(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), [0])


def finite_difference_check(rng, m=6, bands=3, hidden=4, n_classes=3, n_scales=2, n_layers=2, eps=1e-6):
    """Largest relative error between analytic and central-difference gradients,
    with every layer's adjacency frozen at the unperturbed forward pass."""
    graphs = [random_graph(rng, m, scale=s + 1) for s in range(n_scales)]
    x = rng.normal(size=(m, bands))
    model = init_model(n_scales, n_layers, bands, hidden, n_classes, seed=int(rng.integers(1 << 30)))
    labeled = np.array(sorted(rng.choice(m, size=max(1, m // 2), replace=False)))
    y = np.zeros((m, n_classes))
    y[labeled, rng.integers(0, n_classes, size=labeled.size)] = 1.0
    g = compute_gradients(model, x, graphs, y, labeled)
    frozen = g.trace.adjacencies
    worst = 0.0
    for s in range(n_scales):
        for l in range(n_layers):
            w = model.weights[s][l]
            for idx in np.ndindex(*w.shape):
                old = w[idx]
                w[idx] = old + eps
                up = loss(forward(model, x, graphs, adjacencies=frozen).probs, y, labeled)
                w[idx] = old - eps
                down = loss(forward(model, x, graphs, adjacencies=frozen).probs, y, labeled)
                w[idx] = old
                numeric = (up - down) / (2 * eps)
                analytic = g.weights[s][l][idx]
                worst = max(worst, abs(analytic - numeric) / max(1e-8, abs(analytic), abs(numeric)))
    return worst


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(3):
        assert finite_difference_check(rng) < 1e-5
    assert finite_difference_check(rng, n_layers=3, n_scales=1) < 1e-5


def test_isolated_unlabeled_node_does_not_change_gradients():
    rng = np.random.default_rng(1)
    m = 6
    graph = random_graph(rng, m)
    x = rng.normal(size=(m, 3))
    y = np.zeros((m, 2))
    y[[0, 3], [0, 1]] = 1.0
    labeled = np.array([0, 3])
    big_a = np.zeros((m + 1, m + 1))
    big_a[:m, :m] = graph.adjacency
    big = ScaleGraph(1, graph.neighbor_sets + [set()], big_a, normalize_adjacency(big_a), 0.2)
    big_x = np.vstack([x, x[0]])  # copy of a labeled node's spectrum
    big_y = np.vstack([y, np.zeros((1, 2))])
    # with alpha > 0 the feature kernel couples the new node to the rest
    model = init_model(1, 2, 3, 4, 2, alpha=0.0, beta=0.01, seed=2)
    small = compute_gradients(model, x, [graph], y, labeled)
    grown = compute_gradients(model, big_x, [big], big_y, labeled)
    assert grown.loss == pytest.approx(small.loss, rel=1e-12)
    for a, b in zip(small.weights[0], grown.weights[0]):
        np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-14)


def test_adam_zero_gradient_is_a_no_op():
    model = init_model(1, 2, 3, 4, 2, seed=0)
    before = model.copy()
    state = OptimState.zeros_like(model)
    zeros = [[np.zeros_like(w) for w in ws] for ws in model.weights]
    for _ in range(3):
        adam_step(model, zeros, state, 0.01)
    for a, b in zip(before.weights[0], model.weights[0]):
        np.testing.assert_array_equal(a, b)


def test_adam_moments_decay_under_zero_gradient():
    model = init_model(1, 1, 2, 1, 2, seed=0)
    state = OptimState.zeros_like(model)
    state.first[0][0][:] = 1.0
    state.second[0][0][:] = 4.0
    zeros = [[np.zeros_like(model.weights[0][0])]]
    adam_step(model, zeros, state, 0.01)
    np.testing.assert_allclose(state.first[0][0], 0.9)
    np.testing.assert_allclose(state.second[0][0], 4.0 * 0.999)


def test_adam_first_step_moves_by_learning_rate():
    model = init_model(1, 2, 3, 4, 2, seed=0)
    before = model.copy()
    rng = np.random.default_rng(3)
    grads = [[rng.normal(size=w.shape) for w in ws] for ws in model.weights]
    adam_step(model, grads, OptimState.zeros_like(model), 0.001)
    for w0, w1, g in zip(before.weights[0], model.weights[0], grads[0]):
        np.testing.assert_allclose(w1 - w0, -0.001 * np.sign(g), rtol=1e-6)


def two_cluster_toy(seed):
    """Two groups of ten nodes on a chain, one label per group."""
    rng = np.random.default_rng(seed)
    sign = np.repeat([1.0, -1.0], 10)
    x = sign[:, None] + 0.1 * rng.normal(size=(20, 32))
    chain = [{j for j in (i - 1, i + 1) if 0 <= j < 20} for i in range(20)]
    labels = np.zeros(20, dtype=np.int64)
    labels[0], labels[19] = 1, 2
    return x, build_scale_graphs(x, chain, (1, 2, 3), 0.2), NodeLabels(labels)


@pytest.mark.parametrize("seed", [0, 1])
def test_two_cluster_toy_is_fit(seed):
    x, graphs, nodes = two_cluster_toy(seed)
    result = train(TrainConfig(iterations=500, seed=seed), x, graphs, nodes)
    losses = [h[1] for h in result.history]
    assert min(losses) < 1e-2
    assert np.mean(losses[-50:]) < np.mean(losses[:50])
    probs = forward(result.model, x, graphs).probs
    assert (np.argmax(probs, axis=1) == np.repeat([0, 1], 10)).all()


def test_training_is_deterministic():
    x, graphs, nodes = two_cluster_toy(0)
    a = train(TrainConfig(iterations=30, seed=5), x, graphs, nodes)
    b = train(TrainConfig(iterations=30, seed=5), x, graphs, nodes)
    for wa, wb in zip(a.model.weights[2], b.model.weights[2]):
        assert wa.tobytes() == wb.tobytes()
    np.testing.assert_array_equal(np.array(a.history), np.array(b.history))


def test_scene_loss_trends_down(scene, scene_prep, scene_split):
    _, labels = scene
    result, _, _ = fit(scene_prep, scene_split, TrainConfig(iterations=200), labels.n_classes)
    losses = np.array([h[1] for h in result.history])
    windows = losses.reshape(4, 50).mean(axis=1)
    assert (np.diff(windows) < 0).all()


def test_variant_parsing():
    assert parse_variant("mdgcn") == ("mdgcn", None)
    assert parse_variant("fixed-graph") == ("fixed_graph", None)
    assert parse_variant("single_scale=2") == ("single_scale", 2)
    for bad in ("gcn", "single_scale", "fixed_graph=1", "single_scale=x"):
        with pytest.raises(ParameterError):
            parse_variant(bad)


def test_fixed_graph_variant_reuses_initial_adjacency():
    x, graphs, nodes = two_cluster_toy(0)
    config = TrainConfig(iterations=3, variant="fixed_graph")
    assert not config.dynamic
    result = train(config, x, graphs, nodes)
    trace = forward(result.model, x, graphs, dynamic=config.dynamic)
    for s, g in enumerate(graphs):
        for a in trace.adjacencies[s]:
            assert a is g.normalized


def test_single_scale_variant_uses_one_graph():
    x, graphs, nodes = two_cluster_toy(0)
    config = TrainConfig(iterations=3, variant="single_scale=2")
    assert config.active_scales == (2,)
    assert [g.scale for g in select_graphs(config, graphs)] == [2]
    assert train(config, x, graphs, nodes).model.n_scales == 1
    with pytest.raises(TrainingSetupError):
        select_graphs(TrainConfig(variant="single_scale=4"), graphs)


def test_training_setup_errors():
    x, graphs, _ = two_cluster_toy(0)
    with pytest.raises(TrainingSetupError):
        train(TrainConfig(iterations=2), x, graphs, NodeLabels(np.zeros(20, dtype=np.int64)))
    with pytest.raises(ParameterError):
        TrainConfig(iterations=0)
    with pytest.raises(ParameterError):
        TrainConfig(alpha=-1.0)


def test_divergence_is_reported():
    x, graphs, nodes = two_cluster_toy(0)
    with pytest.raises(NumericError):
        train(TrainConfig(iterations=50, learning_rate=1e200), x, graphs, nodes)


def test_best_checkpoint_and_history(tmp_path):
    x, graphs, nodes = two_cluster_toy(0)
    val = NodeLabels(np.repeat([1, 2], 10))
    result = train(TrainConfig(iterations=40), x, graphs, nodes, val)
    accs = [h[2] for h in result.history]
    assert accs[result.best_iteration - 1] == max(accs)
    assert all(a < max(accs) for a in accs[result.best_iteration:])  # latest of the ties
    result.save_history(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "iter,train_loss,val_acc"
    assert len(lines) == 41
    it, lo, acc = lines[1].split(",")
    assert int(it) == 1 and float(lo) == result.history[0][1]
