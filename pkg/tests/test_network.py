import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexadapt.network import (AdamState, OutputLayer, RegressorNet, TrainBatch, TrainingError,
                               adam_step, backprop, forward_regressor, init_regressor,
                               load_network, loss_mse_l2, predict, read_loss_history,
                               retrain_online, save_network, train_offline, write_loss_history)


def random_batch(n_joints, rows, seed):
    rng = np.random.default_rng(seed)
    return TrainBatch(rng.normal(size=(rows, 4 * n_joints)), rng.normal(size=(rows, n_joints)))


def loss_of(net, out, batch, l2):
    return loss_mse_l2(predict(net, out, batch.inputs), batch.targets, net, l2)


def max_rel_error(analytic, numeric):
    scale = max(np.max(np.abs(numeric)), 1e-12)
    return np.max(np.abs(analytic - numeric)) / scale


def gradient_check(net, out, batch, l2, h=1e-6):
    """Largest relative error between backprop and central differences, per parameter array."""
    grads = backprop(net, out, batch, freeze_output=False, l2_lambda=l2)
    worst = 0.0
    arrays = [*net.weights, *net.biases, out.a_hat]
    for arr, g in zip(arrays, grads.as_list()):
        fd = np.empty_like(arr)
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + h
            up = loss_of(net, out, batch, l2)
            arr[idx] = keep - h
            down = loss_of(net, out, batch, l2)
            arr[idx] = keep
            fd[idx] = (up - down) / (2 * h)
        worst = max(worst, max_rel_error(g, fd))
    return worst


@pytest.mark.parametrize("hidden,act", [((), "tanh"), ((6,), "tanh"), ((5, 4), "tanh"), ((5, 4), "relu")])
@pytest.mark.parametrize("n_joints", [1, 2])
def test_backprop_matches_central_differences(hidden, act, n_joints):
    net, out = init_regressor(n_joints, basis_dim=3, hidden=hidden, activation=act, seed=11)
    rng = np.random.default_rng(12)
    out.a_hat = rng.normal(size=3)
    net.x_mean = rng.normal(size=4 * n_joints)
    net.x_std = rng.uniform(0.5, 2.0, size=4 * n_joints)
    assert gradient_check(net, out, random_batch(n_joints, 7, 13), l2=1e-2) < 1e-5


def test_frozen_output_has_zero_head_gradient_and_l2_skips_biases():
    net, out = init_regressor(1, basis_dim=4, hidden=(5,), seed=0)
    batch = random_batch(1, 10, 1)
    g0 = backprop(net, out, batch, freeze_output=True, l2_lambda=0.0)
    g1 = backprop(net, out, batch, freeze_output=True, l2_lambda=0.5)
    assert not np.any(g0.a_hat)
    for b0, b1 in zip(g0.biases, g1.biases):
        assert np.array_equal(b0, b1)
    for w0, w1, W in zip(g0.weights, g1.weights, net.weights):
        assert np.allclose(w1 - w0, 2 * 0.5 * W)


def test_adam_two_steps_by_hand():
    state = AdamState(learning_rate=0.1, l2_lambda=0.0)
    p = [np.array([1.0, -2.0])]
    p = adam_step(p, [np.array([0.5, -0.1])], state)
    assert p[0] == pytest.approx([0.900000002, -1.90000001], abs=1e-12)
    p = adam_step(p, [np.array([0.2, 0.3])], state)
    assert p[0] == pytest.approx([0.8101424839029282, -1.9494189911200654], abs=1e-12)
    assert state.step_count == 2


def test_adam_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


def test_regressor_reshape_is_row_major():
    net, _ = init_regressor(2, basis_dim=3, hidden=(), seed=0)
    net.weights[0] = np.zeros((6, 8))
    net.biases[0] = np.arange(6.0)
    Y = forward_regressor(net, np.zeros(8))
    assert np.array_equal(Y, [[0, 1, 2], [3, 4, 5]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_batched_forward_equals_single_rows(n_joints, rows, seed):
    net, _ = init_regressor(n_joints, basis_dim=4, hidden=(8, 8), seed=seed % 1000)
    X = np.random.default_rng(seed).normal(size=(rows, 4 * n_joints))
    Yb = forward_regressor(net, X)
    assert Yb.shape == (rows, n_joints, 4)
    for k in range(rows):
        assert np.allclose(Yb[k], forward_regressor(net, X[k]), rtol=0, atol=1e-14)


def test_init_is_seeded_and_ties_velocity_columns():
    a, _ = init_regressor(2, seed=5)
    b, _ = init_regressor(2, seed=5)
    c, _ = init_regressor(2, seed=6)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert not np.array_equal(a.weights[0], c.weights[0])
    W = a.weights[0]
    assert np.array_equal(W[:, 0:2], W[:, 4:6])
    untied, _ = init_regressor(2, seed=5, tie_velocities=False)
    assert not np.array_equal(untied.weights[0][:, 0:2], untied.weights[0][:, 4:6])


def test_invalid_network_shapes_rejected():
    with pytest.raises(ValueError):
        RegressorNet([(3, 4, "tanh")], [np.zeros((4, 3))], [np.zeros(4)], 1, 4)
    with pytest.raises(ValueError):
        init_regressor(1, activation="sigmoid")
    net, out = init_regressor(1, basis_dim=4)
    with pytest.raises(ValueError):
        forward_regressor(net, np.zeros(5))
    with pytest.raises(ValueError):
        predict(net, OutputLayer(np.zeros(3)), np.zeros(4))
    with pytest.raises(TrainingError):
        TrainBatch(np.zeros((3, 4)), np.zeros((2, 1)))
    with pytest.raises(TrainingError):
        TrainBatch(np.full((3, 4), np.nan), np.zeros((3, 1)))


def test_train_offline_is_reproducible_and_reduces_error(pendulum_cfg, pendulum_data):
    net, out = pendulum_cfg.init_network(seed=3)
    r1 = train_offline(net, out, pendulum_data, epochs=2, seed=3)
    r2 = train_offline(net, out, pendulum_data, epochs=2, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(r1[0].weights, r2[0].weights))
    assert np.array_equal(r1[1].a_hat, r2[1].a_hat)
    assert r1[2].test_mse == r2[2].test_mse
    assert r1[2].epochs == [0, 1, 2]
    assert r1[2].test_mse[-1] < r1[2].test_mse[0]
    # inputs untouched, version bumped
    assert net.version == 0 and r1[0].version == 1
    assert np.array_equal(net.x_mean, np.zeros(4))


def test_train_offline_rejects_tiny_dataset():
    net, out = init_regressor(1)
    with pytest.raises(TrainingError):
        train_offline(net, out, random_batch(1, 10, 0))


def test_retrain_online_keeps_head_bitwise_and_bumps_version(pendulum_trained, pendulum_data):
    net, out, _ = pendulum_trained
    before = out.a_hat.copy()
    buf = pendulum_data.subset(np.arange(600))
    new = retrain_online(net, out, buf, passes=3, seed=1)
    assert np.array_equal(out.a_hat, before)
    assert new.version == net.version + 1
    assert not np.array_equal(new.weights[0], net.weights[0])
    assert retrain_online(net, out, buf, passes=0).weights[0].tobytes() == net.weights[0].tobytes()
    with pytest.raises(TrainingError):
        retrain_online(net, out, buf.subset(np.arange(0)))


def test_network_file_round_trip(tmp_path, pendulum_trained):
    net, out, _ = pendulum_trained
    path = tmp_path / "net.txt"
    save_network(path, net, out)
    net2, out2 = load_network(path)
    assert net2.layer_specs == net.layer_specs and net2.version == net.version
    for a, b in zip(net.weights + net.biases + [net.x_mean, net.x_std, out.a_hat],
                    net2.weights + net2.biases + [net2.x_mean, net2.x_std, out2.a_hat]):
        assert np.array_equal(a, b)
    x = np.array([0.1, 0.2, 0.1, -0.3])
    assert np.array_equal(forward_regressor(net, x), forward_regressor(net2, x))


def test_corrupt_network_file_rejected(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not a network\n")
    with pytest.raises((TrainingError, ValueError)):
        load_network(path)


def test_loss_history_csv_round_trip(tmp_path, pendulum_trained):
    hist = pendulum_trained[2]
    path = tmp_path / "loss.csv"
    write_loss_history(path, hist)
    assert path.read_text().splitlines()[0] == "epoch,train_mse,test_mse"
    back = read_loss_history(path)
    assert back.epochs == hist.epochs
    assert back.train_mse == hist.train_mse and back.test_mse == hist.test_mse


def test_zero_network_outputs_zero_and_table_sized_head():
    net, out = init_regressor(7, basis_dim=200, hidden=(100, 100), seed=0)
    assert forward_regressor(net, np.ones(28)).shape == (7, 200)
    for W, b in zip(net.weights, net.biases):
        W[:] = 0.0
        b[:] = 0.0
    assert not np.any(forward_regressor(net, np.arange(28.0)))
    assert not np.any(predict(net, OutputLayer(np.zeros(200)), np.ones(28)))


def test_predict_picks_basis_column():
    net, _ = init_regressor(1, basis_dim=4, hidden=(), seed=0)
    net.weights[0] = np.zeros((4, 4))
    net.biases[0] = np.array([1.0, 2.0, 3.0, 4.0])
    for k in range(4):
        assert predict(net, OutputLayer(np.eye(4)[k]), np.zeros(4))[0] == k + 1


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_prediction_is_linear_in_output_weights(alpha, beta, seed):
    net, _ = init_regressor(2, basis_dim=5, hidden=(6,), seed=seed)
    rng = np.random.default_rng(seed)
    a1, a2, x = rng.normal(size=5), rng.normal(size=5), rng.normal(size=8)
    lhs = predict(net, OutputLayer(alpha * a1 + beta * a2), x)
    rhs = alpha * predict(net, OutputLayer(a1), x) + beta * predict(net, OutputLayer(a2), x)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_loss_examples():
    net, _ = init_regressor(1, basis_dim=1, hidden=(), seed=0)
    net.weights[0] = np.zeros((1, 4))
    assert loss_mse_l2(np.zeros((3, 1)), np.zeros((3, 1)), net, 0.1) == 0.0
    assert loss_mse_l2(np.ones((3, 2)), np.zeros((3, 2)), net, 0.0) == 1.0
    net.weights[0][0, 0] = 2.0
    assert loss_mse_l2(np.zeros((3, 1)), np.zeros((3, 1)), net, 0.1) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        loss_mse_l2(np.zeros((3, 1)), np.zeros((2, 1)), net)


def test_zero_error_batch_has_zero_gradients():
    net, out = init_regressor(2, basis_dim=3, hidden=(4,), seed=1)
    X = np.random.default_rng(0).normal(size=(6, 8))
    g = backprop(net, out, TrainBatch(X, predict(net, out, X)), freeze_output=False, l2_lambda=0.0)
    assert all(not np.any(a) for a in g.as_list())


def test_adam_zero_gradient_and_first_step():
    state = AdamState(learning_rate=1e-3)
    p = adam_step([np.array([0.7])], [np.array([0.0])], state)
    assert p[0][0] == 0.7
    state = AdamState(learning_rate=1e-3)
    p = adam_step([np.array([0.0])], [np.array([0.5])], state)
    assert p[0][0] == pytest.approx(-1e-3 * 0.5 / (0.5 + 1e-8), rel=1e-12)


def test_offline_training_curve_on_pendulum(pendulum_trained):
    hist = pendulum_trained[2]
    drops = sum(b <= a for a, b in zip(hist.train_mse, hist.train_mse[1:]))
    assert len(hist.train_mse) == 6 and drops >= 4
    assert hist.test_mse[-1] < 10 * hist.train_mse[-1]


def test_retraining_reduces_buffer_error(pendulum_trained, pendulum_data):
    net, out, _ = pendulum_trained
    buf = pendulum_data.subset(np.arange(1000, 1256))
    # perturb targets so there is something to fit
    buf = TrainBatch(buf.inputs, buf.targets + 0.05 * np.sin(buf.inputs[:, 1:2]))
    before = np.mean((predict(net, out, buf.inputs) - buf.targets) ** 2)
    new = retrain_online(net, out, buf, passes=50, seed=0)
    after = np.mean((predict(new, out, buf.inputs) - buf.targets) ** 2)
    assert after <= before
