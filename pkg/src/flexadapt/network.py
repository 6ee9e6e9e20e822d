"""Regressor network Y(.) with a separate linear output layer a_hat.

The network maps a stacked input (theta_dot_1, theta, theta_dot_2, theta_ddot) of
length 4n to a flat vector of length n*N that is reshaped row-major into the
n x N regressor matrix.  The prediction of the motor command is Y @ a_hat.

Gradients are computed by hand (reverse mode) and parameters are updated with
Adam.  During online retraining the output layer is frozen and only the internal
weights move.
"""
from __future__ import annotations

import csv
import copy
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "relu", "linear")
MAGIC = "FLEXADAPT-NET"
FORMAT_VERSION = 1


class TrainingError(ValueError):
    pass


@dataclass
class RegressorNet:
    layer_specs: list          # [(in_dim, out_dim, activation), ...]
    weights: list              # W[i] has shape (out_dim, in_dim)
    biases: list
    n_joints: int
    basis_dim: int
    x_mean: np.ndarray = None
    x_std: np.ndarray = None
    version: int = 0

    def __post_init__(self):
        d_in = 4 * self.n_joints
        if self.layer_specs[0][0] != d_in:
            raise ValueError(f"first layer must take {d_in} inputs")
        if self.layer_specs[-1][1] != self.n_joints * self.basis_dim:
            raise ValueError("last layer must emit n_joints * basis_dim values")
        for _, _, act in self.layer_specs:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for (i, _, _), prev in zip(self.layer_specs[1:], self.layer_specs[:-1]):
            if i != prev[1]:
                raise ValueError("layer dimensions do not chain")
        if self.x_mean is None:
            self.x_mean = np.zeros(d_in)
        if self.x_std is None:
            self.x_std = np.ones(d_in)

    @property
    def input_dim(self):
        return 4 * self.n_joints

    def copy(self):
        return copy.deepcopy(self)

    def __call__(self, x):
        return forward_regressor(self, x)


@dataclass
class OutputLayer:
    a_hat: np.ndarray

    def __post_init__(self):
        self.a_hat = np.array(self.a_hat, dtype=float).reshape(-1)

    def copy(self):
        return OutputLayer(self.a_hat.copy())


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_lambda: float = 1e-4
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


@dataclass
class TrainBatch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if len(self.inputs) != len(self.targets):
            raise TrainingError("inputs and targets have different row counts")
        if self.inputs.shape[1] != 4 * self.targets.shape[1]:
            raise TrainingError("inputs must have 4 * n_joints columns")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise TrainingError("batch contains non-finite values")

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx):
        return TrainBatch(self.inputs[idx], self.targets[idx])


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_regressor(n_joints, basis_dim=32, hidden=(64, 64), activation="tanh", seed=0,
                   tie_velocities=True):
    """Fresh network and output layer with seeded Glorot-uniform weights.

    ``hidden`` lists the widths of the fully connected hidden layers; the head is
    linear with n_joints * basis_dim outputs.

    Recorded data always has theta_dot_1 == theta_dot_2, so the gradient never
    touches the difference between their first-layer columns.  With
    ``tie_velocities`` both columns start equal and therefore stay equal, and the
    network does not react to theta_dot_r - theta_dot (= -s) through weights that
    were never fitted.
    """
    rng = np.random.default_rng(seed)
    dims = [4 * n_joints, *hidden, n_joints * basis_dim]
    specs = [(dims[i], dims[i + 1], activation if i < len(dims) - 2 else "linear")
             for i in range(len(dims) - 1)]
    weights = [glorot(rng, i, o) for i, o, _ in specs]
    if tie_velocities:
        weights[0][:, 2 * n_joints:3 * n_joints] = weights[0][:, :n_joints]
    biases = [np.zeros(o) for _, o, _ in specs]
    net = RegressorNet(specs, weights, biases, n_joints, basis_dim)
    out = OutputLayer(glorot(rng, basis_dim, 1)[0])
    return net, out


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0).astype(float)
    return np.ones_like(z)


def _forward(net, X):
    """Batched pass keeping pre-activations and activations for backprop."""
    h = (X - net.x_mean) / net.x_std
    cache = [(None, h)]
    for (_, _, act), W, b in zip(net.layer_specs, net.weights, net.biases):
        z = h @ W.T + b
        h = _act(act, z)
        cache.append((z, h))
    return cache


def forward_regressor(net: RegressorNet, x):
    """Regressor matrix Y for one input (shape (n, N)) or a batch (shape (B, n, N))."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim or x.ndim not in (1, 2):
        raise ValueError(f"input must have trailing dimension {net.input_dim}, got {x.shape}")
    flat = _forward(net, np.atleast_2d(x))[-1][1]
    Y = flat.reshape(len(flat), net.n_joints, net.basis_dim)
    return Y[0] if x.ndim == 1 else Y


def predict(net: RegressorNet, out: OutputLayer, x):
    a = out.a_hat if isinstance(out, OutputLayer) else np.asarray(out, dtype=float)
    if a.shape != (net.basis_dim,):
        raise ValueError(f"output layer has {a.size} weights, regressor has {net.basis_dim} columns")
    return forward_regressor(net, x) @ a


def loss_mse_l2(pred, target, net: RegressorNet, l2_lambda=0.0):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if l2_lambda:
        mse += l2_lambda * sum(float(np.sum(W * W)) for W in net.weights)
    return mse


@dataclass
class Gradients:
    weights: list
    biases: list
    a_hat: np.ndarray
    loss: float

    def as_list(self):
        return [*self.weights, *self.biases, self.a_hat]


def backprop(net: RegressorNet, out: OutputLayer, batch: TrainBatch, freeze_output=True,
             l2_lambda=0.0) -> Gradients:
    """Exact gradients of the regularized MSE of Y @ a_hat against the batch targets."""
    if len(batch) == 0:
        raise TrainingError("empty batch")
    cache = _forward(net, batch.inputs)
    B, n, N = len(batch), net.n_joints, net.basis_dim
    Y = cache[-1][1].reshape(B, n, N)
    a = out.a_hat
    resid = Y @ a - batch.targets
    loss = float(np.mean(resid ** 2)) + l2_lambda * sum(float(np.sum(W * W)) for W in net.weights)

    d_pred = 2.0 * resid / resid.size                        # (B, n)
    grad_a = np.zeros_like(a) if freeze_output else np.einsum("bnk,bn->k", Y, d_pred)
    delta = (d_pred[:, :, None] * a[None, None, :]).reshape(B, n * N)

    gW = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        z, h = cache[i + 1]
        delta = delta * _act_grad(net.layer_specs[i][2], z, h)
        gW[i] = delta.T @ cache[i][1] + 2.0 * l2_lambda * net.weights[i]
        gb[i] = delta.sum(axis=0)
        if not (np.all(np.isfinite(gW[i])) and np.all(np.isfinite(gb[i]))):
            raise TrainingError(f"non-finite gradient in layer {i}")
        if i:
            delta = delta @ net.weights[i]
    return Gradients(gW, gb, grad_a, loss)


def adam_step(params, grads, state: AdamState):
    """One Adam update with bias correction; returns new parameter arrays.

    ``state`` is updated in place (moments and step count).
    """
    if len(params) != len(grads):
        raise ValueError("parameter and gradient lists differ in length")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {np.shape(p)}")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p, dtype=float) for p in params]
        state.second_moment = [np.zeros_like(p, dtype=float) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    new = []
    for k, (p, g) in enumerate(zip(params, grads)):
        m = b1 * state.first_moment[k] + (1.0 - b1) * g
        v = b2 * state.second_moment[k] + (1.0 - b2) * g * g
        state.first_moment[k], state.second_moment[k] = m, v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return new


def _apply(net, out, params, freeze_output):
    L = len(net.weights)
    net.weights = list(params[:L])
    net.biases = list(params[L:2 * L])
    if not freeze_output:
        out.a_hat = params[2 * L]


def _train_step(net, out, batch, state, freeze_output):
    grads = backprop(net, out, batch, freeze_output=freeze_output, l2_lambda=state.l2_lambda)
    params = [*net.weights, *net.biases]
    glist = [*grads.weights, *grads.biases]
    if not freeze_output:
        params.append(out.a_hat)
        glist.append(grads.a_hat)
    _apply(net, out, adam_step(params, glist, state), freeze_output)
    return grads.loss


def mse(net, out, batch: TrainBatch):
    return float(np.mean((predict(net, out, batch.inputs) - batch.targets) ** 2))


@dataclass
class LossHistory:
    epochs: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    test_mse: list = field(default_factory=list)

    def append(self, epoch, train, test):
        self.epochs.append(epoch)
        self.train_mse.append(train)
        self.test_mse.append(test)


def train_offline(net, out, dataset: TrainBatch, epochs=5, batch_size=256, split=0.8,
                  learning_rate=1e-3, l2_lambda=1e-4, seed=0):
    """Jointly fit the regressor and the output layer on recorded input/output data.

    The data are shuffled once and split into training and held-out parts; input
    standardization is fitted on the training part.  Each epoch visits every
    training sample once in shuffled mini-batches.  The history's first row
    (epoch 0) is the untrained network.
    """
    if len(dataset) == 0:
        raise TrainingError("empty dataset")
    if len(dataset) < batch_size:
        raise TrainingError(f"dataset has {len(dataset)} rows, fewer than batch size {batch_size}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(dataset))
    n_train = int(round(split * len(dataset)))
    train, test = dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:])

    net, out = net.copy(), out.copy()
    net.x_mean = train.inputs.mean(axis=0)
    std = train.inputs.std(axis=0)
    net.x_std = np.where(std > 1e-12, std, 1.0)

    state = AdamState(learning_rate=learning_rate, l2_lambda=l2_lambda)
    hist = LossHistory()
    hist.append(0, mse(net, out, train), mse(net, out, test) if len(test) else float("nan"))
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        for start in range(0, len(train), batch_size):
            _train_step(net, out, train.subset(order[start:start + batch_size]), state,
                        freeze_output=False)
        hist.append(epoch, mse(net, out, train), mse(net, out, test) if len(test) else float("nan"))
    net.version += 1
    return net, out, hist


def retrain_online(net, out, buffer: TrainBatch, passes=50, batch_size=256, learning_rate=1e-3,
                   l2_lambda=1e-4, seed=0):
    """Refit the internal weights on buffered closed-loop data with a_hat frozen.

    Returns a new network; the inputs are left untouched so the caller can swap
    the result in between control ticks.
    """
    if len(buffer) == 0:
        raise TrainingError("empty retraining buffer")
    new = net.copy()
    if passes <= 0:
        return new
    frozen = out.copy()
    rng = np.random.default_rng(seed)
    state = AdamState(learning_rate=learning_rate, l2_lambda=l2_lambda)
    for _ in range(passes):
        order = rng.permutation(len(buffer))
        for start in range(0, len(buffer), batch_size):
            _train_step(new, frozen, buffer.subset(order[start:start + batch_size]), state,
                        freeze_output=True)
    new.version = net.version + 1
    return new


def write_loss_history(path, hist: LossHistory):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "test_mse"])
        for row in zip(hist.epochs, hist.train_mse, hist.test_mse):
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])


def read_loss_history(path):
    hist = LossHistory()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            hist.append(int(row["epoch"]), float(row["train_mse"]), float(row["test_mse"]))
    return hist


def _dump(fh, tag, arr):
    arr = np.asarray(arr, dtype=float)
    fh.write(f"{tag} {' '.join(str(d) for d in arr.shape)} : ")
    fh.write(" ".join(repr(float(v)) for v in arr.ravel(order="C")))
    fh.write("\n")


def save_network(path, net: RegressorNet, out: OutputLayer = None):
    """Write the network (and optionally a_hat) as a versioned text file.

    Layout, one record per line::

        FLEXADAPT-NET 1
        n_joints <n>
        basis_dim <N>
        layers <L>
        layer <in> <out> <activation>      (L lines)
        x_mean <shape> : <values>
        x_std <shape> : <values>
        W<i> <rows> <cols> : <row-major values>
        b<i> <len> : <values>
        a_hat <N> : <values>               (optional)

    Values are printed with repr() so a reload is bit-exact.
    """
    with open(path, "w") as fh:
        fh.write(f"{MAGIC} {FORMAT_VERSION}\n")
        fh.write(f"n_joints {net.n_joints}\nbasis_dim {net.basis_dim}\n")
        fh.write(f"version {net.version}\n")
        fh.write(f"layers {len(net.layer_specs)}\n")
        for i, o, act in net.layer_specs:
            fh.write(f"layer {i} {o} {act}\n")
        _dump(fh, "x_mean", net.x_mean)
        _dump(fh, "x_std", net.x_std)
        for k, (W, b) in enumerate(zip(net.weights, net.biases)):
            _dump(fh, f"W{k}", W)
            _dump(fh, f"b{k}", b)
        if out is not None:
            _dump(fh, "a_hat", out.a_hat)


def load_network(path):
    """Inverse of save_network; returns (net, out) with out None if absent."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    head = lines[0].split()
    if head[0] != MAGIC:
        raise ValueError(f"{path}: not a network file")
    if int(head[1]) != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {head[1]}")
    meta, specs, arrays = {}, [], {}
    for ln in lines[1:]:
        if " : " in ln:
            left, right = ln.split(" : ", 1)
            tag, *shape = left.split()
            vals = np.array([float(v) for v in right.split()]) if right.strip() else np.zeros(0)
            arrays[tag] = vals.reshape([int(s) for s in shape])
        elif ln.startswith("layer "):
            _, i, o, act = ln.split()
            specs.append((int(i), int(o), act))
        else:
            key, val = ln.split()
            meta[key] = int(val)
    try:
        L = meta["layers"]
        if len(specs) != L:
            raise ValueError(f"{path}: expected {L} layer records, found {len(specs)}")
        net = RegressorNet(specs, [arrays[f"W{k}"] for k in range(L)],
                           [arrays[f"b{k}"] for k in range(L)], meta["n_joints"], meta["basis_dim"],
                           arrays["x_mean"], arrays["x_std"], meta.get("version", 0))
    except KeyError as exc:
        raise ValueError(f"{path}: missing record {exc.args[0]}") from None
    out = OutputLayer(arrays["a_hat"]) if "a_hat" in arrays else None
    return net, out
