"""Vanilla SGD over (hypernet -> mainnet -> loss), plus the experiment presets.

Only hypernet parameters and trainable embeddings are ever updated; generated
mainnet weights are a pure function of them. For hypernets with an identity
trunk and fixed embeddings (the MNIST-style presets) the loop uses an exact
reparameterization: SGD on a linear head (H, beta) with fixed embeddings
moves the generated weights by

    W_s  <-  W_s - lr * sum_t (<e_t, e_s> + 1) * dW_t

so the loop can carry the generated weights directly and reconstruct the head
update lazily (solving the small Gram system) whenever the head itself is
needed. This is algebraically identical to stepping (H, beta) and orders of
magnitude cheaper when the head is large.

Divergence (non-finite or > 1e30 loss/activations, or non-finite gradients)
halts training and returns partial results with the step recorded; several
baseline initializations are expected to end this way.
"""

import json
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (GLOBAL, load_cifar10_binary, load_idx, make_regression_tasks,
                   standardize)
from .hypergen import (CHUNKED, PER_LAYER, SHARED_SAME_SIZE, ChunkPlan, Hypernet,
                       HypernetSpec, WeightHeadGroup, init_hypernet)
from .init_schemes import parse_scheme
from .mainnet import (CROSS_ENTROPY, DENSE, GENERATED_BIAS, MSE, TANH, RELU,
                      MainnetSpec, accuracy, allconv, backward, forward, mlp,
                      mse_loss, softmax_cross_entropy)
from .probe import linear_activation_variances, snapshot, write_csv, write_json
from .tensor import Rng

DIVERGENCE_LIMIT = 1e30
PROBE_BATCH = 300


class DataNotFoundError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 10
    epochs: int = 3
    seed: int = 0
    scheme: str = "hyperfan-in"
    probe_every: int = 1000
    eval_every: int | None = 200
    lr_milestones: tuple = ()
    lr_decay: float = 0.1
    subset: int | None = None
    iterations: int | None = None   # per-task iteration cap (regression / conv desk runs)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be positive")
        if list(self.lr_milestones) != sorted(set(self.lr_milestones)):
            raise ValueError("lr milestones must be strictly increasing")
        object.__setattr__(self, "lr_milestones", tuple(self.lr_milestones))

    def lr_at(self, epoch):
        return self.learning_rate * self.lr_decay ** bisect_right(self.lr_milestones, epoch)


def sgd_step(params, grads, lr, updatable=None):
    """In-place params -= lr * grads; returns False (and changes nothing) on
    non-finite gradients."""
    items = [(k, g) for k, g in grads.items() if updatable is None or k in updatable]
    for _, g in items:
        if not np.all(np.isfinite(g)):
            return False
    for k, g in items:
        params[k] -= lr * g
    return True


class _FixedHeadFastPath:
    """Carries generated weights through SGD for identity-trunk, fixed-embedding
    hypernets, reconstructing the heads exactly on demand."""

    @staticmethod
    def applicable(net: Hypernet):
        return (not net.hspec.hidden_layers
                and not net.hspec.embeddings_trainable
                and all(isinstance(g, WeightHeadGroup) for g in net.weight_groups))

    def __init__(self, net: Hypernet):
        self.net = net
        self.params, _ = net.generate()
        self.w_groups = []
        for g in net.weight_groups:
            emb = np.stack([net.embeddings[f"emb.w{t}"].values for t in g.targets])
            gram = emb @ emb.T + 1.0
            stack = np.stack([self.params[t]["W"].ravel() for t in g.targets])
            for i, t in enumerate(g.targets):
                self.params[t]["W"] = stack[i].reshape(g.weight_shape)
            self.w_groups.append({"g": g, "emb": emb, "gram": gram,
                                  "stack": stack, "base": stack.copy()})
        self.b_groups = []
        for g in net.bias_groups:
            emb = np.stack([net.embeddings[f"emb.b{t}"].values for t in g.targets])
            gram = emb @ emb.T + 1.0
            stack = np.stack([self.params[t]["b"] for t in g.targets])
            for i, t in enumerate(g.targets):
                self.params[t]["b"] = stack[i]
            self.b_groups.append({"g": g, "emb": emb, "gram": gram,
                                  "stack": stack, "base": stack.copy()})

    def step(self, weight_grads, bias_grads, lr):
        for rec in self.w_groups:
            d = np.stack([weight_grads[t].ravel() for t in rec["g"].targets])
            if not np.all(np.isfinite(d)):
                return False
            rec["stack"] -= lr * (rec["gram"] @ d)
        for rec in self.b_groups:
            d = np.stack([bias_grads[t] for t in rec["g"].targets])
            if not np.all(np.isfinite(d)):
                return False
            rec["stack"] -= lr * (rec["gram"] @ d)
        return True

    def sync(self):
        """Fold the accumulated weight motion back into the heads (exactly)."""
        for rec in self.w_groups + self.b_groups:
            delta = rec["base"] - rec["stack"]
            if not delta.any():
                continue
            acc = np.linalg.solve(rec["gram"], delta)
            head = rec["g"]
            if isinstance(head, WeightHeadGroup):
                head.H -= acc.T @ rec["emb"]
                head.beta -= acc.sum(axis=0)
            else:
                head.G -= acc.T @ rec["emb"]
                head.gamma -= acc.sum(axis=0)
            rec["base"] = rec["stack"].copy()


@dataclass
class TrainResult:
    preset: str
    config: TrainConfig
    curve: list = field(default_factory=list)   # (step, epoch, train_loss, test_metric)
    epoch_train_loss: list = field(default_factory=list)
    task_init_losses: list = field(default_factory=list)
    task_final_losses: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    diverged: bool = False
    divergence_step: int | None = None
    init_loss: float | None = None
    init_linear_vars: list | None = None
    final_metric: float | None = None
    hypernet: Hypernet | None = None
    mspec: MainnetSpec | None = None


@dataclass(frozen=True)
class Preset:
    name: str
    kind: str                      # "classification" | "regression"
    build_mainnet: callable
    build_hspec: callable
    defaults: dict
    load: callable = None
    standardize_mode: str = GLOBAL


def _mnist_mainnet(bias):
    src = GENERATED_BIAS if bias else "zero"
    return mlp([784, 500, 500, 500, 500, 500, 10], activation=TANH,
               loss=CROSS_ENTROPY, bias_source=src)


def _mnist_hspec(bias):
    return HypernetSpec(embedding_dim=50, hidden_layers=(),
                        head_topology=SHARED_SAME_SIZE, generates_bias=bias)


def _regression_mainnet():
    # Desk-scale mainnet: deep enough that a bad hypernet init visibly hurts
    # within a few hundred iterations (the full-scale preset pairs a
    # 2-hidden-layer width-10 mainnet with 6000 iterations per task).
    return mlp([1, 16, 16, 16, 1], activation=RELU, loss=MSE,
               bias_source=GENERATED_BIAS)


def _regression_hspec():
    return HypernetSpec(embedding_dim=2, hidden_layers=(10, 10),
                        trunk_activation=RELU, embeddings_trainable=True,
                        head_topology=PER_LAYER, generates_bias=True)


def _cifar_mainnet():
    # Aggressive striding keeps the desk-scale patch matrices small; channel
    # counts stay multiples of the K=96 chunk so the grid divides evenly.
    return allconv(3, [96, 96, 96], 10, kernel=3, strides=[2, 2, 2])


def _cifar_hspec():
    return HypernetSpec(embedding_dim=50, hidden_layers=(),
                        head_topology=CHUNKED, chunk=ChunkPlan(K=96, n=3))


def _load_mnist(data_dir):
    root = Path(data_dir or ".")
    files = {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    }
    out = []
    for split, (imgs, labels) in files.items():
        ip, lp = root / imgs, root / labels
        if not ip.exists() or not lp.exists():
            raise DataNotFoundError(f"missing {split} IDX files under {root}")
        ds = load_idx(str(ip), str(lp))
        ds = replace(ds, split=split)
        out.append(ds)
    return tuple(out)


def _load_cifar(data_dir):
    root = Path(data_dir or ".")
    train_path, test_path = root / "data_batch_1.bin", root / "test_batch.bin"
    if not train_path.exists() or not test_path.exists():
        raise DataNotFoundError(f"missing CIFAR-10 binary files under {root}")
    train = replace(load_cifar10_binary(str(train_path)), split="train")
    test = replace(load_cifar10_binary(str(test_path)), split="test")
    return train, test


# Desk-scale defaults; the acceptance suite pins these. Full-size settings
# live in FULL_SCALE and can be requested through config flags.
PRESETS = {
    "mnist-mlp": Preset(
        name="mnist-mlp", kind="classification",
        build_mainnet=lambda: _mnist_mainnet(False),
        build_hspec=lambda: _mnist_hspec(False),
        load=_load_mnist,
        defaults=dict(learning_rate=5e-4, batch_size=10, epochs=3,
                      subset=10000, eval_every=200, probe_every=1000)),
    "mnist-mlp-bias": Preset(
        name="mnist-mlp-bias", kind="classification",
        build_mainnet=lambda: _mnist_mainnet(True),
        build_hspec=lambda: _mnist_hspec(True),
        load=_load_mnist,
        defaults=dict(learning_rate=5e-4, batch_size=10, epochs=3,
                      subset=10000, eval_every=200, probe_every=1000)),
    "regression-seq": Preset(
        name="regression-seq", kind="regression",
        build_mainnet=_regression_mainnet,
        build_hspec=_regression_hspec,
        defaults=dict(learning_rate=1e-2, batch_size=32, epochs=1,
                      iterations=300, eval_every=100, probe_every=1000)),
    "cifar-allconv": Preset(
        name="cifar-allconv", kind="classification",
        build_mainnet=_cifar_mainnet,
        build_hspec=_cifar_hspec,
        load=_load_cifar,
        defaults=dict(learning_rate=5e-4, batch_size=50, epochs=100,
                      subset=5000, iterations=200, eval_every=50,
                      probe_every=1000)),
}

FULL_SCALE = {
    # Full-size experiment settings (hours of CPU; the desk presets above are
    # their scaled-down counterparts).
    "mnist-mlp": dict(learning_rate=5e-4, batch_size=10, epochs=30, subset=None),
    "mnist-mlp-bias": dict(learning_rate=5e-4, batch_size=10, epochs=30, subset=None),
    "mnist-classical-control": dict(learning_rate=0.01, batch_size=10, epochs=30),
    "regression-seq": dict(batch_size=32, iterations=6000,
                           mainnet_dims=(1, 10, 10, 1)),
    "cifar-allconv": dict(learning_rate=5e-4, batch_size=100, epochs=500,
                          lr_milestones=(350, 450), lr_decay=0.1, subset=None),
}


def config_for(preset_name, **overrides):
    base = dict(PRESETS[preset_name].defaults)
    base.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**base)


def _flatten_inputs(mspec, x):
    if mspec.layers[0].kind == DENSE and x.ndim > 2:
        return x.reshape(len(x), -1)
    return x


def _test_metric(mspec, params, x, y, chunk=500):
    """Accuracy for classifiers (plus summed CE), MSE for regression outputs."""
    n = len(x)
    correct = 0.0
    ce_sum = 0.0
    for lo in range(0, n, chunk):
        trace, _ = forward(mspec, params, x[lo:lo + chunk])
        out = trace.output
        if mspec.loss == CROSS_ENTROPY:
            correct += accuracy(out, y[lo:lo + chunk]) * len(out)
            ce_sum += softmax_cross_entropy(out, y[lo:lo + chunk], reduction="sum")
        else:
            ce_sum += mse_loss(out, y[lo:lo + chunk]) * len(out)
    if mspec.loss == CROSS_ENTROPY:
        return correct / n, ce_sum
    return ce_sum / n, ce_sum


def _diverged(trace, loss):
    return (trace.overflow_layer is not None or not np.isfinite(loss)
            or abs(loss) > DIVERGENCE_LIMIT)


def train(preset_name, config=None, data_dir=None, data=None, out_dir=None,
          scheme=None):
    """Run one experiment preset; returns a TrainResult (partial on divergence)."""
    preset = PRESETS[preset_name]
    if config is None:
        config = config_for(preset_name)
    if scheme is not None:
        config = replace(config, scheme=scheme)
    if preset.kind == "regression":
        result = _train_regression(preset, config, data)
    else:
        result = _train_classification(preset, config, data_dir, data)
    if out_dir is not None:
        write_outputs(out_dir, result)
    return result


def _train_classification(preset, config, data_dir, data):
    rng = Rng(config.seed)
    if data is None:
        train_raw, test_raw = preset.load(data_dir)
    else:
        train_raw, test_raw = data
    train_raw = train_raw.take(config.subset)
    train_ds, stats = standardize(train_raw, preset.standardize_mode)
    test_ds, _ = standardize(test_raw, preset.standardize_mode, stats)

    mspec = preset.build_mainnet()
    hspec = preset.build_hspec()
    net = init_hypernet(hspec, mspec, parse_scheme(config.scheme), rng.child(1))

    x_train = _flatten_inputs(mspec, train_ds.inputs)
    y_train = train_ds.labels
    x_test = _flatten_inputs(mspec, test_ds.inputs)
    y_test = test_ds.labels
    probe_x, probe_y = x_test[:PROBE_BATCH], y_test[:PROBE_BATCH]

    fast = _FixedHeadFastPath(net) if _FixedHeadFastPath.applicable(net) else None
    arrays = net.param_arrays()
    updatable = net.updatable_keys()

    result = TrainResult(preset=preset.name, config=config, mspec=mspec, hypernet=net)

    def current_params():
        if fast is not None:
            return fast.params
        return net.generate()[0]

    def take_probe(step):
        if fast is not None:
            fast.sync()
        params_now, gtrace = net.generate()
        trace, loss = forward(mspec, params_now, probe_x, probe_y)
        grads = backward(mspec, params_now, trace, probe_y)
        hyper = net.backward(gtrace, grads.weight,
                             grads.bias if net.bias_targets else None)
        lin = linear_activation_variances(mspec, params_now, probe_x)
        rep = snapshot(step, trace, params_now, grads,
                       head_feature_grads=hyper.head_feature_grads, linear_acts=lin)
        result.reports.append(rep)
        return trace, loss, lin

    _, init_loss, init_lin = take_probe(0)
    result.init_loss = init_loss
    result.init_linear_vars = [float(np.var(a)) for a in init_lin]

    step = 0
    n = len(x_train)
    window_losses = []
    last_metric = None
    max_steps = config.iterations
    epoch = 0
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.child(100 + epoch).permutation(n)
        epoch_losses = []
        for lo in range(0, n - n % config.batch_size, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            if fast is not None:
                params = fast.params
                trace, loss = forward(mspec, params, xb, yb)
            else:
                params, gtrace = net.generate()
                trace, loss = forward(mspec, params, xb, yb)
            if _diverged(trace, loss):
                result.diverged = True
                result.divergence_step = step
                break
            epoch_losses.append(loss)
            window_losses.append(loss)
            grads = backward(mspec, params, trace, yb)
            if fast is not None:
                ok = fast.step(grads.weight, grads.bias, lr)
            else:
                hyper = net.backward(gtrace, grads.weight,
                                     grads.bias if net.bias_targets else None)
                ok = sgd_step(arrays, hyper.by_key, lr, updatable)
            if not ok:
                result.diverged = True
                result.divergence_step = step
                break
            step += 1
            if config.eval_every and step % config.eval_every == 0:
                metric, _ = _test_metric(mspec, current_params(), x_test, y_test)
                last_metric = metric
                result.curve.append((step, epoch, float(np.mean(window_losses)), metric))
                window_losses = []
            if config.probe_every and step % config.probe_every == 0:
                take_probe(step)
            if max_steps is not None and step >= max_steps:
                break
        if epoch_losses:
            result.epoch_train_loss.append(float(np.mean(epoch_losses)))
        if result.diverged or (max_steps is not None and step >= max_steps):
            break

    if not result.diverged:
        metric, _ = _test_metric(mspec, current_params(), x_test, y_test)
        last_metric = metric
        if not result.curve or result.curve[-1][0] != step:
            tl = float(np.mean(window_losses)) if window_losses else float("nan")
            result.curve.append((step, epoch, tl, metric))
        take_probe(step)
    result.final_metric = last_metric
    return result


def _train_regression(preset, config, data):
    rng = Rng(config.seed)
    tasks = data if data is not None else make_regression_tasks(config.seed)
    mspec = preset.build_mainnet()
    hspec = preset.build_hspec()
    net = init_hypernet(hspec, mspec, parse_scheme(config.scheme), rng.child(1))
    arrays = net.param_arrays()
    updatable = net.updatable_keys()
    result = TrainResult(preset=preset.name, config=config, mspec=mspec, hypernet=net)

    iterations = config.iterations or 400
    step = 0
    for task_idx, task in enumerate(tasks.tasks):
        trng = rng.child(200 + task_idx)
        n = len(task.train_x)
        task_losses = []
        for it in range(iterations):
            idx = trng.integers(n, size=config.batch_size)
            xb, yb = task.train_x[idx], task.train_y[idx]
            params, gtrace = net.generate()
            trace, loss = forward(mspec, params, xb, yb)
            if _diverged(trace, loss):
                result.diverged = True
                result.divergence_step = step
                break
            if it == 0:
                result.task_init_losses.append(loss)
                if task_idx == 0:
                    result.init_loss = loss
            task_losses.append(loss)
            grads = backward(mspec, params, trace, yb)
            hyper = net.backward(gtrace, grads.weight, grads.bias)
            if not sgd_step(arrays, hyper.by_key, config.lr_at(task_idx), updatable):
                result.diverged = True
                result.divergence_step = step
                break
            step += 1
            if config.eval_every and step % config.eval_every == 0:
                params_now, _ = net.generate()
                mse, _ = _test_metric(mspec, params_now, task.test_x, task.test_y)
                result.curve.append((step, task_idx,
                                     float(np.mean(task_losses[-config.eval_every:])),
                                     mse))
        if result.diverged:
            break
        tail = max(1, iterations // 10)
        result.task_final_losses.append(float(np.mean(task_losses[-tail:])))
        result.epoch_train_loss.append(float(np.mean(task_losses)))
    if not result.diverged and result.curve:
        result.final_metric = result.curve[-1][3]
    elif not result.diverged and result.task_final_losses:
        result.final_metric = result.task_final_losses[-1]
    return result


def write_curve_csv(path, result):
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,epoch,train_loss,test_metric\n")
        for step, epoch, train_loss, metric in result.curve:
            f.write(f"{step},{epoch},{train_loss!r},{metric!r}\n")


def save_checkpoint(path, net, config, step=0):
    meta = {"version": 1, "scheme": config.scheme, "seed": config.seed,
            "step": step, "keys": sorted(net.param_arrays())}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **net.param_arrays())


def load_checkpoint(path):
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    return meta, arrays


def write_outputs(out_dir, result):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_curve_csv(out / "curves.csv", result)
    write_json(out / "probe.json", result.reports)
    write_csv(out / "probe.csv", result.reports)
    if result.hypernet is not None:
        save_checkpoint(out / "checkpoint.npz", result.hypernet, result.config)
