"""Central-finite-difference gradient checking for the full pipeline.

Used by the test suite and by the ``grad-check`` CLI subcommand so CI can
gate on it. Errors are reported as max |analytic - numeric| / max(1, |a|, |n|)
plus the raw absolute error; both should sit many orders of magnitude below
the 1e-5 acceptance threshold on the reduced architectures checked here.
"""

import numpy as np

from .hypergen import (CHUNKED, PER_LAYER, SHARED_SAME_SIZE, ChunkPlan,
                       HypernetSpec, init_hypernet)
from .init_schemes import parse_scheme
from .mainnet import (CROSS_ENTROPY, GENERATED_BIAS, MSE, RELU, TANH, allconv,
                      backward, forward, mlp)
from .tensor import Rng


def numeric_gradient(loss_fn, arr, h=1e-5):
    """Central differences dL/d(arr), perturbing the live array in place."""
    g = np.zeros_like(arr)
    flat, gflat = arr.ravel(), g.ravel()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        lp = loss_fn()
        flat[i] = saved - h
        lm = loss_fn()
        flat[i] = saved
        gflat[i] = (lp - lm) / (2.0 * h)
    return g


def gradient_errors(analytic, numeric):
    diff = np.abs(analytic - numeric)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((diff / denom).max()), float(diff.max())


def pipeline_grads(net, mspec, x, y):
    """Analytic gradients of the batch loss w.r.t. every hypernet parameter."""
    params, gtrace = net.generate()
    trace, loss = forward(mspec, params, x, y)
    grads = backward(mspec, params, trace, y)
    hyper = net.backward(gtrace, grads.weight,
                         grads.bias if net.bias_targets else None)
    return loss, hyper.by_key


def check_pipeline(net, mspec, x, y, h=1e-5):
    """Compare analytic vs numeric gradients for every parameter tensor."""
    def loss_fn():
        params, _ = net.generate()
        _, loss = forward(mspec, params, x, y)
        return loss

    _, analytic = pipeline_grads(net, mspec, x, y)
    arrays = net.param_arrays()
    worst_rel, worst_abs = 0.0, 0.0
    for key, grad in analytic.items():
        numeric = numeric_gradient(loss_fn, arrays[key], h)
        rel, absolute = gradient_errors(np.asarray(grad, dtype=float), numeric)
        worst_rel = max(worst_rel, rel)
        worst_abs = max(worst_abs, absolute)
    return worst_rel, worst_abs


def _dense_per_layer_case(seed):
    mspec = mlp([4, 6, 5, 3], activation=RELU, loss=MSE,
                bias_source=GENERATED_BIAS)
    hspec = HypernetSpec(embedding_dim=3, hidden_layers=(5,), trunk_activation=RELU,
                         embeddings_trainable=True, head_topology=PER_LAYER,
                         generates_bias=True)
    rng = Rng(seed)
    net = init_hypernet(hspec, mspec, parse_scheme("hyperfan-in"), rng)
    x = rng.child(5).normal(1.0, (4, 4))
    y = rng.child(6).normal(1.0, (4, 3))
    return net, mspec, x, y


def _dense_shared_case(seed):
    mspec = mlp([4, 6, 6, 6, 3], activation=TANH, loss=CROSS_ENTROPY)
    hspec = HypernetSpec(embedding_dim=3, hidden_layers=(),
                         head_topology=SHARED_SAME_SIZE)
    rng = Rng(seed)
    net = init_hypernet(hspec, mspec, parse_scheme("hyperfan-out"), rng)
    x = rng.child(5).normal(1.0, (4, 4))
    y = np.asarray(rng.child(6).integers(3, size=4))
    return net, mspec, x, y


def _conv_chunked_case(seed):
    mspec = allconv(2, [4, 4], 3, kernel=3, strides=[1, 2])
    hspec = HypernetSpec(embedding_dim=3, hidden_layers=(),
                         head_topology=CHUNKED, chunk=ChunkPlan(K=2, n=3),
                         embeddings_trainable=True)
    rng = Rng(seed)
    net = init_hypernet(hspec, mspec, parse_scheme("hyperfan-in"), rng)
    x = rng.child(5).normal(1.0, (3, 2, 6, 6))
    y = np.asarray(rng.child(6).integers(3, size=3))
    return net, mspec, x, y


SUITE = {
    "dense-per-layer-bias": _dense_per_layer_case,
    "dense-shared-head": _dense_shared_case,
    "conv-chunked": _conv_chunked_case,
}


def run_suite(seed=7, h=1e-5):
    """Gradient-check every reduced architecture; returns {name: (rel, abs)}."""
    results = {}
    for name, builder in SUITE.items():
        net, mspec, x, y = builder(seed)
        results[name] = check_pipeline(net, mspec, x, y, h)
    return results
