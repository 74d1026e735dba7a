"""Why classical init fails on a hypernet: the per-layer variance recursion.

A linear width-500 mainnet is generated by a one-layer hypernet. Classical
fan-in init on the hypernet head makes every generated weight have unit
variance, so each mainnet layer multiplies the activation variance by its
width; hyperfan init sizes the head so the product is 1. This script measures
the recursion empirically on a standardized batch.
"""

import numpy as np

from hyperinit import mainnet as mn
from hyperinit import probe
from hyperinit.hypergen import SHARED_SAME_SIZE, HypernetSpec, init_hypernet
from hyperinit.init_schemes import parse_scheme
from hyperinit.tensor import Rng

WIDTH, DEPTH, HEAD, BATCH = 500, 5, 50, 300

mspec = mn.mlp([WIDTH] * (DEPTH + 1), activation="identity", loss="mse")
hspec = HypernetSpec(embedding_dim=HEAD, head_topology=SHARED_SAME_SIZE,
                     normalize_embeddings=True)
x = Rng(0).normal(1.0, (BATCH, WIDTH))

print(f"linear mainnet, {DEPTH} layers of width {WIDTH}; head width {HEAD}")
print(f"{'scheme':<16}" + "".join(f"{f'Var(x[{t}])':>12}" for t in range(1, DEPTH + 1)))
for scheme in ("fan-in", "harmonic", "small-random", "scaled-output",
               "hyperfan-in", "hyperfan-out"):
    net = init_hypernet(hspec, mspec, parse_scheme(scheme), Rng(1))
    params, _ = net.generate()
    trace, _ = mn.forward(mspec, params, x)
    vs = [np.var(a) for a in trace.acts]
    print(f"{scheme:<16}" + "".join(f"{v:>12.3g}" for v in vs))

print()
print("per-layer amplification under fan-in is the layer width itself:")
net = init_hypernet(hspec, mspec, parse_scheme("fan-in"), Rng(1))
params, _ = net.generate()
trace, _ = mn.forward(mspec, params, x)
ratios = probe.activation_variance_ratios(trace)
print("  ratios:", " ".join(f"{r:.1f}" for r in ratios),
      f" (width = {WIDTH})")
print(f"  cumulative blow-up over {DEPTH} layers: {np.prod(ratios):.2e}")
