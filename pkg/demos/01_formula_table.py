"""Variance formulas at a glance.

Builds the generator-head geometry used by the MNIST-style experiment (a
784 -> 500 mainnet layer generated from 50 hypernet features) and tabulates
what every initialization scheme would assign to the weight head H and the
bias head G, plus the half-width of the matching uniform distribution.
"""

from hyperinit import init_schemes as s

geom = s.FanGeometry(d_i=500, d_j=784, d_k=50, d_l=50, var_e1=1.0, var_e2=1.0)

print("target layer: 784 -> 500, head width 50, embedding variance 1.0")
print(f"{'scheme':<18}{'Var(H)':>14}{'Var(G)':>14}{'uniform bound':>16}")
for kind in s.ALL_KINDS:
    sch = s.parse_scheme(kind, relu_gain=False, hypernet_bias=True)
    wv = s.scheme_weight_variance(sch, geom)
    bv = s.scheme_bias_variance(sch, geom)
    print(f"{kind:<18}{wv:>14.3e}{bv:>14.3e}{s.uniform_bound(wv):>16.4e}")

print()
print("what the mainnet sees (generated weight variance vs fan-in target):")
target = 1 / (2 * 784)  # bias generation splits the budget in half
for kind in ("fan-in", "hyperfan-in", "hyperfan-out"):
    sch = s.parse_scheme(kind, relu_gain=False, hypernet_bias=True)
    gv = s.generated_weight_variance(sch, geom)
    print(f"  {kind:<14} Var(W) = {gv:.3e}   (fan-in split target {target:.3e})")

print()
print("the hyperfan-out bias clamp: contracting layers get zero bias variance")
for d_j in (10, 250, 500, 784):
    g = s.FanGeometry(d_i=500, d_j=d_j, d_k=50, d_l=50)
    print(f"  d_j={d_j:<4} -> Var(G) = {s.hyperfan_out_bias_variance(g):.5f}")
