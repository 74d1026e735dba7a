"""Hypernetwork engines: generate mainnet parameters from embeddings.

A hypernet owns embeddings, an optional trunk (shared dense stack), and a set
of generator heads. Three head topologies are supported:

* ``per-layer``: every target layer gets its own linear head.
* ``shared-same-size``: layers with identical weight shapes share one head,
  each layer keeping its own embedding.
* ``chunked``: one shared output layer emits fixed-size (K, n, n) blocks of
  conv weights; each block has its own embedding and its own input
  projection, and blocks are assembled into full weight tensors in
  (output-block, input-channel) order. Layers the chunk grid cannot cover
  (e.g. a dense classifier) fall back to per-layer heads.

``backward`` pushes mainnet parameter gradients through the heads, the trunk,
and into the embeddings. For shared heads the head gradient is the sum of the
per-target contributions, which combats the usual head-gradient shrinkage.
"""

from dataclasses import dataclass, field

import numpy as np

from . import init_schemes as schemes
from .init_schemes import FanGeometry, InitScheme
from .mainnet import (CONV, GENERATED_BIAS, RELU, MainnetSpec, SpecError,
                      activate, activation_grad, zero_params)
from .tensor import DTYPE, Distribution, Rng, empirical_variance, sample

PER_LAYER = "per-layer"
SHARED_SAME_SIZE = "shared-same-size"
CHUNKED = "chunked"
TOPOLOGIES = (PER_LAYER, SHARED_SAME_SIZE, CHUNKED)


@dataclass(frozen=True)
class ChunkPlan:
    """Chunk grid: blocks of K output channels over an n x n kernel."""

    K: int
    n: int

    def __post_init__(self):
        if self.K < 1 or self.n < 1:
            raise SpecError("chunk plan needs K >= 1 and n >= 1")


@dataclass(frozen=True)
class HypernetSpec:
    embedding_dim: int = 50
    hidden_layers: tuple = ()
    trunk_activation: str = RELU
    embedding_distribution: Distribution = Distribution("uniform", 1.0)
    embeddings_trainable: bool = False
    head_topology: str = SHARED_SAME_SIZE
    generates_bias: bool = False
    chunk: ChunkPlan | None = None
    var_e_mode: str = "declared"   # "declared" | "empirical"
    shared_trunk: bool = False
    normalize_embeddings: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))
        if self.embedding_dim < 1:
            raise SpecError("embedding_dim must be positive")
        if self.head_topology not in TOPOLOGIES:
            raise SpecError(f"unknown head topology {self.head_topology!r}")
        if self.head_topology == CHUNKED and self.chunk is None:
            raise SpecError("chunked topology requires a ChunkPlan")
        if self.var_e_mode not in ("declared", "empirical"):
            raise SpecError(f"unknown var_e mode {self.var_e_mode!r}")


@dataclass
class Embedding:
    values: np.ndarray
    variance: float
    trainable: bool


class Trunk:
    """Dense stack mapping embeddings to head features; identity when empty."""

    def __init__(self, in_dim, widths, activation):
        self.in_dim = in_dim
        self.widths = tuple(widths)
        self.activation = activation
        dims = (in_dim,) + self.widths
        self.weights = [np.zeros((b, a), dtype=DTYPE) for a, b in zip(dims, dims[1:])]
        self.biases = [np.zeros(b, dtype=DTYPE) for b in self.widths]

    @property
    def out_dim(self):
        return self.widths[-1] if self.widths else self.in_dim

    def forward(self, emb_matrix):
        """emb_matrix: (T, in_dim) stacked embeddings -> (features, cache)."""
        x = emb_matrix
        xs, ys = [x], []
        for w, b in zip(self.weights, self.biases):
            y = x @ w.T + b
            x = activate(self.activation, y)
            ys.append(y)
            xs.append(x)
        return x, (xs, ys)

    def backward(self, cache, dfeat):
        xs, ys = cache
        dws = [None] * len(self.weights)
        dbs = [None] * len(self.weights)
        dx = dfeat
        for i in range(len(self.weights) - 1, -1, -1):
            dy = activation_grad(self.activation, ys[i], xs[i + 1], dx)
            dws[i] = dy.T @ xs[i]
            dbs[i] = dy.sum(axis=0)
            dx = dy @ self.weights[i]
        return dws, dbs, dx


class WeightHeadGroup:
    """Linear head H, beta generating the weights of one or more same-shape layers."""

    def __init__(self, targets, mspec, d_k):
        self.targets = tuple(targets)
        shapes = {mspec.layers[t].weight_shape for t in self.targets}
        if len(shapes) != 1:
            raise SpecError(f"head shared across different-size layers {self.targets}; "
                            "only the chunked topology can cover mixed shapes")
        self.weight_shape = shapes.pop()
        self.n_out = int(np.prod(self.weight_shape))
        self.H = np.zeros((self.n_out, d_k), dtype=DTYPE)
        self.beta = np.zeros(self.n_out, dtype=DTYPE)


class BiasHeadGroup:
    def __init__(self, targets, mspec, d_l):
        self.targets = tuple(targets)
        widths = {mspec.layers[t].d_out for t in self.targets}
        if len(widths) != 1:
            raise SpecError(f"bias head shared across different widths {self.targets}")
        self.d_out = widths.pop()
        self.G = np.zeros((self.d_out, d_l), dtype=DTYPE)
        self.gamma = np.zeros(self.d_out, dtype=DTYPE)


class ChunkedHeadGroup:
    """Shared output layer over (K, n, n) chunks with per-chunk input projections.

    Chunks for a layer of shape (out, in, n, n) are indexed row-major by
    (block = out // K, input channel); the global chunk list concatenates the
    per-layer grids in target order.
    """

    def __init__(self, targets, mspec, plan, proj_dim, emb_dim):
        self.targets = tuple(targets)
        self.plan = plan
        self.proj_dim = proj_dim
        k, n = plan.K, plan.n
        index = []
        self.layer_rows = {}
        for t in self.targets:
            layer = mspec.layers[t]
            if layer.kind != CONV:
                raise SpecError(f"layer {t} is not a conv layer; cannot chunk")
            kh, kw = layer.kernel[0], layer.kernel[1]
            if kh != n or kw != n:
                raise SpecError(f"layer {t} kernel {kh}x{kw} does not match chunk side {n}")
            if layer.d_out % k != 0:
                raise SpecError(f"layer {t} has {layer.d_out} output channels, "
                                f"not divisible by chunk size K={k}")
            start = len(index)
            for block in range(layer.d_out // k):
                for cin in range(layer.d_in):
                    index.append((t, block, cin))
            self.layer_rows[t] = (start, len(index))
        self.index = tuple(index)
        self.n_chunks = len(index)
        self.H = np.zeros((k * n * n, proj_dim), dtype=DTYPE)
        self.beta = np.zeros(k * n * n, dtype=DTYPE)
        self.proj = np.zeros((self.n_chunks, proj_dim, emb_dim), dtype=DTYPE)
        self.proj_bias = np.zeros((self.n_chunks, proj_dim), dtype=DTYPE)

    def assemble(self, chunk_mat, t, layer):
        k, n = self.plan.K, self.plan.n
        lo, hi = self.layer_rows[t]
        blocks = layer.d_out // k
        w = chunk_mat[lo:hi].reshape(blocks, layer.d_in, k, n, n)
        return np.ascontiguousarray(w.transpose(0, 2, 1, 3, 4)).reshape(layer.weight_shape)

    def disassemble(self, dw, t, layer):
        k, n = self.plan.K, self.plan.n
        blocks = layer.d_out // k
        d = dw.reshape(blocks, k, layer.d_in, n, n).transpose(0, 2, 1, 3, 4)
        return np.ascontiguousarray(d).reshape(blocks * layer.d_in, k * n * n)


@dataclass
class GenTrace:
    """Intermediate activations of one generate() call, kept for backward."""

    w_targets: tuple = ()
    h_feats: np.ndarray | None = None     # (T_w, d_k) trunk features, weight side
    h_cache: tuple | None = None
    b_targets: tuple = ()
    g_feats: np.ndarray | None = None
    g_cache: tuple | None = None
    chunk_alphas: dict = field(default_factory=dict)   # group index -> (M, proj_dim)
    params: list | None = None


@dataclass
class HyperGrads:
    by_key: dict
    head_feature_grads: dict   # ("w"|"b", layer) -> dL/d(head input features)


class Hypernet:
    """Generates and backpropagates through all mainnet parameters."""

    def __init__(self, mspec: MainnetSpec, hspec: HypernetSpec, rng: Rng):
        self.mspec = mspec
        self.hspec = hspec
        self.scheme = None
        d_e = hspec.embedding_dim

        self.trunk_h = Trunk(d_e, hspec.hidden_layers, hspec.trunk_activation)
        bias_layers = [t for t, l in enumerate(mspec.layers)
                       if l.bias_source == GENERATED_BIAS]
        if hspec.generates_bias != bool(bias_layers):
            raise SpecError("generates_bias flag disagrees with the layer bias sources")
        if bias_layers:
            self.trunk_g = self.trunk_h if hspec.shared_trunk else Trunk(
                d_e, hspec.hidden_layers, hspec.trunk_activation)
        else:
            self.trunk_g = None

        chunk_targets, plain_targets = [], []
        for t, layer in enumerate(mspec.layers):
            if hspec.head_topology == CHUNKED and layer.kind == CONV:
                chunk_targets.append(t)
            else:
                plain_targets.append(t)
        if hspec.head_topology == CHUNKED and not chunk_targets:
            raise SpecError("chunked topology requires at least one conv layer")

        self.weight_groups = []
        if hspec.head_topology == SHARED_SAME_SIZE:
            by_shape = {}
            for t in plain_targets:
                by_shape.setdefault(mspec.layers[t].weight_shape, []).append(t)
            for ts in by_shape.values():
                self.weight_groups.append(WeightHeadGroup(ts, mspec, self.trunk_h.out_dim))
        else:
            for t in plain_targets:
                self.weight_groups.append(
                    WeightHeadGroup([t], mspec, self.trunk_h.out_dim))
        if chunk_targets:
            self.weight_groups.append(ChunkedHeadGroup(
                chunk_targets, mspec, hspec.chunk, d_e, d_e))

        self.bias_groups = []
        if hspec.head_topology == SHARED_SAME_SIZE:
            by_width = {}
            for t in bias_layers:
                by_width.setdefault(mspec.layers[t].d_out, []).append(t)
            for ts in by_width.values():
                self.bias_groups.append(BiasHeadGroup(ts, mspec, self.trunk_g.out_dim))
        else:
            for t in bias_layers:
                self.bias_groups.append(
                    BiasHeadGroup([t], mspec, self.trunk_g.out_dim))

        self.plain_w_targets = tuple(plain_targets)
        self.bias_targets = tuple(bias_layers)
        self._w_row = {t: i for i, t in enumerate(self.plain_w_targets)}
        self._b_row = {t: i for i, t in enumerate(self.bias_targets)}

        self.embeddings = {}
        dist = hspec.embedding_distribution

        def draw_embedding(shape):
            e = sample(dist, shape, erng)
            if hspec.normalize_embeddings and dist.variance > 0:
                # Pin each embedding's empirical second moment to the declared
                # variance, so head-variance checks see the formula rather than
                # the luck of one finite draw.
                m2 = np.mean(np.square(e), axis=-1, keepdims=True)
                e = e * np.sqrt(dist.variance / m2)
            return e

        erng = rng.child(0)
        for t in self.plain_w_targets:
            self.embeddings[f"emb.w{t}"] = Embedding(
                draw_embedding(d_e), dist.variance, hspec.embeddings_trainable)
        for t in self.bias_targets:
            self.embeddings[f"emb.b{t}"] = Embedding(
                draw_embedding(d_e), dist.variance, hspec.embeddings_trainable)
        for gi, g in enumerate(self.weight_groups):
            if isinstance(g, ChunkedHeadGroup):
                self.embeddings[f"emb.c{gi}"] = Embedding(
                    draw_embedding((g.n_chunks, d_e)), dist.variance,
                    hspec.embeddings_trainable)

    # ---- parameter access -------------------------------------------------

    def param_arrays(self):
        """Flat name -> array view of every parameter, embeddings included."""
        out = {}
        for name, trunk in (("trunk_h", self.trunk_h), ("trunk_g", self.trunk_g)):
            if trunk is None or (name == "trunk_g" and trunk is self.trunk_h):
                continue
            for i, (w, b) in enumerate(zip(trunk.weights, trunk.biases)):
                out[f"{name}.W{i}"] = w
                out[f"{name}.b{i}"] = b
        for gi, g in enumerate(self.weight_groups):
            if isinstance(g, ChunkedHeadGroup):
                out[f"cg{gi}.H"] = g.H
                out[f"cg{gi}.beta"] = g.beta
                out[f"cg{gi}.proj"] = g.proj
                out[f"cg{gi}.proj_bias"] = g.proj_bias
            else:
                out[f"wg{gi}.H"] = g.H
                out[f"wg{gi}.beta"] = g.beta
        for gi, g in enumerate(self.bias_groups):
            out[f"bg{gi}.G"] = g.G
            out[f"bg{gi}.gamma"] = g.gamma
        for key, emb in self.embeddings.items():
            out[key] = emb.values
        return out

    def updatable_keys(self):
        keys = set()
        for key in self.param_arrays():
            if key.startswith("emb."):
                if self.embeddings[key].trainable:
                    keys.add(key)
            else:
                keys.add(key)
        return keys

    # ---- initialization ---------------------------------------------------

    def _var_e(self, key):
        emb = self.embeddings[key]
        if self.hspec.var_e_mode == "empirical" and emb.values.size >= 2:
            return empirical_variance(emb.values)
        return emb.variance

    def geometry(self, t):
        """Fan geometry of the generator heads targeting mainnet layer t."""
        layer = self.mspec.layers[t]
        gi = self._group_of(t)
        g = self.weight_groups[gi]
        if isinstance(g, ChunkedHeadGroup):
            var_e1 = self._var_e(f"emb.c{gi}")
            d_k = self.hspec.embedding_dim
        else:
            var_e1 = self._var_e(f"emb.w{t}")
            d_k = self.trunk_h.out_dim
        if t in self._b_row:
            var_e2 = self._var_e(f"emb.b{t}")
            d_l = self.trunk_g.out_dim
        else:
            var_e2, d_l = 1.0, 1
        return FanGeometry(d_i=layer.d_out, d_j=layer.d_in, d_k=d_k, d_l=d_l,
                           var_e1=var_e1, var_e2=var_e2,
                           receptive_field=layer.receptive_field)

    def _group_of(self, t):
        for gi, g in enumerate(self.weight_groups):
            if t in g.targets:
                return gi
        raise SpecError(f"no weight group targets layer {t}")

    def layer_scheme(self, scheme, t):
        layer = self.mspec.layers[t]
        return scheme.with_flags(
            relu_gain=scheme.relu_gain and layer.activation == RELU,
            hypernet_bias=layer.bias_source == GENERATED_BIAS)

    def initialize(self, scheme: InitScheme, rng: Rng):
        """Sample every hypernet parameter according to the scheme.

        Trunks receive fan-in init with their own activation's gain (the
        baselines override this: small-random draws everything at
        scale_param^2, classical schemes apply their formula to each trunk
        matrix as well). Heads receive the scheme's weight/bias variance on
        their target geometry; beta and gamma start at zero.
        """
        self.scheme = scheme
        fam = scheme.family

        def draw(var, shape):
            return sample(Distribution(fam, var), shape, rng)

        trunks = [self.trunk_h]
        if self.trunk_g is not None and self.trunk_g is not self.trunk_h:
            trunks.append(self.trunk_g)
        for trunk in trunks:
            trunk_relu = scheme.relu_gain and trunk.activation == RELU
            for w, b in zip(trunk.weights, trunk.biases):
                geom = FanGeometry(d_i=w.shape[0], d_j=w.shape[1], d_k=1)
                if scheme.kind == schemes.SMALL_RANDOM:
                    var = scheme.scale_param ** 2
                    b[:] = draw(var, b.shape)
                elif scheme.kind in schemes.CLASSICAL_KINDS:
                    var = schemes.classical_variance(scheme.kind, geom, trunk_relu)
                    b[:] = 0.0
                else:
                    var = schemes.classical_variance(schemes.FAN_IN, geom, trunk_relu)
                    b[:] = 0.0
                w[:] = draw(var, w.shape)

        for gi, g in enumerate(self.weight_groups):
            if isinstance(g, ChunkedHeadGroup):
                self._initialize_chunked(gi, g, scheme, draw)
                continue
            t0 = g.targets[0]
            eff = self.layer_scheme(scheme, t0)
            var_h = schemes.scheme_weight_variance(eff, self.geometry(t0))
            g.H[:] = draw(var_h, g.H.shape)
            g.beta[:] = (draw(scheme.scale_param ** 2, g.beta.shape)
                         if scheme.kind == schemes.SMALL_RANDOM else 0.0)

        for g in self.bias_groups:
            t0 = g.targets[0]
            eff = self.layer_scheme(scheme, t0)
            var_g = schemes.scheme_bias_variance(eff, self.geometry(t0))
            g.G[:] = draw(var_g, g.G.shape)
            g.gamma[:] = (draw(scheme.scale_param ** 2, g.gamma.shape)
                          if scheme.kind == schemes.SMALL_RANDOM else 0.0)

        if scheme.kind == schemes.CONST_EMBEDDING:
            for t in self.plain_w_targets:
                fan = self.mspec.layers[t].fan_in
                self.embeddings[f"emb.w{t}"].values[:] = fan ** -0.5
            for t in self.bias_targets:
                fan = self.mspec.layers[t].fan_in
                self.embeddings[f"emb.b{t}"].values[:] = fan ** -0.5
            for gi, g in enumerate(self.weight_groups):
                if isinstance(g, ChunkedHeadGroup):
                    vals = self.embeddings[f"emb.c{gi}"].values
                    for m, (t, _, _) in enumerate(g.index):
                        vals[m] = self.mspec.layers[t].fan_in ** -0.5
        return self

    def _initialize_chunked(self, gi, g, scheme, draw):
        # The shared output layer is an interior linear map: plain fan-in.
        # The per-chunk projections are the effective output layer and carry
        # the hyperfan variance of their target layer.
        k, n = g.plan.K, g.plan.n
        if scheme.kind == schemes.SMALL_RANDOM:
            var = scheme.scale_param ** 2
            g.H[:] = draw(var, g.H.shape)
            g.beta[:] = draw(var, g.beta.shape)
            g.proj[:] = draw(var, g.proj.shape)
            g.proj_bias[:] = draw(var, g.proj_bias.shape)
            return
        head_geom = FanGeometry(d_i=k * n * n, d_j=g.proj_dim, d_k=1)
        if scheme.kind in schemes.CLASSICAL_KINDS:
            var_h = schemes.classical_variance(scheme.kind, head_geom, relu_gain=False)
        elif scheme.kind == schemes.SCALED_OUTPUT:
            var_h = (schemes.classical_variance(schemes.FAN_IN, head_geom, False)
                     * scheme.scale_param ** 2)
        else:
            var_h = schemes.classical_variance(schemes.FAN_IN, head_geom, False)
        g.H[:] = draw(var_h, g.H.shape)
        g.beta[:] = 0.0
        for m, (t, _, _) in enumerate(g.index):
            eff = self.layer_scheme(scheme, t)
            geom = self.geometry(t)
            if scheme.kind in schemes.HYPERFAN_KINDS:
                var_p = schemes.scheme_weight_variance(eff, geom)
            elif scheme.kind in schemes.CLASSICAL_KINDS:
                var_p = schemes.classical_variance(
                    scheme.kind,
                    FanGeometry(d_i=g.proj_dim, d_j=self.hspec.embedding_dim, d_k=1),
                    eff.relu_gain)
            else:
                var_p = schemes.classical_variance(
                    schemes.FAN_IN,
                    FanGeometry(d_i=g.proj_dim, d_j=self.hspec.embedding_dim, d_k=1),
                    eff.relu_gain)
            g.proj[m] = draw(var_p, (g.proj_dim, self.hspec.embedding_dim))
        g.proj_bias[:] = 0.0

    # ---- generation -------------------------------------------------------

    def generate(self):
        """Produce all mainnet parameters plus the trace needed for backward."""
        params = zero_params(self.mspec)
        trace = GenTrace(w_targets=self.plain_w_targets, b_targets=self.bias_targets)

        if self.plain_w_targets:
            emb_w = np.stack([self.embeddings[f"emb.w{t}"].values
                              for t in self.plain_w_targets])
            trace.h_feats, trace.h_cache = self.trunk_h.forward(emb_w)
        for gi, g in enumerate(self.weight_groups):
            if isinstance(g, ChunkedHeadGroup):
                emb = self.embeddings[f"emb.c{gi}"].values
                alphas = np.einsum("mpd,md->mp", g.proj, emb) + g.proj_bias
                trace.chunk_alphas[gi] = alphas
                chunk_mat = alphas @ g.H.T + g.beta
                for t in g.targets:
                    params[t]["W"] = g.assemble(chunk_mat, t, self.mspec.layers[t])
            else:
                for t in g.targets:
                    feat = trace.h_feats[self._w_row[t]]
                    params[t]["W"] = (g.H @ feat + g.beta).reshape(g.weight_shape)

        if self.bias_targets:
            emb_b = np.stack([self.embeddings[f"emb.b{t}"].values
                              for t in self.bias_targets])
            trace.g_feats, trace.g_cache = self.trunk_g.forward(emb_b)
            for g in self.bias_groups:
                for t in g.targets:
                    feat = trace.g_feats[self._b_row[t]]
                    params[t]["b"] = g.G @ feat + g.gamma
        trace.params = params
        return params, trace

    def backward(self, trace: GenTrace, weight_grads, bias_grads=None):
        """Map mainnet parameter gradients to hypernet parameter gradients."""
        grads = {}
        feature_grads = {}

        dh_feats = (np.zeros_like(trace.h_feats)
                    if trace.h_feats is not None else None)
        for gi, g in enumerate(self.weight_groups):
            if isinstance(g, ChunkedHeadGroup):
                alphas = trace.chunk_alphas[gi]
                dcm = np.zeros((g.n_chunks, g.H.shape[0]), dtype=DTYPE)
                for t in g.targets:
                    lo, hi = g.layer_rows[t]
                    dcm[lo:hi] = g.disassemble(weight_grads[t], t, self.mspec.layers[t])
                grads[f"cg{gi}.H"] = dcm.T @ alphas
                grads[f"cg{gi}.beta"] = dcm.sum(axis=0)
                dalphas = dcm @ g.H
                emb = self.embeddings[f"emb.c{gi}"].values
                grads[f"cg{gi}.proj"] = np.einsum("mp,md->mpd", dalphas, emb)
                grads[f"cg{gi}.proj_bias"] = dalphas
                grads[f"emb.c{gi}"] = np.einsum("mpd,mp->md", g.proj, dalphas)
                for t in g.targets:
                    lo, hi = g.layer_rows[t]
                    feature_grads[("w", t)] = dalphas[lo:hi]
            else:
                if len(g.targets) == 1:
                    t = g.targets[0]
                    dflat = weight_grads[t].reshape(-1, 1)
                else:
                    dflat = np.stack([weight_grads[t].ravel() for t in g.targets], axis=1)
                gi_rows = [self._w_row[t] for t in g.targets]
                grads[f"wg{gi}.H"] = dflat @ trace.h_feats[gi_rows]
                grads[f"wg{gi}.beta"] = dflat.sum(axis=1)
                dfeat = (g.H.T @ dflat).T
                for i, t in enumerate(g.targets):
                    dh_feats[self._w_row[t]] += dfeat[i]
                    feature_grads[("w", t)] = dfeat[i]
        if dh_feats is not None:
            dws, dbs, demb = self.trunk_h.backward(trace.h_cache, dh_feats)
            for i, (dw, db) in enumerate(zip(dws, dbs)):
                grads[f"trunk_h.W{i}"] = dw
                grads[f"trunk_h.b{i}"] = db
            for t in self.plain_w_targets:
                grads[f"emb.w{t}"] = demb[self._w_row[t]]

        if self.bias_targets:
            if bias_grads is None:
                raise SpecError("bias gradients required: this hypernet generates biases")
            dg_feats = np.zeros_like(trace.g_feats)
            for gi, g in enumerate(self.bias_groups):
                db = np.stack([bias_grads[t] for t in g.targets], axis=1)
                rows = [self._b_row[t] for t in g.targets]
                grads[f"bg{gi}.G"] = db @ trace.g_feats[rows]
                grads[f"bg{gi}.gamma"] = db.sum(axis=1)
                dfeat = (g.G.T @ db).T
                for i, t in enumerate(g.targets):
                    dg_feats[self._b_row[t]] += dfeat[i]
                    feature_grads[("b", t)] = dfeat[i]
            trunk_name = "trunk_h" if self.trunk_g is self.trunk_h else "trunk_g"
            dws, dbs, demb = self.trunk_g.backward(trace.g_cache, dg_feats)
            for i, (dw, db) in enumerate(zip(dws, dbs)):
                key_w, key_b = f"{trunk_name}.W{i}", f"{trunk_name}.b{i}"
                grads[key_w] = grads.get(key_w, 0.0) + dw
                grads[key_b] = grads.get(key_b, 0.0) + db
            for t in self.bias_targets:
                grads[f"emb.b{t}"] = demb[self._b_row[t]]

        return HyperGrads(by_key=grads, head_feature_grads=feature_grads)


def init_hypernet(hspec, mspec, scheme, rng):
    """Build a hypernet for the mainnet spec and initialize it under the scheme."""
    net = Hypernet(mspec, hspec, rng.child(1))
    net.initialize(scheme, rng.child(2))
    return net


def gradient_shrink_factor(geom: FanGeometry):
    """Predicted Var(dL/d head features) / Var(dL/dW) under hyperfan-out.

    The head sums d_i * d_j * r weight-gradient terms scaled by Var(H) =
    1/(d_i * d_k * var_e1 * r), leaving d_j / (d_k * var_e1); gradients shrink
    on the way into the hypernet whenever the target fan-in exceeds the head
    width.
    """
    return geom.d_j / (geom.d_k * geom.var_e1)
