"""Graph aggregation layers and the stacked neighborhood forward pass.

Every layer follows the same AGGREGATE / COMBINE shape: pool the
neighbor representations into a single vector, then combine with the
node's own representation and apply a nonlinearity.  Four of the five
kinds are order-free over the neighbor multiset; to make that exact at
the bit level, neighbor tensors are put into a canonical order (sorted
by their raw bytes) before any float reduction, because float addition
is not associative.  The sequence aggregator is order-sensitive by
design and takes an explicit permutation instead.
"""

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, UnknownNodeError, UnknownRelationError
from .sampler import top_n
from .seeding import make_rng

ACTIVATIONS = {
    "relu": ad.relu,
    "leaky_relu": lambda t: ad.leaky_relu(t, 0.2),
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "identity": lambda t: t,
}


def _activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}") from None


def canonical_order(tensors):
    """Sort tensors by their value bytes; ties are identical values."""
    return sorted(tensors, key=lambda t: t.data.tobytes())


class MeanPoolLayer:
    """h_v = act(W * mean(N(v) union {v}))."""

    kind = "gcn"

    def __init__(self, in_dim, out_dim, activation="relu", rng=None, name="gcn"):
        if rng is None:
            rng = make_rng("init", name)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.act = _activation(activation)
        self.weight = ad.param((out_dim, in_dim), rng, name=f"{name}/W")
        self._name = name

    def parameters(self):
        return {self.weight.name: self.weight}

    def forward(self, self_feat, neighbors):
        members = [self_feat] + canonical_order(list(neighbors))
        pooled = ad.mean(ad.stack(members), axis=0)
        return self.act(ad.matmul(self.weight, pooled))


class AttentionPoolLayer:
    """Project members, softmax-score each against the self node, blend.

    Scores are leaky_relu(a . [h'_u ; h'_v]) with a fixed 0.2 slope on
    the scorer regardless of the output activation.
    """

    kind = "gat"

    def __init__(self, in_dim, out_dim, activation="relu", rng=None, name="gat"):
        if rng is None:
            rng = make_rng("init", name)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.act = _activation(activation)
        self.weight = ad.param((out_dim, in_dim), rng, name=f"{name}/W")
        self.attn = ad.param((2 * out_dim,), rng, name=f"{name}/a")
        self._name = name

    def parameters(self):
        return {self.weight.name: self.weight, self.attn.name: self.attn}

    def forward(self, self_feat, neighbors):
        members = [self_feat] + canonical_order(list(neighbors))
        projected = [ad.matmul(self.weight, m) for m in members]
        h_self = projected[0]
        scores = []
        for h in projected:
            e = ad.matmul(self.attn, ad.concat([h, h_self]))
            scores.append(ad.leaky_relu(e, 0.2))
        alpha = ad.softmax(ad.stack(scores))
        pooled = ad.matmul(alpha, ad.stack(projected))
        return self.act(pooled)


class RelationalMeanLayer:
    """Per-relation normalized sums through shared basis matrices.

    a_v = sum_r (1/c_vr) sum_b alpha_br V_b (sum_{u in N_r(v)} h_u)
    h_v = act(a_v + W_self h_v).  With num_bases == len(relations) and
    an identity coefficient matrix this reduces to independent
    per-relation weights.
    """

    kind = "rgcn"

    def __init__(self, in_dim, out_dim, relations, num_bases=1, activation="relu", rng=None, name="rgcn"):
        if rng is None:
            rng = make_rng("init", name)
        if num_bases < 1:
            raise ConfigError(f"num_bases must be >= 1, got {num_bases}")
        if not relations:
            raise ConfigError("rgcn layer needs at least one relation")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.relations = tuple(relations)
        self._rel_index = {r: i for i, r in enumerate(self.relations)}
        self.num_bases = num_bases
        self.act = _activation(activation)
        self.bases = [ad.param((out_dim, in_dim), rng, name=f"{name}/V{b}") for b in range(num_bases)]
        self.coeff = {
            r: ad.param((num_bases,), rng, name=f"{name}/coeff/{r}") for r in self.relations
        }
        self.self_weight = ad.param((out_dim, in_dim), rng, name=f"{name}/Wself")
        self._name = name

    def parameters(self):
        out = {t.name: t for t in self.bases}
        for t in self.coeff.values():
            out[t.name] = t
        out[self.self_weight.name] = self.self_weight
        return out

    def forward(self, self_feat, tagged_neighbors):
        """tagged_neighbors: iterable of (relation, tensor) pairs."""
        by_rel = {}
        for rel, feat in tagged_neighbors:
            if rel not in self._rel_index:
                raise UnknownRelationError(rel)
            by_rel.setdefault(rel, []).append(feat)
        agg = None
        for rel in self.relations:
            feats = by_rel.get(rel)
            if not feats:
                continue
            total = ad.sum(ad.stack(canonical_order(feats)), axis=0)
            normed = ad.scale(total, 1.0 / len(feats))
            coeff = self.coeff[rel]
            for b, basis in enumerate(self.bases):
                term = ad.multiply(ad.matmul(basis, normed), ad.element(coeff, b))
                agg = term if agg is None else ad.add(agg, term)
        combined = ad.matmul(self.self_weight, self_feat)
        if agg is not None:
            combined = ad.add(agg, combined)
        return self.act(combined)


class _LstmCell:
    """Plain LSTM cell with separate per-gate weights."""

    def __init__(self, input_dim, hidden_dim, rng, name):
        def w(gate, kind, shape):
            return ad.param(shape, rng, name=f"{name}/{kind}{gate}")

        self.hidden_dim = hidden_dim
        self.wx = {g: w(g, "Wx", (hidden_dim, input_dim)) for g in "ifgo"}
        self.wh = {g: w(g, "Wh", (hidden_dim, hidden_dim)) for g in "ifgo"}
        self.b = {g: ad.zeros_param((hidden_dim,), name=f"{name}/b{g}") for g in "ifgo"}

    def parameters(self):
        out = {}
        for group in (self.wx, self.wh, self.b):
            for t in group.values():
                out[t.name] = t
        return out

    def step(self, x, h, c):
        def gate(g):
            return ad.add(ad.add(ad.matmul(self.wx[g], x), ad.matmul(self.wh[g], h)), self.b[g])

        i = ad.sigmoid(gate("i"))
        f = ad.sigmoid(gate("f"))
        gg = ad.tanh(gate("g"))
        o = ad.sigmoid(gate("o"))
        c_new = ad.add(ad.multiply(f, c), ad.multiply(i, gg))
        h_new = ad.multiply(o, ad.tanh(c_new))
        return h_new, c_new

    def run(self, sequence):
        """Final hidden state over the sequence (zero initial state)."""
        h = ad.constant(np.zeros(self.hidden_dim))
        c = ad.constant(np.zeros(self.hidden_dim))
        for x in sequence:
            h, c = self.step(x, h, c)
        return h

    def run_all(self, sequence):
        """All hidden states, in order."""
        h = ad.constant(np.zeros(self.hidden_dim))
        c = ad.constant(np.zeros(self.hidden_dim))
        states = []
        for x in sequence:
            h, c = self.step(x, h, c)
            states.append(h)
        return states


class SequencePoolLayer:
    """Run an LSTM over a permutation of N(v) union {v}, keep the last state.

    The hidden size equals the input size.  The combine step is
    act(W [h_v ; a_v]) where a_v is the final LSTM state, so with fresh
    permutations per call the layer is intentionally order-sensitive.
    """

    kind = "lstm"

    def __init__(self, in_dim, out_dim, activation="relu", rng=None, name="lstm", combine_self=True):
        if rng is None:
            rng = make_rng("init", name)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.act = _activation(activation)
        self.combine_self = combine_self
        self.cell = _LstmCell(in_dim, in_dim, rng, name=f"{name}/cell")
        width = 2 * in_dim if combine_self else in_dim
        self.weight = ad.param((out_dim, width), rng, name=f"{name}/W")
        self._name = name

    def parameters(self):
        out = self.cell.parameters()
        out[self.weight.name] = self.weight
        return out

    def forward(self, self_feat, neighbors, permutation=None):
        """`permutation` is an index order or an int seed; required."""
        members = list(neighbors) + [self_feat]
        if permutation is None:
            raise ContractError("sequence aggregator needs an explicit permutation or seed")
        if isinstance(permutation, (int, np.integer)):
            order = make_rng("lstm-perm", permutation).permutation(len(members))
        else:
            order = list(permutation)
            if sorted(order) != list(range(len(members))):
                raise ContractError(f"permutation {order} is not a permutation of {len(members)} items")
        sequence = [members[i] for i in order]
        a_v = self.cell.run(sequence)
        if self.combine_self:
            combined = ad.concat([self_feat, a_v])
        else:
            combined = a_v
        return self.act(ad.matmul(self.weight, combined))


class TransformerPoolLayer:
    """One self-attention block over the member set, mean-pooled.

    Members are projected to ``proj_dim`` (half the input width unless
    set), run through a single pre-norm attention + feedforward block
    with residuals (no positional encoding, so the member set stays
    unordered), projected back up and mean-pooled.  A projection
    narrower than the informative feature span bottlenecks what the
    block can pass through, so wide-feature problems should set it
    explicitly.  The feedforward hidden width equals the projected
    width.  There is exactly one attention block no matter how many
    layers are stacked above or below.
    """

    kind = "transformer"

    def __init__(self, in_dim, out_dim, activation="relu", rng=None, name="transformer",
                 combine_self=False, proj_dim=None):
        if rng is None:
            rng = make_rng("init", name)
        if proj_dim is None:
            proj_dim = max(1, in_dim // 2)
        if proj_dim < 1:
            raise ConfigError(f"proj_dim must be >= 1, got {proj_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.act = _activation(activation)
        self.combine_self = combine_self
        proj = proj_dim
        self.proj_dim = proj
        self.p_in = ad.param((proj, in_dim), rng, name=f"{name}/Pin")
        self.wq = ad.param((proj, proj), rng, name=f"{name}/Wq")
        self.wk = ad.param((proj, proj), rng, name=f"{name}/Wk")
        self.wv = ad.param((proj, proj), rng, name=f"{name}/Wv")
        self.wo = ad.param((proj, proj), rng, name=f"{name}/Wo")
        self.ln1_g = ad.Tensor(np.ones(proj), requires_grad=True, name=f"{name}/ln1g")
        self.ln1_b = ad.zeros_param((proj,), name=f"{name}/ln1b")
        self.ln2_g = ad.Tensor(np.ones(proj), requires_grad=True, name=f"{name}/ln2g")
        self.ln2_b = ad.zeros_param((proj,), name=f"{name}/ln2b")
        self.ff1 = ad.param((proj, proj), rng, name=f"{name}/F1")
        self.ff1_b = ad.zeros_param((proj,), name=f"{name}/F1b")
        self.ff2 = ad.param((proj, proj), rng, name=f"{name}/F2")
        self.ff2_b = ad.zeros_param((proj,), name=f"{name}/F2b")
        self.p_out = ad.param((in_dim, proj), rng, name=f"{name}/Pout")
        width = 2 * in_dim if combine_self else in_dim
        self.weight = ad.param((out_dim, width), rng, name=f"{name}/W")
        self._name = name

    def parameters(self):
        tensors = [
            self.p_in, self.wq, self.wk, self.wv, self.wo,
            self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b,
            self.ff1, self.ff1_b, self.ff2, self.ff2_b,
            self.p_out, self.weight,
        ]
        return {t.name: t for t in tensors}

    def forward(self, self_feat, neighbors):
        members = [self_feat] + canonical_order(list(neighbors))
        x = ad.matmul(ad.stack(members), ad.transpose(self.p_in))
        n1 = ad.layer_norm(x, self.ln1_g, self.ln1_b)
        q = ad.matmul(n1, ad.transpose(self.wq))
        k = ad.matmul(n1, ad.transpose(self.wk))
        v = ad.matmul(n1, ad.transpose(self.wv))
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(self.proj_dim))
        attn = ad.matmul(ad.softmax(scores, axis=1), v)
        x = ad.add(x, ad.matmul(attn, ad.transpose(self.wo)))
        n2 = ad.layer_norm(x, self.ln2_g, self.ln2_b)
        ff = ad.add(ad.matmul(n2, ad.transpose(self.ff1)), self.ff1_b)
        ff = ad.add(ad.matmul(ad.relu(ff), ad.transpose(self.ff2)), self.ff2_b)
        x = ad.add(x, ff)
        back = ad.matmul(x, ad.transpose(self.p_out))
        a_v = ad.mean(back, axis=0)
        if self.combine_self:
            combined = ad.concat([self_feat, a_v])
        else:
            combined = a_v
        return self.act(ad.matmul(self.weight, combined))


LAYER_KINDS = {
    "gcn": MeanPoolLayer,
    "gat": AttentionPoolLayer,
    "rgcn": RelationalMeanLayer,
    "lstm": SequencePoolLayer,
    "transformer": TransformerPoolLayer,
}


def make_layer(kind, in_dim, out_dim, activation="relu", rng=None, name=None, **kwargs):
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ConfigError(f"unknown aggregator kind {kind!r}") from None
    return cls(in_dim, out_dim, activation=activation, rng=rng, name=name or kind, **kwargs)


class GnnStack:
    """Layers ordered input-side first: layers[0] consumes raw features.

    hop_limits[d] caps how many ranked neighbors a node first reached at
    depth d may expand; len(hop_limits) == len(layers).
    """

    def __init__(self, layers, hop_limits):
        layers = list(layers)
        hop_limits = list(hop_limits)
        if not layers:
            raise ConfigError("stack needs at least one layer")
        if len(layers) != len(hop_limits):
            raise ConfigError(
                f"{len(layers)} layers but {len(hop_limits)} hop limits"
            )
        # 0 is a valid cap: nodes first reached at that depth become leaves
        if any(n < 0 for n in hop_limits):
            raise ConfigError(f"hop limits must be >= 0, got {hop_limits}")
        for shallow, deep in zip(layers, layers[1:]):
            if deep.in_dim != shallow.out_dim:
                raise ConfigError(
                    f"layer dims do not chain: {shallow.out_dim} -> {deep.in_dim}"
                )
        self.layers = layers
        self.hop_limits = hop_limits

    @property
    def depth(self):
        return len(self.layers)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def parameters(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, t in layer.parameters().items():
                out[f"layer{i}/{name}"] = t
        return out


def gnn_forward(stack, graph, features, hits, node, mode="eval", seed=0, rng=None):
    """Embed `node` from its truncated k-hop neighborhood.

    The sampled neighborhood is fixed per node at the shallowest depth
    where it is reached: top hop_limits[d] neighbors by hit probability.
    Representation levels are then evaluated bottom-up over that DAG, so
    the output depends only on the truncated k-hop neighborhood.

    Args:
        hits: callable node -> HitTable (see sampler.HitSource).
        mode: "train" draws a fresh sequence permutation per call from
            `rng`; "eval" derives it from (seed, node id) so repeated
            evaluation is bitwise stable.
        rng: train-mode permutation stream; defaults to a stream seeded
            by `seed`.
    """
    if node not in graph:
        raise UnknownNodeError(node)
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and rng is None:
        rng = make_rng("gnn-train", seed)

    k = stack.depth

    # fix each node's truncated neighbor list at the shallowest depth
    # where it is reached; nodes first reached at depth k stay leaves
    sampled = {}
    depth_of = {node: 0}
    frontier = [node]
    for depth in range(k):
        nxt = []
        for v in frontier:
            sampled[v] = top_n(hits(v), stack.hop_limits[depth])
            for u in sampled[v]:
                if u not in depth_of:
                    depth_of[u] = depth + 1
                    if depth + 1 < k:
                        nxt.append(u)
        frontier = nxt

    reps = {}
    for v in depth_of:
        reps[(0, v)] = ad.constant(np.asarray(features[v]))

    # a node first reached at depth d is needed up to level k - d; its
    # sampled neighbors then always have the level below already built
    for level in range(1, k + 1):
        layer = stack.layers[level - 1]
        for v, neigh_ids in sampled.items():
            if level > k - depth_of[v]:
                continue
            prev_self = reps[(level - 1, v)]
            prev_neighbors = [reps[(level - 1, u)] for u in neigh_ids]
            if layer.kind == "rgcn":
                tagged = []
                for u, feat in zip(neigh_ids, prev_neighbors):
                    for rel in graph.relations_between(v, u):
                        tagged.append((rel, feat))
                reps[(level, v)] = layer.forward(prev_self, tagged)
            elif layer.kind == "lstm":
                if mode == "train":
                    perm = rng.permutation(len(neigh_ids) + 1)
                else:
                    perm = make_rng("lstm-perm", seed, v).permutation(len(neigh_ids) + 1)
                reps[(level, v)] = layer.forward(prev_self, prev_neighbors, permutation=list(perm))
            else:
                reps[(level, v)] = layer.forward(prev_self, prev_neighbors)

    return reps[(k, node)]
