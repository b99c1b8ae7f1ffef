"""Example-side encoders that map raw inputs to a fixed vector.

Both text encoders run bidirectional LSTMs over token vectors.  Token
embeddings are inputs, not parameters: gradients stop at the vectors.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .aggregators import _LstmCell
from .errors import ConfigError, ContractError
from .seeding import make_rng


class SentenceEncoder:
    """BiLSTM with a two-layer soft attention over the hidden states.

    Scores are w_a . tanh(W_h h_i), softmax-normalized; the encoding is
    the attention-weighted sum of the bidirectional states, so output
    width is 2 * hidden_dim.  Tokens past `length` never enter the
    forward pass, which is what makes padding invisible.
    """

    def __init__(self, input_dim=300, hidden_dim=32, attn_dim=20, rng=None, name="sent"):
        if rng is None:
            rng = make_rng("init", name)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.output_dim = 2 * hidden_dim
        self.fwd = _LstmCell(input_dim, hidden_dim, rng, name=f"{name}/fwd")
        self.bwd = _LstmCell(input_dim, hidden_dim, rng, name=f"{name}/bwd")
        self.attn_hidden = ad.param((attn_dim, 2 * hidden_dim), rng, name=f"{name}/Wh")
        self.attn_out = ad.param((attn_dim,), rng, name=f"{name}/wa")

    def parameters(self):
        out = self.fwd.parameters()
        out.update(self.bwd.parameters())
        out[self.attn_hidden.name] = self.attn_hidden
        out[self.attn_out.name] = self.attn_out
        return out

    def encode(self, token_vectors, length=None):
        """Encode a token vector sequence; only the first `length` count."""
        if length is None:
            length = len(token_vectors)
        if length < 1 or length > len(token_vectors):
            raise ContractError(f"length {length} out of range for {len(token_vectors)} tokens")
        xs = [ad.constant(np.asarray(v)) for v in token_vectors[:length]]
        states = _bilstm_states(self.fwd, self.bwd, xs)
        scores = []
        for h in states:
            e = ad.tanh(ad.matmul(self.attn_hidden, h))
            scores.append(ad.matmul(self.attn_out, e))
        alpha = ad.softmax(ad.stack(scores))
        return ad.matmul(alpha, ad.stack(states))


def _bilstm_states(fwd, bwd, xs):
    forward = fwd.run_all(xs)
    backward = list(reversed(bwd.run_all(list(reversed(xs)))))
    return [ad.concat([f, b]) for f, b in zip(forward, backward)]


@dataclass
class MentionInput:
    """One typed-mention example: the span plus its two contexts.

    Vectors are plain arrays; `feature_vector` feeds the hand-feature
    slot when the encoder runs in "supplied" mode, `feature_ids` when it
    runs in "learned" mode.
    """

    mention: list
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    feature_vector: np.ndarray | None = None
    feature_ids: tuple = ()


class MentionEncoder:
    """Mention span + attentive context encoder.

    The mention vector is the token average.  One shared biLSTM runs
    over the left and the right context separately; position scores
    alpha_i = w_a . tanh(W_e h_i) are normalized by their literal sum
    over both contexts (not a softmax, so weights can be negative but
    always sum to 1).  The output is [context ; hand features ; span],
    width 2*hidden + feature_dim + input_dim.
    """

    def __init__(self, input_dim=300, hidden_dim=100, attn_dim=100, feature_dim=60,
                 feature_mode="zeros", num_feature_ids=None, window=10, rng=None, name="mention"):
        if feature_mode not in ("zeros", "supplied", "learned"):
            raise ConfigError(f"unknown feature mode {feature_mode!r}")
        if feature_mode == "learned" and not num_feature_ids:
            raise ConfigError("learned feature mode needs num_feature_ids")
        if rng is None:
            rng = make_rng("init", name)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.feature_mode = feature_mode
        self.window = window
        self.output_dim = 2 * hidden_dim + feature_dim + input_dim
        self.context = _LstmCell(input_dim, hidden_dim, rng, name=f"{name}/ctx")
        self.context_back = _LstmCell(input_dim, hidden_dim, rng, name=f"{name}/ctxb")
        self.attn_hidden = ad.param((attn_dim, 2 * hidden_dim), rng, name=f"{name}/We")
        self.attn_out = ad.param((attn_dim,), rng, name=f"{name}/wa")
        if feature_mode == "learned":
            self.feature_table = ad.param((num_feature_ids, feature_dim), rng, name=f"{name}/feat")
        else:
            self.feature_table = None

    def parameters(self):
        out = self.context.parameters()
        out.update(self.context_back.parameters())
        out[self.attn_hidden.name] = self.attn_hidden
        out[self.attn_out.name] = self.attn_out
        if self.feature_table is not None:
            out[self.feature_table.name] = self.feature_table
        return out

    def _context_states(self, tokens):
        xs = [ad.constant(np.asarray(v)) for v in tokens]
        return _bilstm_states(self.context, self.context_back, xs)

    def _feature_vector(self, x):
        if self.feature_mode == "zeros":
            return ad.constant(np.zeros(self.feature_dim))
        if self.feature_mode == "supplied":
            if x.feature_vector is None:
                raise ContractError("feature_mode='supplied' but example has no feature_vector")
            vec = np.asarray(x.feature_vector, dtype=np.float64)
            if vec.shape != (self.feature_dim,):
                raise ContractError(f"feature vector shape {vec.shape}, want ({self.feature_dim},)")
            return ad.constant(vec)
        if not x.feature_ids:
            return ad.constant(np.zeros(self.feature_dim))
        rows = [ad.row(self.feature_table, i) for i in x.feature_ids]
        return ad.mean(ad.stack(rows), axis=0) if len(rows) > 1 else rows[0]

    def encode(self, x):
        if not x.mention:
            raise ContractError("mention must have at least one token")
        # keep the window tokens nearest the span
        left = x.left[-self.window:] if self.window else list(x.left)
        right = x.right[:self.window] if self.window else list(x.right)
        if not left and not right:
            raise ContractError("both contexts empty; nothing to attend over")

        v_m = ad.mean(ad.stack([ad.constant(np.asarray(v)) for v in x.mention]), axis=0) \
            if len(x.mention) > 1 else ad.constant(np.asarray(x.mention[0]))

        states = []
        scores = []
        for side in (left, right):
            if not side:
                continue
            side_states = self._context_states(side)
            states.extend(side_states)
            for h in side_states:
                e = ad.tanh(ad.matmul(self.attn_hidden, h))
                scores.append(ad.matmul(self.attn_out, e))
        raw = ad.stack(scores)
        total = ad.sum(raw)
        weights = ad.divide(raw, total)
        v_c = ad.matmul(weights, ad.stack(states))
        v_f = self._feature_vector(x)
        return ad.concat([v_c, v_f, v_m])


class VectorEncoder:
    """Pass-through for examples that are already feature vectors."""

    def __init__(self, dim):
        self.input_dim = dim
        self.output_dim = dim

    def parameters(self):
        return {}

    def encode(self, vector):
        arr = np.asarray(vector, dtype=np.float64)
        if arr.shape != (self.output_dim,):
            raise ContractError(f"vector shape {arr.shape}, want ({self.output_dim},)")
        return ad.constant(arr)
