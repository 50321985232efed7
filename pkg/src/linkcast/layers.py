"""Message-passing layers, recurrent cells, and the pairwise score head.

All layers operate on edge *records*: when a pair exchanged several messages
in one step, every record contributes its own attention term and message.
Weights are plain Parameters created from a seeded generator; layers hold no
other state, so a built layer can be shared read-only across threads.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

LEAKY_SLOPE = 0.2


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))


def _param(prefix: str, name: str, data) -> ad.Parameter:
    return ad.Parameter(f"{prefix}.{name}", data)


class GraphTransformerLayer:
    """Scaled dot-product attention over incoming records, edge-aware.

    Per head, node i keeps a transformed copy of itself and adds an
    attention-weighted sum of (transformed neighbor + transformed edge
    features) over every record arriving at i; scores are query.key dot
    products scaled by 1/sqrt(head width).  Head outputs are concatenated and
    linearly projected to the output width.
    """

    kind = "gtc"

    def __init__(self, prefix: str, in_dim: int, edge_dim: int, hidden: int, heads: int,
                 out_dim: int, rng: np.random.Generator):
        if hidden % heads:
            raise ValueError(f"hidden width {hidden} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = hidden // heads
        self.w_self = _param(prefix, "w_self", glorot(rng, in_dim, hidden))
        self.w_msg = _param(prefix, "w_msg", glorot(rng, in_dim, hidden))
        self.w_edge_msg = _param(prefix, "w_edge_msg", glorot(rng, edge_dim, hidden))
        self.w_query = _param(prefix, "w_query", glorot(rng, in_dim, hidden))
        self.w_key = _param(prefix, "w_key", glorot(rng, in_dim, hidden))
        self.w_edge_key = _param(prefix, "w_edge_key", glorot(rng, edge_dim, hidden))
        self.w_out = _param(prefix, "w_out", glorot(rng, hidden, out_dim))
        self.b_out = _param(prefix, "b_out", np.zeros(out_dim))

    def parameters(self) -> list[ad.Parameter]:
        return [self.w_self, self.w_msg, self.w_edge_msg, self.w_query, self.w_key,
                self.w_edge_key, self.w_out, self.b_out]

    def __call__(self, x: ad.Tensor, src: np.ndarray, dst: np.ndarray, efeat: ad.Tensor,
                 return_attention: bool = False):
        n = x.data.shape[0]
        kept = ad.matmul(x, self.w_self)
        if src.size:
            query = ad.gather_rows(ad.matmul(x, self.w_query), dst)
            key = ad.add(ad.gather_rows(ad.matmul(x, self.w_key), src),
                         ad.matmul(efeat, self.w_edge_key))
            scores = ad.scale(ad.block_sum_cols(ad.mul(query, key), self.heads),
                              1.0 / np.sqrt(self.head_dim))
            alpha = ad.segment_softmax(scores, dst, n)
            msg = ad.add(ad.gather_rows(ad.matmul(x, self.w_msg), src),
                         ad.matmul(efeat, self.w_edge_msg))
            weighted = ad.mul(msg, ad.expand_cols(alpha, self.head_dim))
            combined = ad.add(kept, ad.segment_sum(weighted, dst, n))
        else:
            alpha = None
            combined = kept
        out = ad.add(ad.matmul(combined, self.w_out), self.b_out)
        if return_attention:
            return out, (alpha.data if alpha is not None else np.zeros((0, self.heads)))
        return out


class EdgeConditionedConvLayer:
    """Graph convolution whose per-channel filter is generated from edge features.

    message = (edge_filter) * (W x_src), mean-aggregated over records arriving
    at each node, plus a transformed self term.  A zero filter network mutes
    every message, leaving only the self path.
    """

    kind = "gcn"

    def __init__(self, prefix: str, in_dim: int, edge_dim: int, hidden: int, heads: int,
                 out_dim: int, rng: np.random.Generator):
        del heads  # convolution variant is single-headed
        self.w_self = _param(prefix, "w_self", glorot(rng, in_dim, out_dim))
        self.w_msg = _param(prefix, "w_msg", glorot(rng, in_dim, out_dim))
        self.w_filter = _param(prefix, "w_filter", glorot(rng, edge_dim, out_dim))
        self.b_filter = _param(prefix, "b_filter", np.zeros(out_dim))
        self.b_out = _param(prefix, "b_out", np.zeros(out_dim))

    def parameters(self) -> list[ad.Parameter]:
        return [self.w_self, self.w_msg, self.w_filter, self.b_filter, self.b_out]

    def __call__(self, x: ad.Tensor, src: np.ndarray, dst: np.ndarray, efeat: ad.Tensor,
                 return_attention: bool = False):
        n = x.data.shape[0]
        kept = ad.matmul(x, self.w_self)
        if src.size:
            filt = ad.add(ad.matmul(efeat, self.w_filter), self.b_filter)
            msg = ad.mul(ad.gather_rows(ad.matmul(x, self.w_msg), src), filt)
            total = ad.segment_sum(msg, dst, n)
            counts = np.bincount(dst, minlength=n).astype(np.float64)
            inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
            mean = ad.mul(total, ad.Tensor(inv.reshape(n, 1)))
            combined = ad.add(kept, mean)
        else:
            combined = kept
        out = ad.add(combined, self.b_out)
        if return_attention:
            return out, np.zeros((len(src), 1))
        return out


class GraphAttentionLayer:
    """Additive attention: score = leaky_relu(a . [W x_i || W x_j || W_e e_ij]).

    Edge features enter the score only; messages are the transformed sender
    states, softmax-weighted per receiving node and head.
    """

    kind = "gat"

    def __init__(self, prefix: str, in_dim: int, edge_dim: int, hidden: int, heads: int,
                 out_dim: int, rng: np.random.Generator, use_edges: bool = True):
        if hidden % heads:
            raise ValueError(f"hidden width {hidden} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = hidden // heads
        self.use_edges = use_edges
        self.w = _param(prefix, "w", glorot(rng, in_dim, hidden))
        self.w_edge = _param(prefix, "w_edge", glorot(rng, edge_dim, hidden))
        self.a_dst = _param(prefix, "a_dst", glorot(rng, hidden, 1, shape=(hidden,)))
        self.a_src = _param(prefix, "a_src", glorot(rng, hidden, 1, shape=(hidden,)))
        self.a_edge = _param(prefix, "a_edge", glorot(rng, hidden, 1, shape=(hidden,)))
        self.w_out = _param(prefix, "w_out", glorot(rng, hidden, out_dim))
        self.b_out = _param(prefix, "b_out", np.zeros(out_dim))

    def parameters(self) -> list[ad.Parameter]:
        return [self.w, self.w_edge, self.a_dst, self.a_src, self.a_edge, self.w_out, self.b_out]

    def __call__(self, x: ad.Tensor, src: np.ndarray, dst: np.ndarray, efeat: ad.Tensor,
                 return_attention: bool = False):
        n = x.data.shape[0]
        if src.size:
            wx = ad.matmul(x, self.w)
            parts = ad.add(ad.mul(ad.gather_rows(wx, dst), self.a_dst),
                           ad.mul(ad.gather_rows(wx, src), self.a_src))
            if self.use_edges:
                parts = ad.add(parts, ad.mul(ad.matmul(efeat, self.w_edge), self.a_edge))
            scores = ad.leaky_relu(ad.block_sum_cols(parts, self.heads), LEAKY_SLOPE)
            alpha = ad.segment_softmax(scores, dst, n)
            weighted = ad.mul(ad.gather_rows(wx, src), ad.expand_cols(alpha, self.head_dim))
            combined = ad.segment_sum(weighted, dst, n)
        else:
            alpha = None
            combined = ad.scale(ad.matmul(x, self.w), 0.0)
        out = ad.add(ad.matmul(combined, self.w_out), self.b_out)
        if return_attention:
            return out, (alpha.data if alpha is not None else np.zeros((0, self.heads)))
        return out


class GraphAttentionV2Layer:
    """Attention with the nonlinearity inside: score = a . leaky_relu(W [x_i || x_j || e])."""

    kind = "gatv2"

    def __init__(self, prefix: str, in_dim: int, edge_dim: int, hidden: int, heads: int,
                 out_dim: int, rng: np.random.Generator, use_edges: bool = True):
        if hidden % heads:
            raise ValueError(f"hidden width {hidden} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = hidden // heads
        self.use_edges = use_edges
        score_in = 2 * in_dim + (edge_dim if use_edges else 0)
        self.w_score = _param(prefix, "w_score", glorot(rng, score_in, hidden))
        self.a = _param(prefix, "a", glorot(rng, hidden, 1, shape=(hidden,)))
        self.w_msg = _param(prefix, "w_msg", glorot(rng, in_dim, hidden))
        self.w_out = _param(prefix, "w_out", glorot(rng, hidden, out_dim))
        self.b_out = _param(prefix, "b_out", np.zeros(out_dim))

    def parameters(self) -> list[ad.Parameter]:
        return [self.w_score, self.a, self.w_msg, self.w_out, self.b_out]

    def __call__(self, x: ad.Tensor, src: np.ndarray, dst: np.ndarray, efeat: ad.Tensor,
                 return_attention: bool = False):
        n = x.data.shape[0]
        if src.size:
            stacked = ad.concat(ad.gather_rows(x, dst), ad.gather_rows(x, src), axis=1)
            if self.use_edges:
                stacked = ad.concat(stacked, efeat, axis=1)
            hidden = ad.leaky_relu(ad.matmul(stacked, self.w_score), LEAKY_SLOPE)
            scores = ad.block_sum_cols(ad.mul(hidden, self.a), self.heads)
            alpha = ad.segment_softmax(scores, dst, n)
            weighted = ad.mul(ad.gather_rows(ad.matmul(x, self.w_msg), src),
                              ad.expand_cols(alpha, self.head_dim))
            combined = ad.segment_sum(weighted, dst, n)
        else:
            alpha = None
            combined = ad.scale(ad.matmul(x, self.w_msg), 0.0)
        out = ad.add(ad.matmul(combined, self.w_out), self.b_out)
        if return_attention:
            return out, (alpha.data if alpha is not None else np.zeros((0, self.heads)))
        return out


SPATIAL_LAYER_KINDS = {
    "gtc": GraphTransformerLayer,
    "gcn": EdgeConditionedConvLayer,
    "gat": GraphAttentionLayer,
    "gatv2": GraphAttentionV2Layer,
}


def make_spatial_layer(kind: str, prefix: str, in_dim: int, edge_dim: int, hidden: int,
                       heads: int, out_dim: int, rng: np.random.Generator, **kwargs):
    try:
        cls = SPATIAL_LAYER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown spatial encoder kind {kind!r}; choose from "
                         f"{sorted(SPATIAL_LAYER_KINDS)}") from None
    return cls(prefix, in_dim, edge_dim, hidden, heads, out_dim, rng, **kwargs)


class LSTMCell:
    """Gated recurrence: f,i,o = sigma(.), g = tanh(.), c' = f*c + i*g, h' = o*tanh(c')."""

    def __init__(self, prefix: str, in_dim: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.gates = {}
        for gate in ("f", "i", "o", "g"):
            self.gates[gate] = (
                _param(prefix, f"w_{gate}", glorot(rng, in_dim, hidden)),
                _param(prefix, f"u_{gate}", glorot(rng, hidden, hidden)),
                _param(prefix, f"b_{gate}", np.zeros(hidden)),
            )

    def parameters(self) -> list[ad.Parameter]:
        return [p for triple in self.gates.values() for p in triple]

    def init_state(self, rows: int) -> tuple[ad.Tensor, ad.Tensor]:
        return ad.Tensor(np.zeros((rows, self.hidden))), ad.Tensor(np.zeros((rows, self.hidden)))

    def _gate(self, name: str, x: ad.Tensor, h: ad.Tensor) -> ad.Tensor:
        w, u, b = self.gates[name]
        return ad.affine(x, w, h, u, b)

    def __call__(self, x: ad.Tensor, h: ad.Tensor, c: ad.Tensor):
        forget = ad.sigmoid(self._gate("f", x, h))
        intake = ad.sigmoid(self._gate("i", x, h))
        output = ad.sigmoid(self._gate("o", x, h))
        candidate = ad.tanh(self._gate("g", x, h))
        c_next = ad.add(ad.mul(forget, c), ad.mul(intake, candidate))
        h_next = ad.mul(output, ad.tanh(c_next))
        return h_next, c_next


class GRUCell:
    """z/r gates plus candidate: h' = (1-z)*h + z*tanh(W x + U (r*h) + b)."""

    def __init__(self, prefix: str, in_dim: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w_z = _param(prefix, "w_z", glorot(rng, in_dim, hidden))
        self.u_z = _param(prefix, "u_z", glorot(rng, hidden, hidden))
        self.b_z = _param(prefix, "b_z", np.zeros(hidden))
        self.w_r = _param(prefix, "w_r", glorot(rng, in_dim, hidden))
        self.u_r = _param(prefix, "u_r", glorot(rng, hidden, hidden))
        self.b_r = _param(prefix, "b_r", np.zeros(hidden))
        self.w_h = _param(prefix, "w_h", glorot(rng, in_dim, hidden))
        self.u_h = _param(prefix, "u_h", glorot(rng, hidden, hidden))
        self.b_h = _param(prefix, "b_h", np.zeros(hidden))

    def parameters(self) -> list[ad.Parameter]:
        return [self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r,
                self.w_h, self.u_h, self.b_h]

    def init_state(self, rows: int) -> tuple[ad.Tensor, None]:
        return ad.Tensor(np.zeros((rows, self.hidden))), None

    def __call__(self, x: ad.Tensor, h: ad.Tensor, c=None):
        update = ad.sigmoid(ad.affine(x, self.w_z, h, self.u_z, self.b_z))
        reset = ad.sigmoid(ad.affine(x, self.w_r, h, self.u_r, self.b_r))
        candidate = ad.tanh(ad.affine(x, self.w_h, ad.mul(reset, h), self.u_h, self.b_h))
        ones = ad.Tensor(np.ones_like(update.data))
        keep = ad.add(ones, ad.scale(update, -1.0))
        h_next = ad.add(ad.mul(keep, h), ad.mul(update, candidate))
        return h_next, None


RECURRENT_CELL_KINDS = {"lstm": LSTMCell, "gru": GRUCell}


class MLP:
    """Dense stack with leaky-relu hidden activations; the head stays linear."""

    def __init__(self, prefix: str, in_dim: int, hidden: tuple[int, ...], out_dim: int,
                 rng: np.random.Generator):
        dims = [in_dim, *hidden, out_dim]
        self.weights = []
        self.biases = []
        for k in range(len(dims) - 1):
            self.weights.append(_param(prefix, f"w{k}", glorot(rng, dims[k], dims[k + 1])))
            self.biases.append(_param(prefix, f"b{k}", np.zeros(dims[k + 1])))

    def parameters(self) -> list[ad.Parameter]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def __call__(self, x: ad.Tensor, dropout_masks: list[np.ndarray] | None = None) -> ad.Tensor:
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = ad.add(ad.matmul(x, w), b)
            if k < last:
                x = ad.leaky_relu(x, LEAKY_SLOPE)
                if dropout_masks is not None:
                    x = ad.dropout(x, dropout_masks[k])
        return x
