"""Edge-enhanced bidirectional GCN classifier.

Pipeline for one sentence::

    ids -> embeddings -> Bi-LSTM ----------------------> H_ctx --+--> retrieval attention
                      \\-> transformer encoder -> Z    |          |           |
                                                       v          |           v
                       adjacency -> L x Bi-GCN(H_ctx) -> aspect mask        fuse(H_ctx, alpha, Z)
                                                                              -> classifier

Widths: embeddings ``d_w`` (= transformer ``d_model``), Bi-LSTM and every
GCN layer ``2*d_h``, classifier ``2*d_h -> 3``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor, ShapeError
from .corpus import Example, Vocabulary
from .syntax import SdiTable, off_diagonal_degree, sdi_adjacency

N_CLASSES = 3


@dataclass
class ModelConfig:
    d_w: int = 300
    d_h: int = 300
    gcn_layers: int = 3
    transformer_blocks: int = 1
    heads: int = 6
    ffn_width: int = 600
    dropout: float = 0.3
    no_dependency: bool = False
    no_edge_weight: bool = False
    no_bidirectional: bool = False
    seed: int = 0
    init_bound: float = 0.01

    def __post_init__(self):
        if self.gcn_layers < 1:
            raise ValueError("gcn_layers must be >= 1")
        if self.transformer_blocks < 0:
            raise ValueError("transformer_blocks must be >= 0")
        if self.heads < 1 or self.d_w % self.heads:
            raise ValueError(f"heads={self.heads} must divide d_w={self.d_w}")
        if self.d_w % 2:
            raise ValueError("d_w must be even for sinusoidal positions")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.d_w, self.d_h, self.ffn_width) < 1 or self.init_bound <= 0:
            raise ValueError("widths and init_bound must be positive")

    @property
    def adjacency_mode(self) -> str:
        if self.no_dependency:
            return "identity"
        if self.no_edge_weight:
            return "binary"
        return "sdi"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


class ModelParams:
    """Named trainable tensors in a fixed order."""

    def __init__(self, tensors: dict[str, DiffTensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name) -> DiffTensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def __len__(self):
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def list(self) -> list[DiffTensor]:
        return list(self.tensors.values())

    def weight_matrices(self) -> list[DiffTensor]:
        """2-D weights that carry the L2 penalty (biases, norms and the lookup table excluded)."""
        return [t for name, t in self.tensors.items()
                if t.data.ndim == 2 and name != "embedding"]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for name, t in self.tensors.items():
            if state[name].shape != t.data.shape:
                raise ShapeError(f"{name}: stored shape {state[name].shape} != {t.data.shape}")
            t.data = np.array(state[name], dtype=np.float64)
            t.grad = None

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray]) -> "ModelParams":
        return cls({name: ad.parameter(arr, name) for name, arr in state.items()})


def init_params(config: ModelConfig, embeddings: np.ndarray,
                rng: np.random.Generator | None = None) -> ModelParams:
    """Uniform(-init_bound, init_bound) weights; layer-norm gains start at 1, their biases at 0."""
    if embeddings.shape[1] != config.d_w:
        raise ShapeError(f"embedding width {embeddings.shape[1]} != d_w {config.d_w}")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    bound = config.init_bound
    shapes = {}
    d_w, d_h, width = config.d_w, config.d_h, 2 * config.d_h
    for side in ("fwd", "bwd"):
        shapes[f"lstm.{side}.W"] = (d_w, 4 * d_h)
        shapes[f"lstm.{side}.U"] = (d_h, 4 * d_h)
        shapes[f"lstm.{side}.b"] = (4 * d_h,)
    for k in range(config.transformer_blocks):
        p = f"tf{k}."
        for name in ("W_q", "W_k", "W_v", "W_o"):
            shapes[p + name] = (d_w, d_w)
        shapes[p + "b_o"] = (d_w,)
        shapes[p + "ln1.gain"] = (d_w,)
        shapes[p + "ln1.bias"] = (d_w,)
        shapes[p + "ff1.W"] = (d_w, config.ffn_width)
        shapes[p + "ff1.b"] = (config.ffn_width,)
        shapes[p + "ff2.W"] = (config.ffn_width, d_w)
        shapes[p + "ff2.b"] = (d_w,)
        shapes[p + "ln2.gain"] = (d_w,)
        shapes[p + "ln2.bias"] = (d_w,)
    fan_in = width if config.no_bidirectional else 2 * width
    for layer in range(config.gcn_layers):
        shapes[f"gcn{layer}.W"] = (fan_in, width)
        shapes[f"gcn{layer}.b"] = (width,)
    shapes["proj.W"] = (d_w, width)
    shapes["cls.W"] = (width, N_CLASSES)
    shapes["cls.b"] = (N_CLASSES,)

    tensors = {"embedding": ad.parameter(embeddings, "embedding")}
    for name, shape in shapes.items():
        if name.endswith(".gain"):
            value = np.ones(shape)
        elif name.endswith("ln1.bias") or name.endswith("ln2.bias"):
            value = np.zeros(shape)
        else:
            value = rng.uniform(-bound, bound, size=shape)
        tensors[name] = ad.parameter(value, name)
    return ModelParams(tensors)


# --------------------------------------------------------------------------
# building blocks


def embed_tokens(ids: np.ndarray, embedding: DiffTensor) -> DiffTensor:
    return ad.gather_rows(embedding, ids)


def dropout(x: DiffTensor, rate: float, rng: np.random.Generator) -> DiffTensor:
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return ad.mul(x, ad.constant(keep))


def lstm_direction(E: DiffTensor, W, U, b, reverse=False) -> DiffTensor:
    return ad.lstm(ad.add(ad.matmul(E, W), b), U, reverse=reverse)


def bilstm_encode(E: DiffTensor, params: ModelParams, prefix: str = "lstm") -> DiffTensor:
    """Left-to-right and right-to-left passes from zero state, concatenated per position."""
    fwd = lstm_direction(E, params[f"{prefix}.fwd.W"], params[f"{prefix}.fwd.U"],
                         params[f"{prefix}.fwd.b"])
    bwd = lstm_direction(E, params[f"{prefix}.bwd.W"], params[f"{prefix}.bwd.U"],
                         params[f"{prefix}.bwd.b"], reverse=True)
    return ad.concat([fwd, bwd])


def positional_encoding(n: int, d_model: int) -> np.ndarray:
    if d_model % 2:
        raise ValueError(f"d_model must be even, got {d_model}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    rates = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    P = np.empty((n, d_model))
    P[:, 0::2] = np.sin(pos / rates)
    P[:, 1::2] = np.cos(pos / rates)
    return P


def scaled_dot_attention(Q: DiffTensor, K: DiffTensor, V: DiffTensor) -> DiffTensor:
    if Q.shape[-1] != K.shape[-1] or K.shape[0] != V.shape[0]:
        raise ShapeError(f"attention: Q {Q.shape}, K {K.shape}, V {V.shape} do not conform")
    scores = ad.scale(ad.matmul(Q, ad.transpose(K)), 1.0 / np.sqrt(Q.shape[-1]))
    return ad.matmul(ad.softmax(scores), V)


def attention_weights(Q: np.ndarray, K: np.ndarray) -> np.ndarray:
    return ad.softmax_array(Q @ K.T / np.sqrt(Q.shape[-1]))


def multi_head_attention(X: DiffTensor, W_q, W_k, W_v, W_o, b_o, heads: int) -> DiffTensor:
    d_model = X.shape[-1]
    if heads < 1 or d_model % heads:
        raise ValueError(f"{heads} heads do not divide d_model={d_model}")
    d_k = d_model // heads
    Q, K, V = ad.matmul(X, W_q), ad.matmul(X, W_k), ad.matmul(X, W_v)
    outs = []
    for h in range(heads):
        lo, hi = h * d_k, (h + 1) * d_k
        outs.append(scaled_dot_attention(ad.slice_last(Q, lo, hi), ad.slice_last(K, lo, hi),
                                         ad.slice_last(V, lo, hi)))
    joined = outs[0] if heads == 1 else ad.concat(outs)
    return ad.add(ad.matmul(joined, W_o), b_o)


def transformer_block(X: DiffTensor, params: ModelParams, prefix: str, heads: int) -> DiffTensor:
    p = params
    att = multi_head_attention(X, p[prefix + "W_q"], p[prefix + "W_k"], p[prefix + "W_v"],
                               p[prefix + "W_o"], p[prefix + "b_o"], heads)
    X = ad.layer_norm(ad.add(X, att), p[prefix + "ln1.gain"], p[prefix + "ln1.bias"])
    hidden = ad.relu(ad.add(ad.matmul(X, p[prefix + "ff1.W"]), p[prefix + "ff1.b"]))
    ff = ad.add(ad.matmul(hidden, p[prefix + "ff2.W"]), p[prefix + "ff2.b"])
    return ad.layer_norm(ad.add(X, ff), p[prefix + "ln2.gain"], p[prefix + "ln2.bias"])


def transformer_encode(E: DiffTensor, params: ModelParams, config: ModelConfig) -> DiffTensor:
    n, d = E.shape
    X = ad.add(E, ad.constant(positional_encoding(n, d)))
    for k in range(config.transformer_blocks):
        X = transformer_block(X, params, f"tf{k}.", config.heads)
    return X


def bigcn_layer(H: DiffTensor, A: np.ndarray, W: DiffTensor, b: DiffTensor,
                bidirectional: bool = True, A_back: np.ndarray | None = None) -> DiffTensor:
    """One bidirectional graph convolution.

    ``relu(([A H ; A_back H] / (deg + 1)) W + b)`` with ``A_back`` defaulting
    to ``A.T`` and ``deg[i]`` the nonzero off-diagonal count of row ``i`` of
    ``A``.  With ``bidirectional=False`` only ``A H`` is used.
    """
    n = H.shape[0]
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"bigcn: adjacency must be square, got {A.shape}")
    if A.shape[0] != n:
        raise ShapeError(f"bigcn: adjacency {A.shape} does not match {n} nodes")
    h = ad.matmul(ad.constant(A), H)
    if bidirectional:
        back = A.T if A_back is None else A_back
        h = ad.concat([h, ad.matmul(ad.constant(back), H)])
    inv = 1.0 / (off_diagonal_degree(A) + 1.0)
    h = ad.mul(h, ad.constant(inv[:, None]))
    return ad.relu(ad.add(ad.matmul(h, W), b))


def span_mask(n: int, start: int, length: int) -> np.ndarray:
    if length < 1 or start < 1 or start + length - 1 > n:
        raise ValueError(f"aspect span [{start}, {start + length - 1}] outside 1..{n}")
    keep = np.zeros((n, 1))
    keep[start - 1:start - 1 + length] = 1.0
    return keep


def aspect_mask(H: DiffTensor, start: int, length: int) -> DiffTensor:
    """Zero every row outside the 1-based span ``[start, start+length-1]``."""
    return ad.mul(H, ad.constant(span_mask(H.shape[0], start, length)))


def retrieval_attention(H_ctx: DiffTensor, H_mask: DiffTensor) -> DiffTensor:
    """``alpha = softmax_i(sum_j H_ctx[i] . H_mask[j])``."""
    if H_ctx.shape != H_mask.shape:
        raise ShapeError(f"retrieval attention: {H_ctx.shape} vs {H_mask.shape}")
    beta = ad.matmul(H_ctx, ad.sum_(H_mask, axis=0))
    return ad.softmax(beta)


def fuse_and_represent(H_ctx: DiffTensor, alpha: DiffTensor, Z: DiffTensor,
                       W_proj: DiffTensor) -> DiffTensor:
    if alpha.shape[0] != H_ctx.shape[0] or W_proj.shape[1] != H_ctx.shape[1]:
        raise ShapeError(f"fuse: alpha {alpha.shape}, H_ctx {H_ctx.shape}, "
                         f"projection {W_proj.shape}")
    pooled = ad.matmul(ad.mean(Z, axis=0), W_proj)
    return ad.add(ad.matmul(alpha, H_ctx), pooled)


def classify_logits(res: DiffTensor, W_p: DiffTensor, b: DiffTensor) -> DiffTensor:
    return ad.add(ad.matmul(res, W_p), b)


def classify(res: DiffTensor, W_p: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Class probabilities in the order (negative, neutral, positive)."""
    return ad.softmax(classify_logits(res, W_p, b))


# --------------------------------------------------------------------------
# whole sentence


@dataclass(frozen=True)
class EncodedExample:
    ids: np.ndarray
    adjacency: np.ndarray
    aspect_start: int
    aspect_len: int
    label: int


def encode_example(example: Example, vocab: Vocabulary, table: SdiTable,
                   config: ModelConfig, unseen=None) -> EncodedExample:
    if example.parse is None:
        raise ValueError("example has no dependency parse attached")
    A = sdi_adjacency(example.parse, table, config.adjacency_mode, unseen)
    return EncodedExample(vocab.encode(example.tokens), A, example.aspect_start,
                          example.aspect_len, example.label_id)


def encode_examples(examples: Sequence[Example], vocab: Vocabulary, table: SdiTable,
                    config: ModelConfig, unseen=None) -> list[EncodedExample]:
    return [encode_example(ex, vocab, table, config, unseen) for ex in examples]


@dataclass
class Trace:
    """Intermediate values of one forward pass, for inspection in tests."""

    embeddings: DiffTensor
    context: DiffTensor
    transformer: DiffTensor
    gcn: DiffTensor
    masked: DiffTensor
    alpha: DiffTensor
    res: DiffTensor
    logits: DiffTensor


def forward_trace(enc: EncodedExample, params: ModelParams, config: ModelConfig,
                  training: bool = False, rng: np.random.Generator | None = None,
                  A_back: np.ndarray | None = None) -> Trace:
    drop = config.dropout if training else 0.0
    if drop and rng is None:
        raise ValueError("training mode with dropout needs an rng")
    E = embed_tokens(enc.ids, params["embedding"])
    E = dropout(E, drop, rng)
    H_ctx = bilstm_encode(E, params)
    Z = transformer_encode(E, params, config)
    H = H_ctx
    for layer in range(config.gcn_layers):
        H = bigcn_layer(dropout(H, drop, rng), enc.adjacency, params[f"gcn{layer}.W"],
                        params[f"gcn{layer}.b"], bidirectional=not config.no_bidirectional,
                        A_back=A_back)
    masked = aspect_mask(H, enc.aspect_start, enc.aspect_len)
    alpha = retrieval_attention(H_ctx, masked)
    res = fuse_and_represent(H_ctx, alpha, Z, params["proj.W"])
    logits = classify_logits(res, params["cls.W"], params["cls.b"])
    return Trace(E, H_ctx, Z, H, masked, alpha, res, logits)


def forward_logits(enc, params, config, training=False, rng=None) -> DiffTensor:
    return forward_trace(enc, params, config, training, rng).logits


def forward_pass(enc, params, config, training=False, rng=None) -> DiffTensor:
    return ad.softmax(forward_logits(enc, params, config, training, rng))


def predict(encoded: Sequence[EncodedExample], params: ModelParams,
            config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode predictions and probabilities; records nothing on any tape."""
    with ad.no_tape():
        probs = np.array([forward_pass(enc, params, config).data for enc in encoded])
    probs = probs.reshape(len(encoded), N_CLASSES)
    return probs.argmax(axis=1), probs
