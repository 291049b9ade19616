"""Chain-aware encoding: from legal chains to a stack of fused chain vectors.

Per chain, the three component texts (premise, situation, conclusion) are
mean-embedded, run through multi-head self-attention over the three slots with
a residual connection, mean-pooled to one vector ``r``, pushed through a gated
crime-transformation block (general MLP + charge-specific linear map blended
by a sigmoid gate), and fused with ``r`` by a final linear layer.  Stacking
the per-chain outputs gives the ``n x d`` chain matrix consumed by the
decoder.

Parameters live in a flat ``name -> Tensor`` mapping shared with the decoder;
this module reads keys under the ``enc.`` prefix.  Vectors are 1 x d rows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, MutableMapping

import numpy as np

from . import tensor as T
from .chains import ChainSet, LegalChain
from .errors import ConfigurationError, ShapeError, ValidationError
from .tensor import Tensor
from .tokenizer import tokenize

PAD_TOKEN, UNK_TOKEN, EOS_TOKEN = "<pad>", "<unk>", "<eos>"
PAD_ID, UNK_ID, EOS_ID = 0, 1, 2
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, EOS_TOKEN)


def build_vocab(texts: Iterable[str], extra_tokens: Iterable[str] = ()) -> dict[str, int]:
    """Deterministic vocabulary: specials first, then sorted unique tokens."""
    seen: set[str] = set()
    for text in texts:
        seen.update(tokenize(text))
    seen.update(extra_tokens)
    seen.difference_update(SPECIAL_TOKENS)
    vocab = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
    for tok in sorted(seen):
        vocab[tok] = len(vocab)
    return vocab


class EmbeddingTable:
    """Token -> row-index vocabulary over a trainable V x d matrix."""

    def __init__(self, vocab: dict[str, int], matrix: Tensor):
        if matrix.ndim != 2:
            raise ShapeError(f"embedding matrix must be 2-D, got shape {matrix.shape}")
        if vocab and max(vocab.values()) >= matrix.shape[0]:
            raise ValidationError(
                f"vocab index {max(vocab.values())} out of range for {matrix.shape[0]} rows"
            )
        self.vocab = vocab
        self.matrix = matrix
        self.id_to_token = [""] * len(vocab)
        for tok, i in vocab.items():
            self.id_to_token[i] = tok

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def encode(self, text: str) -> list[int]:
        unk = self.vocab.get(UNK_TOKEN, UNK_ID)
        return [self.vocab.get(tok, unk) for tok in tokenize(text)]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]


def embed_component(text: str, table: EmbeddingTable) -> Tensor:
    """Mean of the token embedding rows as a 1 x d tensor.

    An empty token list yields a zero vector and a warning, so degenerate
    component texts stay visible without breaking the pipeline.
    """
    ids = table.encode(text)
    if not ids:
        warnings.warn(f"component text {text!r} has no tokens; embedding as zero vector")
        return Tensor(np.zeros((1, table.d)))
    rows = T.gather_rows(table.matrix, ids)
    return T.tmean(rows, axis=0, keepdims=True)


@dataclass
class EncodedChainSet:
    """The n x d chain matrix plus head-averaged 3x3 attention diagnostics."""

    e_chain: Tensor
    attention_weights: list[np.ndarray]

    @property
    def n(self) -> int:
        return self.e_chain.shape[0]


def _attention_over_components(h: Tensor, params: Mapping[str, Tensor], heads: int,
                               dropout_rate: float, rng: np.random.Generator | None):
    """Multi-head self-attention over the 3 component rows; returns (A, w)."""
    d = h.shape[1]
    if d % heads != 0:
        raise ShapeError(f"head count {heads} must divide model dimension {d}")
    scale = 1.0 / np.sqrt(d // heads)
    out = None
    per_head = []
    for i in range(heads):
        q = T.matmul(h, params[f"enc.attn.{i}.Wq"])
        k = T.matmul(h, params[f"enc.attn.{i}.Wk"])
        v = T.matmul(h, params[f"enc.attn.{i}.Wv"])
        scores = T.matmul(q, T.transpose(k)) * scale
        attn = T.softmax_rows(scores)
        per_head.append(attn.data.copy())
        proj = T.matmul(T.matmul(attn, v), params[f"enc.attn.{i}.Wo"])
        out = proj if out is None else out + proj
    if dropout_rate:
        out = T.dropout(out, dropout_rate, rng)
    w = np.mean(per_head, axis=0)
    return out, w


def encode_chain(chain: LegalChain, table: EmbeddingTable, params: Mapping[str, Tensor],
                 heads: int, dropout_rate: float = 0.0,
                 rng: np.random.Generator | None = None) -> tuple[Tensor, np.ndarray]:
    """Component stack -> self-attention with residual -> mean pool.

    Returns the pooled 1 x d representation ``r`` and the head-averaged 3x3
    attention weight matrix (diagnostic only; consumed by nothing downstream).
    """
    e_p = embed_component(chain.premise_text, table)
    e_s = embed_component(chain.situation_text, table)
    e_c = embed_component(chain.conclusion_text(), table)
    h = T.concat([e_p, e_s, e_c], axis=0)
    attn_out, w = _attention_over_components(h, params, heads, dropout_rate, rng)
    residual = h + attn_out
    r = T.tmean(residual, axis=0, keepdims=True)
    return r, w


def ensure_charge(params: MutableMapping[str, Tensor], charge: str, d: int,
                  auto_register: bool = True) -> None:
    """Make sure charge-specific parameters exist.

    Auto-registered charges start as identity/zero, i.e. the charge-specific
    path initially reproduces the general transformation.
    """
    key_w = f"enc.charge.{charge}.W"
    if key_w in params:
        return
    if not auto_register:
        raise ConfigurationError(f"unknown charge {charge!r} and auto-registration is disabled")
    key_b = f"enc.charge.{charge}.b"
    params[key_w] = Tensor(np.eye(d), requires_grad=True, name=key_w)
    params[key_b] = Tensor(np.zeros(d), requires_grad=True, name=key_b)


def crime_transform(r: Tensor, charge: str, params: MutableMapping[str, Tensor],
                    auto_register: bool = True, dropout_rate: float = 0.0,
                    rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Gated blend of the general MLP and the charge-specific linear map.

    ``u`` is the general transformation of ``r``; ``v`` the charge-specific
    refinement of ``u``; the sigmoid gate ``g`` interpolates ``t = g*v +
    (1-g)*u`` elementwise.  Returns ``(t, g)``.
    """
    d = r.shape[1]
    hidden = T.relu(T.matmul(r, params["enc.G1.W"]) + params["enc.G1.b"])
    if dropout_rate:
        hidden = T.dropout(hidden, dropout_rate, rng)
    u = T.matmul(hidden, params["enc.G2.W"]) + params["enc.G2.b"]
    ensure_charge(params, charge, d, auto_register)
    v = T.matmul(u, params[f"enc.charge.{charge}.W"]) + params[f"enc.charge.{charge}.b"]
    g = T.sigmoid(T.matmul(u, params["enc.gate.W"]) + params["enc.gate.b"])
    t = g * v + (1.0 - g) * u
    return t, g


def fuse(r: Tensor, t: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Final fusion of the pooled and transformed representations."""
    if r.shape != t.shape:
        raise ShapeError(f"fuse expects matching shapes, got {r.shape} and {t.shape}")
    cat = T.concat([r, t], axis=1)
    return T.matmul(cat, params["enc.fusion.W"]) + params["enc.fusion.b"]


def encode_chain_set(cs: ChainSet, table: EmbeddingTable, params: MutableMapping[str, Tensor],
                     heads: int, auto_register: bool = True, dropout_rate: float = 0.0,
                     rng: np.random.Generator | None = None) -> EncodedChainSet:
    """Encode every chain of a set, preserving chain order in the output rows."""
    if not cs.chains:
        raise ValidationError(f"chain set for {cs.charge!r} is empty; nothing to encode")
    rows = []
    weights = []
    for chain in cs.chains:
        r, w = encode_chain(chain, table, params, heads, dropout_rate, rng)
        t, _ = crime_transform(r, cs.charge, params, auto_register, dropout_rate, rng)
        rows.append(fuse(r, t, params))
        weights.append(w)
    e_chain = rows[0] if len(rows) == 1 else T.concat(rows, axis=0)
    return EncodedChainSet(e_chain=e_chain, attention_weights=weights)
