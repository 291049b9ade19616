"""Combined-sequence decoding: chain rows + fact tokens in, opinion out.

The combined matrix stacks the encoded chain rows above the fact token
embeddings; a small pre-norm causal transformer decodes the opinion from that
prefix.  Training uses teacher forcing with a joint objective: mean
cross-entropy over all opinion tokens, plus a second mean restricted to the
sentencing clause, weighted ``alpha`` and ``beta``.

Chain rows carry no positional signal; fact and opinion tokens take learned
positional embeddings indexed by their absolute row in the combined sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, MutableMapping, Sequence

import numpy as np

from . import tensor as T
from .chains import ChainSet
from .encoder import (EmbeddingTable, EncodedChainSet, encode_chain_set)
from .errors import (CapacityError, ContractError, ShapeError, ValidationError)
from .metrics import extract_sentence_months, find_sentencing_char_span
from .tensor import Tensor
from .tokenizer import detokenize, span_to_token_interval

MASK_VALUE = -1e9  # finite causal mask keeps forward outputs NaN/Inf-free


@dataclass
class ModelConfig:
    d: int = 64
    enc_heads: int = 8
    dec_heads: int = 4
    layers: int = 2
    context: int = 256

    def __post_init__(self):
        if self.d <= 0 or self.layers <= 0 or self.context <= 0:
            raise ContractError("d, layers and context must be positive")
        if self.d % self.enc_heads != 0:
            raise ShapeError(f"enc_heads {self.enc_heads} must divide d {self.d}")
        if self.d % self.dec_heads != 0:
            raise ShapeError(f"dec_heads {self.dec_heads} must divide d {self.d}")

    def to_dict(self) -> dict:
        return {"d": self.d, "enc_heads": self.enc_heads, "dec_heads": self.dec_heads,
                "layers": self.layers, "context": self.context}


class Model:
    """Embedding table, chain-encoder and decoder weights under one namespace."""

    def __init__(self, cfg: ModelConfig, table: EmbeddingTable, charges: list[str],
                 params: MutableMapping[str, Tensor]):
        self.cfg = cfg
        self.table = table
        self.charges = list(charges)
        self.params = params

    @property
    def vocab_size(self) -> int:
        return self.table.matrix.shape[0]


def build_model(vocab: dict[str, int], charges: Sequence[str], cfg: ModelConfig,
                seed: int) -> Model:
    """Create all parameters in a fixed order from one seeded stream.

    Projection weights are uniform in (-1/sqrt(d), 1/sqrt(d)); biases start at
    zero; layer-norm gains at one.
    """
    rng = np.random.default_rng(seed)
    d = cfg.d
    scale = 1.0 / np.sqrt(d)
    params: dict[str, Tensor] = {}

    def uniform(name: str, shape: tuple[int, ...]) -> None:
        params[name] = Tensor(rng.uniform(-scale, scale, shape), requires_grad=True, name=name)

    def zeros(name: str, shape: tuple[int, ...]) -> None:
        params[name] = Tensor(np.zeros(shape), requires_grad=True, name=name)

    def ones(name: str, shape: tuple[int, ...]) -> None:
        params[name] = Tensor(np.ones(shape), requires_grad=True, name=name)

    V = len(vocab)
    uniform("embed", (V, d))
    uniform("pos", (cfg.context, d))
    dh = d // cfg.enc_heads
    for i in range(cfg.enc_heads):
        uniform(f"enc.attn.{i}.Wq", (d, dh))
        uniform(f"enc.attn.{i}.Wk", (d, dh))
        uniform(f"enc.attn.{i}.Wv", (d, dh))
        uniform(f"enc.attn.{i}.Wo", (dh, d))
    uniform("enc.G1.W", (d, d))
    zeros("enc.G1.b", (d,))
    uniform("enc.G2.W", (d, d))
    zeros("enc.G2.b", (d,))
    uniform("enc.gate.W", (d, d))
    zeros("enc.gate.b", (d,))
    uniform("enc.fusion.W", (2 * d, d))
    zeros("enc.fusion.b", (d,))
    for charge in sorted(charges):
        uniform(f"enc.charge.{charge}.W", (d, d))
        zeros(f"enc.charge.{charge}.b", (d,))
    dh2 = d // cfg.dec_heads
    for layer in range(cfg.layers):
        ones(f"dec.{layer}.ln1.g", (d,))
        zeros(f"dec.{layer}.ln1.b", (d,))
        for i in range(cfg.dec_heads):
            uniform(f"dec.{layer}.attn.{i}.Wq", (d, dh2))
            uniform(f"dec.{layer}.attn.{i}.Wk", (d, dh2))
            uniform(f"dec.{layer}.attn.{i}.Wv", (d, dh2))
            uniform(f"dec.{layer}.attn.{i}.Wo", (dh2, d))
        ones(f"dec.{layer}.ln2.g", (d,))
        zeros(f"dec.{layer}.ln2.b", (d,))
        uniform(f"dec.{layer}.ffn.W1", (d, 4 * d))
        zeros(f"dec.{layer}.ffn.b1", (4 * d,))
        uniform(f"dec.{layer}.ffn.W2", (4 * d, d))
        zeros(f"dec.{layer}.ffn.b2", (d,))
    ones("dec.lnf.g", (d,))
    zeros("dec.lnf.b", (d,))
    uniform("dec.out.W", (d, V))
    zeros("dec.out.b", (V,))
    table = EmbeddingTable(vocab, params["embed"])
    return Model(cfg, table, sorted(charges), params)


# ---------------------------------------------------------------------------
# Combined sequence
# ---------------------------------------------------------------------------


def combine(encoded: EncodedChainSet | None, fact_text: str, table: EmbeddingTable) -> Tensor:
    """Stack chain rows above fact token embeddings: an (n + l_F) x d matrix."""
    ids = table.encode(fact_text)
    if not ids:
        raise ContractError("fact text produced no tokens")
    fact_rows = T.gather_rows(table.matrix, ids)
    if encoded is None or encoded.n == 0:
        return fact_rows
    return T.concat([encoded.e_chain, fact_rows], axis=0)


def add_positions(x: Tensor, n_chain_rows: int, params: Mapping[str, Tensor],
                  cfg: ModelConfig) -> Tensor:
    """Add learned positions to every row past the chain slots."""
    total = x.shape[0]
    if total > cfg.context:
        raise CapacityError(f"sequence of {total} rows exceeds context {cfg.context}")
    if n_chain_rows >= total:
        return x
    pos_rows = T.gather_rows(params["pos"], np.arange(n_chain_rows, total))
    if n_chain_rows:
        pos_rows = T.concat([Tensor(np.zeros((n_chain_rows, x.shape[1]))), pos_rows], axis=0)
    return x + pos_rows


_MASK_CACHE: dict[int, np.ndarray] = {}


def _causal_mask(size: int) -> np.ndarray:
    mask = _MASK_CACHE.get(size)
    if mask is None:
        mask = np.triu(np.full((size, size), MASK_VALUE), k=1)
        _MASK_CACHE[size] = mask
    return mask


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = T.tmean(x, axis=1, keepdims=True)
    centered = x - mu
    var = T.tmean(centered * centered, axis=1, keepdims=True)
    return centered / T.sqrt(var + eps) * gain + bias


def decoder_forward(x: Tensor, params: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Full-sequence causal decoder; returns logits for every row."""
    rows = x.shape[0]
    if rows > cfg.context:
        raise CapacityError(f"sequence of {rows} rows exceeds context {cfg.context}")
    dh = cfg.d // cfg.dec_heads
    scale = 1.0 / np.sqrt(dh)
    mask = Tensor(_causal_mask(rows))
    for layer in range(cfg.layers):
        h = layer_norm(x, params[f"dec.{layer}.ln1.g"], params[f"dec.{layer}.ln1.b"])
        attn_out = None
        for i in range(cfg.dec_heads):
            q = T.matmul(h, params[f"dec.{layer}.attn.{i}.Wq"])
            k = T.matmul(h, params[f"dec.{layer}.attn.{i}.Wk"])
            v = T.matmul(h, params[f"dec.{layer}.attn.{i}.Wv"])
            scores = T.matmul(q, T.transpose(k)) * scale + mask
            head = T.matmul(T.softmax_rows(scores), v)
            proj = T.matmul(head, params[f"dec.{layer}.attn.{i}.Wo"])
            attn_out = proj if attn_out is None else attn_out + proj
        x = x + attn_out
        h2 = layer_norm(x, params[f"dec.{layer}.ln2.g"], params[f"dec.{layer}.ln2.b"])
        inner = T.relu(T.matmul(h2, params[f"dec.{layer}.ffn.W1"]) + params[f"dec.{layer}.ffn.b1"])
        x = x + T.matmul(inner, params[f"dec.{layer}.ffn.W2"]) + params[f"dec.{layer}.ffn.b2"]
    x = layer_norm(x, params["dec.lnf.g"], params["dec.lnf.b"])
    return T.matmul(x, params["dec.out.W"]) + params["dec.out.b"]


# ---------------------------------------------------------------------------
# Sentencing span and joint loss
# ---------------------------------------------------------------------------


def mark_sentencing_span(opinion_text: str) -> tuple[int, int] | None:
    """Token interval of the last sentencing clause, or None."""
    found = find_sentencing_char_span(opinion_text)
    if found is None:
        return None
    return span_to_token_interval(opinion_text, (found[0], found[1]))


@dataclass
class JointLoss:
    total: Tensor
    reasoning: Tensor
    sentencing: Tensor
    token_count: int
    mask_count: int


def joint_loss(batch: Sequence[tuple], model: Model, alpha: float = 1.0, beta: float = 1.0,
               dropout_rate: float = 0.0, rng: np.random.Generator | None = None,
               auto_register: bool = True) -> JointLoss:
    """Teacher-forced joint objective over a batch of (case, chain set) pairs.

    ``chain set`` may be None per pair (the no-chain ablation path).  The
    reasoning term averages over all target tokens in the batch; the
    sentencing term averages over sentencing-clause tokens only.
    """
    if alpha < 0 or beta < 0 or (alpha == 0 and beta == 0):
        raise ContractError(f"loss weights must be >= 0 and not both zero, got {alpha}, {beta}")
    if not batch:
        raise ContractError("empty batch")
    table = model.table
    eos = table.vocab["<eos>"]
    sum_reasoning = None
    sum_sentencing = None
    token_count = 0
    mask_count = 0
    for record, chain_set in batch:
        encoded = None
        if chain_set is not None:
            encoded = encode_chain_set(chain_set, table, model.params, model.cfg.enc_heads,
                                       auto_register=auto_register,
                                       dropout_rate=dropout_rate, rng=rng)
        combined = combine(encoded, record.fact, table)
        n = encoded.n if encoded is not None else 0
        prefix_len = combined.shape[0]
        target = table.encode(record.opinion) + [eos]
        if not target:
            raise ContractError(f"case {record.case_id} has an empty opinion")
        x = combined
        if len(target) > 1:
            x = T.concat([combined, T.gather_rows(table.matrix, target[:-1])], axis=0)
        x = add_positions(x, n, model.params, model.cfg)
        logits = decoder_forward(x, model.params, model.cfg)
        logp = T.log_softmax_rows(logits)
        rows = np.arange(prefix_len - 1, prefix_len - 1 + len(target))
        ll = T.pick(logp, rows, target)
        case_sum = T.tsum(ll)
        sum_reasoning = case_sum if sum_reasoning is None else sum_reasoning + case_sum
        token_count += len(target)
        interval = None
        if record.sentencing_span is not None:
            interval = span_to_token_interval(record.opinion, record.sentencing_span)
        if interval is None:
            interval = mark_sentencing_span(record.opinion)
        if interval is None or interval[0] >= interval[1]:
            if beta > 0:
                raise ValidationError(
                    f"case {record.case_id} has no sentencing span but beta > 0"
                )
            continue
        a, b = interval
        ll_mask = T.pick(logp, rows[a:b], target[a:b])
        mask_sum = T.tsum(ll_mask)
        sum_sentencing = mask_sum if sum_sentencing is None else sum_sentencing + mask_sum
        mask_count += b - a
    reasoning = sum_reasoning * (-1.0 / token_count)
    if mask_count:
        sentencing = sum_sentencing * (-1.0 / mask_count)
    else:
        sentencing = Tensor(0.0)
    total = alpha * reasoning + beta * sentencing
    return JointLoss(total=total, reasoning=reasoning, sentencing=sentencing,
                     token_count=token_count, mask_count=mask_count)


# ---------------------------------------------------------------------------
# Generation (gradient-free fast path with per-block KV caches)
# ---------------------------------------------------------------------------


@dataclass
class OpinionOutput:
    text: str
    token_ids: list[int]
    sentencing_span: tuple[int, int] | None
    extracted_months: int | None


def _np_layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def np_decoder_forward(x: np.ndarray, data: Mapping[str, np.ndarray], cfg: ModelConfig) -> np.ndarray:
    """Plain-numpy replica of :func:`decoder_forward` (no tape, no gradients)."""
    rows = x.shape[0]
    dh = cfg.d // cfg.dec_heads
    scale = 1.0 / np.sqrt(dh)
    mask = _causal_mask(rows)
    for layer in range(cfg.layers):
        h = _np_layer_norm(x, data[f"dec.{layer}.ln1.g"], data[f"dec.{layer}.ln1.b"])
        attn_out = np.zeros_like(x)
        for i in range(cfg.dec_heads):
            q = h @ data[f"dec.{layer}.attn.{i}.Wq"]
            k = h @ data[f"dec.{layer}.attn.{i}.Wk"]
            v = h @ data[f"dec.{layer}.attn.{i}.Wv"]
            scores = q @ k.T * scale + mask
            z = scores - scores.max(axis=1, keepdims=True)
            probs = np.exp(z)
            probs /= probs.sum(axis=1, keepdims=True)
            attn_out += (probs @ v) @ data[f"dec.{layer}.attn.{i}.Wo"]
        x = x + attn_out
        h2 = _np_layer_norm(x, data[f"dec.{layer}.ln2.g"], data[f"dec.{layer}.ln2.b"])
        inner = np.maximum(h2 @ data[f"dec.{layer}.ffn.W1"] + data[f"dec.{layer}.ffn.b1"], 0.0)
        x = x + inner @ data[f"dec.{layer}.ffn.W2"] + data[f"dec.{layer}.ffn.b2"]
    x = _np_layer_norm(x, data["dec.lnf.g"], data["dec.lnf.b"])
    return x @ data["dec.out.W"] + data["dec.out.b"]


class _BlockCache:
    __slots__ = ("k", "v", "used")

    def __init__(self, context: int, heads: int, dh: int):
        self.k = [np.empty((context, dh)) for _ in range(heads)]
        self.v = [np.empty((context, dh)) for _ in range(heads)]
        self.used = 0


def _step_or_prefill(x: np.ndarray, data: Mapping[str, np.ndarray], cfg: ModelConfig,
                     caches: list[_BlockCache]) -> np.ndarray:
    """Run rows through the decoder, appending K/V to the caches.

    ``x`` may hold several rows (prefill) or one (a generation step); rows
    attend to everything already cached plus themselves causally.
    """
    rows = x.shape[0]
    dh = cfg.d // cfg.dec_heads
    scale = 1.0 / np.sqrt(dh)
    for layer in range(cfg.layers):
        cache = caches[layer]
        start = cache.used
        h = _np_layer_norm(x, data[f"dec.{layer}.ln1.g"], data[f"dec.{layer}.ln1.b"])
        attn_out = np.zeros_like(x)
        for i in range(cfg.dec_heads):
            q = h @ data[f"dec.{layer}.attn.{i}.Wq"]
            cache.k[i][start:start + rows] = h @ data[f"dec.{layer}.attn.{i}.Wk"]
            cache.v[i][start:start + rows] = h @ data[f"dec.{layer}.attn.{i}.Wv"]
            k_all = cache.k[i][:start + rows]
            v_all = cache.v[i][:start + rows]
            scores = q @ k_all.T * scale
            if rows > 1:
                scores = scores + np.triu(np.full((rows, start + rows), MASK_VALUE), k=start + 1)
            z = scores - scores.max(axis=1, keepdims=True)
            probs = np.exp(z)
            probs /= probs.sum(axis=1, keepdims=True)
            attn_out += (probs @ v_all) @ data[f"dec.{layer}.attn.{i}.Wo"]
        x = x + attn_out
        cache.used = start + rows
        h2 = _np_layer_norm(x, data[f"dec.{layer}.ln2.g"], data[f"dec.{layer}.ln2.b"])
        inner = np.maximum(h2 @ data[f"dec.{layer}.ffn.W1"] + data[f"dec.{layer}.ffn.b1"], 0.0)
        x = x + inner @ data[f"dec.{layer}.ffn.W2"] + data[f"dec.{layer}.ffn.b2"]
    x = _np_layer_norm(x, data["dec.lnf.g"], data["dec.lnf.b"])
    return x @ data["dec.out.W"] + data["dec.out.b"]


def generate(model: Model, combined: Tensor, n_chain_rows: int, max_len: int = 96,
             mode: str = "greedy", seed: int = 0, top_k: int = 10) -> OpinionOutput:
    """Autoregressive decode conditioned on the combined prefix.

    Greedy mode is deterministic; ``top-k`` samples from the renormalized top
    ``top_k`` logits using the given seed.  Decoding stops at ``<eos>``, at
    ``max_len`` tokens, or when the context fills up.
    """
    if mode not in ("greedy", "top-k"):
        raise ContractError(f"unknown decode mode {mode!r}")
    cfg = model.cfg
    prefix_len = combined.shape[0]
    if prefix_len > cfg.context:
        raise CapacityError(f"prefix of {prefix_len} rows exceeds context {cfg.context}")
    data = {name: t.data for name, t in model.params.items()}
    eos = model.table.vocab["<eos>"]
    rng = np.random.default_rng(seed)
    x0 = combined.data.copy()
    if prefix_len > n_chain_rows:
        x0[n_chain_rows:] += data["pos"][n_chain_rows:prefix_len]
    dh = cfg.d // cfg.dec_heads
    caches = [_BlockCache(cfg.context, cfg.dec_heads, dh) for _ in range(cfg.layers)]
    logits = _step_or_prefill(x0, data, cfg, caches)[-1]
    token_ids: list[int] = []
    position = prefix_len
    while len(token_ids) < max_len and position < cfg.context:
        if mode == "greedy":
            next_id = int(np.argmax(logits))
        else:
            order = np.argsort(-logits, kind="stable")[:top_k]
            z = logits[order] - logits[order].max()
            probs = np.exp(z)
            probs /= probs.sum()
            next_id = int(rng.choice(order, p=probs))
        if next_id == eos:
            break
        token_ids.append(next_id)
        row = data["embed"][next_id] + data["pos"][position]
        logits = _step_or_prefill(row[None, :], data, cfg, caches)[-1]
        position += 1
    text = detokenize(model.table.decode(token_ids))
    return OpinionOutput(
        text=text,
        token_ids=token_ids,
        sentencing_span=mark_sentencing_span(text),
        extracted_months=extract_sentence_months(text),
    )


def decode_case(model: Model, record, chain_set: ChainSet | None, max_len: int = 96,
                mode: str = "greedy", seed: int = 0) -> OpinionOutput:
    """Encode (optionally), combine with the case fact, and generate."""
    encoded = None
    if chain_set is not None:
        encoded = encode_chain_set(chain_set, model.table, model.params, model.cfg.enc_heads)
    combined = combine(encoded, record.fact, model.table)
    n = encoded.n if encoded is not None else 0
    return generate(model, combined, n, max_len=max_len, mode=mode, seed=seed)
