"""Combined sequence, decoder, joint loss, generation, and checkpoints."""

import numpy as np
import pytest

from lexchain.chains import ChainSet, SentencingRange, chain_from_text
from lexchain.checkpoint import load_checkpoint, save_checkpoint
from lexchain.corpus import CaseRecord
from lexchain.encoder import build_vocab, encode_chain_set
from lexchain.errors import (
    CapacityError,
    ContractError,
    ShapeError,
    ValidationError,
)
from lexchain.model import (
    MASK_VALUE,
    ModelConfig,
    add_positions,
    build_model,
    combine,
    decode_case,
    decoder_forward,
    generate,
    joint_loss,
    layer_norm,
    mark_sentencing_span,
    np_decoder_forward,
)
from lexchain.tensor import Tape, Tensor, backward, tsum


def _chain_set():
    return ChainSet(
        charge="toyoffense",
        chains=[
            chain_from_text("takes goods AND uses force", "harm done OR night time",
                            SentencingRange(6, 24, "toy-base"), "Provision 1"),
            chain_from_text("takes goods AND uses force", "minor case only",
                            SentencingRange(1, 6, "toy-light"), "Provision 1"),
        ],
    )


def _cases():
    return [
        CaseRecord(case_id="toy-0", fact="the man took goods by force at night",
                   charge="toyoffense",
                   opinion="the court orders 7 months of fixed-term imprisonment.",
                   sentence_months=7, sentencing_span=None, defendant="the man"),
        CaseRecord(case_id="toy-1", fact="goods were taken without harm",
                   charge="toyoffense",
                   opinion="the court orders 3 months of fixed-term imprisonment.",
                   sentence_months=3, sentencing_span=None, defendant="the man"),
    ]


def _fixture(d=16, heads=2, layers=2, context=48, seed=0):
    chains = _chain_set()
    cases = _cases()
    texts = [c.fact for c in cases] + [c.opinion for c in cases]
    for chain in chains.chains:
        texts += [chain.premise_text, chain.situation_text, chain.conclusion_text()]
    vocab = build_vocab(texts)
    cfg = ModelConfig(d=d, enc_heads=heads, dec_heads=heads, layers=layers,
                      context=context)
    model = build_model(vocab, ["toyoffense"], cfg, seed)
    return model, chains, cases


class TestModelConfig:
    def test_head_divisibility_enforced(self):
        with pytest.raises(ShapeError):
            ModelConfig(d=10, enc_heads=3)
        with pytest.raises(ShapeError):
            ModelConfig(d=10, enc_heads=2, dec_heads=4)

    def test_positive_dimensions(self):
        with pytest.raises(ContractError):
            ModelConfig(d=0, enc_heads=1, dec_heads=1)

    def test_round_trip_dict(self):
        cfg = ModelConfig(d=8, enc_heads=2, dec_heads=2, layers=1, context=32)
        assert ModelConfig(**cfg.to_dict()) == cfg


class TestBuildModel:
    def test_same_seed_same_parameters(self):
        model_a, _, _ = _fixture(seed=5)
        model_b, _, _ = _fixture(seed=5)
        assert sorted(model_a.params) == sorted(model_b.params)
        for name in model_a.params:
            np.testing.assert_array_equal(model_a.params[name].data,
                                          model_b.params[name].data)

    def test_different_seed_differs(self):
        model_a, _, _ = _fixture(seed=0)
        model_b, _, _ = _fixture(seed=1)
        assert not np.array_equal(model_a.params["embed"].data,
                                  model_b.params["embed"].data)

    def test_embedding_table_shares_parameter(self):
        model, _, _ = _fixture()
        assert model.table.matrix is model.params["embed"]


class TestCombine:
    def test_rows_are_chains_plus_fact_tokens(self):
        model, chains, cases = _fixture()
        encoded = encode_chain_set(chains, model.table, model.params, 2)
        combined = combine(encoded, cases[0].fact, model.table)
        l_f = len(model.table.encode(cases[0].fact))
        assert combined.shape == (encoded.n + l_f, model.cfg.d)

    def test_without_chains_only_fact_rows(self):
        model, _, cases = _fixture()
        combined = combine(None, cases[0].fact, model.table)
        assert combined.shape[0] == len(model.table.encode(cases[0].fact))

    def test_fact_rows_are_embeddings(self):
        model, _, cases = _fixture()
        combined = combine(None, cases[0].fact, model.table)
        ids = model.table.encode(cases[0].fact)
        np.testing.assert_array_equal(combined.data, model.params["embed"].data[ids])

    def test_empty_fact_rejected(self):
        model, _, _ = _fixture()
        with pytest.raises(ContractError):
            combine(None, "", model.table)


class TestPositions:
    def test_chain_rows_get_no_positions(self):
        model, chains, cases = _fixture()
        encoded = encode_chain_set(chains, model.table, model.params, 2)
        combined = combine(encoded, cases[0].fact, model.table)
        n = encoded.n
        shifted = add_positions(combined, n, model.params, model.cfg)
        np.testing.assert_array_equal(shifted.data[:n], combined.data[:n])
        expected = combined.data[n:] + model.params["pos"].data[n:combined.shape[0]]
        np.testing.assert_allclose(shifted.data[n:], expected, atol=1e-12)

    def test_overflow_raises(self):
        model, _, _ = _fixture(context=4)
        x = Tensor(np.zeros((5, model.cfg.d)))
        with pytest.raises(CapacityError):
            add_positions(x, 0, model.params, model.cfg)

    def test_all_chain_rows_is_identity(self):
        model, _, _ = _fixture()
        x = Tensor(np.ones((3, model.cfg.d)))
        out = add_positions(x, 3, model.params, model.cfg)
        np.testing.assert_array_equal(out.data, x.data)


class TestLayerNorm:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_closed_form(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(4, 8)) * 3.0 + 1.0
        g = rng.normal(size=8)
        b = rng.normal(size=8)
        out = layer_norm(Tensor(x), Tensor(g), Tensor(b)).data
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        expected = (x - mu) / np.sqrt(var + 1e-5) * g + b
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_unit_gain_zero_bias_standardizes(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(3, 64)) * 5.0
        out = layer_norm(Tensor(x), Tensor(np.ones(64)), Tensor(np.zeros(64))).data
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.std(axis=1), 1.0, atol=1e-3)


class TestDecoder:
    def test_graph_and_numpy_paths_agree(self):
        model, _, _ = _fixture()
        rng = np.random.default_rng(3)
        x = rng.normal(size=(7, model.cfg.d))
        data = {k: t.data for k, t in model.params.items()}
        a = decoder_forward(Tensor(x), model.params, model.cfg).data
        b = np_decoder_forward(x.copy(), data, model.cfg)
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_causality(self):
        """Perturbing row j never changes logits at rows before j."""
        model, _, _ = _fixture()
        rng = np.random.default_rng(4)
        x = rng.normal(size=(6, model.cfg.d))
        base = decoder_forward(Tensor(x), model.params, model.cfg).data
        for j in range(1, 6):
            bumped = x.copy()
            # non-uniform bump: uniform shifts sit in layer norm's null space
            bumped[j, 0] += 5.0
            out = decoder_forward(Tensor(bumped), model.params, model.cfg).data
            np.testing.assert_allclose(out[:j], base[:j], atol=1e-9)
            assert not np.allclose(out[j], base[j])

    def test_forward_is_finite_under_extreme_inputs(self):
        """The finite causal mask keeps every output finite."""
        model, _, _ = _fixture()
        x = np.full((5, model.cfg.d), 40.0)
        out = decoder_forward(Tensor(x), model.params, model.cfg).data
        assert np.all(np.isfinite(out))
        assert MASK_VALUE == -1e9

    def test_context_overflow(self):
        model, _, _ = _fixture(context=4)
        with pytest.raises(CapacityError):
            decoder_forward(Tensor(np.zeros((5, model.cfg.d))), model.params, model.cfg)


class TestSentencingSpan:
    def test_english_clause(self):
        text = "sentenced to 42 months of fixed-term imprisonment."
        interval = mark_sentencing_span(text)
        assert interval is not None
        toks = ["42", "months", "of", "fixed-term", "imprisonment"]
        from lexchain.tokenizer import tokenize

        assert tokenize(text)[interval[0]:interval[1]] == toks

    def test_missing_clause(self):
        assert mark_sentencing_span("no sentence appears here") is None

    def test_last_occurrence_wins(self):
        text = ("range of 36 to 120 months of fixed-term imprisonment, so "
                "sentenced to 48 months of fixed-term imprisonment.")
        interval = mark_sentencing_span(text)
        from lexchain.tokenizer import tokenize

        assert tokenize(text)[interval[0]] == "48"


class TestJointLoss:
    def test_matches_numpy_recomputation(self):
        """Independent recomputation of both loss terms for one case."""
        model, chains, cases = _fixture()
        record = cases[0]
        losses = joint_loss([(record, chains)], model)
        # reference path
        encoded = encode_chain_set(chains, model.table, model.params, 2)
        combined = combine(encoded, record.fact, model.table)
        prefix_len = combined.shape[0]
        eos = model.table.vocab["<eos>"]
        target = model.table.encode(record.opinion) + [eos]
        x = np.concatenate([combined.data,
                            model.params["embed"].data[target[:-1]]])
        x = x.copy()
        x[encoded.n:] += model.params["pos"].data[encoded.n:x.shape[0]]
        data = {k: t.data for k, t in model.params.items()}
        logits = np_decoder_forward(x, data, model.cfg)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        rows = np.arange(prefix_len - 1, prefix_len - 1 + len(target))
        picked = logp[rows, target]
        expected_reasoning = -picked.mean()
        interval = mark_sentencing_span(record.opinion)
        a, b = interval
        expected_sentencing = -picked[a:b].mean()
        np.testing.assert_allclose(losses.reasoning.item(), expected_reasoning, atol=1e-9)
        np.testing.assert_allclose(losses.sentencing.item(), expected_sentencing, atol=1e-9)
        np.testing.assert_allclose(losses.total.item(),
                                   expected_reasoning + expected_sentencing, atol=1e-9)

    def test_weights_scale_terms(self):
        model, chains, cases = _fixture()
        batch = [(cases[0], chains)]
        base = joint_loss(batch, model, alpha=1.0, beta=1.0)
        scaled = joint_loss(batch, model, alpha=2.0, beta=0.5)
        np.testing.assert_allclose(
            scaled.total.item(),
            2.0 * base.reasoning.item() + 0.5 * base.sentencing.item(),
            atol=1e-12,
        )

    def test_beta_zero_equals_reasoning_only(self):
        model, chains, cases = _fixture()
        losses = joint_loss([(cases[0], chains)], model, alpha=1.0, beta=0.0)
        np.testing.assert_allclose(losses.total.item(), losses.reasoning.item(),
                                   atol=1e-12)

    def test_no_chain_arm_accepts_none(self):
        model, _, cases = _fixture()
        losses = joint_loss([(cases[0], None)], model)
        assert np.isfinite(losses.total.item())

    def test_explicit_span_is_honored(self):
        model, chains, cases = _fixture()
        record = cases[0]
        clause = "7 months of fixed-term imprisonment"
        start = record.opinion.index(clause)
        explicit = CaseRecord(
            case_id=record.case_id, fact=record.fact, charge=record.charge,
            opinion=record.opinion, sentence_months=record.sentence_months,
            sentencing_span=(start, start + len(clause)), defendant=record.defendant,
        )
        a = joint_loss([(record, chains)], model)
        b = joint_loss([(explicit, chains)], model)
        np.testing.assert_allclose(a.total.item(), b.total.item(), atol=1e-12)
        assert a.mask_count == b.mask_count

    def test_missing_span_with_positive_beta_raises(self):
        model, chains, _ = _fixture()
        bad = CaseRecord(case_id="bad", fact="goods were taken", charge="toyoffense",
                         opinion="the court orders nothing", sentence_months=0,
                         sentencing_span=None, defendant="the man")
        with pytest.raises(ValidationError):
            joint_loss([(bad, chains)], model, beta=1.0)

    def test_missing_span_with_zero_beta_passes(self):
        model, chains, _ = _fixture()
        bad = CaseRecord(case_id="bad", fact="goods were taken", charge="toyoffense",
                         opinion="the court orders nothing", sentence_months=0,
                         sentencing_span=None, defendant="the man")
        losses = joint_loss([(bad, chains)], model, beta=0.0)
        assert losses.mask_count == 0
        assert losses.sentencing.item() == 0.0

    def test_invalid_weights_rejected(self):
        model, chains, cases = _fixture()
        with pytest.raises(ContractError):
            joint_loss([(cases[0], chains)], model, alpha=0.0, beta=0.0)
        with pytest.raises(ContractError):
            joint_loss([(cases[0], chains)], model, alpha=-1.0)

    def test_empty_batch_rejected(self):
        model, _, _ = _fixture()
        with pytest.raises(ContractError):
            joint_loss([], model)

    def test_gradients_flow_to_decoder_and_encoder(self):
        model, chains, cases = _fixture()
        with Tape() as tape:
            tape.watch(*model.params.values())
            losses = joint_loss([(cases[0], chains)], model)
            backward(tape, losses.total)
        assert np.any(model.params["dec.out.W"].grad != 0.0)
        assert np.any(model.params["enc.fusion.W"].grad != 0.0)
        assert np.any(model.params["embed"].grad != 0.0)


class TestGeneration:
    def test_greedy_is_deterministic(self):
        model, chains, cases = _fixture()
        a = decode_case(model, cases[0], chains)
        b = decode_case(model, cases[0], chains)
        assert a.token_ids == b.token_ids
        assert a.text == b.text

    def test_cache_path_matches_full_forward(self):
        """KV-cache generation equals restarting the full decoder each step."""
        model, chains, cases = _fixture()
        encoded = encode_chain_set(chains, model.table, model.params, 2)
        combined = combine(encoded, cases[0].fact, model.table)
        n = encoded.n
        out = generate(model, combined, n, max_len=8)
        # reference: no cache, full matrix every step
        data = {k: t.data for k, t in model.params.items()}
        x = combined.data.copy()
        x[n:] += data["pos"][n:x.shape[0]]
        eos = model.table.vocab["<eos>"]
        ref_ids = []
        position = combined.shape[0]
        for _ in range(8):
            logits = np_decoder_forward(x, data, model.cfg)[-1]
            next_id = int(np.argmax(logits))
            if next_id == eos:
                break
            ref_ids.append(next_id)
            row = data["embed"][next_id] + data["pos"][position]
            x = np.vstack([x, row])
            position += 1
        assert out.token_ids == ref_ids

    def test_max_len_zero_yields_empty(self):
        model, chains, cases = _fixture()
        out = decode_case(model, cases[0], chains, max_len=0)
        assert out.token_ids == [] and out.text == ""

    def test_prefix_overflow_raises(self):
        model, _, _ = _fixture(context=4)
        with pytest.raises(CapacityError):
            generate(model, Tensor(np.zeros((5, model.cfg.d))), 0)

    def test_generation_stops_at_context(self):
        model, _, cases = _fixture(context=20)
        combined = combine(None, cases[0].fact, model.table)
        out = generate(model, combined, 0, max_len=1000)
        assert combined.shape[0] + len(out.token_ids) <= 20

    def test_unknown_mode_rejected(self):
        model, _, cases = _fixture()
        combined = combine(None, cases[0].fact, model.table)
        with pytest.raises(ContractError):
            generate(model, combined, 0, mode="beam")

    def test_top_k_same_seed_reproduces(self):
        model, chains, cases = _fixture()
        a = decode_case(model, cases[0], chains, mode="top-k", seed=11)
        b = decode_case(model, cases[0], chains, mode="top-k", seed=11)
        assert a.token_ids == b.token_ids

    def test_eos_not_included_in_output(self):
        model, _, cases = _fixture()
        combined = combine(None, cases[0].fact, model.table)
        out = generate(model, combined, 0, max_len=30)
        assert model.table.vocab["<eos>"] not in out.token_ids


class TestCheckpoint:
    def test_round_trip_preserves_everything(self, tmp_path):
        model, chains, cases = _fixture()
        path = tmp_path / "model.zip"
        save_checkpoint(path, model, extra={"note": 1})
        loaded, extra = load_checkpoint(path)
        assert extra == {"note": 1}
        assert loaded.cfg == model.cfg
        assert loaded.charges == model.charges
        assert loaded.table.vocab == model.table.vocab
        assert sorted(loaded.params) == sorted(model.params)
        for name in model.params:
            np.testing.assert_array_equal(loaded.params[name].data,
                                          model.params[name].data)

    def test_save_is_byte_deterministic(self, tmp_path):
        model, _, _ = _fixture()
        p1 = tmp_path / "a.zip"
        p2 = tmp_path / "b.zip"
        save_checkpoint(p1, model)
        save_checkpoint(p2, model)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_model_decodes_identically(self, tmp_path):
        model, chains, cases = _fixture()
        path = tmp_path / "model.zip"
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        a = decode_case(model, cases[0], chains, max_len=16)
        b = decode_case(loaded, cases[0], chains, max_len=16)
        assert a.token_ids == b.token_ids

    def test_loaded_losses_match_bitwise(self, tmp_path):
        model, chains, cases = _fixture()
        path = tmp_path / "model.zip"
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        a = joint_loss([(cases[0], chains)], model)
        b = joint_loss([(cases[0], chains)], loaded)
        assert a.total.item() == b.total.item()

    def test_rejects_foreign_zip(self, tmp_path):
        import zipfile

        path = tmp_path / "alien.zip"
        with zipfile.ZipFile(path, "w") as zf:
            zf.writestr("manifest.json", "{}")
        with pytest.raises(ValidationError):
            load_checkpoint(path)
