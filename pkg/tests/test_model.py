from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinydistill.errors import FingerprintMismatch, IntegrityError
from tinydistill.evaluation.tasks import TASK_ALPHABET
from tinydistill.model import (
    EOS,
    UNK,
    DecodeConfig,
    build_tokenizer,
    deserialize_checkpoint,
    forward_logits,
    generate,
    generate_batch,
    load_checkpoint,
    require_same_tokenizer,
    save_checkpoint,
    serialize_checkpoint,
    student_config,
    teacher_config,
)
from tinydistill.model.transformer import TinyTransformer

from .conftest import tiny_model


class TestTokenizer:
    def test_roundtrip(self, tok):
        assert tok.decode(tok.encode("12+7")) == "12+7"

    def test_shared_fingerprint(self):
        a = build_tokenizer(["12+7", "r:abc"])
        b = build_tokenizer(["r:abc", "12+7"])
        assert a.fingerprint == b.fingerprint

    def test_unknown_symbol(self):
        t = build_tokenizer(["123"])
        assert t.encode("z") == [UNK]

    def test_covers_alphabet_dense(self, tok):
        ids = tok.encode(TASK_ALPHABET)
        assert UNK not in ids
        assert sorted(range(tok.vocab_size)) == sorted(set(range(5)) | set(ids))

    def test_gate(self):
        a = build_tokenizer(["12"])
        b = build_tokenizer(["13"])
        with pytest.raises(FingerprintMismatch):
            require_same_tokenizer(a.fingerprint, b.fingerprint)

    @given(st.text(alphabet=TASK_ALPHABET, max_size=30))
    def test_roundtrip_property(self, text):
        t = build_tokenizer([TASK_ALPHABET])
        assert t.decode(t.encode(text)) == text


class TestConfigs:
    def test_default_scales(self):
        t = teacher_config(30)
        s = student_config(30)
        assert (t.n_layers, t.d_model, t.n_heads) == (4, 128, 4)
        assert (s.n_layers, s.d_model, s.n_heads) == (2, 64, 2)

    def test_heads_divide_width(self, tok):
        with pytest.raises(ValueError, match="divisible"):
            tiny_model(tok, d=15, heads=2)


class TestForward:
    def test_shape(self, model, tok):
        ids = np.array(tok.encode_prompt("12+34"))
        assert forward_logits(model, ids).shape == (len(ids), tok.vocab_size)

    def test_out_of_range_token(self, model):
        with pytest.raises(ValueError, match="outside vocabulary"):
            model.logits(np.array([1, 999]))

    def test_causal(self, model, tok):
        rng = np.random.default_rng(0)
        ids = rng.integers(5, tok.vocab_size, 12)
        base = model.logits(ids)
        for t in range(11):
            other = ids.copy()
            other[t + 1:] = rng.integers(5, tok.vocab_size, 11 - t)
            np.testing.assert_array_equal(model.logits(other)[: t + 1], base[: t + 1])

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.integers(1, 6), min_size=1, max_size=8), st.integers(0, 10_000))
    def test_packed_equals_unpacked(self, lengths, seed):
        tok = build_tokenizer([TASK_ALPHABET])
        m = tiny_model(tok, seed=3, max_len=48)
        rng = np.random.default_rng(seed)
        seqs = [rng.integers(5, tok.vocab_size, n) for n in lengths]
        packed = np.concatenate(seqs)
        segs = np.concatenate([np.full(n, i) for i, n in enumerate(lengths)])
        out = m.logits(packed, segs)
        off = 0
        for s in seqs:
            np.testing.assert_allclose(out[off:off + len(s)], m.logits(s), atol=1e-4)
            off += len(s)


class TestGenerate:
    def test_greedy_deterministic(self, model, tok):
        p = tok.encode_prompt("12+34")
        assert generate(model, p, max_new=8) == generate(model, p, max_new=8)

    def test_temperature_seeded(self, model, tok):
        p = tok.encode_prompt("12+34")
        a = generate(model, p, mode="temperature", temperature=1.5, max_new=8, seed=7)
        b = generate(model, p, mode="temperature", temperature=1.5, max_new=8, seed=7)
        assert a == b

    def test_greedy_is_stepwise_argmax(self, model, tok):
        prompt = tok.encode_prompt("57+68")
        out = generate(model, prompt, max_new=10)
        seq = list(prompt)
        for t in out:
            logits = forward_logits(model, np.array(seq))[-1]
            assert t == int(np.flatnonzero(logits == logits.max())[0])
            seq.append(t)

    def test_eos_first_gives_empty(self, tok):
        m = tiny_model(tok)
        m.params["lm_head"].data[:] = 0
        m.params["lm_head"].data[:, EOS] = 1.0
        m.params["ln_f.b"].data[:] = 1.0
        m.params["ln_f.g"].data[:] = 0.0
        g = generate_batch(m, [tok.encode_prompt("1+1")], DecodeConfig(max_new=5))[0]
        assert g.tokens == [] and g.finished

    def test_prompt_too_long(self, tok):
        m = tiny_model(tok, max_len=8)
        with pytest.raises(ValueError, match="context"):
            generate(m, [1] * 9)

    def test_batch_matches_single(self, model, tok):
        prompts = [tok.encode_prompt(q) for q in ("1+2", "33+4", "r:abc", "9+9")]
        batch = generate_batch(model, prompts, DecodeConfig(max_new=6))
        for p, g in zip(prompts, batch):
            assert g.tokens == generate(model, p, max_new=6)


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path, tok):
        m = tiny_model(tok, seed=5)
        m.note = "probe"
        save_checkpoint(tmp_path / "m.tdck", m)
        back = load_checkpoint(tmp_path / "m.tdck")
        probe = np.array([tok.encode_prompt("12+34"), tok.encode_prompt("98+76")])
        assert np.array_equal(back.logits(probe), m.logits(probe))
        assert back.note == "probe"
        assert serialize_checkpoint(back) == serialize_checkpoint(m)

    def test_truncated(self, tok):
        blob = serialize_checkpoint(tiny_model(tok))
        with pytest.raises(IntegrityError, match="truncated"):
            deserialize_checkpoint(blob[:-3])

    def test_bad_magic(self, tok):
        blob = serialize_checkpoint(tiny_model(tok))
        with pytest.raises(IntegrityError, match="magic"):
            deserialize_checkpoint(b"XXXX" + blob[4:])

    def test_param_mismatch(self, tok):
        m = tiny_model(tok)
        params = m.state_dict()
        params.pop("lm_head")
        with pytest.raises(ValueError, match="missing"):
            TinyTransformer(m.config, tok, params=params)
