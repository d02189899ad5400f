from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinydistill.autodiff import cross_entropy, gradients
from tinydistill.curation.sample import REASONING, Sample
from tinydistill.errors import ConfigError
from tinydistill.evaluation.tasks import TaskSpec, build_synthetic_suite
from tinydistill.model import serialize_checkpoint
from tinydistill.sft import (
    DIRECT_FAST,
    VARIANTS,
    WITH_COT,
    OversizeSampleError,
    StageConfig,
    TokenizedSample,
    cosine_lr,
    pack_sequences,
    run_curriculum,
    run_stage,
    tokenize_sample,
)
from tinydistill.sft.trainer import Updater, stack_packs

from .conftest import tiny_model

FAST = StageConfig(epochs=1, tokens_per_batch=48 * 8, peak_lr=3e-3, min_lr=3e-4, warmup_steps=1,
                   max_len=48)


def fake(n: int, sid: str, supervised: int | None = None) -> TokenizedSample:
    mask = np.zeros(n, dtype=np.int8)
    mask[n - (supervised if supervised is not None else n // 2):] = 1
    return TokenizedSample(sid, np.arange(n, dtype=np.int64) % 20 + 5, mask, n - int(mask.sum()))


class TestCosine:
    def test_endpoints(self):
        assert cosine_lr(0, 10, 100, 1.0, 0.1) == 0.0
        assert cosine_lr(10, 10, 100, 1.0, 0.1) == 1.0
        assert cosine_lr(100, 10, 100, 1.0, 0.1) == pytest.approx(0.1, abs=1e-15)

    def test_midpoint(self):
        assert cosine_lr(55, 10, 100, 2e-5, 2e-6) == pytest.approx((2e-5 + 2e-6) / 2, rel=1e-12)

    def test_past_total(self):
        with pytest.raises(ValueError):
            cosine_lr(101, 10, 100, 1.0, 0.1)

    @given(st.integers(0, 50), st.integers(1, 500), st.floats(1e-5, 1.0), st.floats(0.01, 1.0))
    def test_monotone_after_warmup(self, warmup, extra, peak, frac):
        total = warmup + extra
        lrs = [cosine_lr(s, warmup, total, peak, peak * frac) for s in range(warmup, total + 1)]
        assert all(b <= a + 1e-15 for a, b in zip(lrs, lrs[1:]))
        assert lrs[0] == pytest.approx(peak)


class TestPacking:
    def test_single(self):
        packs = pack_sequences([fake(7, "a")], 16)
        assert len(packs) == 1 and packs[0].sample_ids == ["a"]
        assert set(packs[0].segments[:7]) == {0}

    def test_ffd_single_pack(self):
        packs = pack_sequences([fake(10, "c"), fake(60, "a"), fake(30, "b")], 100)
        assert len(packs) == 1
        assert packs[0].lengths == [60, 30, 10]

    def test_oversize_names_sample(self):
        with pytest.raises(OversizeSampleError, match="big"):
            pack_sequences([fake(17, "big")], 16)

    def test_mask_counts_targets(self, tok, small_suite):
        ts = [tokenize_sample(tok, s, with_trace=True) for s in small_suite.stage1]
        expected = sum(len(tok.encode(s.target_text(True))) + 1 for s in small_suite.stage1)
        packs = pack_sequences(ts, 48)
        assert sum(int(p.loss_mask.sum()) for p in packs) == expected

    @settings(max_examples=60)
    @given(st.lists(st.integers(1, 32), min_size=1, max_size=40), st.integers(32, 64))
    def test_conservation(self, lengths, max_len):
        samples = [fake(n, f"s{i:03d}") for i, n in enumerate(lengths)]
        packs = pack_sequences(samples, max_len)
        assert sum(p.n_real for p in packs) == sum(lengths)
        seen = [sid for p in packs for sid in p.sample_ids]
        assert sorted(seen) == sorted(s.id for s in samples)
        for p in packs:
            pad = np.arange(max_len) >= p.n_real
            assert not p.loss_mask[pad].any()
            for seg, (off, n) in enumerate(zip(p.offsets, p.lengths)):
                assert (p.segments[off:off + n] == seg).all()


class TestStageConfig:
    def test_lr_order(self):
        with pytest.raises(ConfigError):
            StageConfig(peak_lr=1e-4, min_lr=1e-3)

    def test_warmup_below_total(self, tok):
        with pytest.raises(ConfigError, match="warmup"):
            Updater(tiny_model(tok), 5, 1e-3, 1e-4, 5)

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="unknown"):
            StageConfig.from_dict({"epochz": 1})


class TestRunStage:
    def test_memorization(self, tok):
        suite = build_synthetic_suite(TaskSpec("reversal"), 10, 200, 10)
        m = tiny_model(tok, d=48, max_len=24)
        cfg = StageConfig(epochs=20, tokens_per_batch=24 * 16, peak_lr=1e-2, min_lr=1e-3,
                          warmup_steps=10, max_len=24, with_trace=False)
        _, logs = run_stage(m, cfg, suite.stage2, seed=0)
        assert logs[-1].loss < 0.1 * logs[0].loss
        assert [r.step for r in logs] == list(range(1, len(logs) + 1))
        assert all(b.tokens_seen > a.tokens_seen for a, b in zip(logs, logs[1:]))

    def test_fully_masked_batch(self, tok):
        m = tiny_model(tok)
        packs = pack_sequences([fake(10, "a", supervised=0)], 48)
        batch = stack_packs(packs)
        logits = m.forward(batch.tokens, batch.segments)
        loss = cross_entropy(logits, batch.targets, batch.weights)
        assert float(loss.data) == 0.0
        before = m.state_dict()
        upd = Updater(m, 3, 1e-2, 1e-3, 0)
        upd.apply(loss, has_signal=False)
        for k, v in m.state_dict().items():
            assert np.array_equal(v, before[k])

    def test_prompt_labels_have_no_effect(self, tok, small_suite):
        m = tiny_model(tok, dtype=np.float64)
        ts = [tokenize_sample(tok, s) for s in small_suite.stage2[:6]]
        batch = stack_packs(pack_sequences(ts, 48))
        grads = gradients(cross_entropy(m.forward(batch.tokens, batch.segments),
                                        batch.targets, batch.weights), m.parameters())
        rng = np.random.default_rng(0)
        perturbed = batch.targets.copy()
        free = batch.weights == 0
        perturbed[free] = rng.integers(0, tok.vocab_size, int(free.sum()))
        grads2 = gradients(cross_entropy(m.forward(batch.tokens, batch.segments),
                                         perturbed, batch.weights), m.parameters())
        for a, b in zip(grads, grads2):
            np.testing.assert_array_equal(a, b)

    def test_deterministic(self, tok, small_suite):
        outs = []
        for _ in range(2):
            m = tiny_model(tok, seed=1)
            _, logs = run_stage(m, FAST, small_suite.stage1, seed=4)
            outs.append((serialize_checkpoint(m), [r.to_dict() for r in logs]))
        assert outs[0] == outs[1]

    def test_log_fields(self, tok, small_suite):
        _, logs = run_stage(tiny_model(tok), FAST, small_suite.stage2, seed=0)
        assert set(logs[0].to_dict()) == {"step", "lr", "loss", "grad_norm", "tokens_seen"}
        assert all(math.isfinite(r.loss) for r in logs)


class _Untouchable(list):
    def __iter__(self):
        raise AssertionError("stage-1 corpus was read")


class TestCurriculum:
    def test_direct_fast_skips_stage1(self, tok, small_suite):
        _, logs = run_curriculum(tiny_model(tok), DIRECT_FAST, _Untouchable(), small_suite.stage2,
                                 FAST, FAST, seed=0)
        assert list(logs) == ["stage2"]

    def test_no_cot_target_is_answer(self, tok, small_suite):
        s = small_suite.stage1[0]
        assert s.reasoning_trace
        bare = tokenize_sample(tok, s.without_trace(), with_trace=False)
        assert int(bare.loss_mask.sum()) == len(s.response) + 2  # marker + answer + EOS

    def test_with_cot_needs_traces(self, tok):
        bad = [Sample("12+34", "46", REASONING, None)]
        with pytest.raises(ConfigError, match="traces"):
            run_curriculum(tiny_model(tok), WITH_COT, bad, bad, FAST, FAST, seed=0)

    def test_unknown_variant(self, tok, small_suite):
        with pytest.raises(ConfigError):
            run_curriculum(tiny_model(tok), "both", [], small_suite.stage2, FAST, FAST, seed=0)

    def test_three_distinct_checkpoints(self, tok, small_suite):
        blobs = set()
        for v in VARIANTS:
            m, logs = run_curriculum(tiny_model(tok, seed=2), v, small_suite.stage1,
                                     small_suite.stage2, FAST, FAST, seed=0)
            blobs.add(serialize_checkpoint(m))
            assert ("stage1" in logs) == (v != DIRECT_FAST)
        assert len(blobs) == 3
