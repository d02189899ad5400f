from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinydistill.curation.filters import filter_attributes
from tinydistill.curation.minhash import lsh_dedup, minhash_signature, shingles
from tinydistill.curation.mixing import ShortfallError, class_quotas, ratio_sample
from tinydistill.curation.sample import (
    NON_REASONING,
    REASONING,
    Sample,
    extract_answer,
    read_jsonl,
    sample_id,
    write_jsonl,
)
from tinydistill.curation.zipselect import compressed_size, compression_ratio, zip_select
from tinydistill.errors import ConfigError

# raw DEFLATE, level 9, 32 KiB window, memLevel 8
GOLDEN_TEXT = b"the quick brown fox jumps over the lazy dog\n" * 8
GOLDEN_SIZE = 50


def jaccard(a: set, b: set) -> float:
    return len(a & b) / len(a | b)


def words(rng, n, vocab=5000):
    return [f"w{int(i)}" for i in rng.integers(0, vocab, n)]


def mk(query, response="x", cls=REASONING, **attrs):
    return Sample(query, response, cls, "t" if cls == REASONING else None, attrs)


class TestSample:
    def test_id_is_content_hash(self):
        s = mk("1+2", "3")
        assert s.id == sample_id("1+2", "3")
        assert s.id != mk("1+2", "4").id

    def test_jsonl_roundtrip(self, tmp_path):
        samples = [mk("1+2", "3", difficulty=1), mk("r:ab", "ba", NON_REASONING)]
        write_jsonl(tmp_path / "c.jsonl", samples)
        assert read_jsonl(tmp_path / "c.jsonl") == samples
        row = json.loads((tmp_path / "c.jsonl").read_text().splitlines()[0])
        assert set(row) == {"id", "query", "response", "reasoning_trace", "task_class", "attributes"}

    def test_tampered_id_rejected(self, tmp_path):
        d = mk("1+2", "3").to_dict()
        d["response"] = "4"
        (tmp_path / "c.jsonl").write_text(json.dumps(d) + "\n")
        with pytest.raises(ValueError, match="c.jsonl:1"):
            read_jsonl(tmp_path / "c.jsonl")

    def test_extract_answer(self):
        assert extract_answer("1+2+0=3;#12") == "12"
        assert extract_answer("12") is None


class TestFilters:
    pool = [mk(f"q{i}", answer_verifiable=bool(i % 3), difficulty=i % 4) for i in range(30)]

    def test_empty_spec(self):
        kept, report = filter_attributes(self.pool, [])
        assert kept == self.pool and report == {}

    def test_verifiable(self):
        kept, report = filter_attributes(self.pool, [{"key": "answer_verifiable", "op": "eq", "value": True}])
        assert kept == [s for s in self.pool if s.attributes["answer_verifiable"]]
        assert sum(report.values()) == 10

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown attribute key"):
            filter_attributes(self.pool, [{"key": "colour", "op": "eq", "value": 1}])

    @given(st.sampled_from(["lt", "le", "gt", "ge", "eq", "ne"]), st.integers(0, 3), st.booleans())
    def test_conjunction_is_intersection(self, op, v, flag):
        p1 = {"key": "difficulty", "op": op, "value": v}
        p2 = {"key": "answer_verifiable", "op": "eq", "value": flag}
        a = {s.id for s in filter_attributes(self.pool, [p1])[0]}
        b = {s.id for s in filter_attributes(self.pool, [p2])[0]}
        both = {s.id for s in filter_attributes(self.pool, [p1, p2])[0]}
        assert both == a & b


class TestMinHash:
    def test_identical(self):
        a = minhash_signature("a b c d e f", seed=3)
        b = minhash_signature("a  b c d e\tf", seed=3)
        assert a.agreement(b) == 1.0
        assert np.array_equal(a.values, b.values)

    def test_too_short(self):
        with pytest.raises(ValueError, match="shorter than shingle size"):
            minhash_signature("a b", n=3)

    def test_disjoint(self):
        a = " ".join(f"a{i}" for i in range(60))
        b = " ".join(f"b{i}" for i in range(60))
        assert jaccard(shingles(a), shingles(b)) == 0.0
        assert minhash_signature(a).agreement(minhash_signature(b)) <= 5 / 128

    def test_planted_jaccard_08(self):
        base = [f"u{i}" for i in range(92)]
        other = base[:82] + [f"v{i}" for i in range(10)]
        a, b = " ".join(base), " ".join(other)
        assert jaccard(shingles(a), shingles(b)) == pytest.approx(0.8, abs=1e-12)
        agree = [minhash_signature(a, seed=s).agreement(minhash_signature(b, seed=s))
                 for s in range(20)]
        assert 0.7 <= np.mean(agree) <= 0.9


class TestLSH:
    def test_exact_duplicate(self):
        a = Sample("one two three four", "five", REASONING, "t")
        b = Sample("one two three", "four t five", REASONING, None)  # same dedup text
        assert a.dedup_text() == b.dedup_text() and a.id != b.id
        res = lsh_dedup([a, b])
        assert len(res.kept) == 1
        assert res.kept[0].id == min(a.id, b.id)
        assert res.report[0]["removed_id"] == max(a.id, b.id)

    def test_bands_rows_product(self):
        with pytest.raises(ValueError, match="num_perm"):
            lsh_dedup([], bands=10, rows=8)

    def test_low_similarity_unchanged(self):
        rng = np.random.default_rng(2)
        corpus = [Sample(" ".join(words(rng, 30)), "r", NON_REASONING) for _ in range(150)]
        sh = [shingles(s.dedup_text()) for s in corpus]
        assert max(jaccard(sh[i], sh[j]) for i in range(150) for j in range(i + 1, 150)) < 0.3
        res = lsh_dedup(corpus)
        assert res.kept == corpus and res.report == []

    def test_planted_recall_and_soundness(self):
        rng = np.random.default_rng(3)
        base = [" ".join(words(rng, 80)) for _ in range(200)]
        corpus = [Sample(t, "r", NON_REASONING) for t in base]
        for i in range(20):
            w = base[i].split()
            w[-2] = "zzz"  # Jaccard (78-2)/(78+2) = 0.95
            corpus.append(Sample(" ".join(w), "r", NON_REASONING))
        res = lsh_dedup(corpus, threshold=0.8)
        assert len(corpus) - len(res.kept) >= 19
        kept_ids = {s.id for s in res.kept}
        for r in res.report:
            assert r["agreement"] >= 0.8
            assert r["kept_id"] in kept_ids
            assert r["kept_id"] < r["removed_id"]


class TestCompression:
    def test_golden_size(self):
        assert compressed_size(GOLDEN_TEXT) == GOLDEN_SIZE

    def test_duplicate_lower_than_novel(self):
        rng = np.random.default_rng(4)
        sel = bytes(rng.integers(97, 123, 400, dtype=np.uint8))
        dup = sel[:200]
        fresh = bytes(rng.integers(97, 123, 200, dtype=np.uint8))
        assert compression_ratio(sel, dup) < compression_ratio(sel, fresh)

    def test_empty_selection(self):
        assert compression_ratio(b"", GOLDEN_TEXT) == GOLDEN_SIZE / len(GOLDEN_TEXT)

    def test_candidate_required(self):
        with pytest.raises(ValueError):
            compression_ratio(b"abc", b"")


class TestZipSelect:
    def _pool(self):
        a = Sample("alpha beta gamma delta", "epsilon", NON_REASONING)
        a2 = Sample("alpha beta gamma", "delta epsilon", NON_REASONING)
        b = Sample("9341 7720 1156 8802 3317", "6624 5590", NON_REASONING)
        return a, a2, b

    def test_whole_pool(self):
        pool = list(self._pool())
        assert sorted(s.id for s in zip_select(pool, 5)) == sorted(s.id for s in pool)
        assert zip_select(pool, 0) == []

    def test_never_both_copies(self):
        a, a2, b = self._pool()
        sel = zip_select([a, a2, b], 2)
        ids = {s.id for s in sel}
        assert b.id in ids
        assert len(ids & {a.id, a2.id}) == 1

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        pool = [Sample(" ".join(words(rng, 10, 50)), "r", NON_REASONING) for _ in range(300)]
        assert zip_select(pool, 20, seed=1) == zip_select(pool, 20, seed=1)

    def test_negative_budget(self):
        with pytest.raises(ValueError):
            zip_select([], -1)


class TestMixing:
    R = [mk(f"r{i}") for i in range(20)]
    N = [mk(f"n{i}", cls=NON_REASONING) for i in range(20)]

    def test_four(self):
        out = ratio_sample(self.R, self.N, 4, seed=0)
        assert sum(s.task_class == REASONING for s in out) == 3
        assert sum(s.task_class == NON_REASONING for s in out) == 1

    def test_zero(self):
        assert ratio_sample(self.R, self.N, 0) == []

    def test_shortfall(self):
        with pytest.raises(ShortfallError) as exc:
            ratio_sample(self.R, [], 4)
        assert exc.value.shortfall == 1

    @settings(max_examples=30)
    @given(st.integers(0, 24), st.integers(0, 1000))
    def test_counts_every_total(self, total, seed):
        out = ratio_sample(self.R, self.N, total, seed)
        n_r = sum(s.task_class == REASONING for s in out)
        assert n_r == -(-3 * total // 4) == class_quotas(total)[0]
        assert len(out) == total
        assert len({s.id for s in out}) == total
        assert out == ratio_sample(self.R, self.N, total, seed)
