import numpy as np
import pytest

from colberter.encoding import ReferenceEncoder
from colberter.indexing import IndexManifest, IndexSet, build_indices
from colberter.reduction import (
    PASSAGE,
    QUERY,
    ReductionHeads,
    encode_text,
)
from colberter.scoring import score_tokens_exact_match
from colberter.tokenization import tokenize

CORPUS = [
    ("d1", "the running dog"),
    ("d2", "a dog runs fast and barks"),
    ("d3", "sulfa drugs contain sulfa"),
    ("d4", "the quick brown fox"),
    ("d5", "dog and fox run"),
]


def make_heads(seed=0, uni=False, gate_bias=0.5, gate_weight=None, token_dim=3):
    heads = ReductionHeads.initialize(8, 4, token_dim, seed=seed, uni=uni)
    heads.gate_bias = gate_bias
    if gate_weight is not None:
        heads.gate_weight = np.asarray(gate_weight, dtype=np.float64)
    return heads


def build(vocab, corpus=CORPUS, heads=None, em=True, **kw):
    heads = heads or make_heads(uni=False)
    encoder = ReferenceEncoder(seed=1, d_enc=8, window=1)
    return build_indices(corpus, vocab, encoder, heads, em_enabled=em, **kw)


def encode_query(text, vocab, index):
    t = tokenize(text, vocab, stemming=index.manifest.stemming)
    e = index.query_encoder().encode(t)
    return encode_text(t, e, index.heads, QUERY)


class TestBuild:
    def test_toy_counts(self, vocab):
        index = build(vocab)
        assert index.doc_count == 5
        expected_entries = sum(len(words) for words, _ in index.word_store)
        assert index.manifest.total_word_entries == expected_entries

    def test_duplicate_doc_id(self, vocab):
        with pytest.raises(ValueError, match="duplicate doc id"):
            build(vocab, corpus=[("d1", "a"), ("d1", "b")])

    def test_empty_corpus(self, vocab):
        with pytest.raises(ValueError, match="empty corpus"):
            build(vocab, corpus=[])

    def test_all_gates_closed_empties_inverted_not_dense(self, vocab):
        heads = make_heads(gate_bias=-10.0)
        index = build(vocab, heads=heads)
        assert index.inverted == {}
        assert index.manifest.total_word_entries == 0
        assert index.cls_matrix.shape == (5, 4)
        assert np.all(np.any(index.cls_matrix != 0, axis=1))

    def test_word_entries_bounded_by_unique_stems(self, vocab):
        index = build(vocab)
        total_stems = sum(
            len(tokenize(text, vocab).unique_stems) for _, text in CORPUS)
        assert index.manifest.total_word_entries <= total_stems
        # Gate bias 0.5 with zero weights keeps every word.
        assert index.manifest.total_word_entries == total_stems

    def test_uni_requires_em(self, vocab):
        heads = make_heads(uni=True)
        with pytest.raises(ValueError, match="uni mode requires"):
            build(vocab, heads=heads, em=False)

    def test_uni_build_stores_scalars(self, vocab):
        index = build(vocab, heads=make_heads(uni=True), em=True)
        assert index.manifest.d_u == 1
        for words, _ in index.word_store:
            for w in words:
                assert w.vector.shape == (1,)

    def test_non_em_build_has_no_inverted(self, vocab):
        index = build(vocab, em=False)
        assert index.inverted is None
        assert len(index.word_store) == 5

    def test_postings_sorted_by_ordinal(self, vocab):
        index = build(vocab)
        for postings in index.inverted.values():
            ordinals = [o for o, _ in postings]
            assert ordinals == sorted(ordinals)


def manual_index(rows, em=False):
    rows = np.asarray(rows, dtype=np.float32)
    n, d_cls = rows.shape
    heads = ReductionHeads.initialize(4, d_cls, 2, seed=0)
    manifest = IndexManifest(
        d_cls=d_cls, d_t=2, d_u=None, em_enabled=em, stemming=True,
        threshold=0.0, doc_count=n, total_word_entries=0,
        store_removed_words=True,
        encoder={"type": "reference", "seed": 0, "d_enc": 4, "window": 1},
        config_hash="0" * 64)
    from colberter.tokenization import Vocabulary

    vocab = Vocabulary.from_tokens(["[UNK]", "a"])
    return IndexSet(manifest=manifest, doc_ids=[f"d{i}" for i in range(n)],
                    texts=["" for _ in range(n)], cls_matrix=rows,
                    word_store=[([], []) for _ in range(n)],
                    inverted={} if em else None, heads=heads, vocab=vocab)


class TestDenseTopk:
    def test_full_ordering_matches_brute_force(self, vocab):
        index = build(vocab)
        rng = np.random.default_rng(3)
        q = rng.normal(size=4).astype(np.float32)
        ranked = index.dense_topk(q, k=index.doc_count)
        scores = index.cls_matrix.astype(np.float64) @ q.astype(np.float64)
        expected = sorted(
            ((float(scores[i]), i) for i in range(index.doc_count)),
            key=lambda t: (-t[0], t[1]))
        assert [doc for doc, _ in ranked] == [index.doc_ids[i] for _, i in expected]
        for (doc, s), (es, i) in zip(ranked, expected):
            assert s == es

    def test_unit_row_ranks_itself_first(self):
        rng = np.random.default_rng(5)
        rows = rng.normal(size=(6, 4))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        index = manual_index(rows)
        for j in range(6):
            top = index.dense_topk(index.cls_matrix[j], k=1)
            assert top[0][0] == f"d{j}"

    def test_tie_breaks_to_lower_ordinal(self):
        index = manual_index([[1.0, 0.0], [1.0, 0.0]])
        top = index.dense_topk(np.array([1.0, 0.0], dtype=np.float32), k=1)
        assert top[0][0] == "d0"

    def test_k_larger_than_corpus(self):
        index = manual_index([[1.0, 0.0], [0.0, 1.0]])
        assert len(index.dense_topk(np.ones(2, dtype=np.float32), k=10)) == 2

    def test_k_zero_rejected(self):
        index = manual_index([[1.0, 0.0]])
        with pytest.raises(ValueError):
            index.dense_topk(np.ones(2, dtype=np.float32), k=0)


class TestSparseTopk:
    def test_requires_em(self, vocab):
        index = build(vocab, em=False)
        q = encode_query("dog", vocab, index)
        with pytest.raises(ValueError,
                           match="sparse retrieval requires exact-match build"):
            index.sparse_topk(q, k=3)

    def test_no_indexed_stems_gives_empty(self, vocab):
        index = build(vocab)
        q = encode_query("zzzzz", vocab, index)
        assert index.sparse_topk(q, k=3) == []

    def test_single_stem_ranked_by_dot(self, vocab):
        index = build(vocab)
        q = encode_query("dog", vocab, index)
        ranked = index.sparse_topk(q, k=10)
        docs = [doc for doc, _ in ranked]
        assert set(docs) <= {"d1", "d2", "d5"}
        scores = [s for _, s in ranked]
        assert scores == sorted(scores, reverse=True)

    def test_matches_brute_force_em_oracle(self, vocab):
        index = build(vocab)
        for query_text in ("dog runs", "sulfa", "the fox", "quick brown dog"):
            q = encode_query(query_text, vocab, index)
            ranked = index.sparse_topk(q, k=index.doc_count)
            oracle = []
            for ordinal in range(index.doc_count):
                p = index.encoded_passage(ordinal)
                score, _ = score_tokens_exact_match(q, p)
                if any(w.hash == pw.hash for w in q.words for pw in p.words):
                    oracle.append((index.doc_ids[ordinal], score, ordinal))
            oracle.sort(key=lambda t: (-t[1], t[2]))
            assert [d for d, _, _ in oracle] == [d for d, _ in ranked]
            for (d, s), (od, os, _) in zip(ranked, oracle):
                assert s == pytest.approx(os, abs=1e-5)

    def test_accumulation_equals_pair_scoring_per_doc(self, vocab):
        index = build(vocab)
        q = encode_query("dog and sulfa runs", vocab, index)
        ranked = dict(index.sparse_topk(q, k=index.doc_count))
        for doc_id in index.doc_ids:
            p = index.encoded_passage(index.ordinal_of(doc_id))
            expected, _ = score_tokens_exact_match(q, p)
            got = ranked.get(doc_id, 0.0)
            assert got == pytest.approx(expected, abs=1e-5)


class TestFetch:
    def test_fetch_equals_pipeline_output(self, vocab):
        heads = make_heads(gate_weight=[0.4, -0.3, 0.2], gate_bias=0.3)
        index = build(vocab, heads=heads)
        encoder = ReferenceEncoder(seed=1, d_enc=8, window=1)
        for doc_id, text in CORPUS:
            t = tokenize(text, vocab)
            enc = encode_text(t, encoder.encode(t), heads, PASSAGE)
            cls, words, removed = index.fetch(doc_id)
            np.testing.assert_array_equal(cls, enc.cls)
            assert [w.stem for w in words] == [w.stem for w in enc.words]
            for got, want in zip(words, enc.words):
                np.testing.assert_array_equal(got.vector,
                                              want.vector.astype(np.float32))
                assert got.gate == np.float32(want.gate)
            assert removed == enc.removed_stems

    def test_unknown_id(self, vocab):
        index = build(vocab)
        with pytest.raises(KeyError, match="unknown doc id"):
            index.fetch("nope")

    def test_removed_stems_only_when_stored(self, vocab):
        heads = make_heads(gate_weight=[2.0, 2.0, 2.0], gate_bias=-0.05)
        with_removed = build(vocab, heads=heads, store_removed_words=True)
        without = build(vocab, heads=heads, store_removed_words=False)
        any_removed = any(removed for _, removed in with_removed.word_store)
        assert any_removed
        assert all(removed == [] for _, removed in without.word_store)


class TestPersistence:
    def test_round_trip_bit_identical(self, vocab, tmp_path):
        index = build(vocab, heads=make_heads(gate_weight=[0.4, -0.3, 0.2]))
        index.save(tmp_path / "idx")
        loaded = IndexSet.load(tmp_path / "idx")
        assert loaded.manifest == index.manifest
        assert loaded.doc_ids == index.doc_ids
        assert loaded.texts == index.texts
        np.testing.assert_array_equal(loaded.cls_matrix, index.cls_matrix)
        for (lw, lr), (w, r) in zip(loaded.word_store, index.word_store):
            assert lr == r
            assert [x.stem for x in lw] == [x.stem for x in w]
            assert [x.hash for x in lw] == [x.hash for x in w]
            assert [x.gate for x in lw] == [np.float32(x.gate) for x in w]
            for a, b in zip(lw, w):
                np.testing.assert_array_equal(a.vector, b.vector)
        assert set(loaded.inverted) == set(index.inverted)
        for h in index.inverted:
            for (lo, lv), (o, v) in zip(loaded.inverted[h], index.inverted[h]):
                assert lo == o
                np.testing.assert_array_equal(lv, v)

    def test_save_twice_byte_identical(self, vocab, tmp_path):
        index = build(vocab)
        index.save(tmp_path / "a")
        index2 = build(vocab)
        index2.save(tmp_path / "b")
        for name in ("manifest.json", "cls.bin", "words.bin", "inv.bin",
                     "ids.tsv", "heads.bin", "vocab.txt"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes(), name

    def test_corruption_detected(self, vocab, tmp_path):
        index = build(vocab)
        index.save(tmp_path / "idx")
        for name in ("cls.bin", "words.bin", "inv.bin"):
            target = tmp_path / "idx" / name
            raw = bytearray(target.read_bytes())
            raw[len(raw) // 2] ^= 0xFF
            good = target.read_bytes()
            target.write_bytes(bytes(raw))
            with pytest.raises(ValueError, match="checksum mismatch"):
                IndexSet.load(tmp_path / "idx")
            target.write_bytes(good)

    def test_heads_mismatch_refused(self, vocab, tmp_path):
        index = build(vocab)
        other = ReductionHeads.initialize(8, 4, 5, seed=9)
        with pytest.raises(ValueError, match="do not match index manifest"):
            index.validate_heads(other)

    def test_tsv_escaping_round_trip(self, vocab, tmp_path):
        corpus = [("id\twith\ttabs", "line one\nline two\ttabbed"),
                  ("plain", "backslash \\ and \r return")]
        index = build(vocab, corpus=corpus)
        index.save(tmp_path / "idx")
        loaded = IndexSet.load(tmp_path / "idx")
        assert loaded.doc_ids == [doc for doc, _ in corpus]
        assert loaded.texts == [text for _, text in corpus]

    def test_storage_stats(self, vocab, tmp_path):
        index = build(vocab)
        index.save(tmp_path / "idx")
        stats = index.storage_stats()
        assert stats["doc_count"] == 5
        assert stats["word_vectors_per_doc"] == pytest.approx(
            index.manifest.total_word_entries / 5)
        assert stats["cls_bytes"] == 5 * 4 * 4
        assert stats["file_bytes"]["cls.bin"] > 0
