from __future__ import annotations

import random
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnbsim.rag import (
    Chunk,
    ChunkId,
    ChunkIndex,
    ChunkParams,
    EmbedderMismatch,
    EmptyCorpusError,
    HashingEmbedder,
    build_index,
    chunk_document,
    ingest_corpus,
    query,
)
from oracles import brute_force_topk, sliding_window_spans

EMB = HashingEmbedder()
WORDS = "alpha beta gamma delta lateral movement password spray beacon exfil token".split()


def random_document(rng: random.Random, max_len: int) -> str:
    parts = []
    total = rng.randint(0, max_len)
    while sum(map(len, parts)) < total:
        r = rng.random()
        if r < 0.03:
            parts.append("\n\n")
        elif r < 0.08:
            parts.append("\n")
        elif r < 0.15:
            parts.append(rng.choice([". ", "! ", "? "]))
        elif r < 0.2:
            parts.append("x" * rng.randint(50, 1500))  # long unbroken runs
        else:
            parts.append(rng.choice(WORDS) + " ")
    return "".join(parts)[:total]


def check_chunks(text: str, chunks: list[Chunk], size: int, overlap: int) -> None:
    n = len(text)
    if n == 0:
        assert chunks == []
        return
    assert chunks[0].start == 0 and chunks[-1].end == n
    for i, c in enumerate(chunks):
        assert c.chunk_id == ChunkId("doc", i)
        assert c.text == text[c.start : c.end]
        assert 0 < len(c.text) <= size
    for a, b in zip(chunks, chunks[1:]):
        assert b.start > a.start  # ordinals ascend with start
        assert b.start <= a.end  # no gap: union of spans covers [0, n)
        assert a.end - b.start <= overlap


def test_fits_in_one_chunk():
    text = "word " * 800
    chunks = chunk_document(text, 5000, 500)
    assert len(chunks) == 1 and chunks[0].text == text


def test_empty_document():
    assert chunk_document("", 5000, 500) == []


def test_boundary_free_sliding_window():
    text = "".join(random.Random(1).choice("abcdefgh") for _ in range(9500))
    spans = [c.span for c in chunk_document(text, 5000, 500)]
    assert spans == [(0, 5000), (4500, 9500)] == sliding_window_spans(9500, 5000, 500)


@pytest.mark.parametrize("size, overlap", [(1000, 100), (5000, 500), (10, 0), (7, 6)])
def test_boundary_free_matches_oracle(size, overlap):
    rng = random.Random(size)
    for n in [0, 1, size - 1, size, size + 1, 3 * size + 17]:
        text = "".join(rng.choice("xyz") for _ in range(n))
        assert [c.span for c in chunk_document(text, size, overlap)] == sliding_window_spans(n, size, overlap)


def test_prefers_paragraph_boundary():
    text = "a" * 600 + "\n\n" + "b" * 300 + ". " + "c" * 300
    chunks = chunk_document(text, 1000, 100)
    assert chunks[0].text.endswith("\n\n")


@pytest.mark.parametrize("bad", [(100, 100), (100, 200), (0, 0), (100, -1)])
def test_parameter_violation(bad):
    with pytest.raises(ValueError):
        chunk_document("text", *bad)


@pytest.mark.parametrize("size, overlap", [(1000, 100), (5000, 500)])
def test_chunk_properties_random_corpus(size, overlap):
    rng = random.Random(size * 31 + overlap)
    for _ in range(200):
        text = random_document(rng, 4 * size)
        check_chunks(text, chunk_document(text, size, overlap), size, overlap)


@settings(max_examples=300, deadline=None)
@given(
    text=st.text(alphabet=st.sampled_from(list("ab .!?\n\t")), max_size=400),
    size=st.integers(2, 60),
    data=st.data(),
)
def test_chunk_properties_hypothesis(text, size, data):
    overlap = data.draw(st.integers(0, size - 1))
    check_chunks(text, chunk_document(text, size, overlap), size, overlap)


def test_embedder_deterministic_and_normalized():
    a, b = EMB.embed("password spraying attack"), EMB.embed("password spraying attack")
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-6
    assert a.shape == (512,)
    with pytest.raises(ValueError):
        EMB.embed("   ")


def test_self_similarity_beats_unrelated():
    q = EMB.embed("password spraying attack")
    same = float(q @ EMB.embed("password spraying attack"))
    other = float(q @ EMB.embed("quarterly revenue forecast for the bakery"))
    assert abs(same - 1.0) < 1e-9
    assert other < same


def _random_index(n_chunks: int, seed: int, duplicates: int = 0) -> ChunkIndex:
    rng = random.Random(seed)
    docs = []
    for d in range(n_chunks - duplicates):
        docs.append((f"d{d:04d}", " ".join(rng.choice(WORDS) for _ in range(rng.randint(3, 12)))))
    for d in range(duplicates):  # exact copies force score ties
        docs.append((f"z{d:04d}", docs[d][1]))
    index = build_index(docs, EMB, ChunkParams(5000, 500))
    assert len(index) == n_chunks
    return index


def test_k_clipped():
    index = _random_index(2, 0)
    assert len(query(index, "alpha", 3, EMB)) == 2


def test_exact_text_ranks_first():
    index = _random_index(50, 3)
    target = index.chunks[17]
    top = query(index, target.text, 1, EMB)[0]
    assert top.text == target.text
    assert abs(top.score - 1.0) < 1e-6


def test_results_sorted_with_tie_order():
    index = _random_index(60, 4, duplicates=20)
    for q in ["alpha beta", "spray token", "exfil"]:
        res = query(index, q, 60, EMB)
        keys = [(-round(r.score, 12), r.chunk_id) for r in res]
        assert keys == sorted(keys)
        assert all(-1.0 <= r.score <= 1.0 for r in res)


def test_query_equals_brute_force():
    index = _random_index(500, 11, duplicates=40)
    vectors = index.vectors.tolist()
    ids = [c.chunk_id for c in index.chunks]
    rng = random.Random(5)
    for _ in range(50):
        text = " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 6)))
        q = EMB.embed(text).tolist()
        for k in (1, 3, 5):
            assert [r.chunk_id for r in query(index, text, k, EMB)] == brute_force_topk(vectors, ids, q, k)


def test_distinct_documents_flag():
    docs = [("a", "beacon " * 300), ("b", "beacon token " * 10)]
    index = build_index(docs, EMB, ChunkParams(400, 40))
    assert index.source_counts["a"] > 1
    res = query(index, "beacon", 3, EMB, distinct_documents=True)
    assert len({r.chunk_id.doc_id for r in res}) == len(res) == 2


def test_query_rejects_bad_k_and_mismatch():
    index = _random_index(5, 1)
    with pytest.raises(ValueError):
        query(index, "alpha", 0, EMB)
    with pytest.raises(EmbedderMismatch):
        query(index, "alpha", 1, HashingEmbedder(dim=256))


def test_empty_index_returns_nothing():
    empty = ChunkIndex([], np.zeros((0, 512)), {"chunk_size": 10, "overlap": 1, "embedder_id": EMB.embedder_id, "dim": 512})
    assert query(empty, "anything", 3, EMB) == []


def test_index_vectors_unit_norm():
    index = _random_index(100, 2)
    assert np.allclose(np.linalg.norm(index.vectors, axis=1), 1.0, atol=1e-6)


def _write_corpus(root, n):
    root.mkdir()
    rng = random.Random(n)
    for i in range(n):
        body = f"Incident {i}\n\n" + " ".join(rng.choice(WORDS) for _ in range(rng.randint(40, 400)))
        (root / f"story_{i:03d}.txt").write_text(body, encoding="utf-8")


def test_ingest_news_scale_corpus(tmp_path):
    _write_corpus(tmp_path / "news", 100)
    index = ingest_corpus(tmp_path / "news", EMB, ChunkParams(1000, 100))
    assert index.doc_count == 100 and len(index) >= 100
    assert sorted(index.source_counts) == [f"story_{i:03d}.txt" for i in range(100)]


def test_ingest_wiki_scale_corpus(tmp_path):
    _write_corpus(tmp_path / "wiki", 125)
    assert ingest_corpus(tmp_path / "wiki", EMB).doc_count == 125


def test_ingest_is_deterministic(tmp_path):
    _write_corpus(tmp_path / "c", 20)
    a = ingest_corpus(tmp_path / "c", EMB, ChunkParams(300, 30))
    b = ingest_corpus(tmp_path / "c", EMB, ChunkParams(300, 30), workers=4)
    assert a.digest() == b.digest()


def test_ingest_empty_directory(tmp_path):
    (tmp_path / "none").mkdir()
    with pytest.raises(EmptyCorpusError):
        ingest_corpus(tmp_path / "none", EMB)


def test_ingest_skips_unreadable(tmp_path, caplog):
    _write_corpus(tmp_path / "c", 3)
    (tmp_path / "c" / "broken.txt").write_bytes(b"\xff\xfe\x00bad")
    index = ingest_corpus(tmp_path / "c", EMB)
    assert index.skipped == ["broken.txt"] and index.doc_count == 3
    assert "broken.txt" in caplog.text


def test_save_load_roundtrip(tmp_path):
    index = _random_index(30, 9)
    path = tmp_path / "index.npz"
    index.save(path)
    loaded = ChunkIndex.load(path, EMB)
    assert loaded.digest() == index.digest()
    with pytest.raises(EmbedderMismatch):
        ChunkIndex.load(path, HashingEmbedder(dim=128))


def test_query_speed():
    index = _random_index(500, 12)
    t0 = time.perf_counter()
    for i in range(150):
        query(index, WORDS[i % len(WORDS)], 5, EMB)
    assert time.perf_counter() - t0 < 5.0
