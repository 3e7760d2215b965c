"""Corpus chunking, embedding and exact cosine top-k retrieval."""
from __future__ import annotations

import hashlib
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Protocol, Sequence

import numpy as np

__all__ = [
    "Chunk",
    "ChunkId",
    "ChunkIndex",
    "ChunkParams",
    "DEFAULT_CHUNKS",
    "EmbedderMismatch",
    "EmptyCorpusError",
    "HashingEmbedder",
    "RemoteEmbedder",
    "RetrievalResult",
    "SHORT_CHUNKS",
    "build_index",
    "chunk_document",
    "ingest_corpus",
    "query",
]

log = logging.getLogger(__name__)

CORPUS_SUFFIXES = (".txt", ".md", ".markdown")
# Highest priority first; a raw character cut is the fallback.
_SEPARATOR_LEVELS: tuple[tuple[str, ...], ...] = (("\n\n",), ("\n",), (". ", "! ", "? "), (" ",))


class EmptyCorpusError(ValueError):
    pass


class EmbedderMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ChunkParams:
    chunk_size: int = 5000
    overlap: int = 500

    def __post_init__(self) -> None:
        if not (isinstance(self.chunk_size, int) and isinstance(self.overlap, int)):
            raise ValueError("chunk_size and overlap must be integers")
        if not self.chunk_size > self.overlap >= 0:
            raise ValueError(f"need chunk_size > overlap >= 0, got {self.chunk_size}/{self.overlap}")


DEFAULT_CHUNKS = ChunkParams(5000, 500)
SHORT_CHUNKS = ChunkParams(1000, 100)  # short-window preset used for the incident replays


class ChunkId(NamedTuple):
    doc_id: str
    ordinal: int

    def __str__(self) -> str:
        return f"{self.doc_id}#{self.ordinal}"


@dataclass(frozen=True)
class Chunk:
    chunk_id: ChunkId
    start: int
    end: int
    text: str

    @property
    def doc_id(self) -> str:
        return self.chunk_id.doc_id

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end


def _split_point(text: str, lo: int, hi: int) -> int:
    """End offset for a chunk that must finish in ``(lo, hi]``.

    Takes the last occurrence of the highest-priority separator, keeping the
    separator inside the chunk; falls back to a hard cut at ``hi``.
    """
    for level in _SEPARATOR_LEVELS:
        best = -1
        for sep in level:
            pos = text.rfind(sep, lo, hi)
            if pos != -1:
                best = max(best, pos + len(sep))
        if best > lo:
            return best
    return hi


def _next_start(text: str, end: int, overlap: int) -> int:
    """Start of the following chunk: ``end - overlap`` nudged forward to a word boundary."""
    start = end - overlap
    if overlap == 0:
        return end
    for i in range(start, end):
        if i > 0 and text[i - 1].isspace() and not text[i].isspace():
            return i
    return start


def chunk_document(text: str, chunk_size: int = 5000, overlap: int = 500, doc_id: str = "doc") -> list[Chunk]:
    """Split ``text`` into overlapping chunks of at most ``chunk_size`` characters.

    Cut points prefer blank lines, then newlines, then sentence ends, then
    spaces, then raw characters. Consecutive chunks share at most ``overlap``
    characters, and every character lands in some chunk. On text with no
    separators this reduces to a sliding window with stride
    ``chunk_size - overlap``.
    """
    params = ChunkParams(chunk_size, overlap)
    size, overlap = params.chunk_size, params.overlap
    n = len(text)
    chunks: list[Chunk] = []
    start = 0
    while start < n:
        if n - start <= size:
            end = n
        else:
            end = _split_point(text, start + overlap, start + size)
        chunks.append(Chunk(ChunkId(doc_id, len(chunks)), start, end, text[start:end]))
        if end >= n:
            break
        start = _next_start(text, end, overlap)
    return chunks


class Embedder(Protocol):
    embedder_id: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_many(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbedder:
    """Offline embedder: hashed character n-gram counts, L2-normalized.

    Deterministic across processes (CRC32 hashing, no Python ``hash``).
    """

    def __init__(self, dim: int = 512, ngram: int = 3):
        if dim < 1 or ngram < 1:
            raise ValueError("dim and ngram must be positive")
        self.dim = dim
        self.ngram = ngram
        self.embedder_id = f"hashing-{ngram}gram-{dim}"

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        s = " ".join(text.lower().split())
        s = f" {s} "
        vec = np.zeros(self.dim, dtype=np.float64)
        n = self.ngram
        grams = [s[i : i + n] for i in range(max(1, len(s) - n + 1))]
        buckets = [zlib.crc32(g.encode("utf-8")) % self.dim for g in grams]
        np.add.at(vec, buckets, 1.0)
        return vec / np.linalg.norm(vec)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.vstack([self.embed(t) for t in texts])


class RemoteEmbedder:
    """Embeddings from a gateway speaking the completions wire protocol."""

    def __init__(self, gateway, model: str | None = None, dim: int | None = None):
        self.gateway = gateway
        self.model = model or gateway.config.embedding_model
        self.embedder_id = f"remote:{self.model}"
        self.dim = dim or 0

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        vectors = np.asarray(self.gateway.embed_texts(list(texts), model=self.model), dtype=np.float64)
        if self.dim and vectors.shape[1] != self.dim:
            raise EmbedderMismatch(f"embedding dimension {vectors.shape[1]} != configured {self.dim}")
        self.dim = vectors.shape[1]
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        return vectors / np.where(norms == 0, 1.0, norms)


@dataclass(frozen=True)
class RetrievalResult:
    chunk_id: ChunkId
    score: float
    text: str


@dataclass
class ChunkIndex:
    chunks: list[Chunk]
    vectors: np.ndarray
    params: dict
    source_counts: dict[str, int] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.chunks) != len(self.vectors):
            raise ValueError(f"{len(self.chunks)} chunks but {len(self.vectors)} vectors")

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def dim(self) -> int:
        return int(self.params["dim"])

    @property
    def embedder_id(self) -> str:
        return self.params["embedder_id"]

    @property
    def doc_count(self) -> int:
        return len({c.doc_id for c in self.chunks})

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.params, sort_keys=True).encode())
        for c in self.chunks:
            h.update(f"{c.chunk_id}|{c.start}|{c.end}|".encode())
            h.update(c.text.encode())
        h.update(np.ascontiguousarray(self.vectors, dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        header = {
            "params": self.params,
            "chunks": [[c.doc_id, c.chunk_id.ordinal, c.start, c.end] for c in self.chunks],
            "source_counts": self.source_counts,
            "skipped": self.skipped,
        }
        with open(path, "wb") as fh:
            np.savez(
                fh,
                header=np.array(json.dumps(header)),
                texts=np.array([c.text for c in self.chunks], dtype=np.str_),
                vectors=np.asarray(self.vectors, dtype="<f8"),
            )

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder | None = None) -> "ChunkIndex":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            texts = [str(t) for t in data["texts"]]
            vectors = np.array(data["vectors"], dtype=np.float64)
        params = header["params"]
        if embedder is not None:
            if embedder.embedder_id != params["embedder_id"]:
                raise EmbedderMismatch(
                    f"index built with {params['embedder_id']!r}, loader uses {embedder.embedder_id!r}"
                )
            if embedder.dim and embedder.dim != params["dim"]:
                raise EmbedderMismatch(f"index dimension {params['dim']} != embedder dimension {embedder.dim}")
        if vectors.ndim != 2 or (len(vectors) and vectors.shape[1] != params["dim"]):
            raise EmbedderMismatch(f"stored vectors have shape {vectors.shape}, header says dim {params['dim']}")
        chunks = [
            Chunk(ChunkId(doc, ordinal), start, end, text)
            for (doc, ordinal, start, end), text in zip(header["chunks"], texts)
        ]
        return cls(chunks, vectors, params, header.get("source_counts", {}), header.get("skipped", []))


def build_index(
    documents: Sequence[tuple[str, str]],
    embedder: Embedder,
    params: ChunkParams = DEFAULT_CHUNKS,
    *,
    workers: int = 1,
) -> ChunkIndex:
    """Chunk and embed ``(doc_id, text)`` pairs in the given order."""
    chunks: list[Chunk] = []
    counts: dict[str, int] = {}
    for doc_id, text in documents:
        doc_chunks = [c for c in chunk_document(text, params.chunk_size, params.overlap, doc_id) if c.text.strip()]
        counts[doc_id] = len(doc_chunks)
        chunks.extend(doc_chunks)
    texts = [c.text for c in chunks]
    if workers > 1 and len(texts) > 1:
        # map() keeps input order regardless of completion order
        step = max(1, len(texts) // (workers * 4))
        batches = [texts[i : i + step] for i in range(0, len(texts), step)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(embedder.embed_many, batches))
        vectors = np.vstack(parts)
    else:
        vectors = embedder.embed_many(texts)
    dim = embedder.dim if embedder.dim else (vectors.shape[1] if len(vectors) else 0)
    vectors = np.asarray(vectors, dtype=np.float64).reshape(len(chunks), dim)
    index_params = {
        "chunk_size": params.chunk_size,
        "overlap": params.overlap,
        "embedder_id": embedder.embedder_id,
        "dim": dim,
    }
    return ChunkIndex(chunks, vectors, index_params, counts)


def ingest_corpus(
    directory: str | Path,
    embedder: Embedder,
    params: ChunkParams = DEFAULT_CHUNKS,
    *,
    workers: int = 1,
) -> ChunkIndex:
    """Index every text/markdown file under ``directory``, one document per file.

    Files are read in sorted path order; unreadable files are skipped with a
    warning and listed in ``index.skipped``.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptyCorpusError(f"{directory}: not a directory")
    docs: list[tuple[str, str]] = []
    skipped: list[str] = []
    for path in sorted(p for p in directory.rglob("*") if p.is_file() and p.suffix.lower() in CORPUS_SUFFIXES):
        doc_id = path.relative_to(directory).as_posix()
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            log.warning("skipping unreadable corpus file %s: %s", path, exc)
            skipped.append(doc_id)
            continue
        if not text.strip():
            log.warning("skipping empty corpus file %s", path)
            skipped.append(doc_id)
            continue
        docs.append((doc_id, text))
    if not docs:
        raise EmptyCorpusError(f"{directory}: no readable .txt/.md documents")
    index = build_index(docs, embedder, params, workers=workers)
    index.skipped = skipped
    return index


def query(
    index: ChunkIndex,
    text: str,
    k: int,
    embedder: Embedder,
    *,
    distinct_documents: bool = False,
) -> list[RetrievalResult]:
    """Exact top-k chunks by cosine similarity, ties broken by ascending chunk id."""
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if len(index) == 0:
        return []
    if embedder.embedder_id != index.embedder_id:
        raise EmbedderMismatch(f"index built with {index.embedder_id!r}, query uses {embedder.embedder_id!r}")
    q = np.asarray(embedder.embed(text), dtype=np.float64)
    if q.shape != (index.dim,):
        raise EmbedderMismatch(f"query vector has shape {q.shape}, index dim is {index.dim}")
    scores = np.clip(index.vectors @ q, -1.0, 1.0)
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.chunks[i].chunk_id))
    results: list[RetrievalResult] = []
    seen_docs: set[str] = set()
    for i in order:
        chunk = index.chunks[i]
        if distinct_documents:
            if chunk.doc_id in seen_docs:
                continue
            seen_docs.add(chunk.doc_id)
        results.append(RetrievalResult(chunk.chunk_id, float(scores[i]), chunk.text))
        if len(results) == k:
            break
    return results
