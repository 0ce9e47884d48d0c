"""Okapi BM25 inverted index over tokenized document bodies.

Used to find each document's most similar neighbor when building hard
negatives. k1=1.2, b=0.75 and the +1-smoothed idf are the canonical
defaults; summation over query terms runs in ascending token-id order so a
freshly built index and a deserialized one score bit-identically.
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, Vocabulary, tokenize

INDEX_MAGIC = b"UMSEIDX1"


@dataclass
class Bm25Index:
    postings: dict[int, list[tuple[int, int]]]  # token -> [(doc ordinal, tf)]
    doc_len: list[int]
    avg_doc_len: float
    n_docs: int
    doc_ids: list[str]
    k1: float = 1.2
    b: float = 0.75
    # Per-document term frequencies, derived from postings; kept for scoring.
    doc_tfs: list[dict[int, int]] = field(default_factory=list, repr=False)
    _arrays: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.doc_tfs:
            self.doc_tfs = [{} for _ in range(self.n_docs)]
            for token in sorted(self.postings):
                for ordinal, tf in self.postings[token]:
                    self.doc_tfs[ordinal][token] = tf

    def idf(self, token: int) -> float:
        df = len(self.postings.get(token, ()))
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)

    def _posting_arrays(self, token: int) -> tuple[np.ndarray, np.ndarray]:
        cached = self._arrays.get(token)
        if cached is None:
            plist = self.postings[token]
            cached = (
                np.fromiter((o for o, _ in plist), dtype=np.int64, count=len(plist)),
                np.fromiter((tf for _, tf in plist), dtype=np.float64, count=len(plist)),
            )
            self._arrays[token] = cached
        return cached


def build_index(corpus: Corpus, vocab: Vocabulary, k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    """Index document bodies (not summaries). Deterministic."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    postings: dict[int, list[tuple[int, int]]] = {}
    doc_len: list[int] = []
    for ordinal, doc in enumerate(corpus.documents):
        ids = tokenize(doc.text, vocab)
        doc_len.append(len(ids))
        for token, tf in sorted(Counter(ids).items()):
            postings.setdefault(token, []).append((ordinal, tf))
    postings = {t: postings[t] for t in sorted(postings)}
    return Bm25Index(
        postings=postings,
        doc_len=doc_len,
        avg_doc_len=sum(doc_len) / len(doc_len),
        n_docs=len(corpus),
        doc_ids=[d.id for d in corpus.documents],
        k1=k1,
        b=b,
    )


def bm25_score(index: Bm25Index, query: list[int], doc: int) -> float:
    """Okapi score of one document for a query token sequence.

    Each occurrence of a query term contributes independently; distinct
    terms are accumulated in ascending token-id order.
    """
    if not 0 <= doc < index.n_docs:
        raise IndexError(f"doc ordinal {doc} out of range")
    tf_map = index.doc_tfs[doc]
    norm = index.k1 * (1.0 - index.b + index.b * index.doc_len[doc] / index.avg_doc_len)
    score = 0.0
    for token, qtf in sorted(Counter(query).items()):
        tf = tf_map.get(token, 0)
        if tf == 0:
            continue
        score += qtf * index.idf(token) * tf * (index.k1 + 1.0) / (tf + norm)
    return score


def _score_all(index: Bm25Index, query_counts: list[tuple[int, int]]) -> np.ndarray:
    """Scores of every document for a (token, qtf) list, vectorized over the
    postings of each term. Per-document addition order matches bm25_score."""
    scores = np.zeros(index.n_docs)
    dl = np.asarray(index.doc_len, dtype=np.float64)
    norm = index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_len)
    for token, qtf in query_counts:
        if token not in index.postings:
            continue
        ordinals, tfs = index._posting_arrays(token)
        contrib = qtf * index.idf(token) * tfs * (index.k1 + 1.0) / (tfs + norm[ordinals])
        scores[ordinals] += contrib
    return scores


def most_similar(index: Bm25Index, doc: int, k: int = 1) -> list[int]:
    """Top-k neighbors of a document, querying with its own token sequence.

    The document itself is excluded; ties break by ascending ordinal.
    """
    if index.n_docs < 2:
        raise ValueError("no neighbor exists")
    if k < 1:
        raise ValueError("k must be >= 1")
    query_counts = sorted(index.doc_tfs[doc].items())
    scores = _score_all(index, query_counts)
    candidates = [o for o in range(index.n_docs) if o != doc]
    candidates.sort(key=lambda o: (-scores[o], o))
    return candidates[: min(k, index.n_docs - 1)]


def save_index(index: Bm25Index, path: str | Path) -> None:
    """Versioned binary layout (all little-endian):

    magic 8s | k1 f8 | b f8 | avg_doc_len f8 | n_docs u32
    per doc: id_len u16, id utf-8, doc_len u32
    n_tokens u32; per token (ascending id): token u32, n_postings u32,
    then (ordinal u32, tf u32) pairs in ascending ordinal order.
    """
    out = bytearray()
    out += INDEX_MAGIC
    out += struct.pack("<dddI", index.k1, index.b, index.avg_doc_len, index.n_docs)
    for doc_id, dl in zip(index.doc_ids, index.doc_len):
        raw = doc_id.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<I", dl)
    out += struct.pack("<I", len(index.postings))
    for token in sorted(index.postings):
        plist = index.postings[token]
        out += struct.pack("<II", token, len(plist))
        for ordinal, tf in plist:
            out += struct.pack("<II", ordinal, tf)
    Path(path).write_bytes(bytes(out))


def load_index(path: str | Path) -> Bm25Index:
    data = Path(path).read_bytes()
    if data[:8] != INDEX_MAGIC:
        raise ValueError(f"not an index file (bad magic): {path}")
    off = 8
    k1, b, avg_doc_len, n_docs = struct.unpack_from("<dddI", data, off)
    off += struct.calcsize("<dddI")
    doc_ids: list[str] = []
    doc_len: list[int] = []
    for _ in range(n_docs):
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        doc_ids.append(data[off : off + id_len].decode("utf-8"))
        off += id_len
        (dl,) = struct.unpack_from("<I", data, off)
        off += 4
        doc_len.append(dl)
    (n_tokens,) = struct.unpack_from("<I", data, off)
    off += 4
    postings: dict[int, list[tuple[int, int]]] = {}
    for _ in range(n_tokens):
        token, n_post = struct.unpack_from("<II", data, off)
        off += 8
        plist = []
        for _ in range(n_post):
            ordinal, tf = struct.unpack_from("<II", data, off)
            off += 8
            plist.append((ordinal, tf))
        postings[token] = plist
    return Bm25Index(
        postings=postings,
        doc_len=doc_len,
        avg_doc_len=avg_doc_len,
        n_docs=n_docs,
        doc_ids=doc_ids,
        k1=k1,
        b=b,
    )
