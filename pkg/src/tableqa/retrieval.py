"""BM25 sparse retrieval over a user-supplied corpus.

Scoring for a query with keywords k_1..k_m against document d:

    score(d) = sum_j idf(k_j) * tf(k_j, d) * (k1 + 1)
               / (tf(k_j, d) + k1 * (1 - b + b * |d| / avg_len))

with idf(k) = ln((n_docs - df + 0.5) / (df + 0.5) + 1), the non-negative
variant. Repeated query keywords contribute once per occurrence. Documents
that share no term with the query score 0 and are never returned.

Corpus files are UTF-8 JSON lines: {"id": str, "text": str, "title": str?}.

The index persists as a versioned JSON-lines file:
    line 1   {"format": "tableqa-bm25-index", "version": 1, "k1": ..., "b": ...,
              "n_docs": ..., "avg_len": ...}
    then     {"doc": id, "len": int, "text": str, "title": str?}  per document,
             in indexing order
    then     {"term": str, "postings": [[doc id, tf], ...]}  per term, terms
             sorted, postings sorted by doc id
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .text import STOPWORDS, first_sentence, tokenize


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: str | None = None


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


@dataclass
class InvertedIndex:
    params: Bm25Params
    postings: dict[str, tuple[tuple[str, int], ...]]  # term -> ((doc id, tf), ...)
    doc_len: dict[str, int]
    texts: dict[str, str]
    titles: dict[str, str | None]
    n_docs: int
    avg_len: float

    def __post_init__(self):
        self._tf = {term: dict(plist) for term, plist in self.postings.items()}

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)

    def tf(self, term: str, doc_id: str) -> int:
        return self._tf.get(term, {}).get(doc_id, 0)


def build_index(corpus: Iterable[Document], params: Bm25Params | None = None) -> InvertedIndex:
    params = params or Bm25Params()
    term_docs: dict[str, dict[str, int]] = {}
    doc_len: dict[str, int] = {}
    texts: dict[str, str] = {}
    titles: dict[str, str | None] = {}
    for doc in corpus:
        if doc.doc_id in doc_len:
            raise ValueError(f"duplicate document id {doc.doc_id!r}")
        tokens = tokenize(doc.text)
        doc_len[doc.doc_id] = len(tokens)
        texts[doc.doc_id] = doc.text
        titles[doc.doc_id] = doc.title
        for term, tf in Counter(tokens).items():
            term_docs.setdefault(term, {})[doc.doc_id] = tf
    if not doc_len:
        raise ValueError("corpus is empty")
    postings = {
        term: tuple(sorted(docs.items()))
        for term, docs in sorted(term_docs.items())
    }
    n_docs = len(doc_len)
    avg_len = sum(doc_len.values()) / n_docs
    return InvertedIndex(
        params=params,
        postings=postings,
        doc_len=doc_len,
        texts=texts,
        titles=titles,
        n_docs=n_docs,
        avg_len=avg_len,
    )


def _term_weight(index: InvertedIndex, term: str, tf: int, length: int) -> float:
    k1, b = index.params.k1, index.params.b
    norm = tf + k1 * (1.0 - b + b * length / index.avg_len)
    return index.idf(term) * tf * (k1 + 1.0) / norm


def bm25_score(index: InvertedIndex, query_tokens: Iterable[str], doc_id: str) -> float:
    """Score one document against the query keywords, in keyword order."""
    if doc_id not in index.doc_len:
        raise KeyError(f"unknown document id {doc_id!r}")
    length = index.doc_len[doc_id]
    score = 0.0
    for term in query_tokens:
        tf = index.tf(term, doc_id)
        if tf:
            score += _term_weight(index, term, tf, length)
    return score


def search(
    index: InvertedIndex,
    query: str,
    k: int,
    drop_stopwords: bool = False,
) -> list[tuple[str, float]]:
    """Top-k documents by score (descending), ties by ascending doc id.

    Only documents with a positive score are returned; fewer than k matches
    yield a shorter list.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    tokens = tokenize(query)
    if drop_stopwords:
        tokens = [t for t in tokens if t not in STOPWORDS]
    scores: dict[str, float] = {}
    for term in tokens:
        for doc_id, tf in index.postings.get(term, ()):
            w = _term_weight(index, term, tf, index.doc_len[doc_id])
            scores[doc_id] = scores.get(doc_id, 0.0) + w
    ranked = sorted(
        ((doc_id, s) for doc_id, s in scores.items() if s > 0.0),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return ranked[:k]


def retrieve_context(index: InvertedIndex, question: str, drop_stopwords: bool = False) -> str:
    """First sentence of the best-matching document; empty string if none."""
    hits = search(index, question, k=1, drop_stopwords=drop_stopwords)
    if not hits:
        return ""
    return first_sentence(index.texts[hits[0][0]])


def load_corpus(path: str | Path) -> list[Document]:
    docs: list[Document] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"corpus line {lineno}: invalid JSON ({exc.msg})") from exc
            if "id" not in obj or "text" not in obj:
                raise ValueError(f"corpus line {lineno}: record needs 'id' and 'text'")
            docs.append(Document(doc_id=str(obj["id"]), text=str(obj["text"]), title=obj.get("title")))
    return docs


def save_index(index: InvertedIndex, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format": "tableqa-bm25-index",
            "version": 1,
            "k1": index.params.k1,
            "b": index.params.b,
            "n_docs": index.n_docs,
            "avg_len": index.avg_len,
        }
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for doc_id in index.doc_len:
            record = {"doc": doc_id, "len": index.doc_len[doc_id], "text": index.texts[doc_id]}
            if index.titles.get(doc_id) is not None:
                record["title"] = index.titles[doc_id]
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        for term in index.postings:
            record = {"term": term, "postings": [[d, tf] for d, tf in index.postings[term]]}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_index(path: str | Path) -> InvertedIndex:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "tableqa-bm25-index":
            raise ValueError("not an index file")
        if header.get("version") != 1:
            raise ValueError(f"unsupported index version {header.get('version')}")
        doc_len: dict[str, int] = {}
        texts: dict[str, str] = {}
        titles: dict[str, str | None] = {}
        postings: dict[str, tuple[tuple[str, int], ...]] = {}
        for line in fh:
            obj = json.loads(line)
            if "doc" in obj:
                doc_len[obj["doc"]] = obj["len"]
                texts[obj["doc"]] = obj["text"]
                titles[obj["doc"]] = obj.get("title")
            else:
                postings[obj["term"]] = tuple((d, tf) for d, tf in obj["postings"])
    return InvertedIndex(
        params=Bm25Params(k1=header["k1"], b=header["b"]),
        postings=postings,
        doc_len=doc_len,
        texts=texts,
        titles=titles,
        n_docs=header["n_docs"],
        avg_len=header["avg_len"],
    )
