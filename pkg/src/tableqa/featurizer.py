"""Trainable token-embedding featurizer producing initial node features.

Each node's feature vector is the mean of the embedding rows of its first
`max_tokens` tokens (unknown tokens map to the UNK row, id 0). Nodes with no
tokens get a zero vector. The embedding table is trained jointly with the
selector, so gradients flow back into the rows that were actually used.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .graph import TableGraph
from .text import tokenize

UNK_TOKEN = "<unk>"
DEFAULT_MAX_TOKENS = 35


@dataclass
class Vocab:
    tokens: tuple[str, ...]  # position == id; tokens[0] is always UNK

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != UNK_TOKEN:
            raise ValueError("vocab must start with the UNK token at id 0")
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("vocab contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, 0)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.tokens):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        tokens: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                tok, _, idx = line.rstrip("\n").partition("\t")
                if int(idx) != len(tokens):
                    raise ValueError(f"vocab ids out of order at {tok!r}")
                tokens.append(tok)
        return cls(tokens=tuple(tokens))


def build_vocab(dataset: Dataset, min_count: int = 1) -> Vocab:
    """Collect tokens of all questions and cell texts with frequency >= min_count.

    Ids are assigned by descending frequency, ties broken lexicographically,
    starting at 1 (0 is UNK).
    """
    counts: Counter[str] = Counter()
    for ex in dataset:
        counts.update(tokenize(ex.question))
        for row in ex.table.cells:
            for cell in row:
                counts.update(tokenize(cell))
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocab(tokens=(UNK_TOKEN, *kept))


@dataclass
class FeaturizerParams:
    embedding: np.ndarray  # (vocab size, feature dim), float64

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]


def init_featurizer(vocab: Vocab, dim: int, rng: np.random.Generator) -> FeaturizerParams:
    # Small symmetric init keeps early attention logits near zero.
    table = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
    return FeaturizerParams(embedding=table)


def node_token_ids(
    graph: TableGraph, vocab: Vocab, max_tokens: int = DEFAULT_MAX_TOKENS
) -> list[np.ndarray]:
    """Per-node arrays of embedding row ids for the first `max_tokens` tokens."""
    ids = []
    for node in graph.nodes:
        toks = tokenize(node.text)[:max_tokens]
        ids.append(np.array([vocab.id_of(t) for t in toks], dtype=np.int64))
    return ids


def embed_from_ids(embedding: np.ndarray, ids_per_node: list[np.ndarray]) -> np.ndarray:
    features = np.zeros((len(ids_per_node), embedding.shape[1]))
    for i, ids in enumerate(ids_per_node):
        if len(ids):
            features[i] = embedding[ids].mean(axis=0)
    return features


def embed_nodes(
    graph: TableGraph,
    params: FeaturizerParams,
    vocab: Vocab,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    expect_dim: int | None = None,
) -> np.ndarray:
    """Feature matrix of shape (n_nodes, dim) for a graph."""
    if params.embedding.shape[0] != len(vocab):
        raise ValueError(
            f"embedding rows {params.embedding.shape[0]} != vocab size {len(vocab)}"
        )
    if expect_dim is not None and params.dim != expect_dim:
        raise ValueError(f"feature dim {params.dim} does not match expected {expect_dim}")
    return embed_from_ids(params.embedding, node_token_ids(graph, vocab, max_tokens))


def embedding_grad(
    ids_per_node: list[np.ndarray], d_features: np.ndarray, vocab_size: int
) -> np.ndarray:
    """Scatter feature gradients back onto the embedding rows (mean pooling)."""
    grad = np.zeros((vocab_size, d_features.shape[1]))
    for i, ids in enumerate(ids_per_node):
        if len(ids):
            np.add.at(grad, ids, d_features[i] / len(ids))
    return grad
