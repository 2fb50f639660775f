"""Selector training loop, top-k row/column intersection, and checkpoints.

Training runs one example per step, shuffled each epoch from the seed, and
keeps the parameters from the epoch with the best dev cell-selection F1.
A fixed seed makes the whole run bit-reproducible.

Checkpoint container (version 1), little-endian:
    bytes 0..3   magic "TQCK"
    bytes 4..7   format version, uint32
    bytes 8..15  header length in bytes, uint64
    header       UTF-8 JSON: {"config": {...}, "vocab": [tokens in id order],
                 "metadata": {...}, "tensors": [{"name": str, "shape": [...]}]}
    data         the listed tensors, concatenated row-major float64
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import CellCoord, Dataset, QAExample, Table, derive_row_col_labels
from .featurizer import (
    DEFAULT_MAX_TOKENS,
    FeaturizerParams,
    Vocab,
    build_vocab,
    embed_from_ids,
    node_token_ids,
)
from .gat import (
    GatConfig,
    GatParams,
    GraphTensors,
    LayerParams,
    forward_with_cache,
    graph_tensors,
    init_params,
    loss_and_gradients,
)
from .graph import build_graph
from .optim import RAdam

_MAGIC = b"TQCK"
_VERSION = 1


def select_cells(
    row_logits: np.ndarray,
    col_logits: np.ndarray,
    table: Table,
    k_r: int = 3,
    k_c: int = 3,
) -> list[CellCoord]:
    """Intersect the top-k_r rows with the top-k_c columns.

    Ties break toward the lower index. The header row never appears in the
    output even when its score makes the cut.
    """
    row_logits = np.asarray(row_logits, dtype=np.float64)
    col_logits = np.asarray(col_logits, dtype=np.float64)
    if len(row_logits) != table.n_rows or len(col_logits) != table.n_cols:
        raise ValueError("logit lengths must match the table dimensions")

    def top_k(scores: np.ndarray, k: int) -> list[int]:
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
        return sorted(order[: min(k, len(scores))])

    rows = [r for r in top_k(row_logits, k_r) if r > 0]
    cols = top_k(col_logits, k_c)
    return [CellCoord(r, c) for r in rows for c in cols]


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    weight_decay: float = 0.01
    patience: int = 10
    min_count: int = 1
    max_tokens: int = DEFAULT_MAX_TOKENS


@dataclass
class Checkpoint:
    config: GatConfig
    params: GatParams
    vocab: Vocab
    metadata: dict = field(default_factory=dict)


@dataclass
class _Prepared:
    example: QAExample
    gt: GraphTensors
    ids: list[np.ndarray]
    row_labels: np.ndarray
    col_labels: np.ndarray


def _prepare(example: QAExample, vocab: Vocab, max_tokens: int) -> _Prepared:
    graph = build_graph(example.table, example.question)
    rows, cols = derive_row_col_labels(example)
    return _Prepared(
        example=example,
        gt=graph_tensors(graph),
        ids=node_token_ids(graph, vocab, max_tokens),
        row_labels=np.asarray(rows, dtype=np.float64),
        col_labels=np.asarray(cols, dtype=np.float64),
    )


def _selection_f1(pred: set[CellCoord], gold: set[CellCoord]) -> float:
    inter = len(pred & gold)
    p = inter / len(pred) if pred else 0.0
    r = inter / len(gold) if gold else 0.0
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def predict_cells(
    params: GatParams,
    config: GatConfig,
    vocab: Vocab,
    example: QAExample,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> list[CellCoord]:
    """Eval-mode selection for one example."""
    graph = build_graph(example.table, example.question)
    gt = graph_tensors(graph)
    ids = node_token_ids(graph, vocab, max_tokens)
    features = embed_from_ids(params.featurizer.embedding, ids)
    row_logits, col_logits, _, _ = forward_with_cache(params, config, gt, features, mode="eval")
    return select_cells(row_logits, col_logits, example.table, config.top_rows, config.top_cols)


def evaluate_selection_f1(
    params: GatParams,
    config: GatConfig,
    vocab: Vocab,
    prepared: list[_Prepared],
) -> float:
    """Mean per-example selection F1 over prepared dev examples."""
    scores = []
    for item in prepared:
        features = embed_from_ids(params.featurizer.embedding, item.ids)
        row_logits, col_logits, _, _ = forward_with_cache(
            params, config, item.gt, features, mode="eval"
        )
        pred = select_cells(
            row_logits, col_logits, item.example.table, config.top_rows, config.top_cols
        )
        scores.append(_selection_f1(set(pred), set(item.example.gold_cells)))
    return float(np.mean(scores)) if scores else 0.0


def train(
    train_set: Dataset,
    dev_set: Dataset,
    config: GatConfig,
    seed: int,
    train_config: TrainConfig | None = None,
    log=None,
) -> Checkpoint:
    """Train the selector and return the best-dev-F1 checkpoint."""
    tc = train_config or TrainConfig()
    if not len(train_set) or not len(dev_set):
        raise ValueError("train and dev splits must be non-empty")

    vocab = build_vocab(train_set, min_count=tc.min_count)
    rng = np.random.default_rng(seed)
    params = init_params(config, len(vocab), rng)
    optimizer = RAdam(lr=tc.lr, weight_decay=tc.weight_decay)

    # Examples without gold cells carry no selection signal; leave them out.
    train_items = [
        _prepare(ex, vocab, tc.max_tokens) for ex in train_set if ex.gold_cells
    ]
    dev_items = [_prepare(ex, vocab, tc.max_tokens) for ex in dev_set if ex.gold_cells]
    if not train_items:
        raise ValueError("no trainable examples (all have empty gold cells)")
    if not dev_items:
        raise ValueError("no scorable dev examples (all have empty gold cells)")
    skipped = len(train_set) - len(train_items)
    if skipped and log:
        log(f"skipped {skipped} examples without gold cells")

    best_f1 = -1.0
    best_params = params.copy()
    best_epoch = 0
    epochs_since_best = 0
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(len(train_items))
        epoch_loss = 0.0
        for idx in order:
            item = train_items[idx]
            loss, grads = loss_and_gradients(
                params, config, item.gt, item.ids,
                item.row_labels, item.col_labels, mode="train", rng=rng,
            )
            optimizer.step(list(params.named_parameters()), grads)
            epoch_loss += loss
        dev_f1 = evaluate_selection_f1(params, config, vocab, dev_items)
        if log:
            log(
                f"epoch {epoch}: train loss {epoch_loss / len(train_items):.4f} "
                f"dev F1 {dev_f1:.4f}"
            )
        if dev_f1 > best_f1:
            best_f1 = dev_f1
            best_params = params.copy()
            best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= tc.patience:
                if log:
                    log(f"no dev improvement in {tc.patience} epochs, stopping")
                break

    return Checkpoint(
        config=config,
        params=best_params,
        vocab=vocab,
        metadata={"epoch": best_epoch, "dev_f1": best_f1, "seed": seed},
    )


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    tensors = list(checkpoint.params.named_parameters()) + list(
        checkpoint.params.named_buffers()
    )
    header = {
        "config": checkpoint.config.to_dict(),
        "vocab": list(checkpoint.vocab.tokens),
        "metadata": checkpoint.metadata,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
    }
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    config = GatConfig.from_dict(header["config"])
    vocab = Vocab(tokens=tuple(header["vocab"]))
    layers = []
    for i in range(config.layers):
        kwargs = {
            name: arrays[f"layers.{i}.{name}"]
            for name in (
                "kind_proj", "rel_w1", "rel_b1", "rel_w2", "rel_b2",
                "msg_w", "msg_b", "query_w", "query_b", "key_w", "key_b",
                "upd_w1", "upd_b1", "bn_gamma", "bn_beta", "upd_w2", "upd_b2",
                "bn_mean", "bn_var",
            )
        }
        layers.append(LayerParams(**kwargs))
    params = GatParams(
        featurizer=FeaturizerParams(embedding=arrays["featurizer.embedding"]),
        layers=layers,
        row_w=arrays["row_head.weight"],
        row_b=arrays["row_head.bias"],
        col_w=arrays["col_head.weight"],
        col_b=arrays["col_head.bias"],
    )
    return Checkpoint(config=config, params=params, vocab=vocab, metadata=header["metadata"])
