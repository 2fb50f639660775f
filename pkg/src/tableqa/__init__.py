"""Free-form question answering over tables.

Stages: graph-based table cell selection, BM25 retrieval of supporting text,
and fusion of both sources into an answer, plus the metrics to evaluate each
stage.
"""

__version__ = "0.1.0"

from .data import (
    CellCoord,
    Dataset,
    QAExample,
    Table,
    derive_row_col_labels,
    linearize_cells,
    parse_dataset,
    truncate_table,
    write_dataset,
)
from .featurizer import Vocab, build_vocab, embed_nodes
from .gat import GatConfig, GatParams, gat_forward, gradients, selection_loss
from .graph import NodeKind, Relation, TableGraph, build_graph, neighborhood
from .metrics import (
    PRF,
    EvalReport,
    bleu4,
    evaluate_run,
    meteor_simplified,
    parent,
    parent_t,
    rouge_l,
    selection_prf,
)
from .retrieval import Bm25Params, Document, InvertedIndex, bm25_score, build_index, retrieve_context, search
from .training import Checkpoint, load_checkpoint, save_checkpoint, select_cells, train

__all__ = [
    "__version__",
    "CellCoord", "Table", "QAExample", "Dataset",
    "parse_dataset", "write_dataset", "truncate_table",
    "derive_row_col_labels", "linearize_cells",
    "NodeKind", "Relation", "TableGraph", "build_graph", "neighborhood",
    "Vocab", "build_vocab", "embed_nodes",
    "GatConfig", "GatParams", "gat_forward", "selection_loss", "gradients",
    "select_cells", "train", "Checkpoint", "save_checkpoint", "load_checkpoint",
    "Document", "Bm25Params", "InvertedIndex", "build_index", "bm25_score",
    "search", "retrieve_context",
    "PRF", "EvalReport", "selection_prf", "bleu4", "rouge_l",
    "meteor_simplified", "parent", "parent_t", "evaluate_run",
]
