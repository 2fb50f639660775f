"""Configuration, stage orchestration, and persistence layout.

Config files are flat `key = value` lines; '#' starts a comment. Flag values
passed on the command line override file values, which override defaults.
All outputs are written to a temp file in the target directory and moved
into place atomically, so every command is rerunnable.

In template mode a full run makes zero network connections: answers come
from the deterministic template composer.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from .data import CellCoord, Dataset, linearize_cells, parse_dataset
from .fusion import GenerationConfig, assemble, compose_template_answer, generate_remote
from .gat import GatConfig
from .metrics import evaluate_run
from .retrieval import (
    Bm25Params,
    build_index,
    load_corpus,
    load_index,
    retrieve_context,
    save_index,
)
from .training import (
    Checkpoint,
    TrainConfig,
    load_checkpoint,
    predict_cells,
    save_checkpoint,
    train,
)

_SPLITS = ("train", "dev", "test")


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    train_path: str = ""
    dev_path: str = ""
    test_path: str = ""
    corpus_path: str = ""
    index_path: str = ""
    checkpoint_path: str = ""
    output_dir: str = "out"
    seed: int = 13
    mode: str = "template"  # or "remote"
    endpoint: str = ""
    timeout: float = 10.0
    cell_cap: int = 200
    # selector
    gat_layers: int = 3
    gat_dim: int = 200
    gat_msg_dim: int = 200
    gat_type_dim: int = 40
    gat_dropout: float = 0.2
    top_rows: int = 3
    top_cols: int = 3
    # retrieval
    bm25_k1: float = 0.9
    bm25_b: float = 0.4
    # generation
    beam_size: int = 3
    length_penalty: float = 1.0
    max_output_tokens: int = 64
    # training
    epochs: int = 50
    lr: float = 1e-3
    weight_decay: float = 0.01
    patience: int = 10
    min_count: int = 1
    max_tokens: int = 35

    def __post_init__(self):
        if self.mode not in ("template", "remote"):
            raise ConfigError(f"mode must be 'template' or 'remote', got {self.mode!r}")
        if self.mode == "remote" and not self.endpoint:
            raise ConfigError("mode 'remote' requires an endpoint")

    def gat_config(self) -> GatConfig:
        return GatConfig(
            layers=self.gat_layers,
            dim=self.gat_dim,
            msg_dim=self.gat_msg_dim,
            type_dim=self.gat_type_dim,
            dropout=self.gat_dropout,
            top_rows=self.top_rows,
            top_cols=self.top_cols,
        )

    def bm25_params(self) -> Bm25Params:
        return Bm25Params(k1=self.bm25_k1, b=self.bm25_b)

    def generation_config(self) -> GenerationConfig:
        return GenerationConfig(
            beam_size=self.beam_size,
            length_penalty=self.length_penalty,
            max_tokens=self.max_output_tokens,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            weight_decay=self.weight_decay,
            patience=self.patience,
            min_count=self.min_count,
            max_tokens=self.max_tokens,
        )

    def split_path(self, split: str) -> str:
        if split not in _SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        path = getattr(self, f"{split}_path")
        if not path:
            raise ConfigError(f"no path configured for split {split!r}")
        return path

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_file(path: str | Path) -> dict:
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, raw = stripped.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, raw.strip())
    return values


def load_config(path: str | Path | None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then file values, then explicit overrides."""
    values: dict = {}
    if path is not None:
        values.update(parse_config_file(path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return PipelineConfig(**values)


def _atomic_write_text(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(content, encoding="utf-8")
    os.replace(tmp, path)


def _atomic_file(path: Path, writer) -> None:
    """Run `writer(tmp_path)` then move the result into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _load_split(config: PipelineConfig, split: str) -> Dataset:
    return parse_dataset(config.split_path(split), split, cell_cap=config.cell_cap)


def cmd_ingest(config: PipelineConfig) -> dict:
    """Parse every configured split and report dataset statistics."""
    stats: dict = {}
    for split in _SPLITS:
        path = getattr(config, f"{split}_path")
        if not path:
            continue
        dataset = _load_split(config, split)
        if not len(dataset):
            raise ValueError(f"split {split!r} at {path} contains no examples")
        sizes = sorted(ex.table.n_cells for ex in dataset)
        stats[split] = {
            "examples": len(dataset),
            "min_cells": sizes[0],
            "median_cells": sizes[len(sizes) // 2],
            "max_cells": sizes[-1],
            "truncated": sum(1 for ex in dataset if ex.table.truncated),
        }
    if not stats:
        raise ConfigError("no dataset paths configured")
    return stats


def cmd_build_index(config: PipelineConfig) -> dict:
    if not config.corpus_path:
        raise ConfigError("no corpus_path configured")
    if not config.index_path:
        raise ConfigError("no index_path configured")
    corpus = load_corpus(config.corpus_path)
    index = build_index(corpus, config.bm25_params())
    path = Path(config.index_path)
    _atomic_file(path, lambda tmp: save_index(index, tmp))
    return {
        "documents": index.n_docs,
        "terms": len(index.postings),
        "avg_len": index.avg_len,
        "path": str(path),
    }


def cmd_train(config: PipelineConfig, log=None) -> dict:
    if not config.checkpoint_path:
        raise ConfigError("no checkpoint_path configured")
    train_set = _load_split(config, "train")
    dev_set = _load_split(config, "dev")
    checkpoint = train(
        train_set,
        dev_set,
        config.gat_config(),
        seed=config.seed,
        train_config=config.train_config(),
        log=log,
    )
    path = Path(config.checkpoint_path)
    _atomic_file(path, lambda tmp: save_checkpoint(checkpoint, tmp))
    return {
        "path": str(path),
        "best_epoch": checkpoint.metadata["epoch"],
        "dev_f1": checkpoint.metadata["dev_f1"],
    }


def _predict_answer(
    config: PipelineConfig,
    example,
    cells: list[CellCoord],
    retrieved: str,
) -> str:
    table = example.table
    linearized = linearize_cells(table, cells)
    if not linearized and not retrieved:
        return ""
    if config.mode == "template":
        triples = [(c, table.header[c.col], table.cell(c)) for c in sorted(cells)]
        return compose_template_answer(example.question, triples, retrieved)
    fusion_input = assemble(example.question, linearized, retrieved)
    return generate_remote(
        fusion_input,
        config.generation_config(),
        endpoint=config.endpoint,
        timeout=config.timeout,
        example_id=example.id,
    )


def cmd_predict(config: PipelineConfig, split: str) -> dict:
    """Select cells, retrieve context, and produce an answer per example."""
    checkpoint = load_checkpoint(config.checkpoint_path)
    index = load_index(config.index_path)
    dataset = _load_split(config, split)
    lines = []
    for example in dataset:
        cells = predict_cells(
            checkpoint.params,
            checkpoint.config,
            checkpoint.vocab,
            example,
            max_tokens=config.max_tokens,
        )
        retrieved = retrieve_context(index, example.question)
        answer = _predict_answer(config, example, cells, retrieved)
        lines.append(json.dumps(
            {
                "id": example.id,
                "selected_cells": [[c.row, c.col] for c in cells],
                "retrieved": retrieved,
                "answer": answer,
            },
            ensure_ascii=False,
        ))
    out_path = Path(config.output_dir) / f"predictions_{split}.jsonl"
    _atomic_write_text(out_path, "\n".join(lines) + "\n")
    return {"path": str(out_path), "examples": len(lines)}


def read_predictions(path: str | Path) -> list[tuple[str, list[CellCoord], str]]:
    predictions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            for key in ("id", "selected_cells", "answer"):
                if key not in obj:
                    raise ValueError(f"predictions line {lineno}: missing {key!r}")
            cells = [CellCoord(int(r), int(c)) for r, c in obj["selected_cells"]]
            predictions.append((obj["id"], cells, obj["answer"]))
    return predictions


def cmd_eval(config: PipelineConfig, predictions_path: str | Path, split: str) -> dict:
    dataset = _load_split(config, split)
    predictions = read_predictions(predictions_path)
    report = evaluate_run(predictions, dataset)
    flat = report.to_flat_dict()
    out_path = Path(config.output_dir) / f"eval_{split}.json"
    _atomic_write_text(out_path, json.dumps(flat, indent=2) + "\n")
    return {"path": str(out_path), **flat}


def run_pipeline(config: PipelineConfig, log=None) -> dict:
    """ingest -> build-index -> train -> predict -> eval, with a manifest."""
    eval_split = "test" if config.test_path else "dev"
    manifest: dict = {
        "tool_version": __version__,
        "config": config.to_dict(),
        "stages": {},
        "status": "failed",
    }
    manifest_path = Path(config.output_dir) / "manifest.json"

    def finish():
        _atomic_write_text(manifest_path, json.dumps(manifest, indent=2) + "\n")

    stages = [
        ("ingest", lambda: cmd_ingest(config), None),
        ("build_index", lambda: cmd_build_index(config), config.index_path),
        ("train", lambda: cmd_train(config, log=log), config.checkpoint_path),
        ("predict", lambda: cmd_predict(config, eval_split), None),
        ("eval", None, None),  # wired below, needs the predict output path
    ]
    predictions_path: str | None = None
    for name, fn, artifact in stages:
        if name == "eval":
            fn = lambda: cmd_eval(config, predictions_path, eval_split)  # noqa: E731
        start = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            manifest["stages"][name] = {
                "status": "failed",
                "seconds": time.perf_counter() - start,
                "error": f"{type(exc).__name__}: {exc}",
            }
            finish()
            raise
        entry = {"status": "ok", "seconds": time.perf_counter() - start, "result": result}
        produced = artifact or (result.get("path") if isinstance(result, dict) else None)
        if produced and Path(produced).exists():
            entry["artifact"] = {"path": str(produced), "sha256": _sha256(Path(produced))}
        manifest["stages"][name] = entry
        if name == "predict":
            predictions_path = result["path"]
    manifest["status"] = "complete"
    finish()
    return manifest
