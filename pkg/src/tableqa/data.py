"""Dataset ingestion, the table data model, and cell linearization.

Dataset files are UTF-8 JSON lines. Each record carries:
  id                 string, unique within a split
  question           string
  table              array of arrays of strings; row 0 is the column-header row
  highlighted_cells  array of [row, col] integer pairs
  answer             string
  page_title         optional string
  section_title      optional string

Ragged rows are padded with empty-string cells to the widest row, so cell
coordinates in the source data stay valid. Tables larger than the cell cap
are truncated by dropping trailing data rows; columns are never dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

DEFAULT_CELL_CAP = 200

SEP_TOKEN = "[SEP]"


class DatasetError(ValueError):
    """Raised for malformed records or out-of-range highlighted cells."""


class CellCoord(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class Table:
    """Rectangular grid of cell texts; row 0 is the column-header row."""

    cells: tuple[tuple[str, ...], ...]
    truncated: bool = False

    def __post_init__(self):
        if not self.cells or not self.cells[0]:
            raise ValueError("table must have at least one row and one column")
        width = len(self.cells[0])
        for i, row in enumerate(self.cells):
            if len(row) != width:
                raise ValueError(f"row {i} has width {len(row)}, expected {width}")

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    @property
    def n_cols(self) -> int:
        return len(self.cells[0])

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def header(self) -> tuple[str, ...]:
        return self.cells[0]

    def cell(self, coord: CellCoord) -> str:
        return self.cells[coord.row][coord.col]

    def contains(self, coord: CellCoord) -> bool:
        return 0 <= coord.row < self.n_rows and 0 <= coord.col < self.n_cols


@dataclass(frozen=True)
class QAExample:
    id: str
    question: str
    table: Table
    gold_cells: tuple[CellCoord, ...]
    answer: str
    page_title: str | None = None
    section_title: str | None = None


@dataclass(frozen=True)
class Dataset:
    examples: tuple[QAExample, ...]
    split: str

    def __post_init__(self):
        seen: set[str] = set()
        for ex in self.examples:
            if ex.id in seen:
                raise DatasetError(f"duplicate example id {ex.id!r} in split {self.split!r}")
            seen.add(ex.id)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[QAExample]:
        return iter(self.examples)


def truncate_table(table: Table, cap: int = DEFAULT_CELL_CAP) -> Table:
    """Cap the cell count by dropping trailing data rows.

    The header row always survives; a cap smaller than the column count makes
    the table unrepresentable and raises.
    """
    if cap < table.n_cols:
        raise ValueError(
            f"cell cap {cap} cannot fit a single row of {table.n_cols} columns"
        )
    if table.n_cells <= cap:
        return table
    keep_rows = cap // table.n_cols
    return Table(cells=table.cells[:keep_rows], truncated=True)


def _pad_rows(raw_rows: list[list[str]]) -> tuple[tuple[str, ...], ...]:
    width = max(len(row) for row in raw_rows)
    return tuple(tuple(row) + ("",) * (width - len(row)) for row in raw_rows)


def _parse_record(obj: dict, cell_cap: int) -> QAExample:
    for key in ("id", "question", "table", "highlighted_cells", "answer"):
        if key not in obj:
            raise DatasetError(f"missing field {key!r}")
    ex_id = str(obj["id"])
    raw_table = obj["table"]
    if not isinstance(raw_table, list) or not raw_table:
        raise DatasetError(f"example {ex_id!r}: table must be a non-empty array of rows")
    rows: list[list[str]] = []
    for row in raw_table:
        if not isinstance(row, list):
            raise DatasetError(f"example {ex_id!r}: table rows must be arrays")
        rows.append([str(c) for c in row])
    if not rows[0] and all(not r for r in rows):
        raise DatasetError(f"example {ex_id!r}: table has no columns")
    full = Table(cells=_pad_rows(rows))

    coords: list[CellCoord] = []
    for pair in obj["highlighted_cells"]:
        if not isinstance(pair, list) or len(pair) != 2:
            raise DatasetError(f"example {ex_id!r}: highlighted cell must be a [row, col] pair")
        coord = CellCoord(int(pair[0]), int(pair[1]))
        if not full.contains(coord):
            raise DatasetError(
                f"example {ex_id!r}: highlighted cell {tuple(coord)} outside "
                f"{full.n_rows}x{full.n_cols} table"
            )
        coords.append(coord)

    try:
        table = truncate_table(full, cell_cap)
    except ValueError as exc:
        raise DatasetError(f"example {ex_id!r}: {exc}") from exc
    # Highlights on truncated rows are dropped with the rows they pointed at.
    kept = tuple(c for c in coords if c.row < table.n_rows)

    return QAExample(
        id=ex_id,
        question=str(obj["question"]),
        table=table,
        gold_cells=kept,
        answer=str(obj["answer"]),
        page_title=obj.get("page_title"),
        section_title=obj.get("section_title"),
    )


def parse_dataset(
    source: str | Path | Iterable[str],
    split: str,
    cell_cap: int = DEFAULT_CELL_CAP,
) -> Dataset:
    """Parse a JSON-lines dataset file (or iterable of lines) into a Dataset.

    Records come back in file order. Malformed lines raise DatasetError
    carrying the 1-based line number.
    """
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = list(source)

    examples: list[QAExample] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise DatasetError(f"line {lineno}: record must be a JSON object")
        try:
            examples.append(_parse_record(obj, cell_cap))
        except DatasetError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from exc
    return Dataset(examples=tuple(examples), split=split)


def example_to_record(example: QAExample) -> dict:
    record = {
        "id": example.id,
        "question": example.question,
        "table": [list(row) for row in example.table.cells],
        "highlighted_cells": [[c.row, c.col] for c in example.gold_cells],
        "answer": example.answer,
    }
    if example.page_title is not None:
        record["page_title"] = example.page_title
    if example.section_title is not None:
        record["section_title"] = example.section_title
    return record


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            fh.write(json.dumps(example_to_record(ex), ensure_ascii=False) + "\n")


def derive_row_col_labels(example: QAExample) -> tuple[list[bool], list[bool]]:
    """Project gold cells onto per-row and per-column relevance labels."""
    if not example.gold_cells:
        raise ValueError(f"example {example.id!r} has no gold cells to derive labels from")
    rows = [False] * example.table.n_rows
    cols = [False] * example.table.n_cols
    for coord in example.gold_cells:
        rows[coord.row] = True
        cols[coord.col] = True
    return rows, cols


def linearize_cells(table: Table, coords: Iterable[CellCoord]) -> str:
    """Render data cells as "<header> is <value>" clauses joined by " [SEP] ".

    Cells are emitted in row-major order. Header-row coordinates are keys,
    not values, and are rejected.
    """
    ordered = sorted(coords)
    parts: list[str] = []
    for coord in ordered:
        if not table.contains(coord):
            raise ValueError(f"cell {tuple(coord)} outside {table.n_rows}x{table.n_cols} table")
        if coord.row == 0:
            raise ValueError(f"cell {tuple(coord)} is in the header row")
        parts.append(f"{table.header[coord.col]} is {table.cell(coord)}")
    return f" {SEP_TOKEN} ".join(parts)
