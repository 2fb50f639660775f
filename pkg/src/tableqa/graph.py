"""Typed graph view of a (question, table) pair.

Nodes: one question node, one synthetic row-header node per table row
(including the header row), and one node per table cell. Row-0 cells are
column headers, everything else is a data cell.

Edges (undirected, stored in both directions):
  same-row          clique over {row header i} + cells of row i
  same-column       clique over the cells of column j (headers included,
                    row-header nodes excluded)
  question-to-cell  question node to every table cell (not to row headers)

Self-loops are not stored; message passing adds them with a dedicated
relation of its own.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from .data import CellCoord, Table


class NodeKind(IntEnum):
    QUESTION = 0
    ROW_HEADER = 1
    COLUMN_HEADER = 2
    DATA_CELL = 3


class Relation(IntEnum):
    SAME_ROW = 0
    SAME_COLUMN = 1
    QUESTION_TO_CELL = 2
    SELF_LOOP = 3  # reserved for message passing, never stored in a graph


N_NODE_KINDS = 4
N_RELATIONS = 4


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    text: str
    coord: CellCoord | None = None


@dataclass(frozen=True)
class TableGraph:
    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int, Relation], ...]  # directed, both directions stored
    question_id: int
    row_header_ids: tuple[int, ...]  # indexed by row
    col_header_ids: tuple[int, ...]  # indexed by column
    coord_to_id: dict[CellCoord, int]
    n_rows: int
    n_cols: int

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def n_undirected_edges(self) -> int:
        return len(self.edges) // 2


def build_graph(table: Table, question: str) -> TableGraph:
    """Build the typed graph for one example. Deterministic node ids:
    question = 0, row headers follow, then cells in row-major order."""
    n_rows, n_cols = table.n_rows, table.n_cols

    nodes: list[Node] = [Node(0, NodeKind.QUESTION, question)]
    row_header_ids = tuple(range(1, 1 + n_rows))
    for i in range(n_rows):
        nodes.append(Node(1 + i, NodeKind.ROW_HEADER, f"row {i}"))

    cell_base = 1 + n_rows
    coord_to_id: dict[CellCoord, int] = {}
    for r in range(n_rows):
        for c in range(n_cols):
            coord = CellCoord(r, c)
            kind = NodeKind.COLUMN_HEADER if r == 0 else NodeKind.DATA_CELL
            node_id = cell_base + r * n_cols + c
            coord_to_id[coord] = node_id
            nodes.append(Node(node_id, kind, table.cell(coord), coord))
    col_header_ids = tuple(coord_to_id[CellCoord(0, c)] for c in range(n_cols))

    undirected: list[tuple[int, int, Relation]] = []
    for r in range(n_rows):
        members = [row_header_ids[r]] + [coord_to_id[CellCoord(r, c)] for c in range(n_cols)]
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                undirected.append((members[i], members[j], Relation.SAME_ROW))
    for c in range(n_cols):
        members = [coord_to_id[CellCoord(r, c)] for r in range(n_rows)]
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                undirected.append((members[i], members[j], Relation.SAME_COLUMN))
    for coord, node_id in coord_to_id.items():
        undirected.append((0, node_id, Relation.QUESTION_TO_CELL))

    directed = [(a, b, rel) for a, b, rel in undirected] + [
        (b, a, rel) for a, b, rel in undirected
    ]
    directed.sort(key=lambda e: (e[0], e[1], int(e[2])))

    return TableGraph(
        nodes=tuple(nodes),
        edges=tuple(directed),
        question_id=0,
        row_header_ids=row_header_ids,
        col_header_ids=col_header_ids,
        coord_to_id=coord_to_id,
        n_rows=n_rows,
        n_cols=n_cols,
    )


def neighborhood(graph: TableGraph, node_id: int) -> list[tuple[int, Relation]]:
    """Neighbors of `node_id` with the connecting relation, ascending by id."""
    if not 0 <= node_id < graph.n_nodes:
        raise KeyError(f"unknown node id {node_id}")
    result = [(dst, rel) for src, dst, rel in graph.edges if src == node_id]
    result.sort(key=lambda pair: pair[0])
    return result


def debug_dump(graph: TableGraph) -> str:
    """One line per node and per undirected edge, for diffing in tests."""
    lines = []
    for node in graph.nodes:
        row = node.coord.row if node.coord else "-"
        col = node.coord.col if node.coord else "-"
        lines.append(f"node {node.id} {node.kind.name} {row} {col} {node.text}")
    for src, dst, rel in graph.edges:
        if src < dst:
            lines.append(f"edge {src} {dst} {rel.name}")
    return "\n".join(lines) + "\n"
