"""Per-source input assembly and answer composition.

Each information source (the linearized table cells, then the retrieved
passage) becomes its own block rendered as "question: {q} context: {block}",
ready for a fusion-style generation service that encodes blocks
independently. Generation itself is either a deterministic local template
or an external HTTP service.

Wire contract for the remote service:
    request  POST JSON {"blocks": [str, ...], "beam_size": int,
                        "length_penalty": number, "max_tokens": int}
    response JSON {"answer": str}

The client never retries: at-most-once delivery, retry policy belongs to
the caller.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import requests

from .data import CellCoord


@dataclass(frozen=True)
class SourceBlock:
    kind: str  # "table" or "passage"
    text: str

    def __post_init__(self):
        if self.kind not in ("table", "passage"):
            raise ValueError(f"unknown block kind {self.kind!r}")
        if not self.text:
            raise ValueError("blocks must carry text")


@dataclass(frozen=True)
class FusionInput:
    question: str
    blocks: tuple[SourceBlock, ...]
    rendered: tuple[str, ...]


@dataclass(frozen=True)
class GenerationConfig:
    beam_size: int = 3
    length_penalty: float = 1.0
    max_tokens: int = 64

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam size must be >= 1")


class GenerationServiceError(Exception):
    """Base class for remote-generation failures."""

    def __init__(self, message: str, example_id: str | None = None):
        if example_id is not None:
            message = f"example {example_id!r}: {message}"
        super().__init__(message)
        self.example_id = example_id


class ServiceUnreachable(GenerationServiceError):
    pass


class ServiceTimeout(GenerationServiceError):
    pass


class ServiceStatusError(GenerationServiceError):
    def __init__(self, status: int, example_id: str | None = None):
        super().__init__(f"generation service returned status {status}", example_id)
        self.status = status


class MalformedServiceResponse(GenerationServiceError):
    pass


def assemble(question: str, linearized_cells: str, retrieved: str) -> FusionInput:
    """Build the ordered source blocks: table first, then the passage.

    Empty sources are skipped; with no source at all there is nothing to
    fuse and this raises.
    """
    if not question:
        raise ValueError("question must be non-empty")
    blocks: list[SourceBlock] = []
    if linearized_cells:
        blocks.append(SourceBlock(kind="table", text=linearized_cells))
    if retrieved:
        blocks.append(SourceBlock(kind="passage", text=retrieved))
    if not blocks:
        raise ValueError("no information sources to fuse")
    rendered = tuple(f"question: {question} context: {b.text}" for b in blocks)
    return FusionInput(question=question, blocks=tuple(blocks), rendered=rendered)


def compose_template_answer(
    question: str,
    cells: Sequence[tuple[CellCoord, str, str]],
    retrieved: str,
) -> str:
    """Deterministic non-neural answer: selected cells grouped by row as
    "{header} {value}" phrases, optionally prefixed by the retrieved sentence.

    `cells` are (coordinate, column header, value) triples.
    """
    if not cells and not retrieved:
        raise ValueError("nothing to compose an answer from")
    by_row: dict[int, list[str]] = {}
    for coord, header, value in sorted(cells, key=lambda item: item[0]):
        by_row.setdefault(coord.row, []).append(f"{header} {value}".strip())
    clauses = "; ".join(", ".join(phrases) for _, phrases in sorted(by_row.items()))
    if clauses and retrieved:
        return f"{retrieved} {clauses}."
    if clauses:
        return f"{clauses}."
    return retrieved


def generate_remote(
    fusion_input: FusionInput,
    config: GenerationConfig,
    endpoint: str,
    timeout: float = 10.0,
    example_id: str | None = None,
) -> str:
    """Ask the generation service for an answer. One request, no retries."""
    if not endpoint:
        raise ValueError("remote generation needs an endpoint")
    payload = {
        "blocks": list(fusion_input.rendered),
        "beam_size": config.beam_size,
        "length_penalty": config.length_penalty,
        "max_tokens": config.max_tokens,
    }
    try:
        response = requests.post(endpoint, json=payload, timeout=timeout)
    except requests.Timeout as exc:
        raise ServiceTimeout(f"generation service timed out after {timeout}s", example_id) from exc
    except requests.ConnectionError as exc:
        raise ServiceUnreachable(f"generation service unreachable: {exc}", example_id) from exc
    if not 200 <= response.status_code < 300:
        raise ServiceStatusError(response.status_code, example_id)
    try:
        body = response.json()
    except ValueError as exc:
        raise MalformedServiceResponse("response body is not JSON", example_id) from exc
    if not isinstance(body, dict) or not isinstance(body.get("answer"), str):
        raise MalformedServiceResponse("response missing string field 'answer'", example_id)
    return body["answer"]
