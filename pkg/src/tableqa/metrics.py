"""Evaluation measures: selection P/R/F and generation quality.

Generation metrics all tokenize with the shared rule, so scores are stable
across components:

  bleu4              corpus-level BLEU with modified n-gram precisions pooled
                     over the corpus, uniform weights, exponential brevity
                     penalty. Orders >= 2 whose pooled match count is zero get
                     add-1 smoothing on both numerator and denominator; a zero
                     unigram match zeroes the score.
  rouge_l            LCS F1 per sentence pair.
  meteor_simplified  exact-match unigram alignment (no stemming or synonyms)
                     maximizing matches then minimizing chunks;
                     score = F_mean * (1 - 0.5 * (chunks/matches)^3) with
                     F_mean = 10PR / (R + 9P).
  parent             n-gram precision mixing reference match with table
                     entailment, recall as the geometric mean of
                     entailment-weighted reference recall and per-entry LCS
                     table recall. An n-gram's entailment probability is the
                     fraction of its tokens found anywhere in the table.
  parent_t           table-only variant: precision from table entailment
                     alone, recall = fraction of distinct table value tokens
                     covered by the candidate.

Orders with no n-grams on the relevant side are left out of the geometric
means rather than zeroing them, so short answers stay scorable.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .data import CellCoord, Dataset
from .text import tokenize

MAX_NGRAM_ORDER = 4

# Exact METEOR chunk minimization explores alignment choices among duplicate
# tokens; beyond this many search states the best alignment found so far wins.
_METEOR_SEARCH_BUDGET = 100_000


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "PRF":
        denom = precision + recall
        f1 = 2.0 * precision * recall / denom if denom > 0 else 0.0
        return cls(precision, recall, f1)


ZERO_PRF = PRF(0.0, 0.0, 0.0)


def selection_prf(predicted: Iterable[CellCoord], gold: Iterable[CellCoord]) -> PRF:
    pred_set = set(predicted)
    gold_set = set(gold)
    inter = len(pred_set & gold_set)
    p = inter / len(pred_set) if pred_set else 0.0
    r = inter / len(gold_set) if gold_set else 0.0
    return PRF.from_pr(p, r)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidates: Sequence[str], references: Sequence[str]) -> float:
    """Corpus BLEU-4 in [0, 100]."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references must have equal length")
    if not candidates:
        raise ValueError("cannot score an empty corpus")
    matches = [0] * (MAX_NGRAM_ORDER + 1)
    possible = [0] * (MAX_NGRAM_ORDER + 1)
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        c_toks = tokenize(cand)
        r_toks = tokenize(ref)
        cand_len += len(c_toks)
        ref_len += len(r_toks)
        for n in range(1, MAX_NGRAM_ORDER + 1):
            c_counts = _ngram_counts(c_toks, n)
            r_counts = _ngram_counts(r_toks, n)
            matches[n] += sum(min(c, r_counts[g]) for g, c in c_counts.items())
            possible[n] += max(0, len(c_toks) - n + 1)
    if matches[1] == 0:
        return 0.0
    log_sum = math.log(matches[1] / possible[1])
    for n in range(2, MAX_NGRAM_ORDER + 1):
        if matches[n] == 0:
            log_sum += math.log((matches[n] + 1) / (possible[n] + 1))
        else:
            log_sum += math.log(matches[n] / possible[n])
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * brevity * math.exp(log_sum / MAX_NGRAM_ORDER)


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                row.append(prev[j - 1] + 1)
            else:
                row.append(max(prev[j], row[-1]))
        prev = row
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F1 in [0, 1] for one sentence pair."""
    c_toks = tokenize(candidate)
    r_toks = tokenize(reference)
    if not c_toks or not r_toks:
        return 0.0
    lcs = _lcs_len(c_toks, r_toks)
    if lcs == 0:
        return 0.0
    p = lcs / len(c_toks)
    r = lcs / len(r_toks)
    return 2.0 * p * r / (p + r)


def _min_chunk_alignment(cand: list[str], ref: list[str]) -> tuple[int, int]:
    """(matches, chunks) of a maximal exact-match alignment with the fewest
    chunks found within the search budget."""
    need = {t: min(c, Counter(ref)[t]) for t, c in Counter(cand).items() if t in set(ref)}
    matches = sum(need.values())
    if matches == 0:
        return 0, 0

    ref_positions: dict[str, list[int]] = {}
    for j, tok in enumerate(ref):
        ref_positions.setdefault(tok, []).append(j)

    # remaining candidate occurrences of each needed token at position >= i
    suffix: list[dict[str, int]] = [dict() for _ in range(len(cand) + 1)]
    for i in range(len(cand) - 1, -1, -1):
        cur = dict(suffix[i + 1])
        if cand[i] in need:
            cur[cand[i]] = cur.get(cand[i], 0) + 1
        suffix[i] = cur

    def greedy() -> int:
        used: set[int] = set()
        remaining = dict(need)
        chunks = 0
        prev = None  # (ci, rj) of the previous aligned pair
        for i, tok in enumerate(cand):
            if remaining.get(tok, 0) <= 0:
                continue
            cont = None
            if prev is not None and prev[0] == i - 1:
                nxt = prev[1] + 1
                if nxt < len(ref) and ref[nxt] == tok and nxt not in used:
                    cont = nxt
            if cont is None:
                free = [j for j in ref_positions[tok] if j not in used]
                if not free:
                    continue
                cont = free[0]
                chunks += 1
            elif prev is None:
                chunks += 1
            used.add(cont)
            remaining[tok] -= 1
            prev = (i, cont)
        return chunks

    best = greedy()
    budget = [_METEOR_SEARCH_BUDGET]

    def search(i: int, remaining: dict[str, int], used: frozenset, prev, chunks: int):
        nonlocal best
        if chunks >= best or budget[0] <= 0:
            return
        if not any(remaining.values()):
            best = min(best, chunks)
            return
        if i >= len(cand):
            return
        budget[0] -= 1
        tok = cand[i]
        if remaining.get(tok, 0) > 0:
            for j in ref_positions[tok]:
                if j in used:
                    continue
                continues = prev is not None and prev[0] == i - 1 and prev[1] == j - 1
                new_chunks = chunks if continues else chunks + 1
                rem = dict(remaining)
                rem[tok] -= 1
                search(i + 1, rem, used | {j}, (i, j), new_chunks)
            # skipping this occurrence is only viable if later ones suffice
            if suffix[i + 1].get(tok, 0) >= remaining[tok]:
                search(i + 1, remaining, used, prev, chunks)
        else:
            search(i + 1, remaining, used, prev, chunks)

    search(0, dict(need), frozenset(), None, 0)
    return matches, best


def meteor_simplified(candidate: str, reference: str) -> float:
    """Exact-match METEOR in [0, 1]; zero when nothing aligns."""
    c_toks = tokenize(candidate)
    r_toks = tokenize(reference)
    if not c_toks or not r_toks:
        return 0.0
    matches, chunks = _min_chunk_alignment(c_toks, r_toks)
    if matches == 0:
        return 0.0
    p = matches / len(c_toks)
    r = matches / len(r_toks)
    f_mean = 10.0 * p * r / (r + 9.0 * p)
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1.0 - penalty)


def _geometric_mean(values: list[float]) -> float:
    if not values:
        return 0.0
    if any(v <= 0.0 for v in values):
        return 0.0
    return math.exp(sum(math.log(v) for v in values) / len(values))


def _table_token_set(table: Sequence[tuple[str, str]]) -> set[str]:
    toks: set[str] = set()
    for header, value in table:
        toks.update(tokenize(header))
        toks.update(tokenize(value))
    return toks


def _entailment(ngram: tuple[str, ...], table_tokens: set[str]) -> float:
    return sum(1 for tok in ngram if tok in table_tokens) / len(ngram)


def parent(candidate: str, reference: str, table: Sequence[tuple[str, str]]) -> PRF:
    """Entailment-aware precision/recall against reference and table."""
    c_toks = tokenize(candidate)
    if not c_toks:
        return ZERO_PRF
    r_toks = tokenize(reference)
    table_tokens = _table_token_set(table)

    precisions: list[float] = []
    ref_recalls: list[float] = []
    for n in range(1, MAX_NGRAM_ORDER + 1):
        c_counts = _ngram_counts(c_toks, n)
        r_counts = _ngram_counts(r_toks, n)
        if c_counts:
            num = 0.0
            den = 0
            for g, cg in c_counts.items():
                matched = min(cg, r_counts.get(g, 0))
                num += matched + (cg - matched) * _entailment(g, table_tokens)
                den += cg
            precisions.append(num / den)
        if r_counts:
            den_r = sum(rg * _entailment(g, table_tokens) for g, rg in r_counts.items())
            if den_r > 0:
                num_r = sum(
                    min(rg, c_counts.get(g, 0)) * _entailment(g, table_tokens)
                    for g, rg in r_counts.items()
                )
                ref_recalls.append(num_r / den_r)

    precision = _geometric_mean(precisions)
    # Reference without any table-grounded content is vacuously recalled.
    ref_recall = _geometric_mean(ref_recalls) if ref_recalls else 1.0

    value_token_lists = [tokenize(value) for _, value in table]
    value_token_lists = [v for v in value_token_lists if v]
    if value_token_lists:
        table_recall = sum(
            _lcs_len(v, c_toks) / len(v) for v in value_token_lists
        ) / len(value_token_lists)
    else:
        table_recall = 0.0

    recall = math.sqrt(ref_recall * table_recall)
    return PRF.from_pr(precision, recall)


def parent_t(candidate: str, table: Sequence[tuple[str, str]]) -> PRF:
    """Table-only overlap: entailed precision and value-token coverage."""
    c_toks = tokenize(candidate)
    if not c_toks:
        return ZERO_PRF
    table_tokens = _table_token_set(table)

    precisions: list[float] = []
    for n in range(1, MAX_NGRAM_ORDER + 1):
        c_counts = _ngram_counts(c_toks, n)
        if not c_counts:
            continue
        num = sum(cg * _entailment(g, table_tokens) for g, cg in c_counts.items())
        precisions.append(num / sum(c_counts.values()))
    precision = _geometric_mean(precisions)

    value_tokens: set[str] = set()
    for _, value in table:
        value_tokens.update(tokenize(value))
    if value_tokens:
        recall = len(value_tokens & set(c_toks)) / len(value_tokens)
    else:
        recall = 0.0
    return PRF.from_pr(precision, recall)


@dataclass(frozen=True)
class EvalReport:
    selection: PRF
    bleu4: float
    rougeL: float
    meteor: float
    parent: PRF
    parent_t: PRF
    n_examples: int

    def to_flat_dict(self) -> dict:
        """Fixed field names for downstream tooling."""
        return {
            "bleu4": self.bleu4,
            "meteor": self.meteor,
            "rougeL": self.rougeL,
            "parent_p": self.parent.precision,
            "parent_r": self.parent.recall,
            "parent_f": self.parent.f1,
            "parent_t_p": self.parent_t.precision,
            "parent_t_r": self.parent_t.recall,
            "parent_t_f": self.parent_t.f1,
            "sel_p": self.selection.precision,
            "sel_r": self.selection.recall,
            "sel_f": self.selection.f1,
        }


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def _mean_prf(values: list[PRF]) -> PRF:
    return PRF(
        _mean([v.precision for v in values]),
        _mean([v.recall for v in values]),
        _mean([v.f1 for v in values]),
    )


def evaluate_run(
    predictions: Sequence[tuple[str, Sequence[CellCoord], str]],
    dataset: Dataset,
) -> EvalReport:
    """Aggregate selection and generation metrics for one prediction run.

    `predictions` are (example id, selected cells, answer) triples. Selection
    PRF is macro-averaged over examples; the entailment table for PARENT is
    the example's gold highlighted cells as (header, value) entries.
    """
    if not predictions:
        raise ValueError("no predictions to evaluate")
    by_id = {ex.id: ex for ex in dataset}
    seen: set[str] = set()
    sel: list[PRF] = []
    parents: list[PRF] = []
    parents_t: list[PRF] = []
    rouges: list[float] = []
    meteors: list[float] = []
    answers: list[str] = []
    references: list[str] = []
    for ex_id, cells, answer in predictions:
        if ex_id not in by_id:
            raise ValueError(f"prediction for unknown example id {ex_id!r}")
        if ex_id in seen:
            raise ValueError(f"duplicate prediction for example id {ex_id!r}")
        seen.add(ex_id)
        ex = by_id[ex_id]
        sel.append(selection_prf(cells, ex.gold_cells))
        entries = [
            (ex.table.header[c.col], ex.table.cell(c)) for c in ex.gold_cells
        ]
        parents.append(parent(answer, ex.answer, entries))
        parents_t.append(parent_t(answer, entries))
        rouges.append(rouge_l(answer, ex.answer))
        meteors.append(meteor_simplified(answer, ex.answer))
        answers.append(answer)
        references.append(ex.answer)
    return EvalReport(
        selection=_mean_prf(sel),
        bleu4=bleu4(answers, references),
        rougeL=_mean(rouges),
        meteor=_mean(meteors),
        parent=_mean_prf(parents),
        parent_t=_mean_prf(parents_t),
        n_examples=len(predictions),
    )
