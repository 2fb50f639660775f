"""Shared text normalization used by the featurizer, the retriever, and the metrics.

Every component that compares tokens must agree on what a token is, so the
rule lives here: lowercase, split on any non-alphanumeric character, drop
empties. Underscore counts as a separator.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
_SENTENCE_END_RE = re.compile(r"[.?!](?=\s|$)")

# Minimal English stopword list for the optional query-filtering flag.
STOPWORDS = frozenset(
    "a an and are as at be by for from how in is it of on or that the to was "
    "were what when where which who will with".split()
)


def tokenize(text: str) -> list[str]:
    """Lowercase `text` and split it into alphanumeric tokens."""
    return _TOKEN_RE.findall(text.lower())


def first_sentence(text: str) -> str:
    """Return the first sentence of `text`.

    A sentence ends at '.', '?' or '!' followed by whitespace or end of
    string; text without such a boundary is returned whole.
    """
    text = text.strip()
    match = _SENTENCE_END_RE.search(text)
    if match is None:
        return text
    return text[: match.end()]
