"""Label lexicon loading and multi-pattern span matching.

Matching is case-insensitive, word-boundary anchored, and leftmost-longest:
at each position the longest synonym wins, matched spans do not overlap,
and multi-word synonyms match as contiguous token sequences (any run of
whitespace between tokens). Inflections are handled by explicit synonym
entries, not stemming, so counts stay exactly reproducible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import EmptyLexiconError, ParseError


def load_lexicon(path) -> dict[str, list[str]]:
    """Read a `label_id<TAB>synonym` file; first synonym is the canonical name."""
    lex: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ParseError(f"expected `label_id<TAB>synonym`, got {parts!r}", line_no)
            lex.setdefault(parts[0], [])
            if parts[1] not in lex[parts[0]]:
                lex[parts[0]].append(parts[1])
    return lex


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    text: str
    label: str


class LexiconMatcher:
    """Compiled multi-pattern scanner over a label -> synonyms lexicon."""

    def __init__(self, lexicon: dict[str, list[str]]):
        if not lexicon or not any(lexicon.values()):
            raise EmptyLexiconError("lexicon has no synonyms")
        self.lexicon = {label: list(syns) for label, syns in lexicon.items()}
        # first label listing a synonym owns it
        self._owner: dict[str, str] = {}
        for label, syns in self.lexicon.items():
            for syn in syns:
                self._owner.setdefault(_normalize(syn), label)
        # longest alternative first, so the regex engine yields leftmost-longest
        ordered = sorted(self._owner, key=lambda s: (-len(s), s))
        alternation = "|".join(_syn_pattern(s) for s in ordered)
        self._rx = re.compile(rf"(?<!\w)(?:{alternation})(?!\w)", re.IGNORECASE)

    def canonical_name(self, label: str) -> str:
        return self.lexicon[label][0]

    def labels(self) -> list[str]:
        return list(self.lexicon)

    def find_spans(self, text: str) -> list[Span]:
        """Non-overlapping matched spans in left-to-right order."""
        spans = []
        for m in self._rx.finditer(text):
            label = self._owner[_normalize(m.group(0))]
            spans.append(Span(m.start(), m.end(), m.group(0), label))
        return spans

    def labels_in(self, text: str) -> set[str]:
        return {s.label for s in self.find_spans(text)}


def _normalize(syn: str) -> str:
    return " ".join(syn.split()).casefold()


def _syn_pattern(normalized_syn: str) -> str:
    return r"\s+".join(re.escape(tok) for tok in normalized_syn.split(" "))
