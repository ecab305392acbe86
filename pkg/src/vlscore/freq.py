"""Concept frequency analysis over caption corpora.

Counts are exact and shard-additive: scanning a partition of the corpus
and summing per-label counts equals a single pass. The retrieval step that
produces per-class image counts (n) happens upstream; this module consumes
those counts plus caption shards.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import MissingLeafCountError, ParseError
from .hierarchy import Hierarchy
from .lexicon import LexiconMatcher
from .metrics import spearman


@dataclass
class ClassCounts:
    """Per-label image counts (n) and caption mention counts (m).

    After ancestor aggregation, non-leaf labels also get m_sum, the total
    mentions of their leaf descendants; an ancestor's own-name count stays
    in m.
    """

    n: dict[str, int] = field(default_factory=dict)
    m: dict[str, int] = field(default_factory=dict)
    m_sum: dict[str, int] = field(default_factory=dict)


def count_mentions(caption_shards, lexicon) -> dict[str, int]:
    """Captions mentioning each label at least once, summed over shards.

    `caption_shards` is an iterable of caption iterables. A caption with
    several synonym hits of one label still counts once for it.
    """
    matcher = lexicon if isinstance(lexicon, LexiconMatcher) else LexiconMatcher(lexicon)
    m = dict.fromkeys(matcher.labels(), 0)
    for shard in caption_shards:
        for caption in shard:
            for label in matcher.labels_in(caption):
                m[label] += 1
    return m


def scan_shard_files(paths, lexicon, threads: int = 1) -> dict[str, int]:
    """count_mentions over caption files (one caption per line), in parallel.

    Merge is integer addition, so the result is independent of scan order.
    """
    matcher = lexicon if isinstance(lexicon, LexiconMatcher) else LexiconMatcher(lexicon)

    def scan(path):
        with open(path, encoding="utf-8") as fh:
            return count_mentions([(line.rstrip("\n") for line in fh)], matcher)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(scan, paths))
    else:
        partials = [scan(p) for p in paths]
    merged = dict.fromkeys(matcher.labels(), 0)
    for part in partials:
        for label, count in part.items():
            merged[label] += count
    return merged


def class_frequency(counts: ClassCounts) -> tuple[dict[str, float], dict[str, str]]:
    """Per-leaf q = m / n; labels with n = 0 are excluded and listed."""
    q: dict[str, float] = {}
    excluded: dict[str, str] = {}
    for label, n in counts.n.items():
        if n <= 0:
            excluded[label] = "no retrieved images (n = 0)"
            continue
        q[label] = counts.m.get(label, 0) / n
    return q, excluded


def ancestor_aggregate(h: Hierarchy, counts: ClassCounts) -> ClassCounts:
    """Extend leaf counts to ancestors: n and m summed over leaf descendants.

    Shared leaves under a diamond count once (set semantics). The
    ancestor's own-name mention count is whatever the lexicon scan put in
    counts.m for it (0 if its name never occurs).
    """
    out = ClassCounts(n=dict(counts.n), m=dict(counts.m), m_sum=dict(counts.m_sum))
    for leaf in sorted(h.leaves()):
        if leaf not in counts.n:
            raise MissingLeafCountError(f"no image count for leaf {leaf!r}")
    for y in h.nodes:
        if h.is_leaf(y):
            continue
        leaves = h.leaf_descendants(y)
        out.n[y] = sum(counts.n[leaf] for leaf in leaves)
        out.m_sum[y] = sum(counts.m.get(leaf, 0) for leaf in leaves)
        out.m.setdefault(y, 0)
    return out


@dataclass(frozen=True)
class FreqGapReport:
    """Per-ancestor frequency gap; undefined entries are listed, never zeroed."""

    gaps: dict[str, float]
    undefined: dict[str, str]
    levels: dict[str, int]
    literal: bool = False


def frequency_gap(h: Hierarchy, counts: ClassCounts, literal: bool = False) -> FreqGapReport:
    """Excess of leaf-name mentions over the ancestor's own-name mentions.

    gap(j) = (sum of leaf descendants' m - own m) / n(j); positive means
    captions prefer the finer-grained names. `literal=True` instead
    computes (sum of leaf n - n(j)) / m_sum(j), the uncorrected bookkeeping
    identity, for auditing: it is zero wherever n(j) is the leaf sum.
    """
    agg = ancestor_aggregate(h, counts)
    gaps: dict[str, float] = {}
    undefined: dict[str, str] = {}
    levels: dict[str, int] = {}
    for y in sorted(h.nodes):
        if h.is_leaf(y):
            continue
        levels[y] = h.level_of(y)
        leaves = h.leaf_descendants(y)
        if literal:
            denom = agg.m_sum[y]
            if denom == 0:
                undefined[y] = "no leaf mentions (m_sum = 0)"
                continue
            gaps[y] = (sum(agg.n[leaf] for leaf in leaves) - agg.n[y]) / denom
        else:
            if agg.n[y] == 0:
                undefined[y] = "no retrieved images under ancestor (n = 0)"
                continue
            gaps[y] = (agg.m_sum[y] - agg.m[y]) / agg.n[y]
    return FreqGapReport(gaps=gaps, undefined=undefined, levels=levels, literal=literal)


def correlate_gap_vs_delta(
    report: FreqGapReport, perf_delta: dict[str, float]
) -> tuple[float, float, list[tuple[str, float, float]]]:
    """Spearman between frequency gap and performance discrepancy.

    Returns (rho, p, scatter) where scatter rows are (ancestor, gap,
    delta) for every ancestor with both values defined.
    """
    scatter = [
        (y, report.gaps[y], perf_delta[y])
        for y in sorted(report.gaps)
        if y in perf_delta
    ]
    rho, p = spearman([s[1] for s in scatter], [s[2] for s in scatter])
    return rho, p, scatter


def frequency_table(h: Hierarchy, counts: ClassCounts) -> list[dict]:
    """Per-label frequency rows for level-vs-frequency plots."""
    agg = ancestor_aggregate(h, counts)
    rows = []
    for y in sorted(h.nodes):
        n = agg.n.get(y, 0)
        row = {
            "label": y,
            "level": h.level_of(y),
            "is_leaf": h.is_leaf(y),
            "n": n,
            "m_own": agg.m.get(y, 0),
            "m_sum": agg.m_sum.get(y, agg.m.get(y, 0)),
        }
        row["q_own"] = row["m_own"] / n if n > 0 else None
        row["q_sum"] = row["m_sum"] / n if n > 0 else None
        rows.append(row)
    return rows


def read_counts(path) -> ClassCounts:
    """Parse a `label_id<TAB>n<TAB>m[<TAB>m_self]` counts file."""
    counts = ClassCounts()
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise ParseError(f"expected label, n, m[, m_self], got {parts!r}", line_no)
            label = parts[0]
            try:
                counts.n[label] = int(parts[1])
                counts.m[label] = int(parts[2])
            except ValueError as exc:
                raise ParseError(str(exc), line_no) from exc
    return counts


def write_counts(counts: ClassCounts, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label in sorted(set(counts.n) | set(counts.m)):
            fh.write(f"{label}\t{counts.n.get(label, 0)}\t{counts.m.get(label, 0)}\n")
