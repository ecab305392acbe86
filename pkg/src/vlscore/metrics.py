"""Scalar and distributional evaluation metrics.

Average precision is non-interpolated, with a documented tie rule: items
are ranked by descending score, ties broken by original index (stable).
Quantiles use linear interpolation between closest ranks. Spearman's p is
the two-sided t approximation; exact permutation enumeration lives in the
test suite only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as _sps

from .errors import (
    DataError,
    DegenerateConstantInputError,
    EmptyInputError,
    LengthMismatchError,
    MissingBoxesError,
    MissingEmbeddingError,
    NoPositivesError,
)
from .hierarchy import Hierarchy, TwoLevelMap
from .scoring import ClassEmbeddingTable
from .store import ImageRecord, ScoreMatrix


def top1_accuracy(pred: list[str], gold: list[str]) -> float:
    if len(pred) != len(gold):
        raise LengthMismatchError(f"{len(pred)} predictions vs {len(gold)} labels")
    if not pred:
        raise EmptyInputError("no predictions")
    return sum(p == g for p, g in zip(pred, gold)) / len(pred)


def average_precision(scores, relevance) -> float:
    """Non-interpolated AP: mean over positive ranks k of precision@k."""
    s = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(relevance)
    if s.shape != rel.shape or s.ndim != 1:
        raise LengthMismatchError(
            f"scores shape {s.shape} vs relevance shape {rel.shape}"
        )
    n_pos = int(rel.sum())
    if n_pos == 0:
        raise NoPositivesError("average precision undefined without positives")
    order = np.argsort(-s, kind="stable")
    rel_sorted = rel[order]
    cum_pos = np.cumsum(rel_sorted)
    ranks = np.arange(1, len(s) + 1)
    return float((cum_pos[rel_sorted == 1] / ranks[rel_sorted == 1]).mean())


@dataclass(frozen=True)
class MultilabelApResult:
    per_class: dict[str, float]
    mean_ap: float
    excluded: tuple[str, ...]  # classes with no positive image


def multilabel_map(
    scores: ScoreMatrix, gold: dict[str, set[str]], classes: list[str]
) -> MultilabelApResult:
    """Per-class AP over the image axis plus their unweighted mean.

    Classes with no positive image are excluded from the mean and reported.
    """
    col = {k: i for i, k in enumerate(scores.text_keys)}
    missing = [c for c in classes if c not in col]
    if missing:
        raise MissingEmbeddingError(f"no score column for class {missing[0]!r}")
    per_class: dict[str, float] = {}
    excluded = []
    for c in classes:
        rel = np.fromiter(
            (1 if c in gold.get(img, ()) else 0 for img in scores.image_keys),
            dtype=np.int64,
            count=scores.n_images,
        )
        if rel.sum() == 0:
            excluded.append(c)
            continue
        per_class[c] = average_precision(scores.data[:, col[c]], rel)
    if not per_class:
        raise NoPositivesError("every class has zero positives")
    mean_ap = float(np.mean(list(per_class.values())))
    return MultilabelApResult(per_class, mean_ap, tuple(excluded))


@dataclass(frozen=True)
class LevelStats:
    level: int
    count: int
    min: float
    q1: float
    median: float
    q3: float
    max: float


def level_stats(per_class_ap: dict[str, float], h: Hierarchy) -> list[LevelStats]:
    """Quartile summary of per-class AP grouped by hierarchy level."""
    by_level: dict[int, list[float]] = {}
    for label, ap in per_class_ap.items():
        by_level.setdefault(h.level_of(label), []).append(ap)
    out = []
    for level in sorted(by_level):
        vals = np.asarray(by_level[level], dtype=np.float64)
        q = np.quantile(vals, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
        out.append(
            LevelStats(level, len(vals), float(q[0]), float(q[1]), float(q[2]),
                       float(q[3]), float(q[4]))
        )
    return out


def spearman(x, y) -> tuple[float, float]:
    """Spearman rho (average ranks for ties) with a two-sided p-value.

    For n of 6 or more the p-value is the usual Student-t approximation,
    t = rho * sqrt((n - 2) / (1 - rho^2)) with n - 2 degrees of freedom.
    At n of 4 or 5 that approximation is off by up to 0.15, so the exact
    permutation distribution is used instead (at most 120 permutations).
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise LengthMismatchError(f"shapes {xa.shape} vs {ya.shape}")
    n = len(xa)
    if n < 3:
        raise DataError(f"need at least 3 pairs, got {n}")
    if np.all(xa == xa[0]) or np.all(ya == ya[0]):
        raise DegenerateConstantInputError("constant input has no rank ordering")
    rx = _sps.rankdata(xa)
    ry = _sps.rankdata(ya)
    # perfectly monotone pairs are exactly +-1, not 1 minus an ulp
    if np.array_equal(rx, ry):
        rho = 1.0
    elif np.array_equal(rx + ry, np.full(n, float(n + 1))):
        rho = -1.0
    else:
        rho = float(np.corrcoef(rx, ry)[0, 1])
        rho = max(-1.0, min(1.0, rho))
    if n <= 5:
        return rho, _exact_rank_permutation_p(rx, ry, rho)
    if abs(rho) == 1.0:
        return rho, 0.0
    t = rho * np.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(_sps.t.sf(abs(t), df=n - 2))
    return rho, p


def _exact_rank_permutation_p(rx, ry, rho_obs) -> float:
    """Two-sided p over all permutations of the observed y ranks."""
    import itertools

    n = len(rx)
    xc = rx - rx.mean()
    perms = np.array(list(itertools.permutations(ry)))
    yc = perms - perms.mean(axis=1, keepdims=True)
    denom = np.linalg.norm(xc) * np.linalg.norm(yc[0])
    rhos = (yc @ xc) / denom
    return float(np.mean(np.abs(rhos) >= abs(rho_obs) - 1e-12))


def fg_to_cg_text_classification(
    fg_table: ClassEmbeddingTable,
    cg_table: ClassEmbeddingTable,
    two_level: TwoLevelMap,
) -> float:
    """Classify each FG prompt row to its nearest CG row; accuracy vs parenthood."""
    fg_ids = two_level.fg_classes
    fg_index = {k: i for i, k in enumerate(fg_table.class_ids)}
    cg_index = {k: i for i, k in enumerate(cg_table.class_ids)}
    for fg in fg_ids:
        if fg not in fg_index:
            raise MissingEmbeddingError(f"no FG embedding for {fg!r}")
    for cg in two_level.cg_classes:
        if cg not in cg_index:
            raise MissingEmbeddingError(f"no CG embedding for {cg!r}")

    fg_rows = fg_table.matrix.data[[fg_index[fg] for fg in fg_ids]].astype(np.float64)
    cg_ids = list(two_level.cg_classes)
    cg_rows = cg_table.matrix.data[[cg_index[cg] for cg in cg_ids]].astype(np.float64)
    fg_rows /= np.linalg.norm(fg_rows, axis=1, keepdims=True)
    cg_rows /= np.linalg.norm(cg_rows, axis=1, keepdims=True)
    sims = fg_rows @ cg_rows.T
    pred = sims.argmax(axis=1)  # ties to the lowest CG index
    parent = two_level.parent_index()
    correct = sum(cg_ids[j] == parent[fg] for fg, j in zip(fg_ids, pred))
    return correct / len(fg_ids)


@dataclass(frozen=True)
class AreaCorrelation:
    per_class: dict[str, tuple[float, float, int]]  # label -> (rho, p, n)
    undefined: dict[str, str]  # label -> reason
    mean_rho: float
    n_strong: int  # classes with rho > 0.5 and p < 0.05


def area_score_correlation(
    records: list[ImageRecord],
    single_label_scores: dict[str, dict[str, float]],
) -> AreaCorrelation:
    """Per-class Spearman between single-label prompt score and label area fraction."""
    samples: dict[str, list[tuple[float, float]]] = {}
    by_id = {r.image_id: r for r in records}
    for image_id, label_scores in single_label_scores.items():
        rec = by_id.get(image_id)
        if rec is None:
            raise MissingBoxesError(f"no record for scored image {image_id!r}")
        for label, score in label_scores.items():
            if not any(b.label == label for b in rec.boxes):
                raise MissingBoxesError(
                    f"image {image_id!r}: no box for scored label {label!r}"
                )
            samples.setdefault(label, []).append(
                (float(score), rec.label_area_fraction(label))
            )

    per_class: dict[str, tuple[float, float, int]] = {}
    undefined: dict[str, str] = {}
    for label in sorted(samples):
        pairs = samples[label]
        if len(pairs) < 3:
            undefined[label] = f"only {len(pairs)} images"
            continue
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        try:
            rho, p = spearman(xs, ys)
        except DegenerateConstantInputError:
            undefined[label] = "constant scores or areas"
            continue
        per_class[label] = (rho, p, len(pairs))
    mean_rho = (
        float(np.mean([v[0] for v in per_class.values()])) if per_class else float("nan")
    )
    n_strong = sum(1 for rho, p, _ in per_class.values() if rho > 0.5 and p < 0.05)
    return AreaCorrelation(per_class, undefined, mean_rho, n_strong)
