"""Evaluation protocol drivers wiring scoring, propagation, and metrics.

The two-level protocol measures the gap between classifying coarse classes
directly and classifying fine classes first. The multi-level protocol
measures, per ancestor class, how much max-propagating descendant scores
improves average precision over the ancestor's own raw score.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import DataError
from .hierarchy import Hierarchy, TwoLevelMap
from .metrics import LevelStats, average_precision, level_stats, top1_accuracy
from .scoring import (
    ClassEmbeddingTable,
    cg_embedding_from_fg,
    cosine_scores,
    propagate_child,
    propagate_labels_two_level,
    propagate_leaf,
    propagate_leaf_self,
    top1_labels,
)
from .store import EmbeddingMatrix, ImageRecord, ScoreMatrix


def gold_fg_from_records(
    records: list[ImageRecord], two_level: TwoLevelMap
) -> dict[str, str]:
    """Gold FG label per image: the first record label that is an FG class."""
    fg_set = set(two_level.fg_classes)
    gold = {}
    for rec in records:
        fg = next((lab for lab in rec.labels if lab in fg_set), None)
        if fg is None:
            raise DataError(f"image {rec.image_id!r} has no FG label from the map")
        gold[rec.image_id] = fg
    return gold


def two_level_eval(
    images: EmbeddingMatrix,
    fg_table: ClassEmbeddingTable,
    cg_table: ClassEmbeddingTable,
    two_level: TwoLevelMap,
    gold_fg: dict[str, str],
    renormalize: bool = True,
) -> dict:
    """Top-1 accuracies for FG_direct, CG_direct, CG_FG-label, CG_FG-emb.

    Deltas are against CG_direct; positive means propagating fine-grained
    predictions beats prompting the coarse class directly.
    """
    parent = two_level.parent_index()
    gold_fg_list = [gold_fg[k] for k in images.row_keys]
    gold_cg_list = [parent[fg] for fg in gold_fg_list]

    fg_scores = cosine_scores(images, fg_table.matrix)
    fg_pred = top1_labels(fg_scores, two_level.fg_classes)
    fg_direct = top1_accuracy(list(fg_pred), gold_fg_list)

    cg_scores = cosine_scores(images, cg_table.matrix)
    cg_pred = top1_labels(cg_scores, two_level.cg_classes)
    cg_direct = top1_accuracy(list(cg_pred), gold_cg_list)

    propagated = propagate_labels_two_level(fg_scores, two_level)
    cg_fg_label = top1_accuracy(list(propagated.labels), gold_cg_list)

    derived = cg_embedding_from_fg(two_level, fg_table, renormalize=renormalize)
    emb_scores = cosine_scores(images, derived.matrix)
    emb_pred = top1_labels(emb_scores, two_level.cg_classes)
    cg_fg_emb = top1_accuracy(list(emb_pred), gold_cg_list)

    return {
        "n_images": images.rows,
        "fg_direct": fg_direct,
        "cg_direct": cg_direct,
        "cg_fg_label": cg_fg_label,
        "cg_fg_emb": cg_fg_emb,
        "delta_fg_label": cg_fg_label - cg_direct,
        "delta_fg_emb": cg_fg_emb - cg_direct,
    }


def gold_closure_from_records(
    records: list[ImageRecord], h: Hierarchy
) -> dict[str, set[str]]:
    """Record labels plus all their ancestors, per image."""
    closure = {}
    for rec in records:
        full: set[str] = set()
        for lab in rec.labels:
            full.add(lab)
            full.update(h.ancestors(lab))
        closure[rec.image_id] = full
    return closure


def _per_class_ap(
    scores: ScoreMatrix, gold: dict[str, set[str]], classes: list[str], threads: int
) -> tuple[dict[str, float], list[str]]:
    col = {k: i for i, k in enumerate(scores.text_keys)}
    rel_by_class = {}
    excluded = []
    for c in classes:
        rel = np.fromiter(
            (1 if c in gold.get(img, ()) else 0 for img in scores.image_keys),
            dtype=np.int64,
            count=scores.n_images,
        )
        if rel.sum() == 0:
            excluded.append(c)
        else:
            rel_by_class[c] = rel

    included = [c for c in classes if c in rel_by_class]

    def one(c):
        return average_precision(scores.data[:, col[c]], rel_by_class[c])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            aps = list(pool.map(one, included))
    else:
        aps = [one(c) for c in included]
    return dict(zip(included, aps)), excluded


def multilevel_eval(
    scores: ScoreMatrix,
    h: Hierarchy,
    gold: dict[str, set[str]],
    threads: int = 1,
) -> dict:
    """Leaf and ancestor mAP under raw and propagated scores, plus level stats.

    `gold` must already contain the upward closure (use
    gold_closure_from_records). Classes with no positive image are excluded
    from every mean and reported once.
    """
    leaves = sorted(h.leaves())
    ancestors = sorted(h.nodes - h.leaves())

    leaf_ap, excluded_leaves = _per_class_ap(scores, gold, leaves, threads)
    anc_raw_ap, excluded_anc = _per_class_ap(scores, gold, ancestors, threads)

    strategies = {
        "child": propagate_child(scores, h).scores,
        "leaf": propagate_leaf(scores, h).scores,
        "leaf_self": propagate_leaf_self(scores, h).scores,
    }
    anc_prop_ap = {
        name: _per_class_ap(s, gold, ancestors, threads)[0]
        for name, s in strategies.items()
    }

    def mean(vals):
        return float(np.mean(list(vals))) if vals else float("nan")

    leaves_map = mean(leaf_ap.values())
    anc_raw_map = mean(anc_raw_ap.values())
    result = {
        "n_images": scores.n_images,
        "leaves_map": leaves_map,
        "ancestor_raw_map": anc_raw_map,
        "excluded_classes": sorted(excluded_leaves + excluded_anc),
        "per_class_ap_leaves": leaf_ap,
        "per_class_ap_ancestor_raw": anc_raw_ap,
    }
    for name in ("child", "leaf", "leaf_self"):
        m = mean(anc_prop_ap[name].values())
        result[f"ancestor_{name}_map"] = m
        result[f"delta_{name}"] = m - anc_raw_map
        result[f"per_class_ap_ancestor_{name}"] = anc_prop_ap[name]
    # per-ancestor leaf-propagation gain, the discrepancy used downstream
    result["per_class_delta_leaf"] = {
        c: anc_prop_ap["leaf"][c] - anc_raw_ap[c]
        for c in anc_raw_ap
        if c in anc_prop_ap["leaf"]
    }
    return result


def multilevel_level_stats(result: dict, h: Hierarchy) -> dict[str, list[LevelStats]]:
    """Quartile tables for the leaf, ancestor-raw, and ancestor-leaf series."""
    return {
        "leaves": level_stats(result["per_class_ap_leaves"], h),
        "ancestor_raw": level_stats(result["per_class_ap_ancestor_raw"], h),
        "ancestor_leaf": level_stats(result["per_class_ap_ancestor_leaf"], h),
        "ancestor_delta_leaf": level_stats(result["per_class_delta_leaf"], h),
    }
