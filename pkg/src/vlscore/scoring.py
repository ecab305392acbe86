"""Cross-modality cosine scoring and hierarchy score/label propagation.

All operations are pure functions of immutable inputs. Per-image rows are
independent, so results do not depend on how work is split across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DataError,
    DimMismatchError,
    MissingClassColumnError,
    MissingFgEmbeddingError,
    ZeroNormMeanError,
    ZeroNormRowError,
)
from .hierarchy import Hierarchy, TwoLevelMap
from .store import EmbeddingMatrix, ScoreMatrix

DEFAULT_TEMPLATE = "a photo of a {}"


@dataclass(frozen=True)
class PromptTemplateSet:
    """Ordered prompt templates, each with exactly one `{}` placeholder."""

    templates: tuple[str, ...] = (DEFAULT_TEMPLATE,)

    def __post_init__(self):
        if not self.templates:
            raise DataError("template set is empty")
        for t in self.templates:
            if t.count("{}") != 1:
                raise DataError(f"template {t!r} must have exactly one {{}} placeholder")

    def fill(self, name: str) -> list[str]:
        return [t.format(name) for t in self.templates]


def load_templates(path) -> PromptTemplateSet:
    """One template per line; `#` lines and blank lines are skipped."""
    templates = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if line and not line.startswith("#"):
                templates.append(line)
    return PromptTemplateSet(tuple(templates))


@dataclass
class ClassEmbeddingTable:
    """One embedding row per class, keyed by class id."""

    matrix: EmbeddingMatrix

    @property
    def class_ids(self) -> tuple[str, ...]:
        return self.matrix.row_keys

    def row(self, class_id: str) -> np.ndarray:
        return self.matrix.row(class_id)

    def check_unit_norm(self, tol: float = 1e-5) -> None:
        norms = np.linalg.norm(self.matrix.data.astype(np.float64), axis=1)
        bad = np.nonzero(np.abs(norms - 1.0) > tol)[0]
        if bad.size:
            raise DataError(
                f"class rows not unit-norm (first: {self.class_ids[bad[0]]!r}, "
                f"norm {norms[bad[0]]:.6f})"
            )


def _unit_rows(m: EmbeddingMatrix) -> np.ndarray:
    data = m.data.astype(np.float64)
    norms = np.linalg.norm(data, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise ZeroNormRowError(int(zero[0]))
    return data / norms[:, None]


def cosine_scores(img: EmbeddingMatrix, txt: EmbeddingMatrix) -> ScoreMatrix:
    """Pairwise cosine similarity; entry (i, j) = cos(img_i, txt_j) in [-1, 1]."""
    if img.dim != txt.dim:
        raise DimMismatchError(f"image dim {img.dim} != text dim {txt.dim}")
    scores = _unit_rows(img) @ _unit_rows(txt).T
    np.clip(scores, -1.0, 1.0, out=scores)
    return ScoreMatrix(
        image_keys=img.row_keys,
        text_keys=txt.row_keys,
        data=scores.astype(np.float32),
    )


def class_embedding(per_template_embs: np.ndarray) -> np.ndarray:
    """Mean of one class's per-template embeddings, renormalized to unit norm."""
    arr = np.asarray(per_template_embs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DataError("need a 2-D array with at least one row")
    mean = arr.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise ZeroNormMeanError("template embeddings cancel to the zero vector")
    return (mean / norm).astype(np.float32)


def build_class_table(
    class_ids: list[str], per_class_template_embs: dict[str, np.ndarray]
) -> ClassEmbeddingTable:
    """Ensemble template embeddings into one unit-norm row per class."""
    rows = []
    for cid in class_ids:
        if cid not in per_class_template_embs:
            raise MissingFgEmbeddingError(f"no embeddings for class {cid!r}")
        rows.append(class_embedding(per_class_template_embs[cid]))
    return ClassEmbeddingTable(
        EmbeddingMatrix(row_keys=tuple(class_ids), data=np.stack(rows))
    )


def cg_embedding_from_fg(
    two_level: TwoLevelMap, fg_table: ClassEmbeddingTable, renormalize: bool = True
) -> ClassEmbeddingTable:
    """Derive CG prompt rows as the mean of each CG class's FG rows.

    The mean is renormalized to unit norm by default so scores stay
    cosine-comparable; pass renormalize=False to keep the raw mean.
    """
    fg_index = {k: i for i, k in enumerate(fg_table.class_ids)}
    rows = []
    for cg in two_level.cg_classes:
        fgs = two_level.fg_children[cg]
        missing = [fg for fg in fgs if fg not in fg_index]
        if missing:
            raise MissingFgEmbeddingError(
                f"CG {cg!r}: no FG embedding for {missing[0]!r}"
            )
        if not fgs:
            raise MissingFgEmbeddingError(f"CG {cg!r} has no FG children to average")
        mean = fg_table.matrix.data[[fg_index[fg] for fg in fgs]].astype(
            np.float64
        ).mean(axis=0)
        if renormalize:
            norm = float(np.linalg.norm(mean))
            if norm < 1e-12:
                raise ZeroNormMeanError(f"CG {cg!r}: FG rows cancel to zero")
            mean = mean / norm
        rows.append(mean.astype(np.float32))
    return ClassEmbeddingTable(
        EmbeddingMatrix(row_keys=two_level.cg_classes, data=np.stack(rows))
    )


@dataclass(frozen=True)
class PropagationResult:
    """Scores or labels after propagating over the hierarchy."""

    strategy: str
    scores: ScoreMatrix | None = None
    labels: tuple[str, ...] | None = None


def _column_index(s: ScoreMatrix, h: Hierarchy) -> dict[str, int]:
    idx = {k: i for i, k in enumerate(s.text_keys)}
    for node in h.nodes:
        if node not in idx:
            raise MissingClassColumnError(f"no score column for class {node!r}")
    return idx


def _nodes_children_first(h: Hierarchy) -> list[str]:
    # longest-path levels are strictly increasing along edges, so sorting by
    # decreasing level yields children before any of their parents
    return sorted(h.nodes, key=lambda y: (-h.level_of(y), y))


def propagate_child(s: ScoreMatrix, h: Hierarchy) -> PropagationResult:
    """Each ancestor takes the max of its direct children's raw scores."""
    idx = _column_index(s, h)
    out = s.data.copy()
    for y in h.nodes:
        kids = h.children[y]
        if kids:
            out[:, idx[y]] = s.data[:, [idx[c] for c in sorted(kids)]].max(axis=1)
    return PropagationResult(
        "child", ScoreMatrix(s.image_keys, s.text_keys, out)
    )


def propagate_leaf(s: ScoreMatrix, h: Hierarchy) -> PropagationResult:
    """Recursive max over children's aggregated scores; leaves keep raw.

    Equivalent to taking each node's max over its leaf descendants' raws.
    """
    idx = _column_index(s, h)
    out = s.data.copy()
    for y in _nodes_children_first(h):
        kids = h.children[y]
        if kids:
            out[:, idx[y]] = out[:, [idx[c] for c in sorted(kids)]].max(axis=1)
    return PropagationResult(
        "leaf", ScoreMatrix(s.image_keys, s.text_keys, out)
    )


def propagate_leaf_self(s: ScoreMatrix, h: Hierarchy) -> PropagationResult:
    """Like leaf propagation but each node also competes with its own raw score."""
    idx = _column_index(s, h)
    out = s.data.copy()
    for y in _nodes_children_first(h):
        kids = h.children[y]
        if kids:
            agg = out[:, [idx[c] for c in sorted(kids)]].max(axis=1)
            out[:, idx[y]] = np.maximum(agg, s.data[:, idx[y]])
    return PropagationResult(
        "leaf_self", ScoreMatrix(s.image_keys, s.text_keys, out)
    )


def propagate_labels_two_level(
    fg_scores: ScoreMatrix, two_level: TwoLevelMap
) -> PropagationResult:
    """Predict FG per image (argmax, ties to the lowest column), map to CG parent."""
    idx = {k: i for i, k in enumerate(fg_scores.text_keys)}
    fg_order = two_level.fg_classes
    missing = [fg for fg in fg_order if fg not in idx]
    if missing:
        raise MissingClassColumnError(f"no score column for FG class {missing[0]!r}")
    sub = fg_scores.data[:, [idx[fg] for fg in fg_order]]
    parent = two_level.parent_index()
    winners = sub.argmax(axis=1)  # first max wins: lowest column index
    labels = tuple(parent[fg_order[j]] for j in winners)
    return PropagationResult("fg_label", labels=labels)


def top1_labels(scores: ScoreMatrix, class_ids: tuple[str, ...]) -> tuple[str, ...]:
    """Argmax class per image over the given columns; ties to the lowest index."""
    idx = {k: i for i, k in enumerate(scores.text_keys)}
    missing = [c for c in class_ids if c not in idx]
    if missing:
        raise MissingClassColumnError(f"no score column for class {missing[0]!r}")
    sub = scores.data[:, [idx[c] for c in class_ids]]
    return tuple(class_ids[j] for j in sub.argmax(axis=1))
