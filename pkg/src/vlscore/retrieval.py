"""Image-to-text retrieval benchmark with hard positives and hard negatives.

Positive kinds: ground-truth captions, single-label prompts, multi-label
prompts. Negative kinds: captions of random other images, captions of
label-sharing images, and the query's own captions poisoned by swapping
one lexicon span for a label absent from the image.

Everything is deterministic given (records, config, seed): each query gets
its own Philox stream derived from the root seed and the query index, so
the grid is identical however the work is scheduled.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    EmptyReplacementPoolError,
    MissingEmbeddingError,
    NoCaptionsError,
    NoLabelsError,
    NoReplaceableSpanError,
)
from .lexicon import LexiconMatcher
from .metrics import average_precision
from .rng import make_rng, stable_id
from .store import EmbeddingMatrix, ImageRecord

POSITIVE_KINDS = ("cap_pos", "prompt_multi", "prompt_single")
NEGATIVE_KINDS = ("cap_random", "cap_relevant", "cap_error")

DEFAULT_SINGLE_TEMPLATE = "a photo of a {}"
DEFAULT_MULTI_TEMPLATE = "a photo of {}"


@dataclass(frozen=True)
class Perturbation:
    """Where a caption was edited; reverting the span restores the original."""

    start: int
    original: str
    replacement: str
    replacement_label: str

    def revert(self, text: str) -> str:
        return text[: self.start] + self.original + text[self.start + len(self.replacement):]


@dataclass(frozen=True)
class TextItem:
    text: str
    kind: str
    source_image: str | None = None
    labels: tuple[str, ...] = ()
    provenance: Perturbation | None = None

    def __post_init__(self):
        if self.kind not in POSITIVE_KINDS + NEGATIVE_KINDS:
            raise DataError(f"unknown text kind {self.kind!r}")
        if self.kind == "cap_error" and self.provenance is None:
            raise DataError("cap_error items must carry perturbation provenance")


@dataclass(frozen=True)
class RetrievalTemplates:
    """Prompt patterns for the hard-positive kinds.

    The multi-label pattern drops the article so the filled prompt reads
    "a photo of dog, person, ball" for a three-label image.
    """

    single: str = DEFAULT_SINGLE_TEMPLATE
    multi: str = DEFAULT_MULTI_TEMPLATE

    def __post_init__(self):
        for t in (self.single, self.multi):
            if t.count("{}") != 1:
                raise DataError(f"template {t!r} must have exactly one {{}} placeholder")


def build_positives(
    rec: ImageRecord,
    mode: str,
    names: dict[str, str],
    templates: RetrievalTemplates = RetrievalTemplates(),
) -> list[TextItem]:
    """Positive texts for one query image.

    cap_pos: every ground-truth caption. prompt_single: one prompt per
    label. prompt_multi: one prompt joining all label names, comma
    separated, in record label order.
    """
    if mode == "cap_pos":
        if not rec.captions:
            raise NoCaptionsError(f"image {rec.image_id!r} has no captions")
        return [
            TextItem(text=c, kind="cap_pos", source_image=rec.image_id)
            for c in rec.captions
        ]
    if mode == "prompt_single":
        if not rec.labels:
            raise NoLabelsError(f"image {rec.image_id!r} has no labels")
        return [
            TextItem(
                text=templates.single.format(names.get(lab, lab)),
                kind="prompt_single",
                source_image=rec.image_id,
                labels=(lab,),
            )
            for lab in rec.labels
        ]
    if mode == "prompt_multi":
        if not rec.labels:
            raise NoLabelsError(f"image {rec.image_id!r} has no labels")
        joined = ", ".join(names.get(lab, lab) for lab in rec.labels)
        return [
            TextItem(
                text=templates.multi.format(joined),
                kind="prompt_multi",
                source_image=rec.image_id,
                labels=tuple(rec.labels),
            )
        ]
    raise DataError(f"unknown positive mode {mode!r}")


def perturb_caption(
    caption: str,
    image_labels: set[str],
    lexicon,
    seed,
    spans=None,
) -> TextItem:
    """Swap one matched lexicon span for the name of a label absent from the image.

    The span and the replacement label are drawn uniformly from the seeded
    stream. `lexicon` may be a label->synonyms dict or a prebuilt
    LexiconMatcher; `seed` an int or a numpy Generator. Pass pre-annotated
    `spans` (e.g. from an external entity recognizer) to bypass lexicon
    span detection; replacements still come from the lexicon.
    """
    matcher = lexicon if isinstance(lexicon, LexiconMatcher) else LexiconMatcher(lexicon)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    if spans is None:
        spans = matcher.find_spans(caption)
    if not spans:
        raise NoReplaceableSpanError(f"no lexicon span in {caption!r}")
    span = spans[int(rng.integers(len(spans)))]
    pool = sorted(
        lab
        for lab in matcher.labels()
        if lab not in image_labels
        and lab != span.label
        and matcher.canonical_name(lab) != span.text
    )
    if not pool:
        raise EmptyReplacementPoolError(
            f"no replacement label outside image labels {sorted(image_labels)}"
        )
    label = pool[int(rng.integers(len(pool)))]
    replacement = matcher.canonical_name(label)
    text = caption[: span.start] + replacement + caption[span.end :]
    return TextItem(
        text=text,
        kind="cap_error",
        provenance=Perturbation(
            start=span.start,
            original=span.text,
            replacement=replacement,
            replacement_label=label,
        ),
    )


def sample_negatives(
    rec: ImageRecord,
    pool: list[ImageRecord],
    mode: str,
    k: int,
    seed,
    lexicon=None,
    exclude_texts: set[str] = frozenset(),
) -> tuple[list[TextItem], bool]:
    """Draw k negative texts for one query; returns (items, pool_exhausted).

    cap_random draws uniformly without replacement from other images'
    captions; cap_relevant restricts the pool to images sharing a label;
    cap_error cycles over the query's own perturbable captions, each cycle
    drawing a fresh replacement. When the pool holds fewer than k texts all
    of it is returned and the task is flagged.
    """
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    if mode in ("cap_random", "cap_relevant"):
        own_labels = set(rec.labels)
        candidates = []
        for other in pool:
            if other.image_id == rec.image_id:
                continue
            if mode == "cap_relevant" and not own_labels.intersection(other.labels):
                continue
            for cap in other.captions:
                if cap in exclude_texts:
                    continue
                candidates.append(
                    TextItem(text=cap, kind=mode, source_image=other.image_id)
                )
        order = rng.permutation(len(candidates))
        picked = [candidates[j] for j in order[:k]]
        return picked, len(candidates) < k
    if mode == "cap_error":
        if not rec.captions:
            raise NoCaptionsError(f"image {rec.image_id!r} has no captions")
        matcher = (
            lexicon if isinstance(lexicon, LexiconMatcher) else LexiconMatcher(lexicon)
        )
        perturbable = [c for c in rec.captions if matcher.find_spans(c)]
        if not perturbable:
            raise NoReplaceableSpanError(
                f"image {rec.image_id!r}: no caption has a lexicon span"
            )
        items = []
        labels = set(rec.labels)
        for j in range(k):
            cap = perturbable[j % len(perturbable)]
            item = perturb_caption(cap, labels, matcher, rng)
            items.append(
                TextItem(
                    text=item.text,
                    kind="cap_error",
                    source_image=rec.image_id,
                    provenance=item.provenance,
                )
            )
        return items, False
    raise DataError(f"unknown negative mode {mode!r}")


@dataclass(frozen=True)
class RetrievalTask:
    query_image: str
    positives: dict[str, tuple[TextItem, ...]]  # by positive kind
    negatives: dict[str, tuple[TextItem, ...]]  # by negative kind
    seed: int
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 100
    seed: int = 42
    templates: RetrievalTemplates = RetrievalTemplates()
    threads: int = 1
    histogram_bins: int = 40


@dataclass(frozen=True)
class CellStats:
    mean_ap: float
    n_evaluated: int
    n_dropped: int


@dataclass
class GridReport:
    """3x3 retrieval grid plus per-kind score pools for histogram plots."""

    cells: dict[tuple[str, str], CellStats]
    kind_scores: dict[str, np.ndarray]
    n_queries: int
    flags: list[str] = field(default_factory=list)

    def histogram(self, kind: str, bins: int = 40) -> tuple[np.ndarray, np.ndarray]:
        edges = np.linspace(-1.0, 1.0, bins + 1)
        counts, _ = np.histogram(self.kind_scores[kind], bins=edges)
        return counts, edges


class TextsToEmbed(Exception):
    """Raised when raw texts need embeddings from the adapter first.

    Carries the id -> text manifest for the two-phase batch protocol.
    """

    def __init__(self, texts: dict[str, str]):
        self.texts = texts
        super().__init__(f"{len(texts)} texts need embeddings")


def write_manifest(texts: dict[str, str], path) -> None:
    """Write a texts-to-embed manifest: `text_id<TAB>json-encoded text` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for tid in sorted(texts):
            fh.write(f"{tid}\t{json.dumps(texts[tid], ensure_ascii=False)}\n")


def read_manifest(path) -> dict[str, str]:
    texts = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            tid, raw = line.split("\t", 1)
            texts[tid] = json.loads(raw)
    return texts


def build_tasks(
    records: list[ImageRecord],
    names: dict[str, str],
    lexicon,
    cfg: RetrievalConfig,
) -> list[RetrievalTask]:
    """Construct positives and negatives for every query image.

    Negatives are drawn once per query and reused across positive kinds.
    Per-query construction failures (no captions, no labels, no
    perturbable span) disable only the affected kinds; the task records a
    flag for each.
    """
    matcher = lexicon if isinstance(lexicon, LexiconMatcher) else LexiconMatcher(lexicon)

    def one(qindex: int) -> RetrievalTask:
        rec = records[qindex]
        flags = []
        positives = {}
        for kind in POSITIVE_KINDS:
            try:
                positives[kind] = tuple(
                    build_positives(rec, kind, names, cfg.templates)
                )
            except (NoCaptionsError, NoLabelsError) as exc:
                flags.append(f"{kind}: {exc}")
        own_texts = set(rec.captions)
        own_texts.update(t.text for items in positives.values() for t in items)
        negatives = {}
        for kind_id, kind in enumerate(NEGATIVE_KINDS):
            rng = make_rng(cfg.seed, qindex, kind_id)
            try:
                items, exhausted = sample_negatives(
                    rec, records, kind, cfg.k, rng,
                    lexicon=matcher, exclude_texts=own_texts,
                )
            except (NoCaptionsError, NoReplaceableSpanError,
                    EmptyReplacementPoolError) as exc:
                flags.append(f"{kind}: {exc}")
                continue
            if exhausted:
                flags.append(f"{kind}: pool smaller than k={cfg.k}")
            negatives[kind] = tuple(items)
        return RetrievalTask(
            query_image=rec.image_id,
            positives=positives,
            negatives=negatives,
            seed=cfg.seed,
            flags=tuple(flags),
        )

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(one, range(len(records))))
    return [one(q) for q in range(len(records))]


def _resolve_text_vectors(
    tasks: list[RetrievalTask],
    text_matrix: EmbeddingMatrix | None,
    text_embedder,
) -> dict[str, np.ndarray]:
    texts: dict[str, TextItem] = {}
    for task in tasks:
        for items in list(task.positives.values()) + list(task.negatives.values()):
            for item in items:
                texts.setdefault(stable_id(item.text), item)
    vectors: dict[str, np.ndarray] = {}
    missing: dict[str, str] = {}
    lookup = {}
    if text_matrix is not None:
        lookup = {k: i for i, k in enumerate(text_matrix.row_keys)}
    for tid, item in texts.items():
        if tid in lookup:
            vectors[tid] = text_matrix.data[lookup[tid]].astype(np.float64)
        elif text_embedder is not None:
            vectors[tid] = np.asarray(text_embedder(item), dtype=np.float64)
        else:
            missing[tid] = item.text
    if missing:
        raise TextsToEmbed(missing)
    return vectors


def run_grid(
    records: list[ImageRecord],
    images: EmbeddingMatrix,
    cfg: RetrievalConfig,
    names: dict[str, str],
    lexicon,
    text_matrix: EmbeddingMatrix | None = None,
    text_embedder=None,
) -> GridReport:
    """Score every (positive kind, negative kind) cell by mean AP.

    Text vectors come from `text_matrix` (rows keyed by stable text id, the
    adapter protocol) or from `text_embedder(item) -> vector`; if neither
    covers every generated text, TextsToEmbed is raised with the manifest.
    """
    if len(records) != images.rows:
        raise DataError(f"{len(records)} records vs {images.rows} embedding rows")
    tasks = build_tasks(records, names, lexicon, cfg)
    vectors = _resolve_text_vectors(tasks, text_matrix, text_embedder)

    img = images.data.astype(np.float64)
    img_norms = np.linalg.norm(img, axis=1)
    if np.any(img_norms == 0):
        raise MissingEmbeddingError("zero-norm image embedding row")
    img = img / img_norms[:, None]

    def score(qindex: int, item: TextItem) -> float:
        v = vectors[stable_id(item.text)]
        return float(img[qindex] @ v / np.linalg.norm(v))

    def eval_query(qindex: int):
        task = tasks[qindex]
        per_kind = {}
        cell_ap = {}
        for pkind, pitems in task.positives.items():
            per_kind.setdefault(pkind, []).extend(score(qindex, t) for t in pitems)
        for nkind, nitems in task.negatives.items():
            per_kind.setdefault(nkind, []).extend(score(qindex, t) for t in nitems)
        for pkind in POSITIVE_KINDS:
            for nkind in NEGATIVE_KINDS:
                if pkind not in task.positives or nkind not in task.negatives:
                    continue
                pos = [score(qindex, t) for t in task.positives[pkind]]
                neg = [score(qindex, t) for t in task.negatives[nkind]]
                rel = [1] * len(pos) + [0] * len(neg)
                cell_ap[(pkind, nkind)] = average_precision(pos + neg, rel)
        return per_kind, cell_ap

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(eval_query, range(len(tasks))))
    else:
        results = [eval_query(q) for q in range(len(tasks))]

    kind_scores: dict[str, list[float]] = {
        k: [] for k in POSITIVE_KINDS + NEGATIVE_KINDS
    }
    cell_values: dict[tuple[str, str], list[float]] = {}
    for per_kind, cell_ap in results:
        for kind, vals in per_kind.items():
            kind_scores[kind].extend(vals)
        for cell, ap in cell_ap.items():
            cell_values.setdefault(cell, []).append(ap)

    cells = {}
    for pkind in POSITIVE_KINDS:
        for nkind in NEGATIVE_KINDS:
            vals = cell_values.get((pkind, nkind), [])
            cells[(pkind, nkind)] = CellStats(
                mean_ap=float(np.mean(vals)) if vals else float("nan"),
                n_evaluated=len(vals),
                n_dropped=len(tasks) - len(vals),
            )
    flags = [f"{t.query_image}: {f}" for t in tasks for f in t.flags]
    return GridReport(
        cells=cells,
        kind_scores={k: np.asarray(v) for k, v in kind_scores.items()},
        n_queries=len(tasks),
        flags=flags,
    )
