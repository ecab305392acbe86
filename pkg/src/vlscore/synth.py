"""Fully-controlled synthetic worlds with analytic ground truth.

Two generators: `make_world` plants a granularity bias dial (ancestor
prompt corruption epsilon) on a two-level hierarchy; `make_retrieval_world`
plants an informativeness bias (texts mentioning more of an image's
content score higher by construction).

Geometry. FG class centers are orthonormal (seeded Gram-Schmidt). All
perturbations are random unit directions inside the span of the class
centers, scaled by their magnitude parameter, so their effect on
classification is independent of the embedding dimension. A unit
direction can never overturn the own-center margin at sigma 0.3 (own
cosine at least 1 - sigma versus at most sigma elsewhere), which pins the
zero-epsilon accuracies at exactly 1.0, while per-image jitter spreads
class boundaries enough that growing epsilon degrades coarse
classification smoothly instead of in whole-class jumps.

All draws come from named Philox streams derived from the world seed, one
stream per component, so changing epsilon never shifts the images.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimTooSmallError
from .hierarchy import Hierarchy, TwoLevelMap, build_hierarchy
from .rng import make_rng, stable_id
from .scoring import ClassEmbeddingTable
from .store import EmbeddingMatrix, ImageRecord, write_matrix, write_records

# per-component stream ids under the world seed
_STREAM_CENTERS = 0
_STREAM_CG_NOISE = 1
_STREAM_IMAGES = 2
_STREAM_LABELS = 3
_STREAM_TEXTS = 4


@dataclass(frozen=True)
class WorldSpec:
    n_cg: int = 4
    fg_per_cg: int = 4
    images_per_fg: int = 50
    dim: int = 64
    ancestor_noise: float = 0.0
    image_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_cg", "fg_per_cg", "images_per_fg"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")
        if self.ancestor_noise < 0 or self.image_noise < 0:
            raise DataError("noise magnitudes must be >= 0")
        if self.dim < self.n_cg * self.fg_per_cg:
            raise DimTooSmallError(
                f"dim {self.dim} < {self.n_cg * self.fg_per_cg} classes; "
                "centers cannot be orthonormal"
            )


@dataclass(frozen=True)
class WeightSpec:
    """Planted score for a text mentioning one label, all labels, or a caption."""

    single: float = 0.3
    multi: float = 0.6
    caption: float = 0.9

    def __post_init__(self):
        if not (0 < self.single <= self.multi <= self.caption < 1):
            raise DataError(
                "weights must be non-decreasing in information and inside (0, 1)"
            )


@dataclass
class SynthWorld:
    spec: WorldSpec
    hierarchy: Hierarchy
    two_level: TwoLevelMap
    fg_table: ClassEmbeddingTable
    cg_table: ClassEmbeddingTable
    images: EmbeddingMatrix
    records: list[ImageRecord]
    gold_fg: dict[str, str]
    names: dict[str, str]
    lexicon: dict[str, list[str]]
    weights: WeightSpec | None = None

    def text_embedder(self):
        """Planted text embedding function for retrieval worlds."""
        if self.weights is None:
            raise DataError("not a retrieval world: no informativeness weights")
        return _PlantedTextEmbedder(self)


def _orthonormal_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    rows = rng.standard_normal((n, dim))
    for i in range(n):
        v = rows[i]
        for j in range(i):
            v = v - (rows[j] @ v) * rows[j]
        rows[i] = v / np.linalg.norm(v)
    return rows


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _ids_and_names(spec: WorldSpec):
    cg_ids = [f"cg{i:02d}" for i in range(spec.n_cg)]
    fg_ids = {
        cg: [f"fg{i:02d}_{j:02d}" for j in range(spec.fg_per_cg)]
        for i, cg in enumerate(cg_ids)
    }
    names = {cg: f"family{i:02d}" for i, cg in enumerate(cg_ids)}
    for i, cg in enumerate(cg_ids):
        for j, fg in enumerate(fg_ids[cg]):
            names[fg] = f"critter{i:02d}{j:02d}"
    return cg_ids, fg_ids, names


def _base_world(spec: WorldSpec):
    cg_ids, fg_children, names = _ids_and_names(spec)
    edges = [(fg, cg) for cg in cg_ids for fg in fg_children[cg]]
    hierarchy = build_hierarchy(edges, names)
    two_level = TwoLevelMap(
        cg_classes=tuple(cg_ids),
        fg_children={cg: tuple(fgs) for cg, fgs in fg_children.items()},
    )
    fg_order = list(two_level.fg_classes)

    centers = _orthonormal_rows(
        make_rng(spec.seed, _STREAM_CENTERS), len(fg_order), spec.dim
    )
    fg_table = ClassEmbeddingTable(
        EmbeddingMatrix(row_keys=tuple(fg_order), data=centers.astype(np.float32))
    )

    cg_rng = make_rng(spec.seed, _STREAM_CG_NOISE)
    span = centers  # ancestor corruption lives in the span of the class centers
    cg_rows = []
    fg_index = {fg: i for i, fg in enumerate(fg_order)}
    for cg in cg_ids:
        mean = centers[[fg_index[fg] for fg in fg_children[cg]]].mean(axis=0)
        row = _unit(mean)
        if spec.ancestor_noise > 0:
            coeffs = cg_rng.standard_normal(len(fg_order))
            noise = _unit(coeffs @ span)
            row = _unit(row + spec.ancestor_noise * noise)
        else:
            cg_rng.standard_normal(len(fg_order))  # keep streams aligned across eps
        cg_rows.append(row)
    cg_table = ClassEmbeddingTable(
        EmbeddingMatrix(row_keys=tuple(cg_ids), data=np.stack(cg_rows).astype(np.float32))
    )
    return hierarchy, two_level, fg_table, cg_table, centers, fg_order, names


def make_world(spec: WorldSpec) -> SynthWorld:
    """Two-level world with a planted granularity-bias dial.

    Each FG class gets images_per_fg images at its center plus sigma times
    a random unit direction, renormalized. CG prompt rows are the
    renormalized child means, corrupted by epsilon. Identical spec and
    seed give bit-identical worlds.
    """
    hierarchy, two_level, fg_table, cg_table, centers, fg_order, names = _base_world(spec)

    img_rng = make_rng(spec.seed, _STREAM_IMAGES)
    rows, keys, records = [], [], []
    gold_fg = {}
    fg_index = {fg: i for i, fg in enumerate(fg_order)}
    for fg in fg_order:
        for t in range(spec.images_per_fg):
            emb = centers[fg_index[fg]]
            coeffs = img_rng.standard_normal(len(fg_order))
            if spec.image_noise > 0:
                emb = _unit(emb + spec.image_noise * _unit(coeffs @ centers))
            image_id = f"img_{fg}_{t:04d}"
            keys.append(image_id)
            rows.append(emb)
            gold_fg[image_id] = fg
            records.append(
                ImageRecord(
                    image_id=image_id,
                    width=640,
                    height=480,
                    labels=(fg,),
                    captions=(f"a photo of a {names[fg]}",),
                )
            )
    images = EmbeddingMatrix(
        row_keys=tuple(keys), data=np.stack(rows).astype(np.float32)
    )
    lexicon = {lab: [names[lab]] for lab in fg_order}
    return SynthWorld(
        spec=spec,
        hierarchy=hierarchy,
        two_level=two_level,
        fg_table=fg_table,
        cg_table=cg_table,
        images=images,
        records=records,
        gold_fg=gold_fg,
        names=names,
        lexicon=lexicon,
    )


def make_retrieval_world(
    spec: WorldSpec, weights: WeightSpec = WeightSpec(), labels_per_image: int = 3
) -> SynthWorld:
    """World whose text scores are planted by informativeness.

    Every image carries `labels_per_image` FG labels (its own class first,
    the rest drawn from other classes) and two captions that name all of
    them; its embedding is the unit-normalized sum of its label centers.
    The planted embedder then scores, at zero image noise, exactly
    weights.single for a single-label prompt against every image holding
    that label, weights.multi for a multi-label prompt against its source
    image, and weights.caption for captions in any role, poisoned ones
    included (which is what makes them hard negatives). Residual text
    directions live outside the span of the class centers, so no planted
    score leaks across texts.
    """
    hierarchy, two_level, fg_table, cg_table, centers, fg_order, names = _base_world(spec)
    n_fg = len(fg_order)
    if labels_per_image > n_fg:
        raise DataError(f"labels_per_image {labels_per_image} > {n_fg} FG classes")
    if spec.dim <= n_fg:
        raise DimTooSmallError(
            f"retrieval worlds need dim > {n_fg} for off-span text residuals"
        )
    if weights.single * np.sqrt(labels_per_image) >= 1.0:
        raise DataError(
            f"single weight {weights.single} too large to plant exactly "
            f"with {labels_per_image} labels per image"
        )

    img_rng = make_rng(spec.seed, _STREAM_IMAGES)
    lab_rng = make_rng(spec.seed, _STREAM_LABELS)
    fg_index = {fg: i for i, fg in enumerate(fg_order)}
    rows, keys, records = [], [], []
    gold_fg = {}
    for fg in fg_order:
        for t in range(spec.images_per_fg):
            extra_pool = [f for f in fg_order if f != fg]
            picks = lab_rng.permutation(len(extra_pool))[: labels_per_image - 1]
            labels = (fg, *(extra_pool[j] for j in picks))
            emb = _unit(centers[[fg_index[lb] for lb in labels]].sum(axis=0))
            coeffs = img_rng.standard_normal(n_fg)
            if spec.image_noise > 0:
                emb = _unit(emb + spec.image_noise * _unit(coeffs @ centers))
            image_id = f"img_{fg}_{t:04d}"
            named = [names[lb] for lb in labels]
            captions = (
                f"a {named[0]} with " + " and ".join(f"a {n}" for n in named[1:])
                + f" in scene {image_id}",
                f"scene {image_id} shows " + ", ".join(named),
            )
            keys.append(image_id)
            rows.append(emb)
            gold_fg[image_id] = fg
            records.append(
                ImageRecord(
                    image_id=image_id,
                    width=640,
                    height=480,
                    labels=labels,
                    captions=captions,
                )
            )
    images = EmbeddingMatrix(
        row_keys=tuple(keys), data=np.stack(rows).astype(np.float32)
    )
    lexicon = {lab: [names[lab]] for lab in fg_order}
    return SynthWorld(
        spec=spec,
        hierarchy=hierarchy,
        two_level=two_level,
        fg_table=fg_table,
        cg_table=cg_table,
        images=images,
        records=records,
        gold_fg=gold_fg,
        names=names,
        lexicon=lexicon,
        weights=weights,
    )


class _PlantedTextEmbedder:
    """Maps a TextItem to a vector with an exactly planted anchor score.

    Single-label prompts point along their label's center, boosted by
    sqrt(labels_per_image) so the cosine against any unit label-sum image
    holding that label is exactly the single weight. Multi-label prompts
    and captions anchor on their label-set direction or source image. The
    leftover mass goes to a residual seeded by the text string and
    orthogonal to the whole center span, so equal texts always embed
    equally and planted scores never leak across classes.
    """

    def __init__(self, world: SynthWorld):
        self._world = world
        self._index = {k: i for i, k in enumerate(world.images.row_keys)}
        img = world.images.data.astype(np.float64)
        self._img = img / np.linalg.norm(img, axis=1)[:, None]
        self._centers = world.fg_table.matrix.data.astype(np.float64)
        self._fg_index = {k: i for i, k in enumerate(world.fg_table.class_ids)}
        self._labels_per_image = len(world.records[0].labels) if world.records else 1

    def _anchor_and_weight(self, item) -> tuple[np.ndarray, float]:
        w = self._world.weights
        if item.kind == "prompt_single":
            center = self._centers[self._fg_index[item.labels[0]]]
            return center, w.single * np.sqrt(self._labels_per_image)
        if item.kind == "prompt_multi":
            rows = self._centers[[self._fg_index[lab] for lab in item.labels]]
            return _unit(rows.sum(axis=0)), w.multi
        # captions keep caption weight in every role, poisoned ones included
        if item.source_image is None or item.source_image not in self._index:
            raise DataError(f"caption {item.text!r} has no anchor image")
        return self._img[self._index[item.source_image]], w.caption

    def _residual(self, text: str, anchor: np.ndarray) -> np.ndarray:
        h = stable_id(text)
        rng = make_rng(
            self._world.spec.seed,
            _STREAM_TEXTS,
            int(h[:8], 16),
            int(h[8:16], 16),
        )
        g = rng.standard_normal(self._world.spec.dim)
        g = g - self._centers.T @ (self._centers @ g)  # off the class-center span
        g = g - (g @ anchor) * anchor  # covers anchors with off-span image noise
        return _unit(g)

    def __call__(self, item) -> np.ndarray:
        anchor, a = self._anchor_and_weight(item)
        v = self._residual(item.text, anchor)
        return a * anchor + np.sqrt(1.0 - a * a) * v


def write_world(world: SynthWorld, out_dir) -> None:
    """Write a world directory in the engine's file formats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(world.images, out / "images.veb")
    write_matrix(world.fg_table.matrix, out / "fg_table.veb")
    write_matrix(world.cg_table.matrix, out / "cg_table.veb")
    write_records(world.records, out / "records.jsonl")
    with open(out / "edges.tsv", "w", encoding="utf-8") as fh:
        for child, parent in world.hierarchy.edges():
            fh.write(f"{child}\t{parent}\n")
    with open(out / "names.tsv", "w", encoding="utf-8") as fh:
        for label in sorted(world.names):
            fh.write(f"{label}\t{world.names[label]}\n")
    with open(out / "two_level.tsv", "w", encoding="utf-8") as fh:
        for cg in world.two_level.cg_classes:
            for fg in world.two_level.fg_children[cg]:
                fh.write(f"{cg}\t{fg}\n")
    with open(out / "lexicon.tsv", "w", encoding="utf-8") as fh:
        for label in sorted(world.lexicon):
            for syn in world.lexicon[label]:
                fh.write(f"{label}\t{syn}\n")
    meta = {
        "kind": "retrieval" if world.weights else "granularity",
        "spec": {
            "n_cg": world.spec.n_cg,
            "fg_per_cg": world.spec.fg_per_cg,
            "images_per_fg": world.spec.images_per_fg,
            "dim": world.spec.dim,
            "ancestor_noise": world.spec.ancestor_noise,
            "image_noise": world.spec.image_noise,
            "seed": world.spec.seed,
        },
    }
    if world.weights:
        meta["weights"] = {
            "single": world.weights.single,
            "multi": world.weights.multi,
            "caption": world.weights.caption,
        }
    with open(out / "worldspec.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_world(world_dir) -> SynthWorld:
    """Regenerate a world from its spec file; draws are deterministic."""
    with open(Path(world_dir) / "worldspec.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    spec = WorldSpec(**meta["spec"])
    if meta["kind"] == "retrieval":
        return make_retrieval_world(spec, WeightSpec(**meta["weights"]))
    return make_world(spec)
