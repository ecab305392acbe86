import numpy as np
import pytest

from vlscore.errors import (
    EmptyReplacementPoolError,
    NoCaptionsError,
    NoLabelsError,
    NoReplaceableSpanError,
)
from vlscore.lexicon import Span
from vlscore.retrieval import (
    RetrievalConfig,
    RetrievalTemplates,
    TextsToEmbed,
    build_positives,
    build_tasks,
    perturb_caption,
    read_manifest,
    run_grid,
    sample_negatives,
    write_manifest,
)
from vlscore.store import EmbeddingMatrix, ImageRecord


NAMES = {"dog": "dog", "person": "person", "ball": "ball", "frisbee": "frisbee",
         "cat": "cat", "pizza": "pizza"}


def test_positives_single_label_prompt():
    rec = ImageRecord(image_id="q", width=10, height=10, labels=("dog",),
                      captions=("c",))
    items = build_positives(rec, "prompt_single", NAMES)
    assert [t.text for t in items] == ["a photo of a dog"]
    assert items[0].labels == ("dog",)


def test_positives_multi_label_prompt_order_and_phrasing():
    rec = ImageRecord(image_id="q", width=10, height=10,
                      labels=("dog", "person", "ball"))
    items = build_positives(rec, "prompt_multi", NAMES)
    assert [t.text for t in items] == ["a photo of dog, person, ball"]
    assert items[0].labels == ("dog", "person", "ball")


def test_positives_captions_and_errors():
    rec = ImageRecord(image_id="q", width=10, height=10, labels=(),
                      captions=("c1", "c2"))
    caps = build_positives(rec, "cap_pos", NAMES)
    assert [t.text for t in caps] == ["c1", "c2"]
    with pytest.raises(NoLabelsError):
        build_positives(rec, "prompt_single", NAMES)
    with pytest.raises(NoCaptionsError):
        build_positives(
            ImageRecord(image_id="q", width=1, height=1, labels=("dog",)),
            "cap_pos", NAMES,
        )


def test_custom_templates():
    rec = ImageRecord(image_id="q", width=10, height=10, labels=("dog", "cat"))
    t = RetrievalTemplates(single="an image of the {}", multi="a scene with {}")
    single = build_positives(rec, "prompt_single", NAMES, t)
    multi = build_positives(rec, "prompt_multi", NAMES, t)
    assert single[0].text == "an image of the dog"
    assert multi[0].text == "a scene with dog, cat"


def test_perturb_spec_example(toy_lexicon):
    caption = "a dog catches a frisbee"
    labels = {"dog", "frisbee"}
    seen = set()
    for seed in range(40):
        item = perturb_caption(caption, labels, toy_lexicon, seed)
        prov = item.provenance
        assert prov.replacement_label not in labels
        assert prov.original in ("dog", "frisbee")
        assert prov.revert(item.text) == caption
        seen.add(item.text)
    # both spans and both replacement labels get exercised across seeds
    assert any("cat catches" in t for t in seen)
    assert any("catches a pizza" in t for t in seen)


def test_perturb_no_span(toy_lexicon):
    with pytest.raises(NoReplaceableSpanError):
        perturb_caption("nothing matches here", {"dog"}, toy_lexicon, 0)


def test_perturb_empty_pool():
    lexicon = {"dog": ["dog"], "cat": ["cat"]}
    with pytest.raises(EmptyReplacementPoolError):
        perturb_caption("a dog and a cat", {"dog", "cat"}, lexicon, 0)


def test_perturb_exactly_one_span_changes(toy_lexicon):
    caption = "the dog and the cat share a pizza"
    labels = {"dog", "cat", "pizza"}
    lexicon = dict(toy_lexicon)
    lexicon["bear"] = ["bear"]
    for seed in range(50):
        item = perturb_caption(caption, labels, lexicon, seed)
        prov = item.provenance
        # text outside the replaced span is untouched, byte for byte
        assert item.text[: prov.start] == caption[: prov.start]
        tail_new = item.text[prov.start + len(prov.replacement):]
        tail_old = caption[prov.start + len(prov.original):]
        assert tail_new == tail_old
        assert prov.revert(item.text) == caption


def test_perturb_longest_match_wins():
    lexicon = {"hot_dog": ["hot dog"], "dog": ["dog"], "cat": ["cat"]}
    item = perturb_caption("a hot dog", {"hot_dog"}, lexicon, 3)
    assert item.provenance.original == "hot dog"


def test_perturb_case_insensitive_word_boundary(toy_lexicon):
    item = perturb_caption("A Dog runs", {"dog"}, toy_lexicon, 1)
    assert item.provenance.original == "Dog"
    with pytest.raises(NoReplaceableSpanError):
        perturb_caption("a dogged pursuit", {"dog"}, toy_lexicon, 1)


def test_perturb_side_channel_spans(toy_lexicon):
    caption = "a dog catches a frisbee"
    spans = [Span(start=2, end=5, text="dog", label="dog")]
    item = perturb_caption(caption, {"dog"}, toy_lexicon, 0, spans=spans)
    assert item.provenance.start == 2
    assert item.provenance.original == "dog"


def _pool(coco_ish_records):
    return coco_ish_records


def test_negatives_deterministic(coco_ish_records, toy_lexicon):
    rec = coco_ish_records[0]
    a, _ = sample_negatives(rec, coco_ish_records, "cap_random", 3, 42)
    b, _ = sample_negatives(rec, coco_ish_records, "cap_random", 3, 42)
    assert [t.text for t in a] == [t.text for t in b]
    e1, _ = sample_negatives(rec, coco_ish_records, "cap_error", 5, 42,
                             lexicon=toy_lexicon)
    e2, _ = sample_negatives(rec, coco_ish_records, "cap_error", 5, 42,
                             lexicon=toy_lexicon)
    assert [t.text for t in e1] == [t.text for t in e2]


def test_negatives_exclude_own_captions(coco_ish_records):
    rec = coco_ish_records[0]
    items, exhausted = sample_negatives(rec, coco_ish_records, "cap_random", 100, 0)
    assert exhausted  # tiny pool
    sources = {t.source_image for t in items}
    assert rec.image_id not in sources
    own = set(rec.captions)
    assert all(t.text not in own for t in items)


def test_negatives_relevant_requires_shared_label(coco_ish_records):
    rec = coco_ish_records[0]  # labels dog, frisbee
    items, _ = sample_negatives(rec, coco_ish_records, "cap_relevant", 100, 0)
    assert {t.source_image for t in items} == {"img1"}  # only other dog image
    no_overlap = coco_ish_records[2]  # pizza only
    items, exhausted = sample_negatives(
        no_overlap, coco_ish_records[:3], "cap_relevant", 5, 0
    )
    assert items == [] and exhausted


def test_negatives_error_mode_cycles(coco_ish_records, toy_lexicon):
    rec = coco_ish_records[0]  # two perturbable captions
    items, _ = sample_negatives(rec, coco_ish_records, "cap_error", 6, 9,
                                lexicon=toy_lexicon)
    assert len(items) == 6
    originals = [t.provenance.revert(t.text) for t in items]
    assert originals == [rec.captions[0], rec.captions[1]] * 3
    # fresh seeded replacement per cycle step: not all six identical
    assert len({t.text for t in items}) > 2


def test_negatives_uniform_over_seeds():
    """k=1 draws from a 5-caption pool stay within 3 sigma of uniform."""
    pool = [
        ImageRecord(image_id=f"o{k}", width=4, height=4, labels=("x",),
                    captions=(f"caption {k}",))
        for k in range(5)
    ]
    query = ImageRecord(image_id="q", width=4, height=4, labels=("x",),
                        captions=("own",))
    counts = {f"caption {k}": 0 for k in range(5)}
    trials = 10000
    for seed in range(trials):
        items, _ = sample_negatives(query, [query] + pool, "cap_random", 1, seed)
        counts[items[0].text] += 1
    expect = trials / 5
    sigma = np.sqrt(trials * 0.2 * 0.8)
    for caption, count in counts.items():
        assert abs(count - expect) <= 3 * sigma, (caption, count)


def _unit_rows(rng, n, dim):
    m = rng.standard_normal((n, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _grid_world(separable=True):
    """Tiny fixture world with orthonormal image embeddings.

    Records carry unique labels and captions, so every generated text is
    unique to one query. When separable, a positive embeds at 0.9 along its
    source image axis with the leftover mass outside the image span: it
    scores exactly 0.9 against its query and exactly 0 against every other
    image, while poisoned captions score exactly 0 everywhere.
    """
    labels = ("dog", "cat", "pizza", "frisbee")
    records = [
        ImageRecord(image_id=f"q{k}", width=8, height=8, labels=(labels[k],),
                    captions=(f"scene {k} with a {labels[k]} inside",))
        for k in range(4)
    ]
    images = EmbeddingMatrix(
        row_keys=tuple(r.image_id for r in records),
        data=np.eye(4, 16, dtype=np.float32),
    )
    img_index = {r.image_id: i for i, r in enumerate(records)}

    def embedder(item):
        from vlscore.rng import stable_id

        rng_t = np.random.default_rng(int(stable_id(item.text)[:8], 16))
        g = rng_t.standard_normal(16)
        g[:4] = 0.0  # residual lives outside the image span, exactly
        g /= np.linalg.norm(g)
        if not separable or item.kind == "cap_error":
            return 0.05 * g
        v = np.zeros(16)
        v[img_index[item.source_image]] = 0.9
        return v + np.sqrt(1 - 0.81) * g

    return records, images, embedder


def test_run_grid_separable_world_all_ones(toy_lexicon):
    records, images, embedder = _grid_world()
    grid = run_grid(records, images, RetrievalConfig(k=3, seed=1), NAMES,
                    toy_lexicon, text_embedder=embedder)
    for cell, stats in grid.cells.items():
        assert stats.mean_ap == 1.0, cell
        assert stats.n_evaluated + stats.n_dropped == grid.n_queries


def test_run_grid_determinism_and_threads(toy_lexicon):
    records, images, embedder = _grid_world(separable=False)
    g1 = run_grid(records, images, RetrievalConfig(k=5, seed=3), NAMES,
                  toy_lexicon, text_embedder=embedder)
    g2 = run_grid(records, images, RetrievalConfig(k=5, seed=3, threads=8),
                  NAMES, toy_lexicon, text_embedder=embedder)
    assert g1.cells == g2.cells
    for kind in g1.kind_scores:
        assert np.array_equal(g1.kind_scores[kind], g2.kind_scores[kind])


def test_run_grid_positives_duplicated_as_negatives_tie_rule():
    """A duplicated negative ranks right after its positive (lower index first).

    With positives at one score level this keeps AP at exactly 1.0; with
    distinct positive levels the duplicate of a higher positive must, by
    the index tie rule, outrank every lower positive, so AP drops below 1.
    """
    from vlscore.metrics import average_precision

    pos = [0.7, 0.7]
    ap = average_precision(pos + [0.7, 0.7, 0.1], [1, 1, 0, 0, 0])
    assert ap == 1.0

    distinct = average_precision([0.7, 0.6] + [0.7, 0.6, 0.1], [1, 1, 0, 0, 0])
    assert distinct == pytest.approx((1 / 1 + 2 / 3) / 2)


def test_run_grid_emits_manifest_when_unembedded(coco_ish_records, toy_lexicon,
                                                 tmp_path):
    rng = np.random.default_rng(1)
    images = EmbeddingMatrix(
        row_keys=tuple(r.image_id for r in coco_ish_records),
        data=_unit_rows(rng, 4, 8).astype(np.float32),
    )
    with pytest.raises(TextsToEmbed) as exc:
        run_grid(coco_ish_records, images, RetrievalConfig(k=2, seed=0), NAMES,
                 toy_lexicon)
    manifest = tmp_path / "manifest.tsv"
    write_manifest(exc.value.texts, manifest)
    back = read_manifest(manifest)
    assert back == exc.value.texts
    assert len(back) > 0


def test_run_grid_resumes_from_text_matrix(coco_ish_records, toy_lexicon):
    from vlscore.rng import stable_id

    rng = np.random.default_rng(1)
    images = EmbeddingMatrix(
        row_keys=tuple(r.image_id for r in coco_ish_records),
        data=_unit_rows(rng, 4, 8).astype(np.float32),
    )
    cfg = RetrievalConfig(k=2, seed=0)
    with pytest.raises(TextsToEmbed) as exc:
        run_grid(coco_ish_records, images, cfg, NAMES, toy_lexicon)
    ids = sorted(exc.value.texts)
    vecs = _unit_rows(rng, len(ids), 8).astype(np.float32)
    text_matrix = EmbeddingMatrix(row_keys=tuple(ids), data=vecs)
    grid = run_grid(coco_ish_records, images, cfg, NAMES, toy_lexicon,
                    text_matrix=text_matrix)
    assert grid.n_queries == 4
    # adapter keys really are the engine's stable text ids
    assert all(tid == stable_id(text) for tid, text in exc.value.texts.items())


def test_build_tasks_flags_and_reuse(coco_ish_records, toy_lexicon):
    cfg = RetrievalConfig(k=3, seed=5)
    tasks = build_tasks(coco_ish_records, NAMES, toy_lexicon, cfg)
    assert len(tasks) == 4
    for task in tasks:
        assert set(task.positives) == {"cap_pos", "prompt_multi", "prompt_single"}
        # negatives drawn once per query, shared across positive kinds
        assert set(task.negatives) <= {"cap_random", "cap_relevant", "cap_error"}
        for items in task.negatives.values():
            own = set()
            for t in items:
                assert t.text not in own
