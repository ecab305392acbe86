"""Command-line entry point.

Subcommands: hierarchy validate, synth, score, two-level, multilevel,
retrieval, perturb, freq. Every run writes a config echo (resolved
parameters plus input digests) into the output directory; given the same
inputs, that echo is enough to reproduce every emitted number.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import freq as freqmod
from . import protocols
from .errors import DataError, VlscoreError
from .hierarchy import build_hierarchy, load_edges, load_names, load_two_level
from .lexicon import LexiconMatcher, Span, load_lexicon
from .report import fmt, write_config_echo, write_csv, write_json_report, write_text_table
from .retrieval import (
    NEGATIVE_KINDS,
    POSITIVE_KINDS,
    RetrievalConfig,
    TextsToEmbed,
    perturb_caption,
    run_grid,
    write_manifest,
)
from .rng import make_rng
from .scoring import ClassEmbeddingTable, cosine_scores
from .store import (
    EmbeddingMatrix,
    read_matrix,
    read_records,
    write_matrix,
)
from .synth import (
    WeightSpec,
    WorldSpec,
    load_world,
    make_retrieval_world,
    make_world,
    write_world,
)


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1; argparse defaults to 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="vlscore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_h = sub.add_parser("hierarchy", help="hierarchy utilities")
    h_sub = p_h.add_subparsers(dest="hierarchy_command", required=True)
    p_hv = h_sub.add_parser("validate", help="validate an edge file")
    p_hv.add_argument("--edges", required=True)
    p_hv.add_argument("--names")
    p_hv.add_argument("--out", help="optional report directory")

    p_synth = sub.add_parser("synth", help="generate a synthetic world directory")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--kind", choices=["granularity", "retrieval"],
                         default="granularity")
    p_synth.add_argument("--n-cg", type=int, default=4)
    p_synth.add_argument("--fg-per-cg", type=int, default=4)
    p_synth.add_argument("--images-per-fg", type=int, default=50)
    p_synth.add_argument("--dim", type=int, default=64)
    p_synth.add_argument("--ancestor-noise", type=float, default=0.0)
    p_synth.add_argument("--image-noise", type=float, default=0.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--weights", default="0.3,0.6,0.9",
                         help="single,multi,caption planted scores (retrieval kind)")
    p_synth.add_argument("--labels-per-image", type=int, default=3)

    p_score = sub.add_parser("score", help="cosine score matrix from two embedding files")
    p_score.add_argument("--images", required=True)
    p_score.add_argument("--texts", required=True)
    p_score.add_argument("--out", required=True)

    p_two = sub.add_parser("two-level", help="two-level granularity discrepancy")
    p_two.add_argument("--out", required=True)
    p_two.add_argument("--world", help="synthetic world directory")
    p_two.add_argument("--images")
    p_two.add_argument("--fg-table")
    p_two.add_argument("--cg-table")
    p_two.add_argument("--map", dest="map_file")
    p_two.add_argument("--records")
    p_two.add_argument("--no-renorm", action="store_true",
                       help="skip renormalizing derived CG prompt embeddings")
    p_two.add_argument("--threads", type=int, default=1)

    p_multi = sub.add_parser("multilevel", help="multi-level propagation discrepancy")
    p_multi.add_argument("--out", required=True)
    p_multi.add_argument("--world")
    p_multi.add_argument("--scores", help="precomputed score matrix over all classes")
    p_multi.add_argument("--images")
    p_multi.add_argument("--class-table", help="embedding rows for every hierarchy node")
    p_multi.add_argument("--edges")
    p_multi.add_argument("--records")
    p_multi.add_argument("--threads", type=int, default=1)

    p_ret = sub.add_parser("retrieval", help="hard positive/negative retrieval grid")
    p_ret.add_argument("--out", required=True)
    p_ret.add_argument("--world")
    p_ret.add_argument("--records")
    p_ret.add_argument("--images")
    p_ret.add_argument("--lexicon")
    p_ret.add_argument("--names")
    p_ret.add_argument("--text-matrix",
                       help="adapter output keyed by stable text id")
    p_ret.add_argument("--templates",
                       help="prompt template file: line 1 single-label, "
                            "line 2 multi-label")
    p_ret.add_argument("--k", type=int, default=100)
    p_ret.add_argument("--seed", type=int, default=42)
    p_ret.add_argument("--threads", type=int, default=1)
    p_ret.add_argument("--bins", type=int, default=40)

    p_pert = sub.add_parser("perturb", help="poison captions by one-span replacement")
    p_pert.add_argument("--records", required=True)
    p_pert.add_argument("--lexicon", required=True)
    p_pert.add_argument("--seed", type=int, default=42)
    p_pert.add_argument("--out", required=True, help="output directory")
    p_pert.add_argument("--spans",
                        help="pre-annotated entity spans (JSONL side channel)")

    p_freq = sub.add_parser("freq", help="concept frequency gaps in caption corpora")
    p_freq.add_argument("--out", required=True)
    p_freq.add_argument("--lexicon", required=True)
    p_freq.add_argument("--counts", required=True,
                        help="label<TAB>n<TAB>m per line; n from upstream retrieval")
    p_freq.add_argument("--edges", required=True)
    p_freq.add_argument("--shard", action="append", default=[],
                        help="caption shard file (repeatable)")
    p_freq.add_argument("--shard-manifest",
                        help="file listing `path<TAB>caption_count` per shard")
    p_freq.add_argument("--deltas",
                        help="label<TAB>performance_delta file for correlation")
    p_freq.add_argument("--literal-freq-gap", action="store_true",
                        help="audit the uncorrected bookkeeping gap formula")
    p_freq.add_argument("--threads", type=int, default=1)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "hierarchy": cmd_hierarchy,
        "synth": cmd_synth,
        "score": cmd_score,
        "two-level": cmd_two_level,
        "multilevel": cmd_multilevel,
        "retrieval": cmd_retrieval,
        "perturb": cmd_perturb,
        "freq": cmd_freq,
    }
    try:
        return handlers[args.command](args)
    except DataError as exc:
        print(f"vlscore: data error: {exc}", file=sys.stderr)
        return 2
    except VlscoreError as exc:
        print(f"vlscore: {exc}", file=sys.stderr)
        return 3
    except Exception:
        traceback.print_exc()
        return 3


def cmd_hierarchy(args) -> int:
    names = load_names(args.names) if args.names else None
    h = build_hierarchy(load_edges(args.edges), names)
    summary = {
        "nodes": len(h.nodes),
        "leaves": len(h.leaves()),
        "ancestors": len(h.nodes) - len(h.leaves()),
        "roots": len(h.roots),
        "max_level": h.max_level(),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.out:
        write_config_echo(args.out, "hierarchy validate",
                          {"edges": args.edges, "names": args.names},
                          {"edges": args.edges, "names": args.names})
        write_json_report(args.out, summary)
    return 0


def _parse_weights(raw: str) -> WeightSpec:
    parts = raw.split(",")
    if len(parts) != 3:
        raise DataError(f"--weights needs three comma-separated values, got {raw!r}")
    return WeightSpec(single=float(parts[0]), multi=float(parts[1]),
                      caption=float(parts[2]))


def cmd_synth(args) -> int:
    spec = WorldSpec(
        n_cg=args.n_cg,
        fg_per_cg=args.fg_per_cg,
        images_per_fg=args.images_per_fg,
        dim=args.dim,
        ancestor_noise=args.ancestor_noise,
        image_noise=args.image_noise,
        seed=args.seed,
    )
    if args.kind == "retrieval":
        world = make_retrieval_world(spec, _parse_weights(args.weights),
                                     labels_per_image=args.labels_per_image)
    else:
        world = make_world(spec)
    write_world(world, args.out)
    write_config_echo(args.out, "synth", {
        "kind": args.kind, "n_cg": args.n_cg, "fg_per_cg": args.fg_per_cg,
        "images_per_fg": args.images_per_fg, "dim": args.dim,
        "ancestor_noise": args.ancestor_noise, "image_noise": args.image_noise,
        "seed": args.seed, "weights": args.weights if args.kind == "retrieval" else None,
        "labels_per_image": args.labels_per_image if args.kind == "retrieval" else None,
    }, {})
    print(f"wrote world ({world.images.rows} images, "
          f"{len(world.two_level.fg_classes)} FG classes) to {args.out}")
    return 0


def cmd_score(args) -> int:
    images = read_matrix(args.images)
    texts = read_matrix(args.texts)
    if not isinstance(images, EmbeddingMatrix) or not isinstance(texts, EmbeddingMatrix):
        raise DataError("score expects embedding matrices, not score matrices")
    scores = cosine_scores(images, texts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(scores, out / "scores.veb")
    write_config_echo(args.out, "score", {"images": args.images, "texts": args.texts},
                      {"images": args.images, "texts": args.texts})
    print(f"wrote {scores.n_images} x {scores.n_texts} score matrix")
    return 0


def _two_level_paths(args) -> dict:
    if args.world:
        w = Path(args.world)
        return {
            "images": w / "images.veb",
            "fg_table": w / "fg_table.veb",
            "cg_table": w / "cg_table.veb",
            "map": w / "two_level.tsv",
            "records": w / "records.jsonl",
        }
    needed = {"images": args.images, "fg_table": args.fg_table,
              "cg_table": args.cg_table, "map": args.map_file,
              "records": args.records}
    missing = [k for k, v in needed.items() if not v]
    if missing:
        raise DataError(f"two-level needs --world or --{missing[0].replace('_', '-')}")
    return needed


def cmd_two_level(args) -> int:
    paths = _two_level_paths(args)
    images = read_matrix(paths["images"])
    fg_table = ClassEmbeddingTable(read_matrix(paths["fg_table"]))
    cg_table = ClassEmbeddingTable(read_matrix(paths["cg_table"]))
    two_level = load_two_level(paths["map"])
    records = read_records(paths["records"])
    gold_fg = protocols.gold_fg_from_records(records, two_level)

    result = protocols.two_level_eval(
        images, fg_table, cg_table, two_level, gold_fg,
        renormalize=not args.no_renorm,
    )
    write_config_echo(args.out, "two-level",
                      {"no_renorm": args.no_renorm, "threads": args.threads},
                      paths)
    write_json_report(args.out, result)
    write_text_table(args.out, "Two-level granularity discrepancy", [
        ("images", str(result["n_images"])),
        ("FG_direct", fmt(result["fg_direct"])),
        ("CG_direct", fmt(result["cg_direct"])),
        ("CG_FG-label (delta)",
         f"{fmt(result['cg_fg_label'])} ({result['delta_fg_label']:+.4f})"),
        ("CG_FG-emb (delta)",
         f"{fmt(result['cg_fg_emb'])} ({result['delta_fg_emb']:+.4f})"),
    ])
    return 0


def cmd_multilevel(args) -> int:
    inputs: dict = {}
    if args.world:
        w = Path(args.world)
        inputs = {"world_images": w / "images.veb", "fg_table": w / "fg_table.veb",
                  "cg_table": w / "cg_table.veb", "edges": w / "edges.tsv",
                  "records": w / "records.jsonl"}
        images = read_matrix(inputs["world_images"])
        fg = read_matrix(inputs["fg_table"])
        cg = read_matrix(inputs["cg_table"])
        table = EmbeddingMatrix(
            row_keys=fg.row_keys + cg.row_keys,
            data=np.vstack([fg.data, cg.data]),
        )
        scores = cosine_scores(images, table)
        h = build_hierarchy(load_edges(inputs["edges"]))
        records = read_records(inputs["records"])
    elif args.scores:
        if not (args.edges and args.records):
            raise DataError("multilevel with --scores also needs --edges and --records")
        inputs = {"scores": args.scores, "edges": args.edges, "records": args.records}
        scores = read_matrix(args.scores)
        h = build_hierarchy(load_edges(args.edges))
        records = read_records(args.records)
    else:
        if not (args.images and args.class_table and args.edges and args.records):
            raise DataError(
                "multilevel needs --world, --scores, or --images/--class-table"
            )
        inputs = {"images": args.images, "class_table": args.class_table,
                  "edges": args.edges, "records": args.records}
        scores = cosine_scores(read_matrix(args.images), read_matrix(args.class_table))
        h = build_hierarchy(load_edges(args.edges))
        records = read_records(args.records)

    gold = protocols.gold_closure_from_records(records, h)
    result = protocols.multilevel_eval(scores, h, gold, threads=args.threads)
    stats = protocols.multilevel_level_stats(result, h)

    payload = {k: v for k, v in result.items() if not k.startswith("per_class")}
    write_config_echo(args.out, "multilevel", {"threads": args.threads}, inputs)
    write_json_report(args.out, payload)
    write_csv(Path(args.out) / "level_stats.csv",
              ["series", "level", "count", "min", "q1", "median", "q3", "max"],
              [(series, s.level, s.count, s.min, s.q1, s.median, s.q3, s.max)
               for series, rows in sorted(stats.items()) for s in rows])
    write_csv(Path(args.out) / "per_class_ap.csv",
              ["series", "label", "level", "ap"],
              [(series, label, h.level_of(label), ap)
               for series, key in [("leaves", "per_class_ap_leaves"),
                                   ("ancestor_raw", "per_class_ap_ancestor_raw"),
                                   ("ancestor_child", "per_class_ap_ancestor_child"),
                                   ("ancestor_leaf", "per_class_ap_ancestor_leaf"),
                                   ("ancestor_leaf_self", "per_class_ap_ancestor_leaf_self"),
                                   ("delta_leaf", "per_class_delta_leaf")]
               for label, ap in sorted(result[key].items())])
    write_text_table(args.out, "Multi-level propagation discrepancy", [
        ("images", str(result["n_images"])),
        ("Leaves mAP", fmt(result["leaves_map"])),
        ("Ancestor_raw", fmt(result["ancestor_raw_map"])),
        ("Ancestor_child (delta)",
         f"{fmt(result['ancestor_child_map'])} ({result['delta_child']:+.4f})"),
        ("Ancestor_leaf (delta)",
         f"{fmt(result['ancestor_leaf_map'])} ({result['delta_leaf']:+.4f})"),
        ("Ancestor_leaf+self (delta)",
         f"{fmt(result['ancestor_leaf_self_map'])} ({result['delta_leaf_self']:+.4f})"),
        ("excluded classes", str(len(result["excluded_classes"]))),
    ])
    return 0


def _retrieval_templates(path) -> "RetrievalTemplates":
    from .retrieval import RetrievalTemplates

    if not path:
        return RetrievalTemplates()
    with open(path, encoding="utf-8") as fh:
        lines = [l.rstrip("\n") for l in fh if l.strip() and not l.startswith("#")]
    if not lines:
        raise DataError(f"template file {path} is empty")
    if len(lines) == 1:
        return RetrievalTemplates(single=lines[0])
    return RetrievalTemplates(single=lines[0], multi=lines[1])


def cmd_retrieval(args) -> int:
    cfg = RetrievalConfig(k=args.k, seed=args.seed, threads=args.threads,
                          histogram_bins=args.bins,
                          templates=_retrieval_templates(args.templates))
    text_embedder = None
    text_matrix = None
    if args.world:
        w = Path(args.world)
        inputs = {"records": w / "records.jsonl", "images": w / "images.veb",
                  "lexicon": w / "lexicon.tsv", "names": w / "names.tsv",
                  "worldspec": w / "worldspec.json"}
        records = read_records(inputs["records"])
        images = read_matrix(inputs["images"])
        lexicon = load_lexicon(inputs["lexicon"])
        names = load_names(inputs["names"])
        world = load_world(args.world)
        if world.weights is not None:
            text_embedder = world.text_embedder()
    else:
        if not (args.records and args.images and args.lexicon):
            raise DataError("retrieval needs --world or --records/--images/--lexicon")
        inputs = {"records": args.records, "images": args.images,
                  "lexicon": args.lexicon, "names": args.names,
                  "text_matrix": args.text_matrix}
        records = read_records(args.records)
        images = read_matrix(args.images)
        lexicon = load_lexicon(args.lexicon)
        names = load_names(args.names) if args.names else {}
        if args.text_matrix:
            text_matrix = read_matrix(args.text_matrix)

    if args.templates:
        inputs["templates"] = args.templates
    params = {"k": args.k, "seed": args.seed, "threads": args.threads,
              "bins": args.bins}
    try:
        grid = run_grid(records, images, cfg, names, lexicon,
                        text_matrix=text_matrix, text_embedder=text_embedder)
    except TextsToEmbed as exc:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = out / "texts_to_embed.tsv"
        write_manifest(exc.texts, manifest)
        write_config_echo(args.out, "retrieval", params, inputs)
        print(f"{len(exc.texts)} texts need embeddings; manifest at {manifest}.\n"
              f"Embed them with the adapter, then rerun with --text-matrix.")
        return 0

    write_config_echo(args.out, "retrieval", params, inputs)
    payload = {
        "n_queries": grid.n_queries,
        "k": args.k,
        "seed": args.seed,
        "cells": {
            f"{p}|{n}": {
                "map": grid.cells[(p, n)].mean_ap,
                "evaluated": grid.cells[(p, n)].n_evaluated,
                "dropped": grid.cells[(p, n)].n_dropped,
            }
            for p in POSITIVE_KINDS for n in NEGATIVE_KINDS
        },
        "kind_score_medians": {
            kind: (float(np.median(v)) if len(v) else None)
            for kind, v in grid.kind_scores.items()
        },
        "flags": sorted(grid.flags),
    }
    write_json_report(args.out, payload)
    # per-cell histograms; a kind's score distribution is shared by its cells
    write_csv(Path(args.out) / "histograms.csv",
              ["cell_pos", "cell_neg", "role", "kind", "bin_lo", "bin_hi", "count"],
              [(p, n, role, kind, edges[i], edges[i + 1], int(counts[i]))
               for p in POSITIVE_KINDS
               for n in NEGATIVE_KINDS
               for role, kind in (("positive", p), ("negative", n))
               for counts, edges in [grid.histogram(kind, args.bins)]
               for i in range(len(counts))])
    rows = [("queries", str(grid.n_queries))]
    for p in POSITIVE_KINDS:
        cells = "  ".join(
            f"{n}={fmt(grid.cells[(p, n)].mean_ap)}"
            f"(drop {grid.cells[(p, n)].n_dropped})"
            for n in NEGATIVE_KINDS
        )
        rows.append((p, cells))
    write_text_table(args.out, "Image-to-text retrieval grid (mAP)", rows)
    return 0


def _load_spans(path) -> dict[tuple[str, int], list[Span]]:
    spans: dict[tuple[str, int], list[Span]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            key = (obj["image_id"], int(obj["caption_index"]))
            spans.setdefault(key, []).append(
                Span(start=int(obj["start"]), end=int(obj["end"]),
                     text=obj["text"], label=obj["label"])
            )
    return spans


def cmd_perturb(args) -> int:
    records = read_records(args.records)
    lexicon = load_lexicon(args.lexicon)
    matcher = LexiconMatcher(lexicon)
    side_spans = _load_spans(args.spans) if args.spans else {}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_ok = n_skipped = 0
    with open(out / "perturbed.jsonl", "w", encoding="utf-8") as fh:
        for rindex, rec in enumerate(records):
            for cindex, caption in enumerate(rec.captions):
                rng = make_rng(args.seed, rindex, cindex)
                entry = {"image_id": rec.image_id, "caption_index": cindex,
                         "original": caption}
                try:
                    item = perturb_caption(
                        caption, set(rec.labels), matcher, rng,
                        spans=side_spans.get((rec.image_id, cindex)),
                    )
                except VlscoreError as exc:
                    entry["error"] = str(exc)
                    n_skipped += 1
                else:
                    prov = item.provenance
                    entry.update({
                        "perturbed": item.text,
                        "span_start": prov.start,
                        "span_original": prov.original,
                        "replacement_label": prov.replacement_label,
                        "replacement_text": prov.replacement,
                    })
                    n_ok += 1
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    write_config_echo(args.out, "perturb",
                      {"seed": args.seed},
                      {"records": args.records, "lexicon": args.lexicon,
                       "spans": args.spans})
    print(f"perturbed {n_ok} captions, skipped {n_skipped}")
    return 0


def cmd_freq(args) -> int:
    lexicon = load_lexicon(args.lexicon)
    counts = freqmod.read_counts(args.counts)
    h = build_hierarchy(load_edges(args.edges))
    inputs = {"lexicon": args.lexicon, "counts": args.counts, "edges": args.edges,
              "deltas": args.deltas, "shard_manifest": args.shard_manifest}

    shard_paths = list(args.shard)
    if args.shard_manifest:
        with open(args.shard_manifest, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line and not line.startswith("#"):
                    shard_paths.append(line.split("\t")[0])
    for i, p in enumerate(shard_paths):
        inputs[f"shard_{i}"] = p
    if shard_paths:
        scanned = freqmod.scan_shard_files(shard_paths, lexicon, threads=args.threads)
        for label, m in scanned.items():
            counts.m[label] = counts.m.get(label, 0) + m

    gap = freqmod.frequency_gap(h, counts, literal=args.literal_freq_gap)
    payload = {
        "literal_formula": args.literal_freq_gap,
        "gaps": gap.gaps,
        "undefined": gap.undefined,
    }
    rows = [("ancestors with defined gap", str(len(gap.gaps))),
            ("undefined", str(len(gap.undefined)))]

    if args.deltas:
        deltas = {}
        with open(args.deltas, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line and not line.startswith("#"):
                    label, val = line.split("\t")
                    deltas[label] = float(val)
        rho, p, scatter = freqmod.correlate_gap_vs_delta(gap, deltas)
        payload["spearman_rho"] = rho
        payload["spearman_p"] = p
        write_csv(Path(args.out) / "gap_vs_delta.csv",
                  ["label", "freq_gap", "perf_delta"], scatter)
        rows.append(("spearman rho (p)", f"{fmt(rho)} ({p:.3g})"))

    write_config_echo(args.out, "freq",
                      {"literal_freq_gap": args.literal_freq_gap,
                       "threads": args.threads},
                      inputs)
    write_json_report(args.out, payload)
    write_csv(Path(args.out) / "freq_by_level.csv",
              ["label", "level", "is_leaf", "n", "m_own", "m_sum", "q_own", "q_sum"],
              [(r["label"], r["level"], int(r["is_leaf"]), r["n"], r["m_own"],
                r["m_sum"],
                "" if r["q_own"] is None else r["q_own"],
                "" if r["q_sum"] is None else r["q_sum"])
               for r in freqmod.frequency_table(h, counts)])
    write_text_table(args.out, "Concept frequency gaps", rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
