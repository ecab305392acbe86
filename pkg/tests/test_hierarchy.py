import numpy as np
import pytest

from conftest import random_dag
from vlscore.errors import (
    CycleDetectedError,
    DataError,
    DuplicateEdgeWarning,
    DuplicateFgAssignmentError,
    EmptyCgClassWarning,
    UnknownLabelError,
)
from vlscore.hierarchy import build_hierarchy, load_edges, load_names, load_two_level


def test_smallest_tree():
    h = build_hierarchy([("B", "A"), ("C", "A")])
    assert h.roots == {"A"}
    assert h.leaves() == {"B", "C"}
    assert h.parents["B"] == {"A"}
    assert h.children["A"] == {"B", "C"}


def test_two_cycle_rejected():
    with pytest.raises(CycleDetectedError) as exc:
        build_hierarchy([("A", "B"), ("B", "A")])
    cycle = exc.value.cycle
    assert cycle[0] == cycle[-1]
    assert set(cycle) == {"A", "B"}


def test_longer_cycle_reported():
    with pytest.raises(CycleDetectedError) as exc:
        build_hierarchy([("B", "A"), ("C", "B"), ("A", "C")])
    assert exc.value.cycle[0] == exc.value.cycle[-1]


def test_empty_edges_rejected():
    with pytest.raises(DataError):
        build_hierarchy([])


def test_duplicate_edge_warns_and_is_idempotent():
    with pytest.warns(DuplicateEdgeWarning):
        h = build_hierarchy([("B", "A"), ("B", "A")])
    assert h.children["A"] == {"B"}


def test_names_default_to_id_and_unknown_name_rejected():
    h = build_hierarchy([("B", "A")], names={"A": "root thing"})
    assert h.name_of("A") == "root thing"
    assert h.name_of("B") == "B"
    with pytest.raises(UnknownLabelError):
        build_hierarchy([("B", "A")], names={"Z": "ghost"})


def test_leaf_descendants_leaf_fixed_point(four_node_tree):
    assert four_node_tree.leaf_descendants("D") == {"D"}


def test_leaf_descendants_hand_enumerated(four_node_tree):
    # A has children B (with leaf D) and leaf C
    assert four_node_tree.leaf_descendants("A") == {"D", "C"}
    assert four_node_tree.leaf_descendants("B") == {"D"}


def test_leaf_descendants_diamond_deduplicates(diamond):
    assert diamond.leaf_descendants("A") == {"D"}
    assert diamond.leaf_descendants("B") == {"D"}


def test_levels_root_and_chain():
    h = build_hierarchy([("B", "A"), ("C", "B")])
    assert h.level_of("A") == 0
    assert h.level_of("B") == 1
    assert h.level_of("C") == 2


def test_level_is_longest_path():
    # D reachable from A directly and through B; longest path wins
    h = build_hierarchy([("B", "A"), ("D", "B"), ("D", "A")])
    assert h.level_of("D") == 2


def test_level_monotone_along_edges_on_random_dags():
    rng = np.random.default_rng(7)
    for _ in range(30):
        edges, _ = random_dag(rng)
        h = build_hierarchy(edges)
        for child, parent in edges:
            assert h.level_of(child) >= h.level_of(parent) + 1


def test_leaf_descendants_matches_brute_force_on_random_dags():
    rng = np.random.default_rng(12)
    for _ in range(30):
        edges, _ = random_dag(rng)
        h = build_hierarchy(edges)

        def brute(y):
            if not h.children[y]:
                return {y}
            out = set()
            for c in h.children[y]:
                out |= brute(c)
            return out

        for y in h.nodes:
            assert h.leaf_descendants(y) == brute(y)
            assert (h.leaf_descendants(y) == {y}) == h.is_leaf(y)
            assert h.leaf_descendants(y) <= h.leaves()


def test_leaf_descendants_independent_of_query_order():
    rng = np.random.default_rng(19)
    edges, _ = random_dag(rng)
    h1 = build_hierarchy(edges)
    h2 = build_hierarchy(edges)
    forward = {y: h1.leaf_descendants(y) for y in sorted(h1.nodes)}
    backward = {y: h2.leaf_descendants(y) for y in sorted(h2.nodes, reverse=True)}
    assert forward == backward


def test_edge_roundtrip():
    edges = [("B", "A"), ("C", "A"), ("D", "B"), ("D", "C")]
    h1 = build_hierarchy(edges)
    h2 = build_hierarchy(h1.edges())
    assert h1.nodes == h2.nodes
    assert h1.parents == h2.parents
    assert h1.children == h2.children
    assert h1.roots == h2.roots
    assert h1.edges() == h2.edges()


def test_ancestors(diamond):
    assert diamond.ancestors("D") == {"A", "B", "C"}
    assert diamond.ancestors("A") == frozenset()


def test_forest_allowed():
    h = build_hierarchy([("B", "A"), ("Y", "X")])
    assert h.roots == {"A", "X"}


def test_unknown_label_queries(four_node_tree):
    with pytest.raises(UnknownLabelError):
        four_node_tree.leaf_descendants("nope")
    with pytest.raises(UnknownLabelError):
        four_node_tree.level_of("nope")


def test_edge_file_roundtrip(tmp_path):
    p = tmp_path / "edges.tsv"
    p.write_text("# comment\nB\tA\nC\tA\n\nD\tB\n", encoding="utf-8")
    assert load_edges(p) == [("B", "A"), ("C", "A"), ("D", "B")]


def test_names_file(tmp_path):
    p = tmp_path / "names.tsv"
    p.write_text("n01\tgolden retriever\nn02\tfeline\n", encoding="utf-8")
    assert load_names(p) == {"n01": "golden retriever", "n02": "feline"}


def test_two_level_toy_file(tmp_path):
    p = tmp_path / "map.tsv"
    p.write_text("cgA\tfg1\ncgA\tfg2\ncgB\tfg3\ncgB\tfg4\n", encoding="utf-8")
    m = load_two_level(p)
    assert m.cg_classes == ("cgA", "cgB")
    assert m.fg_classes == ("fg1", "fg2", "fg3", "fg4")
    assert m.parent_of("fg3") == "cgB"


def test_two_level_duplicate_fg_rejected(tmp_path):
    p = tmp_path / "map.tsv"
    p.write_text("cgA\tfg1\ncgB\tfg1\n", encoding="utf-8")
    with pytest.raises(DuplicateFgAssignmentError):
        load_two_level(p)


def test_two_level_empty_cg_warns(tmp_path):
    p = tmp_path / "map.tsv"
    p.write_text("cgA\tfg1\ncgB\t\n", encoding="utf-8")
    with pytest.warns(EmptyCgClassWarning):
        m = load_two_level(p)
    assert m.cg_classes == ("cgA", "cgB")
    assert m.fg_children["cgB"] == ()
