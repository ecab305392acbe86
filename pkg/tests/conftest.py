import numpy as np
import pytest

from vlscore.hierarchy import TwoLevelMap, build_hierarchy
from vlscore.store import Box, ImageRecord


@pytest.fixture
def four_node_tree():
    # A -> B -> D, A -> C; raw scores used across propagation tests
    return build_hierarchy([("B", "A"), ("C", "A"), ("D", "B")])


@pytest.fixture
def diamond():
    # D sits under both B and C, both under A
    return build_hierarchy([("B", "A"), ("C", "A"), ("D", "B"), ("D", "C")])


@pytest.fixture
def toy_map():
    return TwoLevelMap(
        cg_classes=("animal", "vehicle"),
        fg_children={
            "animal": ("dog", "cat"),
            "vehicle": ("car", "bus"),
        },
    )


@pytest.fixture
def coco_ish_records():
    return [
        ImageRecord(
            image_id="img0",
            width=100,
            height=80,
            labels=("dog", "frisbee"),
            boxes=(
                Box("dog", 10, 10, 40, 30),
                Box("frisbee", 60, 20, 10, 10),
            ),
            captions=(
                "a dog catches a frisbee",
                "the happy dog leaps for a frisbee",
            ),
        ),
        ImageRecord(
            image_id="img1",
            width=100,
            height=80,
            labels=("dog",),
            boxes=(Box("dog", 0, 0, 100, 80),),
            captions=("a sleeping dog",),
        ),
        ImageRecord(
            image_id="img2",
            width=200,
            height=100,
            labels=("pizza",),
            boxes=(Box("pizza", 50, 25, 100, 50),),
            captions=("a fresh pizza on the table", "someone slices a pizza"),
        ),
        ImageRecord(
            image_id="img3",
            width=64,
            height=64,
            labels=("cat", "pizza"),
            boxes=(Box("cat", 0, 0, 32, 32), Box("pizza", 32, 32, 32, 32)),
            captions=("a cat eyes a pizza",),
        ),
    ]


@pytest.fixture
def toy_lexicon():
    return {
        "dog": ["dog", "dogs"],
        "cat": ["cat", "cats"],
        "frisbee": ["frisbee"],
        "pizza": ["pizza", "pizzas"],
        "person": ["person", "people"],
    }


def random_dag(rng: np.random.Generator, max_nodes: int = 20):
    """Random DAG edge list: edges only point from later to earlier labels."""
    n = int(rng.integers(2, max_nodes + 1))
    names = [f"n{i:02d}" for i in range(n)]
    edges = []
    for child_idx in range(1, n):
        n_parents = int(rng.integers(1, min(3, child_idx) + 1))
        parents = rng.choice(child_idx, size=n_parents, replace=False)
        for p in parents:
            edges.append((names[child_idx], names[int(p)]))
    return edges, names
