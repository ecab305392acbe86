"""Label hierarchy: construction, validation, and read-only queries.

A hierarchy is a rooted DAG (multiple parents and multiple roots allowed).
Instances are immutable after construction; all queries are safe to call
concurrently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

from .errors import (
    CycleDetectedError,
    DataError,
    DuplicateEdgeWarning,
    DuplicateFgAssignmentError,
    EmptyCgClassWarning,
    ParseError,
    UnknownLabelError,
)


@dataclass
class Hierarchy:
    """Validated label DAG with parent/child indexes and display names."""

    nodes: frozenset[str]
    parents: dict[str, frozenset[str]]
    children: dict[str, frozenset[str]]
    names: dict[str, str]
    roots: frozenset[str]
    _levels: dict[str, int] = field(repr=False, default_factory=dict)
    _leaf_memo: dict[str, frozenset[str]] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self._levels:
            self._levels.update(
                _longest_path_levels(self.nodes, self.parents, self.children, self.roots)
            )

    def __contains__(self, label: str) -> bool:
        return label in self.nodes

    def is_leaf(self, label: str) -> bool:
        self._check(label)
        return not self.children[label]

    def leaves(self) -> frozenset[str]:
        return frozenset(y for y in self.nodes if not self.children[y])

    def name_of(self, label: str) -> str:
        self._check(label)
        return self.names[label]

    def leaf_descendants(self, label: str) -> frozenset[str]:
        """All leaves reachable downward from `label`; {label} if it is a leaf.

        Memoized; amortized O(nodes + edges) over all queries.
        """
        self._check(label)
        memo = self._leaf_memo
        # iterative post-order so deep hierarchies do not hit the recursion limit
        stack = [label]
        while stack:
            y = stack[-1]
            if y in memo:
                stack.pop()
                continue
            pending = [c for c in self.children[y] if c not in memo]
            if pending:
                stack.extend(pending)
                continue
            stack.pop()
            kids = self.children[y]
            if not kids:
                memo[y] = frozenset((y,))
            else:
                memo[y] = frozenset().union(*(memo[c] for c in kids))
        return memo[label]

    def ancestors(self, label: str) -> frozenset[str]:
        """All labels reachable upward from `label`, excluding `label` itself."""
        self._check(label)
        seen: set[str] = set()
        frontier = list(self.parents[label])
        while frontier:
            y = frontier.pop()
            if y in seen:
                continue
            seen.add(y)
            frontier.extend(self.parents[y])
        return frozenset(seen)

    def level_of(self, label: str) -> int:
        """Length of the longest parent path from any root; roots are level 0."""
        self._check(label)
        return self._levels[label]

    def max_level(self) -> int:
        return max(self._levels.values())

    def edges(self) -> list[tuple[str, str]]:
        """Sorted (child, parent) edge list; rebuilding from it round-trips."""
        return sorted(
            (c, p) for c in self.nodes for p in self.parents[c]
        )

    def _check(self, label: str) -> None:
        if label not in self.nodes:
            raise UnknownLabelError(label)


def build_hierarchy(
    edges: list[tuple[str, str]], names: dict[str, str] | None = None
) -> Hierarchy:
    """Build a validated :class:`Hierarchy` from (child, parent) edges.

    Duplicate edges are ignored with a warning. Cycles raise
    :class:`CycleDetectedError` carrying one offending cycle. Labels missing
    from `names` receive their id as display name; names for labels that
    never appear in the edges raise :class:`UnknownLabelError`.
    """
    if not edges:
        raise DataError("edge list is empty")

    nodes: set[str] = set()
    parents: dict[str, set[str]] = {}
    children: dict[str, set[str]] = {}
    seen: set[tuple[str, str]] = set()
    for child, parent in edges:
        if not child or not parent:
            raise DataError(f"empty label id in edge ({child!r}, {parent!r})")
        if (child, parent) in seen:
            warnings.warn(
                f"duplicate edge ({child}, {parent}) ignored", DuplicateEdgeWarning
            )
            continue
        seen.add((child, parent))
        nodes.add(child)
        nodes.add(parent)
        parents.setdefault(child, set()).add(parent)
        children.setdefault(parent, set()).add(child)
    for y in nodes:
        parents.setdefault(y, set())
        children.setdefault(y, set())

    cycle = _find_cycle(nodes, children)
    if cycle is not None:
        raise CycleDetectedError(cycle)

    names = dict(names) if names else {}
    for label in names:
        if label not in nodes:
            raise UnknownLabelError(label)
    full_names = {y: names.get(y, y) for y in nodes}

    roots = frozenset(y for y in nodes if not parents[y])
    return Hierarchy(
        nodes=frozenset(nodes),
        parents={y: frozenset(parents[y]) for y in nodes},
        children={y: frozenset(children[y]) for y in nodes},
        names=full_names,
        roots=roots,
    )


def _find_cycle(nodes, children) -> list[str] | None:
    """Iterative DFS; returns one cycle as [a, b, ..., a] or None."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = dict.fromkeys(nodes, WHITE)
    parent_in_dfs: dict[str, str] = {}
    for start in sorted(nodes):
        if color[start] != WHITE:
            continue
        stack = [(start, iter(sorted(children[start])))]
        color[start] = GRAY
        while stack:
            y, it = stack[-1]
            advanced = False
            for c in it:
                if color[c] == GRAY:
                    path = [c, y]
                    cur = y
                    while cur != c:
                        cur = parent_in_dfs[cur]
                        path.append(cur)
                    path.reverse()
                    return path
                if color[c] == WHITE:
                    color[c] = GRAY
                    parent_in_dfs[c] = y
                    stack.append((c, iter(sorted(children[c]))))
                    advanced = True
                    break
            if not advanced:
                color[y] = BLACK
                stack.pop()
    return None


def _longest_path_levels(nodes, parents, children, roots) -> dict[str, int]:
    # Kahn order over parent->child edges, maximizing path length.
    levels = {y: 0 for y in roots}
    indeg = {y: len(parents[y]) for y in nodes}
    queue = sorted(roots)
    order = []
    while queue:
        y = queue.pop()
        order.append(y)
        for c in sorted(children[y]):
            levels[c] = max(levels.get(c, 0), levels[y] + 1)
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    if len(order) != len(nodes):
        missing = sorted(set(nodes) - set(order))
        raise DataError(f"nodes unreachable from any root: {missing[:5]}")
    return levels


@dataclass(frozen=True)
class TwoLevelMap:
    """Two-tier class map: ordered CG classes, each with ordered FG children."""

    cg_classes: tuple[str, ...]
    fg_children: dict[str, tuple[str, ...]]

    @property
    def fg_classes(self) -> tuple[str, ...]:
        return tuple(fg for cg in self.cg_classes for fg in self.fg_children[cg])

    def parent_of(self, fg: str) -> str:
        for cg in self.cg_classes:
            if fg in self.fg_children[cg]:
                return cg
        raise UnknownLabelError(fg)

    def parent_index(self) -> dict[str, str]:
        return {fg: cg for cg in self.cg_classes for fg in self.fg_children[cg]}


def load_two_level(path) -> TwoLevelMap:
    """Parse a `cg_id<TAB>fg_id` map file (grouped or ungrouped lines).

    Orderings follow first appearance in the file. Assigning one FG class to
    two CG classes raises; a CG class with no FG children is kept with a
    warning.
    """
    cg_order: list[str] = []
    fg_children: dict[str, list[str]] = {}
    assigned: dict[str, str] = {}
    for line_no, parts in _tsv_lines(path):
        if len(parts) != 2:
            raise ParseError(f"expected `cg_id<TAB>fg_id`, got {parts!r}", line_no)
        cg, fg = parts
        if cg not in fg_children:
            cg_order.append(cg)
            fg_children[cg] = []
        if fg:
            prev = assigned.get(fg)
            if prev is not None and prev != cg:
                raise DuplicateFgAssignmentError(
                    f"FG class {fg!r} assigned to both {prev!r} and {cg!r}"
                )
            if prev is None:
                assigned[fg] = cg
                fg_children[cg].append(fg)
    for cg in cg_order:
        if not fg_children[cg]:
            warnings.warn(f"CG class {cg!r} has no FG children", EmptyCgClassWarning)
    return TwoLevelMap(
        cg_classes=tuple(cg_order),
        fg_children={cg: tuple(fgs) for cg, fgs in fg_children.items()},
    )


def load_edges(path) -> list[tuple[str, str]]:
    """Read a `child_id<TAB>parent_id` edge file; `#` lines are comments."""
    edges = []
    for line_no, parts in _tsv_lines(path):
        if len(parts) != 2:
            raise ParseError(f"expected `child<TAB>parent`, got {parts!r}", line_no)
        edges.append((parts[0], parts[1]))
    return edges


def load_names(path) -> dict[str, str]:
    """Read a `label_id<TAB>display name` file."""
    names = {}
    for line_no, parts in _tsv_lines(path):
        if len(parts) != 2:
            raise ParseError(f"expected `label_id<TAB>name`, got {parts!r}", line_no)
        names[parts[0]] = parts[1]
    return names


def _tsv_lines(path):
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            yield line_no, line.split("\t")
