"""Constituency -> dependency conversion for binary RST trees.

The head of a subtree is the head of its nucleus child (the left one for
multinuclear NN nodes); the other child's head becomes a dependent of it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .treegen import Leaf, Node

ROOT = -1


@dataclass(frozen=True)
class DependencyTree:
    head: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.head)

    @property
    def root(self) -> int:
        roots = [i for i, h in enumerate(self.head) if h == ROOT]
        if len(roots) != 1:
            raise ValueError(f"dependency tree has {len(roots)} roots")
        return roots[0]

    @property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in self.head]
        for i, h in enumerate(self.head):
            if 0 <= h < len(self.head):
                kids[h].append(i)
        return tuple(tuple(k) for k in kids)

    def post_order(self) -> list[int]:
        """Nodes with every dependent before its head."""
        kids = self.children
        order: list[int] = []
        stack = [(self.root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            stack.append((node, True))
            for c in reversed(kids[node]):
                stack.append((c, False))
        return order


def to_dependency(tree) -> DependencyTree:
    edges: dict[int, int] = {}

    def head_of(t) -> int:
        if isinstance(t, Leaf):
            return t.index
        lh, rh = head_of(t.left), head_of(t.right)
        if t.nuclearity == "SN":
            edges[lh] = rh
            return rh
        edges[rh] = lh
        return lh

    root = head_of(tree)
    n = max(edges.keys() | {root}) + 1
    head = [ROOT] * n
    for dep, h in edges.items():
        head[dep] = h
    head[root] = ROOT
    return DependencyTree(tuple(head))


def nucleus_descent(tree) -> int:
    """EDU reached from the root by always stepping into the nucleus child."""
    while isinstance(tree, Node):
        tree = tree.right if tree.nuclearity == "SN" else tree.left
    return tree.index


def validate(dep: DependencyTree | Sequence[int]) -> list[str]:
    """Return the list of structural violations (empty when well-formed)."""
    head = list(dep.head if isinstance(dep, DependencyTree) else dep)
    n = len(head)
    problems: list[str] = []
    if n == 0:
        return ["empty"]
    bad = [i for i, h in enumerate(head) if h != ROOT and not 0 <= h < n]
    if bad:
        problems.append(f"head out of range at {bad}")
    self_loops = [i for i, h in enumerate(head) if h == i]
    if self_loops:
        problems.append(f"self-loop at {self_loops}")
    roots = [i for i, h in enumerate(head) if h == ROOT]
    if len(roots) != 1:
        problems.append(f"expected a single root, found {len(roots)}")
    edges = n - len(roots)
    if edges != n - 1:
        problems.append(f"expected {n - 1} edges, found {edges}")
    if bad:
        return problems
    on_cycle = False
    for start in range(n):
        seen = set()
        node = start
        while node != ROOT and node not in seen:
            seen.add(node)
            node = head[node]
        if node != ROOT:
            on_cycle = True
            break
    if on_cycle:
        problems.append("cycle")
    if len(roots) == 1 and not on_cycle:
        kids: list[list[int]] = [[] for _ in range(n)]
        for i, h in enumerate(head):
            if h != ROOT:
                kids[h].append(i)
        reach, frontier = {roots[0]}, [roots[0]]
        while frontier:
            node = frontier.pop()
            for c in kids[node]:
                if c not in reach:
                    reach.add(c)
                    frontier.append(c)
        if len(reach) != n:
            problems.append(f"unreachable nodes {sorted(set(range(n)) - reach)}")
    return problems


def write_dependencies(path: str | os.PathLike,
                       deps: Mapping[str, DependencyTree] | Iterable[tuple[str, DependencyTree]]) -> None:
    items = deps.items() if isinstance(deps, Mapping) else deps
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, dep in items:
            fh.write(f"{doc_id}\t{','.join(str(h) for h in dep.head)}\n")


def read_dependencies(path: str | os.PathLike) -> dict[str, DependencyTree]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            doc_id, _, text = line.rstrip("\n").partition("\t")
            try:
                head = tuple(int(x) for x in text.split(","))
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: malformed head list") from None
            problems = validate(head)
            if problems:
                raise ValueError(f"{path}: line {lineno}: {'; '.join(problems)}")
            out[doc_id] = DependencyTree(head)
    return out
