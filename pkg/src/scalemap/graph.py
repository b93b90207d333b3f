"""Areal adjacency graphs and domain partitions.

Graphs are plain undirected neighbourhood structures over ``n`` areas.  Each
edge is stored once as ``(i, j)`` with ``i < j``.  Partitions assign areas to
subregions, either disjointly or with k-order overlap.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AdjacencyGraph:
    """Undirected neighbourhood graph over ``n`` areas.

    ``global_index`` maps local vertex ``i`` to the vertex of the parent graph
    it was extracted from (identity for a top-level graph).
    """

    n: int
    edges: np.ndarray
    area_ids: tuple[str, ...]
    global_index: np.ndarray = field(default=None)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.n < 0:
            raise GraphError("negative vertex count")
        if len(self.area_ids) != self.n:
            raise GraphError("area_ids length does not match n")
        if edges.size:
            if (edges[:, 0] == edges[:, 1]).any():
                raise GraphError("self-loop in edge list")
            if edges.min() < 0 or edges.max() >= self.n:
                raise GraphError("edge endpoint out of range")
        edges = np.sort(edges, axis=1)
        edges = np.unique(edges, axis=0) if edges.size else edges
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "area_ids", tuple(str(a) for a in self.area_ids))
        gi = np.arange(self.n) if self.global_index is None else np.asarray(self.global_index, dtype=np.int64)
        object.__setattr__(self, "global_index", gi)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], area_ids=None) -> "AdjacencyGraph":
        ids = tuple(str(i) for i in range(n)) if area_ids is None else tuple(area_ids)
        return cls(n, np.asarray(list(edges), dtype=np.int64).reshape(-1, 2), ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Binary symmetric adjacency matrix W."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        W = sp.csr_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(self.n, self.n))
        W.sort_indices()
        return W

    @cached_property
    def degrees(self) -> np.ndarray:
        """Row sums w_{i+}."""
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    @property
    def isolated(self) -> np.ndarray:
        return np.flatnonzero(self.degrees == 0)

    def neighbours(self, i: int) -> np.ndarray:
        W = self.adjacency
        return W.indices[W.indptr[i]:W.indptr[i + 1]]


def load_graph(edge_source, area_ids: Sequence[str] | None = None) -> AdjacencyGraph:
    """Build a graph from ``id_a id_b`` lines.

    ``edge_source`` is a path or an iterable of lines.  Blank lines and ``#``
    comments are skipped.  When ``area_ids`` is given it fixes the vertex
    order and every edge endpoint must be declared there; otherwise ids are
    numbered by first appearance in the edge list.
    """
    if isinstance(edge_source, (str, Path)):
        with open(edge_source, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = list(edge_source)

    pairs = []
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected two area ids, got {line!r}")
        pairs.append((parts[0], parts[1]))

    if area_ids is None:
        seen: dict[str, int] = {}
        for a, b in pairs:
            seen.setdefault(a, len(seen))
            seen.setdefault(b, len(seen))
        ids = list(seen)
    else:
        ids = [str(a) for a in area_ids]
    if not ids:
        raise GraphError("empty graph: no areas declared")
    index = {a: k for k, a in enumerate(ids)}
    if len(index) != len(ids):
        raise GraphError("duplicate area id in manifest")

    edges = []
    for a, b in pairs:
        if a not in index or b not in index:
            raise GraphError(f"unknown area id in edge ({a}, {b})")
        if a == b:
            raise GraphError(f"self-loop on area {a}")
        edges.append((index[a], index[b]))
    g = AdjacencyGraph(len(ids), np.asarray(edges, dtype=np.int64).reshape(-1, 2), tuple(ids))
    if len(g.isolated):
        warnings.warn(f"{len(g.isolated)} isolated area(s) without neighbours", stacklevel=2)
    return g


def read_id_manifest(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.split("#", 1)[0].strip() for ln in fh if ln.split("#", 1)[0].strip()]


def connected_components(g: AdjacencyGraph) -> list[np.ndarray]:
    """Maximal connected vertex sets, each sorted, ordered by smallest member."""
    ncomp, labels = sp.csgraph.connected_components(g.adjacency, directed=False)
    comps = [np.flatnonzero(labels == c) for c in range(ncomp)]
    comps.sort(key=lambda c: c[0])
    return comps


def induced_subgraph(g: AdjacencyGraph, vertices: Sequence[int]) -> AdjacencyGraph:
    """Subgraph on ``vertices``; local index k is ``vertices[k]``."""
    v = np.asarray(vertices, dtype=np.int64)
    if v.size and (v.min() < 0 or v.max() >= g.n):
        raise GraphError("vertex out of range")
    if len(np.unique(v)) != len(v):
        raise GraphError("duplicate vertex in subgraph request")
    local = np.full(g.n, -1, dtype=np.int64)
    local[v] = np.arange(len(v))
    e = local[g.edges] if g.n_edges else np.empty((0, 2), dtype=np.int64)
    e = e[(e >= 0).all(axis=1)] if len(e) else e
    return AdjacencyGraph(
        len(v), e, tuple(g.area_ids[k] for k in v), global_index=g.global_index[v]
    )


def lattice_graph(rows: int, cols: int, spacing: float = 1.0):
    """Rook-adjacency lattice and its cell centroids (row-major order)."""
    idx = np.arange(rows * cols).reshape(rows, cols)
    horiz = np.c_[idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    vert = np.c_[idx[:-1, :].ravel(), idx[1:, :].ravel()]
    ids = tuple(f"a{k}" for k in range(rows * cols))
    g = AdjacencyGraph(rows * cols, np.r_[horiz, vert], ids)
    yy, xx = np.divmod(np.arange(rows * cols), cols)
    coords = np.c_[(xx + 0.5) * spacing, (yy + 0.5) * spacing]
    return g, coords


@dataclass(frozen=True, eq=False)
class DomainPartition:
    """Assignment of areas to ``D`` subregions.

    ``k`` is ``None`` for a disjoint partition and the expansion order for an
    overlapping one.
    """

    n: int
    membership: tuple[np.ndarray, ...]
    k: int | None = None

    def __post_init__(self):
        members = tuple(np.asarray(m, dtype=np.int64) for m in self.membership)
        object.__setattr__(self, "membership", members)
        if not members:
            raise GraphError("partition has no subregions")
        for d, m in enumerate(members):
            if m.size == 0:
                raise GraphError(f"subregion {d} is empty")
            if len(np.unique(m)) != len(m):
                raise GraphError(f"subregion {d} lists an area twice")
            if m.min() < 0 or m.max() >= self.n:
                raise GraphError(f"subregion {d} has out-of-range areas")
        allm = np.concatenate(members)
        if len(np.unique(allm)) != self.n:
            raise GraphError("partition does not cover every area")
        if self.k is None and len(allm) != self.n:
            raise GraphError("disjoint partition has overlapping subregions")

    @property
    def D(self) -> int:
        return len(self.membership)

    @property
    def disjoint(self) -> bool:
        return self.k is None

    @property
    def sizes(self) -> list[int]:
        return [len(m) for m in self.membership]

    def cover_counts(self) -> np.ndarray:
        return np.bincount(np.concatenate(self.membership), minlength=self.n)

    @classmethod
    def from_labels(cls, labels: Sequence) -> "DomainPartition":
        """Disjoint partition from per-area labels; subregions ordered by first appearance."""
        order: dict = {}
        for lab in labels:
            order.setdefault(lab, len(order))
        lab_idx = np.array([order[lab] for lab in labels], dtype=np.int64)
        return cls(len(labels), tuple(np.flatnonzero(lab_idx == d) for d in range(len(order))))

    @classmethod
    def single(cls, n: int) -> "DomainPartition":
        return cls(n, (np.arange(n),))


def k_order_expand(g: AdjacencyGraph, p: DomainPartition, k: int) -> DomainPartition:
    """Add every area within graph distance ``k`` of each subregion.

    Original members keep their order; added areas follow by ascending
    distance, ties broken by index.
    """
    if not p.disjoint:
        raise GraphError("k-order expansion needs a disjoint partition")
    if k < 0:
        raise GraphError("k must be non-negative")
    if k == 0:
        return p
    W = g.adjacency
    out = []
    for members in p.membership:
        dist = np.full(g.n, -1, dtype=np.int64)
        dist[members] = 0
        queue = deque(members.tolist())
        added = []
        while queue:
            v = queue.popleft()
            if dist[v] == k:
                continue
            for u in W.indices[W.indptr[v]:W.indptr[v + 1]]:
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    added.append(u)
                    queue.append(u)
        added = sorted(added, key=lambda u: (dist[u], u))
        out.append(np.r_[members, np.asarray(added, dtype=np.int64)])
    return DomainPartition(g.n, tuple(out), k=k)


def grid_partition(g: AdjacencyGraph, coords, rows: int, cols: int) -> DomainPartition:
    """Bin areas by centroid into a ``rows x cols`` grid over the bounding box.

    Cells are numbered row-major from the lower-left corner; empty cells are
    dropped.  Points on the upper/right boundary fall in the last cell.
    """
    xy = np.asarray(coords, dtype=float)
    if xy.shape != (g.n, 2):
        raise GraphError("coords must have shape (n, 2)")
    if not np.isfinite(xy).all():
        raise GraphError("non-finite centroid coordinate")
    if rows < 1 or cols < 1:
        raise GraphError("rows and cols must be >= 1")

    def bin_axis(v, nb):
        lo, hi = v.min(), v.max()
        if hi == lo:
            return np.zeros(len(v), dtype=np.int64)
        b = np.floor((v - lo) / (hi - lo) * nb).astype(np.int64)
        return np.clip(b, 0, nb - 1)

    cell = bin_axis(xy[:, 1], rows) * cols + bin_axis(xy[:, 0], cols)
    members = tuple(np.flatnonzero(cell == c) for c in np.unique(cell))
    return DomainPartition(g.n, members)


def read_partition_csv(path, g: AdjacencyGraph) -> DomainPartition:
    """Read ``area_id,subregion_id`` rows into a disjoint partition."""
    index = {a: k for k, a in enumerate(g.area_ids)}
    labels: list = [None] * g.n
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line or (lineno == 1 and line.replace(" ", "") == "area_id,subregion_id"):
                continue
            a, s = (t.strip() for t in line.split(","))
            if a not in index:
                raise GraphError(f"partition file line {lineno}: unknown area {a}")
            labels[index[a]] = s
    missing = [g.area_ids[k] for k, lab in enumerate(labels) if lab is None]
    if missing:
        raise GraphError(f"partition file misses {len(missing)} area(s), e.g. {missing[0]}")
    return DomainPartition.from_labels(labels)
