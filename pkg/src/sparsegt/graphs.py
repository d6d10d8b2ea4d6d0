"""Graphs, expander overlays, and typed attention patterns.

A ``Graph`` is an undirected graph in CSR form plus node features, labels
and a train/val/test split.  An ``ExpanderGraph`` is a union of random
Hamiltonian cycles certified to have a two-sided spectral gap; overlaying
it on the input graph gives every node a bounded number of long-range
attention edges without a dense pattern.  ``augment`` combines graph
edges, expander edges and per-node self-loops into the edge-typed
``AttentionPattern`` that both training phases attend over.

File formats kept deliberately plain: edge lists are two tab-separated
ids per line ('#' starts a comment), features and labels are headerless
CSV, expanders round-trip through JSON so a certified overlay can be
reused across runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import rngutil
from .errors import ContractError, ExpanderGapError, FormatError, ShapeError
from .linalg import normalized_adjacency

TRAIN, VAL, TEST = 0, 1, 2
_SPLIT_NAMES = {"train": TRAIN, "val": VAL, "test": TEST}


class EdgeType(IntEnum):
    """Attention-edge provenance; numeric order doubles as dedup priority."""

    GRAPH = 0
    EXPANDER = 1
    SELF_LOOP = 2


@dataclass(frozen=True)
class Graph:
    """Undirected graph in CSR form with per-node features/labels/split.

    ``labels`` is a 1-d class-id array, or a 2-d 0/1 matrix for
    multi-label tasks.  ``split`` holds TRAIN/VAL/TEST codes.
    """

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray

    @property
    def num_edges(self) -> int:
        """Directed edge count (each undirected edge stored twice)."""
        return int(self.col_idx.shape[0])

    def row(self, i: int) -> np.ndarray:
        return self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.col_idx.shape[0], dtype=np.float64)
        return sp.csr_matrix((data, self.col_idx, self.row_ptr), shape=(self.n, self.n))

    def split_idx(self, which: int) -> np.ndarray:
        return np.flatnonzero(self.split == which)


def edges_to_csr(n: int, src: np.ndarray, dst: np.ndarray, symmetrize: bool = True):
    """Sorted, deduplicated CSR from an edge list.

    Symmetrization mirrors every edge, which is the right reading for the
    undirected inputs this package consumes.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.shape != dst.shape:
        raise ShapeError("src and dst lengths differ")
    if src.size and (src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n):
        raise ContractError("edge endpoint out of range")
    if symmetrize:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    if src.size:
        key = src * np.int64(n) + dst
        key = np.unique(key)
        src, dst = key // n, key % n
    counts = np.bincount(src, minlength=n)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return row_ptr, dst.astype(np.int64)


def _parse_edge_tsv(path) -> tuple[np.ndarray, np.ndarray]:
    src, dst = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'src<TAB>dst', got {line!r}")
            try:
                src.append(int(parts[0]))
                dst.append(int(parts[1]))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer node id") from None
    return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)


def load_graph(edge_list_path, features_path, labels_path, n: int,
               split_path=None, symmetrize: bool = True) -> Graph:
    """Read a graph from its on-disk parts.

    Node ids outside [0, n) raise FormatError naming the line; a feature
    or label row count other than n raises ShapeError.  Without a split
    file every node is marked TRAIN.
    """
    src, dst = _parse_edge_tsv(edge_list_path)
    bad = np.flatnonzero((src < 0) | (src >= n) | (dst < 0) | (dst >= n))
    if bad.size:
        # recover the line number of the first offender for the message
        idx = int(bad[0])
        lineno = _edge_line_number(edge_list_path, idx)
        raise FormatError(f"{edge_list_path}:{lineno}: node id out of range for n={n}")
    row_ptr, col_idx = edges_to_csr(n, src, dst, symmetrize=symmetrize)

    features = np.loadtxt(features_path, delimiter=",", ndmin=2, dtype=np.float64)
    if features.shape[0] != n:
        raise ShapeError(f"{features_path}: {features.shape[0]} feature rows for n={n}")
    labels = np.loadtxt(labels_path, delimiter=",", dtype=np.int64)
    labels = np.atleast_1d(labels)
    if labels.shape[0] != n:
        raise ShapeError(f"{labels_path}: {labels.shape[0]} label rows for n={n}")

    if split_path is None:
        split = np.zeros(n, dtype=np.int8)
    else:
        split = _parse_split(split_path, n)
    return Graph(n=n, row_ptr=row_ptr, col_idx=col_idx,
                 features=features, labels=labels, split=split)


def _edge_line_number(path, edge_index: int) -> int:
    seen = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            seen += 1
            if seen == edge_index:
                return lineno
    return -1


def _parse_split(path, n: int) -> np.ndarray:
    out = np.empty(n, dtype=np.int8)
    with open(path) as fh:
        rows = [ln.strip() for ln in fh if ln.strip() and not ln.strip().startswith("#")]
    if len(rows) != n:
        raise ShapeError(f"{path}: {len(rows)} split rows for n={n}")
    for i, token in enumerate(rows):
        token = token.lower()
        if token not in _SPLIT_NAMES:
            raise FormatError(f"{path}: row {i}: unknown split tag {token!r}")
        out[i] = _SPLIT_NAMES[token]
    return out


def save_split(path, split: np.ndarray) -> None:
    names = {v: k for k, v in _SPLIT_NAMES.items()}
    with open(path, "w") as fh:
        for s in split:
            fh.write(names[int(s)] + "\n")


# ---------------------------------------------------------------------------
# Expander overlay


@dataclass(frozen=True)
class ExpanderGraph:
    """Union of random Hamiltonian cycles with a certified spectral gap.

    ``cycles`` stores the node orderings themselves so a saved expander
    reconstructs its edges without replaying any PRNG.  ``degree`` is the
    nominal regular degree 2 * len(cycles); the collapsed simple graph
    can have slightly smaller degrees where cycles overlap.
    """

    n: int
    seed: int
    cycles: tuple
    gap: float

    @property
    def degree(self) -> int:
        return 2 * len(self.cycles)

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Deduplicated symmetric edge arrays of the collapsed simple graph."""
        srcs, dsts = [], []
        for cyc in self.cycles:
            cyc = np.asarray(cyc, dtype=np.int64)
            nxt = np.roll(cyc, -1)
            srcs.append(cyc)
            dsts.append(nxt)
        src = np.concatenate(srcs)
        dst = np.concatenate(dsts)
        row_ptr, col_idx = edges_to_csr(self.n, src, dst, symmetrize=True)
        rs = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(row_ptr))
        return rs, col_idx

    def adjacency(self) -> sp.csr_matrix:
        src, dst = self.edge_arrays()
        data = np.ones(src.shape[0], dtype=np.float64)
        return sp.csr_matrix((data, (src, dst)), shape=(self.n, self.n))

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n,
            "seed": self.seed,
            "cycles": [np.asarray(c).tolist() for c in self.cycles],
            "gap": self.gap,
        })

    @classmethod
    def from_json(cls, text: str) -> "ExpanderGraph":
        obj = json.loads(text)
        cycles = tuple(np.asarray(c, dtype=np.int64) for c in obj["cycles"])
        return cls(n=int(obj["n"]), seed=int(obj["seed"]), cycles=cycles,
                   gap=float(obj["gap"]))


def save_expander(path, x: ExpanderGraph) -> None:
    Path(path).write_text(x.to_json())


def load_expander(path) -> ExpanderGraph:
    return ExpanderGraph.from_json(Path(path).read_text())


def spectral_gap(adj, dense_cutoff: int = 2048, tol: float = 1e-6) -> float:
    """Two-sided spectral gap 1 - max(lambda_2, |lambda_n|) of D^-1/2 A D^-1/2.

    Eigenvalues come from a dense symmetric solve up to ``dense_cutoff``
    nodes and from deflated power iteration beyond that.  Disconnected or
    bipartite graphs come out at (numerically) zero.
    """
    adj = sp.csr_matrix(adj)
    n = adj.shape[0]
    if n < 2:
        raise ContractError("spectral gap needs at least 2 nodes")
    norm = normalized_adjacency(adj)
    if n <= dense_cutoff:
        vals = scipy.linalg.eigh(norm.toarray(), eigvals_only=True)
        return float(1.0 - max(vals[-2], abs(vals[0])))
    return 1.0 - _deflated_radius(norm, adj, tol)


def _deflated_radius(norm: sp.csr_matrix, adj: sp.csr_matrix, tol: float) -> float:
    # The top eigenpair of the normalized adjacency is known in closed
    # form (eigenvalue 1, eigenvector sqrt(deg)); deflate it and power-
    # iterate the SQUARE of the remainder so +/- eigenvalue pairs cannot
    # stall convergence.  The square's top eigenvalue is max(l2, |ln|)^2.
    n = norm.shape[0]
    deg = np.asarray(adj.sum(axis=1)).ravel()
    v1 = np.sqrt(deg)
    v1 /= np.linalg.norm(v1)

    def op(x):
        y = norm @ x
        y -= v1 * (v1 @ x)
        return y

    rng = rngutil.derive(0, 0xDE)
    x = rng.standard_normal(n)
    x -= v1 * (v1 @ x)
    x /= np.linalg.norm(x)
    prev = 0.0
    for _ in range(10000):
        z = op(op(x))
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        x = z / nz
        x -= v1 * (v1 @ x)
        x /= np.linalg.norm(x)
        est = float(np.sqrt(nz))
        if abs(est - prev) <= tol * max(est, 1e-30):
            return est
        prev = est
    return prev


def build_expander(n: int, num_cycles: int, min_gap: float = 0.05,
                   max_retries: int = 20, seed: int = 0) -> ExpanderGraph:
    """Random Hamiltonian-cycle union with gap >= min_gap, or ExpanderGapError.

    Each retry draws its cycles from a fresh sub-seeded stream, so the
    result is a pure function of (n, num_cycles, seed) and the number of
    failed attempts.  A single cycle is an honest degenerate case: C_n is
    (near-)bipartite, so it fails any positive min_gap for even n.
    """
    if n < 2:
        raise ContractError("expander needs at least 2 nodes")
    if num_cycles < 1:
        raise ContractError("need at least one cycle")
    best = -np.inf
    for attempt in range(max_retries):
        rng = rngutil.derive(seed, rngutil.TAG_EXPANDER, attempt)
        cycles = tuple(rng.permutation(n).astype(np.int64) for _ in range(num_cycles))
        cand = ExpanderGraph(n=n, seed=seed, cycles=cycles, gap=0.0)
        gap = spectral_gap(cand.adjacency())
        if gap >= min_gap:
            return ExpanderGraph(n=n, seed=seed, cycles=cycles, gap=float(gap))
        best = max(best, gap)
    raise ExpanderGapError(
        f"no expander with gap >= {min_gap} in {max_retries} attempts "
        f"(best {best:.4f})", best_gap=float(best))


# ---------------------------------------------------------------------------
# Attention pattern


@dataclass(frozen=True)
class PatternLayer:
    """One layer's attention support: CSR plus an edge-type tag per entry."""

    row_ptr: np.ndarray
    col_idx: np.ndarray
    edge_type: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.col_idx.shape[0])

    def row(self, i: int) -> np.ndarray:
        return self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]

    def row_types(self, i: int) -> np.ndarray:
        return self.edge_type[self.row_ptr[i]:self.row_ptr[i + 1]]


@dataclass(frozen=True)
class AttentionPattern:
    """Per-layer attention supports over n nodes.

    Augmentation produces identical layers (the same PatternLayer object
    repeated), but the container allows them to differ so sparsified
    variants can reuse the type.
    """

    n: int
    layers: tuple

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def m_aug(self) -> int:
        """Directed edge count of a single layer's support."""
        return self.layers[0].nnz


def augment(g: Graph, x: ExpanderGraph, layers: int) -> AttentionPattern:
    """Graph edges + expander edges + one self-loop per node, typed.

    A coincident pair keeps the highest-priority type: GRAPH beats
    EXPANDER beats SELF_LOOP.  Every layer shares the same support.
    """
    if x.n != g.n:
        raise ShapeError(f"expander on {x.n} nodes, graph on {g.n}")
    if layers < 1:
        raise ContractError("need at least one layer")
    n = g.n
    g_src = np.repeat(np.arange(n, dtype=np.int64), np.diff(g.row_ptr))
    e_src, e_dst = x.edge_arrays()
    loop = np.arange(n, dtype=np.int64)
    src = np.concatenate([g_src, e_src, loop])
    dst = np.concatenate([g.col_idx, e_dst, loop])
    typ = np.concatenate([
        np.full(g_src.shape[0], EdgeType.GRAPH, dtype=np.int8),
        np.full(e_src.shape[0], EdgeType.EXPANDER, dtype=np.int8),
        np.full(n, EdgeType.SELF_LOOP, dtype=np.int8),
    ])
    order = np.lexsort((typ, dst, src))
    src, dst, typ = src[order], dst[order], typ[order]
    key = src * np.int64(n) + dst
    keep = np.ones(key.shape[0], dtype=bool)
    keep[1:] = key[1:] != key[:-1]   # first of each duplicate run has lowest type
    src, dst, typ = src[keep], dst[keep], typ[keep]
    counts = np.bincount(src, minlength=n)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    layer = PatternLayer(row_ptr=row_ptr, col_idx=dst, edge_type=typ)
    return AttentionPattern(n=n, layers=tuple([layer] * layers))


def save_pattern(path, pattern: AttentionPattern) -> None:
    """Single-layer support as 'src<TAB>dst<TAB>type' lines."""
    layer = pattern.layers[0]
    n = pattern.n
    src = np.repeat(np.arange(n, dtype=np.int64), np.diff(layer.row_ptr))
    with open(path, "w") as fh:
        fh.write(f"# attention pattern n={n}\n")
        for s, d, t in zip(src, layer.col_idx, layer.edge_type):
            fh.write(f"{s}\t{d}\t{int(t)}\n")


def load_pattern(path, n: int, layers: int) -> AttentionPattern:
    src, dst, typ = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 'src<TAB>dst<TAB>type'")
            src.append(int(parts[0])); dst.append(int(parts[1])); typ.append(int(parts[2]))
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    typ = np.asarray(typ, dtype=np.int8)
    if src.size and (src.min() < 0 or src.max() >= n or dst.min() < 0 or dst.max() >= n):
        raise ContractError(f"{path}: node id out of range for n={n}")
    order = np.lexsort((dst, src))
    src, dst, typ = src[order], dst[order], typ[order]
    counts = np.bincount(src, minlength=n)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    layer = PatternLayer(row_ptr=row_ptr, col_idx=dst, edge_type=typ)
    return AttentionPattern(n=n, layers=tuple([layer] * layers))
