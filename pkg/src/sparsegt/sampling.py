"""Attention-score-guided neighbor sampling and batch assembly.

Sampling one row: weighted reservoir sampling draws k of a row's
neighbors without replacement, each neighbor's inclusion biased by its
attention score.  Every neighbor gets the key log(u) / a (u uniform on
(0,1), a its score) and the k largest keys win; this reproduces
sequential sampling-without-replacement proportional to the scores in
one vectorizable pass.

Assembling a batch: starting from the loss nodes (seeds), walk the
layers top-down; each layer's queries are the node set the layer above
needs, each query samples deg_l keys from its score row, and the union
becomes the support the layer below must produce.  The geometry is
padded to fixed degree so the whole batch runs as dense batched matmuls;
pad slots point at the query's own self-loop entry and are masked out of
the softmax.  Every query draws from a stream derived from (seed, epoch,
batch, node), so plans are reproducible no matter how rows are visited.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import LayerGeometry
from .errors import ContractError, FormatError, ShapeError
from .graphs import AttentionPattern, EdgeType
from .rngutil import TAG_SAMPLE, TAG_SHUFFLE, derive


# ---------------------------------------------------------------------------
# Score sets


@dataclass(frozen=True)
class ScoreLayer:
    """One layer's attention scores as CSR; edge types ride along when known."""

    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    edge_type: np.ndarray | None = None

    @property
    def nnz(self) -> int:
        return int(self.col_idx.shape[0])

    def row(self, i: int):
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]


@dataclass(frozen=True)
class ScoreSet:
    n: int
    layers: tuple

    @property
    def num_layers(self) -> int:
        return len(self.layers)


def validate_scores(scores: ScoreSet, tol: float = 1e-5) -> None:
    """Rows must be distributions: nonnegative, summing to 1 within tol."""
    for li, layer in enumerate(scores.layers):
        if layer.values.size and layer.values.min() < 0:
            raise ContractError(f"layer {li + 1}: negative score")
        sums = np.add.reduceat(layer.values, layer.row_ptr[:-1])
        sums = np.where(np.diff(layer.row_ptr) > 0, sums, 1.0)
        bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
        if bad.size:
            raise ContractError(
                f"layer {li + 1}: row {bad[0]} sums to {sums[bad[0]]:.8f}")


def scores_from_padded(pattern: AttentionPattern, padded) -> ScoreSet:
    """ScoreSet from per-layer (n, k_max) padded score arrays.

    Real entries sit at CSR positions 0..len-1 of each padded row, which
    is how the forward pass lays its scores out.
    """
    layers = []
    for layer, arr in zip(pattern.layers, padded):
        lengths = np.diff(layer.row_ptr)
        rows = np.repeat(np.arange(pattern.n, dtype=np.int64), lengths)
        pos = np.arange(layer.nnz, dtype=np.int64) - np.repeat(layer.row_ptr[:-1], lengths)
        layers.append(ScoreLayer(row_ptr=layer.row_ptr.copy(),
                                 col_idx=layer.col_idx.copy(),
                                 values=np.asarray(arr, dtype=np.float64)[rows, pos],
                                 edge_type=layer.edge_type.copy()))
    return ScoreSet(n=pattern.n, layers=tuple(layers))


def uniform_scores(pattern: AttentionPattern) -> ScoreSet:
    """Every row uniform over its support; the sampling ablation baseline."""
    layers = []
    for layer in pattern.layers:
        lengths = np.diff(layer.row_ptr)
        vals = 1.0 / np.repeat(lengths, lengths).astype(np.float64)
        layers.append(ScoreLayer(row_ptr=layer.row_ptr.copy(),
                                 col_idx=layer.col_idx.copy(),
                                 values=vals, edge_type=layer.edge_type.copy()))
    return ScoreSet(n=pattern.n, layers=tuple(layers))


def attach_types(scores: ScoreSet, pattern: AttentionPattern) -> ScoreSet:
    """Copy edge types onto a ScoreSet whose support matches the pattern."""
    layers = []
    for sl, pl in zip(scores.layers, pattern.layers):
        if not (np.array_equal(sl.row_ptr, pl.row_ptr)
                and np.array_equal(sl.col_idx, pl.col_idx)):
            raise ContractError("score support does not match the pattern")
        layers.append(ScoreLayer(row_ptr=sl.row_ptr, col_idx=sl.col_idx,
                                 values=sl.values, edge_type=pl.edge_type.copy()))
    return ScoreSet(n=scores.n, layers=tuple(layers))


def save_scores_text(path, scores: ScoreSet) -> None:
    """Plain-text dump: per layer a 'layer l n nnz' header, then 'i j score'."""
    with open(path, "w") as fh:
        for li, layer in enumerate(scores.layers, start=1):
            fh.write(f"layer {li} {scores.n} {layer.nnz}\n")
            rows = np.repeat(np.arange(scores.n), np.diff(layer.row_ptr))
            for i, j, v in zip(rows, layer.col_idx, layer.values):
                fh.write(f"{i} {j} {v:.6g}\n")


def load_scores_text(path) -> ScoreSet:
    layers = []
    n = None
    with open(path) as fh:
        lines = fh.read().split("\n")
    pos = 0
    while pos < len(lines):
        line = lines[pos].strip()
        pos += 1
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] != "layer":
            raise FormatError(f"{path}:{pos}: expected 'layer l n nnz' header")
        _, _, n_str, nnz_str = parts
        n = int(n_str)
        nnz = int(nnz_str)
        src = np.empty(nnz, dtype=np.int64)
        dst = np.empty(nnz, dtype=np.int64)
        val = np.empty(nnz, dtype=np.float64)
        for e in range(nnz):
            entry = lines[pos].split()
            if len(entry) != 3:
                raise FormatError(f"{path}:{pos + 1}: expected 'i j score'")
            src[e], dst[e], val[e] = int(entry[0]), int(entry[1]), float(entry[2])
            pos += 1
        order = np.lexsort((dst, src))
        src, dst, val = src[order], dst[order], val[order]
        counts = np.bincount(src, minlength=n)
        row_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=row_ptr[1:])
        layers.append(ScoreLayer(row_ptr=row_ptr, col_idx=dst, values=val))
    if n is None:
        raise FormatError(f"{path}: empty score file")
    return ScoreSet(n=n, layers=tuple(layers))


def save_scores_npz(path, scores: ScoreSet) -> None:
    """Binary variant mirroring the CSR arrays directly."""
    arrays = {"n": np.asarray(scores.n)}
    for li, layer in enumerate(scores.layers):
        arrays[f"row_ptr_{li}"] = layer.row_ptr
        arrays[f"col_idx_{li}"] = layer.col_idx
        arrays[f"values_{li}"] = layer.values
        if layer.edge_type is not None:
            arrays[f"edge_type_{li}"] = layer.edge_type
    np.savez(path, **arrays)


def load_scores_npz(path) -> ScoreSet:
    with np.load(path) as z:
        n = int(z["n"])
        layers = []
        li = 0
        while f"row_ptr_{li}" in z:
            et = z[f"edge_type_{li}"] if f"edge_type_{li}" in z else None
            layers.append(ScoreLayer(row_ptr=z[f"row_ptr_{li}"],
                                     col_idx=z[f"col_idx_{li}"],
                                     values=z[f"values_{li}"],
                                     edge_type=et))
            li += 1
    return ScoreSet(n=n, layers=tuple(layers))


# ---------------------------------------------------------------------------
# Reservoir sampling


@dataclass
class SampleStats:
    """Counters for the degenerate paths taken while building plans."""

    rows_sampled: int = 0
    uniform_fallbacks: int = 0
    prefilter_truncated: int = 0
    prefilter_kept_full: int = 0


def reservoir_sample(scores, k: int, rng: np.random.Generator,
                     stats: SampleStats | None = None) -> np.ndarray:
    """k distinct indices, inclusion biased by score.

    Key log(u)/a, take the k largest; a zero score maps to -inf so such
    entries lose to every positive one and are only used to complete k
    when positives run out.  An all-zero row falls back to uniform
    sampling and is counted in ``stats``.
    """
    w = np.asarray(scores, dtype=np.float64)
    if k <= 0:
        raise ContractError(f"sample size must be positive, got {k}")
    if w.ndim != 1:
        raise ShapeError("reservoir_sample expects a flat score row")
    if w.size and w.min() < 0:
        raise ContractError("negative score")
    if stats is not None:
        stats.rows_sampled += 1
    if k >= w.size:
        return np.arange(w.size, dtype=np.int64)
    positive = w > 0
    npos = int(positive.sum())
    if npos == 0:
        if stats is not None:
            stats.uniform_fallbacks += 1
        return np.sort(rng.choice(w.size, size=k, replace=False)).astype(np.int64)
    u = rng.random(w.size)
    # subnormal scores overflow the key to -inf, which is the right limit
    with np.errstate(divide="ignore", over="ignore"):
        keys = np.where(positive, np.log(u) / np.where(positive, w, 1.0), -np.inf)
    if k <= npos:
        idx = np.argpartition(keys, w.size - k)[w.size - k:]
        return np.sort(idx).astype(np.int64)
    # not enough positive entries: keep them all, fill uniformly from the rest
    fill = rng.choice(np.flatnonzero(~positive), size=k - npos, replace=False)
    return np.sort(np.concatenate([np.flatnonzero(positive), fill])).astype(np.int64)


def reservoir_sample_many(scores, k: int, rng: np.random.Generator,
                          draws: int) -> np.ndarray:
    """(draws, k) independent reservoir samples of one row, vectorized.

    Same key law as ``reservoir_sample``; requires at least k positive
    scores so no completion path is needed.
    """
    w = np.asarray(scores, dtype=np.float64)
    if int((w > 0).sum()) < k:
        raise ContractError("vectorized sampling needs k positive scores")
    u = rng.random((draws, w.size))
    with np.errstate(divide="ignore", over="ignore"):
        keys = np.log(u) / np.where(w > 0, w, np.nan)
    keys = np.where(w > 0, keys, -np.inf)
    idx = np.argpartition(keys, w.size - k, axis=1)[:, w.size - k:]
    return np.sort(idx, axis=1).astype(np.int64)


def prefilter_topk(scores, k_prime: int, tail_eps: float = 0.05):
    """Indices of the top k' scores (ties to the lower index), or the full
    row when truncation would drop more than ``tail_eps`` of the mass.

    Returns (indices, kept_full).
    """
    w = np.asarray(scores, dtype=np.float64)
    if k_prime <= 0:
        raise ContractError(f"k_prime must be positive, got {k_prime}")
    if w.size <= k_prime:
        return np.arange(w.size, dtype=np.int64), False
    # stable selection: sort by (-value, index) and cut
    order = np.lexsort((np.arange(w.size), -w))
    keep = np.sort(order[:k_prime]).astype(np.int64)
    total = w.sum()
    dropped = total - w[keep].sum()
    if total > 0 and dropped > tail_eps * total:
        return np.arange(w.size, dtype=np.int64), True
    return keep, False


# ---------------------------------------------------------------------------
# Batch plans


@dataclass(frozen=True)
class PlanLayer:
    """Sampled fixed-degree support for one layer of one batch.

    ``v_nodes`` are the input rows (global ids, sorted), ``q_nodes`` the
    output rows; locals index into ``v_nodes``.  Pad slots carry the
    query's own self-loop entry with mask 0.
    """

    q_nodes: np.ndarray
    v_nodes: np.ndarray
    query_local: np.ndarray
    key_global: np.ndarray
    key_local: np.ndarray
    key_mask: np.ndarray
    key_type: np.ndarray
    stats_local: np.ndarray


@dataclass(frozen=True)
class BatchPlan:
    seeds: np.ndarray
    degs: tuple
    layers: tuple            # forward order: layers[0] runs first
    stats: SampleStats

    @property
    def input_nodes(self) -> np.ndarray:
        return self.layers[0].v_nodes


def sample_batch(seeds, scores: ScoreSet, degs, seed: int, epoch: int,
                 batch_index: int = 0, mode: str = "sample",
                 k_prime: int | None = None, tail_eps: float = 0.05,
                 stats: SampleStats | None = None, tag: int = TAG_SAMPLE) -> BatchPlan:
    """Top-down support construction for one seed batch.

    Walking layers L..1: queries are what the layer above needs, each
    query draws deg_l keys from its score row, and query+key union is the
    support the layer below must produce.  ``mode="top"`` replaces the
    draw with a deterministic top-deg selection (the max-selection
    ablation).  ``k_prime`` enables score prefiltering before sampling.
    ``tag`` namespaces the random streams so training, validation and
    prediction plans never share draws.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    if seeds.ndim != 1 or seeds.size == 0:
        raise ContractError("seeds must be a nonempty 1-d array")
    if np.unique(seeds).size != seeds.size:
        raise ContractError("duplicate seed nodes")
    degs = tuple(int(d) for d in degs)
    if len(degs) != scores.num_layers:
        raise ShapeError(f"{len(degs)} degree budgets for {scores.num_layers} layers")
    if any(d < 1 for d in degs):
        raise ContractError("degree budgets must be positive")
    if mode not in ("sample", "top"):
        raise ContractError(f"unknown mode {mode!r}")
    if stats is None:
        stats = SampleStats()

    num_layers = scores.num_layers
    rev = []
    q_nodes = seeds
    for li in range(num_layers - 1, -1, -1):
        deg = degs[li]
        layer = scores.layers[li]
        nq = q_nodes.shape[0]
        key_global = np.repeat(q_nodes[:, None], deg, axis=1).copy()
        mask = np.zeros((nq, deg), dtype=np.float64)
        typ = np.full((nq, deg), int(EdgeType.SELF_LOOP), dtype=np.int64)
        for qi, node in enumerate(q_nodes):
            cols, vals = layer.row(int(node))
            if cols.size == 0:
                raise ContractError(f"node {node} has an empty score row")
            types_row = (layer.edge_type[layer.row_ptr[node]:layer.row_ptr[node + 1]]
                         if layer.edge_type is not None else None)
            if k_prime is not None and mode == "sample":
                keep, kept_full = prefilter_topk(vals, k_prime, tail_eps)
                if kept_full:
                    stats.prefilter_kept_full += 1
                elif keep.size < cols.size:
                    stats.prefilter_truncated += 1
                cols, vals = cols[keep], vals[keep]
                if types_row is not None:
                    types_row = types_row[keep]
            if mode == "top":
                take = _top_indices(vals, deg)
                stats.rows_sampled += 1
            elif deg >= cols.size:
                # full row, no draw: full-degree plans involve no randomness
                take = np.arange(cols.size, dtype=np.int64)
                stats.rows_sampled += 1
            else:
                rng = derive(seed, tag, epoch, batch_index, int(node))
                take = reservoir_sample(vals, deg, rng, stats=stats)
            chosen = cols[take]
            key_global[qi, :chosen.size] = chosen
            mask[qi, :chosen.size] = 1.0
            if types_row is not None:
                typ[qi, :chosen.size] = types_row[take]
        v_nodes = np.union1d(q_nodes, key_global[mask > 0])
        rev.append((q_nodes, v_nodes, key_global, mask, typ))
        q_nodes = v_nodes

    layers = []
    for li, (q, v, key_global, mask, typ) in enumerate(reversed(rev)):
        query_local = np.searchsorted(v, q)
        key_local = np.searchsorted(v, key_global)
        stats_local = np.searchsorted(q, seeds) if li < num_layers - 1 else np.arange(seeds.size)
        layers.append(PlanLayer(q_nodes=q, v_nodes=v, query_local=query_local,
                                key_global=key_global, key_local=key_local,
                                key_mask=mask, key_type=typ,
                                stats_local=stats_local.astype(np.int64)))
    return BatchPlan(seeds=seeds, degs=degs, layers=tuple(layers), stats=stats)


def _top_indices(vals: np.ndarray, deg: int) -> np.ndarray:
    if deg >= vals.size:
        return np.arange(vals.size, dtype=np.int64)
    order = np.lexsort((np.arange(vals.size), -vals))
    return np.sort(order[:deg]).astype(np.int64)


def plan_geometries(plan: BatchPlan) -> list[LayerGeometry]:
    """The per-layer geometries a Network consumes, in forward order."""
    return [LayerGeometry(query_rows=pl.query_local, key_rows=pl.key_local,
                          key_mask=pl.key_mask, key_type=pl.key_type,
                          stats_rows=pl.stats_local)
            for pl in plan.layers]


def resample_epoch(scores: ScoreSet, degs, train_nodes, batch_size: int,
                   seed: int, epoch: int, mode: str = "sample",
                   k_prime: int | None = None, tail_eps: float = 0.05,
                   stats: SampleStats | None = None) -> list:
    """Fresh plans covering ``train_nodes`` once, in shuffled order.

    Deterministic in (seed, epoch): the shuffle and every per-query draw
    derive from them alone.
    """
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    if batch_size < 1:
        raise ContractError("batch size must be positive")
    order = derive(seed, TAG_SHUFFLE, epoch).permutation(train_nodes.size)
    shuffled = train_nodes[order]
    plans = []
    for bi, start in enumerate(range(0, shuffled.size, batch_size)):
        chunk = shuffled[start:start + batch_size]
        plans.append(sample_batch(chunk, scores, degs, seed, epoch, bi,
                                  mode=mode, k_prime=k_prime, tail_eps=tail_eps,
                                  stats=stats))
    return plans
