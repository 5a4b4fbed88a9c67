"""Offline balanced spherical k-means over token embeddings.

Builds the two structures the retrieval head needs: a unit-row centroid matrix
(c x d) and a dense cluster-to-token map (c x b). The balanced variant enforces
exactly v/c members per cluster via a greedy reassignment pass after every
assignment step: overfull clusters evict their lowest-similarity members, and
each evicted token moves to its most-similar centroid that still has a free
slot. The unbalanced variant (kept for ablations) pads shorter rows of the map
with a sentinel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import InvalidOptions, ZeroNormRow
from .tensor_types import EmbeddingMatrix

PAD_TOKEN = np.uint32(0xFFFFFFFF)

# tokens per chunk when streaming the v-by-c similarity matrix
_SIM_CHUNK = 8192


@dataclass(frozen=True)
class ClusterOptions:
    c: int
    seed: int = 0
    max_iterations: int = 1000
    balanced: bool = True
    tolerance: float = 1e-6
    init: str = "kmeans++"  # or "random" (uniform row sample)


@dataclass(frozen=True)
class IndexMeta:
    seed: int
    iterations: int
    objective_trace: np.ndarray  # float64, one entry per iteration


@dataclass(frozen=True)
class ClusteredIndex:
    c: int
    b: int
    d: int
    v: int
    centroids: np.ndarray  # (c, d) float32, unit rows
    c2t: np.ndarray        # (c, b) uint32, PAD_TOKEN marks unbalanced padding
    balanced: bool
    meta: IndexMeta
    pad_token: int = int(PAD_TOKEN)

    def members(self, k: int) -> np.ndarray:
        """Token ids of cluster k, padding stripped."""
        row = self.c2t[k]
        return row[row != self.pad_token] if not self.balanced else row

    def lengths(self) -> np.ndarray:
        if self.balanced:
            return np.full(self.c, self.b, dtype=np.int64)
        return (self.c2t != self.pad_token).sum(axis=1)

    def validate(self) -> None:
        if self.centroids.shape != (self.c, self.d) or self.c2t.shape != (self.c, self.b):
            raise InvalidOptions("index shape fields disagree with arrays")
        norms = np.linalg.norm(self.centroids.astype(np.float64), axis=1)
        if np.abs(norms - 1.0).max() >= 1e-5:
            raise InvalidOptions("centroid rows are not unit norm")
        flat = self.c2t.ravel()
        tokens = flat[flat != self.pad_token] if not self.balanced else flat
        if self.balanced and flat.size != self.v:
            raise InvalidOptions("balanced index must have c*b == v")
        cover = np.sort(tokens.astype(np.int64))
        if cover.size != self.v or not np.array_equal(cover, np.arange(self.v)):
            raise InvalidOptions("c2t entries do not form a disjoint cover of 0..v-1")


class Move(NamedTuple):
    token: int
    src: int
    dst: int


def normalize_rows(E: EmbeddingMatrix, zero_norm: str = "raise") -> EmbeddingMatrix:
    """Return a copy of E with unit-L2 rows (the clustering-side companion).

    zero_norm: "raise" reports the first all-zero row as ZeroNormRow;
    "basis" substitutes the first standard basis vector for such rows.
    """
    X = E.data
    norms = np.linalg.norm(X.astype(np.float64), axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        if zero_norm == "raise":
            raise ZeroNormRow(int(zero[0]))
        X = X.copy()
        X[zero] = 0.0
        X[zero, 0] = 1.0
        norms = norms.copy()
        norms[zero] = 1.0
    out = (X / norms[:, None]).astype(np.float32)
    return EmbeddingMatrix.from_array(out)


def balance_assignment(assignments: np.ndarray, similarities: np.ndarray,
                       capacity: int, return_log: bool = False):
    """Rebalance a token->cluster map so every cluster holds exactly `capacity`.

    Only clusters over capacity lose members; their lowest-similarity members
    are evicted first and each goes to the most-similar cluster with a free
    slot. Ties break toward lower token / cluster index. With return_log, also
    returns the ordered list of moves for replay checks.
    """
    assignments = np.asarray(assignments)
    similarities = np.asarray(similarities)
    v, c = similarities.shape
    if capacity * c != v:
        raise InvalidOptions(f"capacity {capacity} x c {c} != v {v}")
    own = similarities[np.arange(v), assignments]
    log: list[Move] | None = [] if return_log else None
    out = _balance_core(assignments, own, capacity, c,
                        lambda toks: similarities[toks], log)
    return (out, log) if return_log else out


def _balance_core(assignments: np.ndarray, own_sim: np.ndarray, capacity: int,
                  c: int, sim_rows: Callable[[np.ndarray], np.ndarray],
                  log: list[Move] | None = None) -> np.ndarray:
    out = assignments.astype(np.int64, copy=True)
    sizes = np.bincount(out, minlength=c)
    evicted: list[int] = []
    for k in range(c):
        if sizes[k] <= capacity:
            continue
        members = np.nonzero(out == k)[0]  # ascending token id
        order = np.argsort(own_sim[members], kind="stable")  # ties keep id order
        ev = members[order[: sizes[k] - capacity]]
        evicted.extend(int(t) for t in ev)
        out[ev] = -1
        sizes[k] = capacity
    if not evicted:
        return out
    chunk = max(1, (1 << 25) // c)
    for s in range(0, len(evicted), chunk):
        toks = np.asarray(evicted[s : s + chunk])
        prefs = np.argsort(-sim_rows(toks), axis=1, kind="stable")
        for i, tok in enumerate(toks):
            for k in prefs[i]:
                if sizes[k] < capacity:
                    out[tok] = k
                    sizes[k] += 1
                    if log is not None:
                        log.append(Move(int(tok), int(assignments[tok]), int(k)))
                    break
    return out


def spherical_kmeans(E_unit: EmbeddingMatrix, opts: ClusterOptions) -> ClusteredIndex:
    """Cluster unit-norm token embeddings, minimizing sum of (1 - cosine).

    Alternates nearest-centroid assignment (followed by the balancing pass when
    opts.balanced) with renormalized-mean centroid updates. The objective is
    recorded after every iteration; the loop stops early when its relative
    change drops below opts.tolerance.
    """
    X = E_unit.data
    v, d = X.shape
    if opts.c < 1 or opts.c > v:
        raise InvalidOptions(f"c={opts.c} outside 1..v={v}")
    if opts.balanced and v % opts.c:
        raise InvalidOptions(f"c={opts.c} does not divide v={v}")
    b = v // opts.c
    rng = np.random.default_rng(opts.seed)
    centroids = _init_centroids(X, opts.c, rng, opts.init)

    trace: list[float] = []
    prev_obj: float | None = None
    assign = np.zeros(v, dtype=np.int64)
    for _ in range(opts.max_iterations):
        assign, own_sim = _assign_nearest(X, centroids)
        if opts.balanced:
            assign = _balance_core(assign, own_sim, b, opts.c,
                                   lambda toks: X[toks] @ centroids.T)
        else:
            assign, own_sim = _repair_empty(X, centroids, assign, own_sim)
        centroids = _update_centroids(X, assign, centroids)
        obj = _objective(X, centroids, assign)
        trace.append(obj)
        if prev_obj is not None and abs(prev_obj - obj) < opts.tolerance * max(abs(prev_obj), 1e-300):
            break
        prev_obj = obj

    c2t, b_out = _build_c2t(assign, opts.c, b if opts.balanced else None)
    meta = IndexMeta(seed=opts.seed, iterations=len(trace),
                     objective_trace=np.asarray(trace, dtype=np.float64))
    return ClusteredIndex(c=opts.c, b=b_out, d=d, v=v, centroids=centroids,
                          c2t=c2t, balanced=opts.balanced, meta=meta)


def build_index(E: EmbeddingMatrix, opts: ClusterOptions) -> ClusteredIndex:
    """normalize_rows + spherical_kmeans, substituting a basis vector for any
    all-zero embedding rows (clustering side only; decode keeps the raw E)."""
    try:
        E_unit = normalize_rows(E)
    except ZeroNormRow:
        warnings.warn("embedding matrix has zero-norm rows; substituting e1 for clustering")
        E_unit = normalize_rows(E, zero_norm="basis")
    return spherical_kmeans(E_unit, opts)


def clustering_objective(E_unit: EmbeddingMatrix, index: ClusteredIndex) -> float:
    """Sum over clusters and members of (1 - cosine), accumulated in float64."""
    assign = _assignment_from_c2t(index)
    return _objective(E_unit.data, index.centroids, assign)


def _assignment_from_c2t(index: ClusteredIndex) -> np.ndarray:
    assign = np.empty(index.v, dtype=np.int64)
    if index.balanced:
        assign[index.c2t.ravel().astype(np.int64)] = np.repeat(np.arange(index.c), index.b)
    else:
        for k in range(index.c):
            assign[index.members(k).astype(np.int64)] = k
    return assign


def _init_centroids(X: np.ndarray, c: int, rng: np.random.Generator, init: str) -> np.ndarray:
    v = X.shape[0]
    if init == "random":
        idx = rng.choice(v, size=c, replace=False)
        return X[np.sort(idx)].copy()
    if init != "kmeans++":
        raise InvalidOptions(f"unknown init {init!r}")
    chosen = [int(rng.integers(v))]
    best_sim = (X @ X[chosen[0]]).astype(np.float64)
    for _ in range(1, c):
        dist2 = np.maximum(1.0 - best_sim, 0.0) ** 2
        total = dist2.sum()
        if total > 0.0:
            nxt = int(rng.choice(v, p=dist2 / total))
        else:
            # all points coincide with chosen centroids; fill deterministically
            taken = np.zeros(v, dtype=bool)
            taken[chosen] = True
            nxt = int(np.nonzero(~taken)[0][0])
        chosen.append(nxt)
        np.maximum(best_sim, X @ X[nxt], out=best_sim)
    return X[chosen].copy()


def _assign_nearest(X: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = X.shape[0]
    assign = np.empty(v, dtype=np.int64)
    own = np.empty(v, dtype=np.float32)
    for s in range(0, v, _SIM_CHUNK):
        e = min(s + _SIM_CHUNK, v)
        sims = X[s:e] @ centroids.T
        a = np.argmax(sims, axis=1)  # first max: ties go to lower cluster id
        assign[s:e] = a
        own[s:e] = sims[np.arange(e - s), a]
    return assign, own


def _repair_empty(X: np.ndarray, centroids: np.ndarray, assign: np.ndarray,
                  own_sim: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # reseed each empty cluster on the globally worst-assigned token
    sizes = np.bincount(assign, minlength=centroids.shape[0])
    own_sim = own_sim.copy()
    for k in np.nonzero(sizes == 0)[0]:
        worst = int(np.argmin(own_sim))
        sizes[assign[worst]] -= 1
        assign[worst] = k
        sizes[k] = 1
        centroids[k] = X[worst]
        own_sim[worst] = 1.0
    return assign, own_sim


def _update_centroids(X: np.ndarray, assign: np.ndarray, prev: np.ndarray) -> np.ndarray:
    c = prev.shape[0]
    order = np.argsort(assign, kind="stable")
    counts = np.bincount(assign, minlength=c)
    starts = np.zeros(c, dtype=np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    sums = np.add.reduceat(X[order], starts, axis=0)
    # reduceat repeats the row at a start index when a segment is empty;
    # zero those out so empty clusters keep their previous direction
    sums[counts == 0] = 0.0
    norms = np.linalg.norm(sums.astype(np.float64), axis=1)
    out = prev.copy()
    ok = norms > 1e-12
    out[ok] = (sums[ok] / norms[ok, None]).astype(np.float32)
    return out


def _objective(X: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> float:
    cos_total = 0.0
    for s in range(0, X.shape[0], _SIM_CHUNK):
        e = min(s + _SIM_CHUNK, X.shape[0])
        chunk = X[s:e].astype(np.float64)
        cent = centroids[assign[s:e]].astype(np.float64)
        cos_total += float(np.einsum("ij,ij->", chunk, cent))
    return float(X.shape[0]) - cos_total


def _build_c2t(assign: np.ndarray, c: int, b: int | None) -> tuple[np.ndarray, int]:
    order = np.argsort(assign, kind="stable")  # cluster-major, token id ascending
    if b is not None:
        return order.astype(np.uint32).reshape(c, b), b
    counts = np.bincount(assign, minlength=c)
    b_max = int(counts.max())
    starts = np.zeros(c, dtype=np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    c2t = np.full((c, b_max), PAD_TOKEN, dtype=np.uint32)
    cols = np.arange(len(assign)) - starts[assign[order]]
    c2t[assign[order], cols] = order.astype(np.uint32)
    return c2t, b_max
