"""Deterministic dense kernels shared by the head, oracle, and estimator paths.

Every logit in the package flows through `matvec_rows` so that the dot product
of a given row with a given query is a pure function of the two vectors:
independent of how rows are batched, permuted, or aligned in memory. BLAS gemv
does not give that guarantee (its reduction order varies with shape and
alignment), which would make exact argmax-equivalence checks flaky; einsum's
per-row reduction is stable.
"""

from __future__ import annotations

import numpy as np

from .errors import DimMismatch

# rows per einsum call; keeps temporaries cache-sized without changing results
_CHUNK_ROWS = 16384


def matvec_rows(M: np.ndarray, h: np.ndarray, out: np.ndarray | None = None,
                float64: bool = False) -> np.ndarray:
    """Per-row dot products M @ h with a batching-independent reduction.

    Accumulates in float32 by default (float64 optional). Output row i depends
    only on M[i] and h.
    """
    if M.ndim != 2 or h.ndim != 1 or M.shape[1] != h.shape[0]:
        raise DimMismatch(f"matvec shapes {M.shape} x {h.shape}")
    n = M.shape[0]
    if float64:
        M = M.astype(np.float64, copy=False)
        h = h.astype(np.float64, copy=False)
    if out is None:
        out = np.empty(n, dtype=M.dtype)
    for s in range(0, n, _CHUNK_ROWS):
        e = min(s + _CHUNK_ROWS, n)
        np.einsum("ij,j->i", M[s:e], h, out=out[s:e])
    return out


def softmax64(z: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Numerically stable softmax(z / tau) computed in float64."""
    x = np.asarray(z, dtype=np.float64) / tau
    x -= x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def topk_desc(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values, ties broken by lower index."""
    v = np.asarray(values)
    # lexsort: primary key -v (descending value), secondary implicit stable index
    order = np.argsort(-v, kind="stable")
    return order[:k]


def gumbel_topk(logits: np.ndarray, p: int, tau: float,
                rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Sample p distinct indices without replacement via Gumbel perturbation.

    First-draw marginals equal softmax(logits / tau); the full set follows the
    sequential sampling-without-replacement law. With n set, returns an (n, p)
    batch drawn from one generator stream.
    """
    z = np.asarray(logits, dtype=np.float64) / tau
    c = z.shape[0]
    shape = (c,) if n is None else (n, c)
    keys = z + rng.gumbel(size=shape)
    order = np.argsort(-keys, axis=-1, kind="stable")
    return order[..., :p]
