"""Monte Carlo estimation of the full-vocabulary marginal induced by
stochastic probe selection, plus an exact enumeration oracle for tiny
instances.

Each sampled probe set contributes its complete conditional softmax over the
candidate tokens (not a single drawn token), accumulated in float64 and
divided by the sample count; the average of normalized distributions is itself
normalized. Tokens never covered by any sampled probe set end up with zero
probability; `clip_zeros` raises those to the smallest observed non-zero
entry (without renormalizing) so that log-likelihoods stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, permutations
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import quad

from .clustering import ClusteredIndex
from .errors import AllZero, InvalidConfig, TooManySubsets, ZeroProbability
from .head import centroid_logits
from .linalg import gumbel_topk, matvec_rows, softmax64
from .tensor_types import EmbeddingMatrix

_SUBSET_BUDGET = 1_000_000
_ORDERINGS_MAX_P = 3  # above this the ordering sum explodes; use quadrature
_SAMPLE_BATCH = 8192


@dataclass(frozen=True)
class MarginalEstimate:
    probs: np.ndarray  # (v,) float64
    n_samples: int
    clipped: int = 0
    clip_value: float = 0.0


def mc_marginal(index: ClusteredIndex, E: EmbeddingMatrix, h: np.ndarray,
                p: int, tau: float, N: int,
                rng: np.random.Generator) -> MarginalEstimate:
    """Average the conditional candidate softmax over N sampled probe sets."""
    if N < 1:
        raise InvalidConfig("N must be >= 1")
    if tau <= 0 or not 1 <= p <= index.c:
        raise InvalidConfig("invalid sampling parameters")
    h = np.asarray(h, dtype=np.float32)
    logits1 = centroid_logits(index, h)
    z_all = matvec_rows(E.data, h)  # per-token logits; row-stable primitive
    acc = np.zeros(index.v, dtype=np.float64)
    for start in range(0, N, _SAMPLE_BATCH):
        n = min(_SAMPLE_BATCH, N - start)
        subsets = gumbel_topk(logits1, p, tau, rng, n=n)  # (n, p)
        if index.balanced:
            cand = index.c2t[subsets].reshape(n, p * index.b).astype(np.int64)
            cond = softmax64(z_all[cand], tau)  # (n, x) rows sum to 1
            acc += np.bincount(cand.ravel(), weights=cond.ravel(), minlength=index.v)
        else:
            for row in subsets:
                ids = _concat_members(index, row)
                acc[ids] += softmax64(z_all[ids], tau)
    return MarginalEstimate(probs=acc / N, n_samples=N)


def exact_marginal(index: ClusteredIndex, E: EmbeddingMatrix, h: np.ndarray,
                   p: int, tau: float) -> MarginalEstimate:
    """Exact expectation over all probe subsets, weighted by their
    without-replacement selection probability. Only feasible for tiny c."""
    if tau <= 0 or not 1 <= p <= index.c:
        raise InvalidConfig("invalid sampling parameters")
    n_subsets = math.comb(index.c, p)
    if n_subsets > _SUBSET_BUDGET:
        raise TooManySubsets(f"C({index.c},{p}) = {n_subsets} subsets")
    h = np.asarray(h, dtype=np.float32)
    w = softmax64(centroid_logits(index, h), tau)
    z_all = matvec_rows(E.data, h)
    acc = np.zeros(index.v, dtype=np.float64)
    for subset in combinations(range(index.c), p):
        prob = subset_probability(w, subset)
        ids = _concat_members(index, np.asarray(subset))
        acc[ids] += prob * softmax64(z_all[ids], tau)
    return MarginalEstimate(probs=acc, n_samples=n_subsets)


def subset_probability(w: np.ndarray, subset: Sequence[int],
                       method: str = "auto") -> float:
    """P(the without-replacement draw of len(subset) items equals this set)
    under first-draw weights w.

    Ordering sum (exact, p! terms) for small p; otherwise the equivalent
    one-dimensional integral P = int_0^1 prod_i (1 - t^(w_i / Wbar)) dt with
    Wbar the complement's total weight.
    """
    idx = np.asarray(subset, dtype=np.int64)
    if method == "auto":
        method = "orderings" if idx.size <= _ORDERINGS_MAX_P else "quadrature"
    ws = np.asarray(w, dtype=np.float64)[idx]
    if method == "orderings":
        total = 0.0
        for perm in permutations(ws):
            prob, rem = 1.0, 1.0
            for x in perm:
                prob *= x / rem
                rem -= x
            total += prob
        return total
    if method != "quadrature":
        raise InvalidConfig(f"unknown method {method!r}")
    wbar = 1.0 - ws.sum()
    if wbar <= 0.0:  # subset is the whole support
        return 1.0
    alphas = ws / wbar

    def integrand(t: float) -> float:
        return float(np.prod(1.0 - t ** alphas))

    val, _ = quad(integrand, 0.0, 1.0, limit=200, epsabs=1e-13, epsrel=1e-12)
    return val


def clip_zeros(est: MarginalEstimate) -> MarginalEstimate:
    """Replace zero entries with the minimum non-zero entry (no renorm)."""
    nz = est.probs[est.probs > 0.0]
    if nz.size == 0:
        raise AllZero("estimate has no non-zero entries")
    floor = float(nz.min())
    zeros = est.probs == 0.0
    out = est.probs.copy()
    out[zeros] = floor
    return MarginalEstimate(probs=out, n_samples=est.n_samples,
                            clipped=int(zeros.sum()), clip_value=floor)


def log_likelihood(est: MarginalEstimate, token_ids: Iterable[int]) -> float:
    """Sum of log probabilities of the given tokens, in float64."""
    ids = np.asarray(list(token_ids), dtype=np.int64)
    pv = est.probs[ids]
    if (pv == 0.0).any():
        bad = int(ids[np.nonzero(pv == 0.0)[0][0]])
        raise ZeroProbability(f"token {bad} has zero probability (estimate unclipped?)")
    return float(np.log(pv).sum())


def _concat_members(index: ClusteredIndex, probe_ids: np.ndarray) -> np.ndarray:
    rows = index.c2t[probe_ids]
    flat = rows.ravel()
    if not index.balanced:
        flat = flat[flat != index.pad_token]
    return flat.astype(np.int64)
