"""Two-stage retrieval head: centroid scoring, probe selection, candidate
gather, token scoring, and final selection.

Stage 1 scores all c centroids against the hidden vector and picks p probe
clusters, either greedily (top-p) or by sampling without replacement from
softmax(centroid logits / tau) via Gumbel perturbation. Stage 2 scores only
the tokens of the probed clusters against the ORIGINAL (unnormalized)
embedding rows and selects the token by argmax or by a softmax draw.

For balanced indexes, `pack_blocks` copies token embeddings into a contiguous
(c, b, d) array once; decode then runs stage 2 as per-probe block dots on
views, which is the memory-access pattern the dense cluster-to-token map
exists to enable. The scattered-gather path (`gather_candidates`) computes the
same logits bit-for-bit and serves the unbalanced/padded case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusteredIndex
from .errors import InvalidConfig
from .linalg import gumbel_topk, matvec_rows, softmax64, topk_desc
from .quant import QuantizedCentroids, centroid_logits_quant
from .tensor_types import EmbeddingMatrix


@dataclass(frozen=True)
class DecodeConfig:
    p: int
    mode: str = "greedy"  # "greedy" | "sample"
    temperature: float = 1.0
    seed: int = 0
    stage1_temperature: float | None = None  # defaults to temperature
    exact_accumulation: bool = False  # float64 stage-2 dots

    @property
    def tau1(self) -> float:
        return self.temperature if self.stage1_temperature is None else self.stage1_temperature

    def validate(self, c: int) -> None:
        if not 1 <= self.p <= c:
            raise InvalidConfig(f"p={self.p} outside 1..c={c}")
        if self.mode not in ("greedy", "sample"):
            raise InvalidConfig(f"unknown mode {self.mode!r}")
        if self.mode == "sample" and (self.temperature <= 0 or self.tau1 <= 0):
            raise InvalidConfig("sample mode needs temperature > 0")


@dataclass(frozen=True)
class ProbeSelection:
    probe_ids: np.ndarray     # (p,) distinct cluster ids
    probe_logits: np.ndarray  # their stage-1 scores


@dataclass(frozen=True)
class CandidateSet:
    token_ids: np.ndarray   # (x,) distinct token ids, probe-concatenation order
    sub_matrix: np.ndarray  # (x, d) gathered rows of E


@dataclass(frozen=True)
class CostModel:
    dense_mults: int
    flash_mults: int
    ratio: float
    active_params_dense: int
    active_params_flash: int


def centroid_logits(index: ClusteredIndex, h: np.ndarray) -> np.ndarray:
    """Stage-1 scores: dot of every centroid row with h (float32)."""
    return matvec_rows(index.centroids, np.asarray(h, dtype=np.float32))


def select_probes_greedy(logits: np.ndarray, p: int) -> ProbeSelection:
    """Top-p clusters by logit, ties toward lower cluster id."""
    if not 1 <= p <= logits.shape[0]:
        raise InvalidConfig(f"p={p} outside 1..c={logits.shape[0]}")
    ids = topk_desc(logits, p)
    return ProbeSelection(probe_ids=ids, probe_logits=logits[ids])


def select_probes_sampled(logits: np.ndarray, p: int, tau: float,
                          rng: np.random.Generator) -> ProbeSelection:
    """p distinct clusters sampled without replacement; the first draw follows
    softmax(logits / tau). Deterministic given the generator state."""
    if not 1 <= p <= logits.shape[0]:
        raise InvalidConfig(f"p={p} outside 1..c={logits.shape[0]}")
    if tau <= 0:
        raise InvalidConfig("tau must be positive")
    ids = gumbel_topk(logits, p, tau, rng)
    return ProbeSelection(probe_ids=ids, probe_logits=logits[ids])


def candidate_token_ids(index: ClusteredIndex, probe_ids: np.ndarray) -> np.ndarray:
    """Token ids of the probed clusters, probe-concatenation order, padding
    skipped for unbalanced indexes."""
    rows = index.c2t[probe_ids]
    if index.balanced:
        return rows.ravel().astype(np.int64)
    flat = rows.ravel()
    return flat[flat != index.pad_token].astype(np.int64)


def gather_candidates(index: ClusteredIndex, E: EmbeddingMatrix,
                      probes: ProbeSelection) -> CandidateSet:
    """Collect the probed clusters' token ids and their raw embedding rows.

    Balanced: exactly p*b candidates in probe order. Unbalanced: padding
    entries are skipped.
    """
    ids = candidate_token_ids(index, probes.probe_ids)
    return CandidateSet(token_ids=ids, sub_matrix=E.data[ids])


def pack_blocks(index: ClusteredIndex, E: EmbeddingMatrix) -> np.ndarray | None:
    """One-time copy of E rows into cluster-major (c, b, d) blocks.

    Only balanced indexes pack (that is the point of equal-sized clusters);
    returns None otherwise and decode falls back to masked scattered gathers.
    """
    if not index.balanced:
        return None
    return E.data[index.c2t.ravel().astype(np.int64)].reshape(index.c, index.b, index.d)


def _stage2_logits(index: ClusteredIndex, E: EmbeddingMatrix, h: np.ndarray,
                   probe_ids: np.ndarray, packed: np.ndarray | None,
                   float64: bool) -> tuple[np.ndarray, np.ndarray]:
    if packed is not None and index.balanced:
        b = index.b
        token_ids = index.c2t[probe_ids].ravel().astype(np.int64)
        z = np.empty(len(probe_ids) * b, dtype=np.float64 if float64 else np.float32)
        for i, k in enumerate(probe_ids):
            matvec_rows(packed[k], h, out=z[i * b : (i + 1) * b], float64=float64)
        return token_ids, z
    ids = candidate_token_ids(index, probe_ids)
    return ids, matvec_rows(E.data[ids], h, float64=float64)


def decode(index: ClusteredIndex, E: EmbeddingMatrix, h: np.ndarray,
           cfg: DecodeConfig, rng: np.random.Generator | None = None,
           packed: np.ndarray | None = None,
           quant: QuantizedCentroids | None = None) -> int:
    """Run the full two-stage head on one hidden vector; returns a token id.

    rng is the caller-owned generator for sample mode (a fresh one is seeded
    from cfg.seed when omitted). packed is the optional pack_blocks output;
    quant swaps stage 1 onto the low-bit path, stage 2 stays full precision.
    """
    cfg.validate(index.c)
    h = np.asarray(h, dtype=np.float32)
    logits1 = centroid_logits_quant(quant, h) if quant is not None else centroid_logits(index, h)
    if cfg.mode == "greedy":
        probes = select_probes_greedy(logits1, cfg.p)
    else:
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        probes = select_probes_sampled(logits1, cfg.p, cfg.tau1, rng)
    token_ids, z = _stage2_logits(index, E, h, probes.probe_ids, packed,
                                  cfg.exact_accumulation)
    if cfg.mode == "greedy":
        return int(token_ids[z == z.max()].min())  # ties: lower token id
    probs = softmax64(z, cfg.temperature)
    return int(rng.choice(token_ids, p=probs / probs.sum()))


def decode_batch(index: ClusteredIndex, E: EmbeddingMatrix, H: np.ndarray,
                 cfg: DecodeConfig, packed: np.ndarray | None = None,
                 quant: QuantizedCentroids | None = None) -> np.ndarray:
    """Decode each row of H with one shared generator stream."""
    rng = np.random.default_rng(cfg.seed)
    return np.array([decode(index, E, h, cfg, rng=rng, packed=packed, quant=quant)
                     for h in H], dtype=np.int64)


def cost_model(v: int, d: int, c: int, p: int) -> CostModel:
    """Multiplication counts and active (touched-per-token) parameter counts
    for the dense head versus the two-stage head."""
    if c < 1 or v % c:
        raise InvalidConfig(f"c={c} must divide v={v}")
    if not 1 <= p <= c:
        raise InvalidConfig(f"p={p} outside 1..c={c}")
    dense = v * d
    flash = c * d + p * (v // c) * d
    return CostModel(dense_mults=dense, flash_mults=flash, ratio=dense / flash,
                     active_params_dense=dense, active_params_flash=flash)
