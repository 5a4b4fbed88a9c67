"""Dense-head oracle, top-k containment, ablations, seed robustness, and
head-only latency benchmarking.

Latency is measured per query at batch size 1 (the deployment regime this
head targets): the timed region covers exactly the head computation (full
matvec + argmax for the dense baseline; stage 1 + probe selection + gather +
stage 2 + selection for the retrieval head). Warmup repetitions are excluded
from all statistics. Benchmarks run single-threaded unless told otherwise.
"""

from __future__ import annotations

import os
import platform
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .clustering import ClusterOptions, ClusteredIndex, spherical_kmeans, normalize_rows
from .errors import InvalidConfig
from .head import DecodeConfig, decode, pack_blocks
from .linalg import matvec_rows, topk_desc
from .quant import QuantizedCentroids
from .tensor_types import EmbeddingMatrix, HiddenBatch


@dataclass(frozen=True)
class ContainmentReport:
    k: int
    n: int
    hits: int
    fraction: float
    config: dict


@dataclass(frozen=True)
class LatencyReport:
    label: str
    mean_ms: float
    median_ms: float
    p95_ms: float
    reps: int
    warmup: int
    speedup_vs_dense: float | None
    hardware: str
    threads: int


@dataclass(frozen=True)
class AblationReport:
    balanced: ContainmentReport
    unbalanced: ContainmentReport
    balanced_latency: LatencyReport
    unbalanced_latency: LatencyReport


@dataclass(frozen=True)
class SeedRobustnessReport:
    seeds: list[int]
    fractions: list[float]
    mean: float
    std: float  # ddof=1


def dense_head_oracle(E: EmbeddingMatrix, h: np.ndarray, k: int = 1) -> np.ndarray:
    """Ground truth: full matvec, then top-k token ids (ties: lower id)."""
    if k < 1:
        raise InvalidConfig("k must be >= 1")
    z = matvec_rows(E.data, np.asarray(h, dtype=np.float32))
    return topk_desc(z, k)


def make_dense_head(E: EmbeddingMatrix) -> Callable[[np.ndarray], int]:
    def run(h: np.ndarray) -> int:
        z = matvec_rows(E.data, h)
        return int(np.flatnonzero(z == z.max()).min())

    return run


def make_flash_head(index: ClusteredIndex, E: EmbeddingMatrix, cfg: DecodeConfig,
                    quant: QuantizedCentroids | None = None,
                    packed: np.ndarray | None = None) -> Callable[[np.ndarray], int]:
    if packed is None:
        packed = pack_blocks(index, E)
    rng = np.random.default_rng(cfg.seed)

    def run(h: np.ndarray) -> int:
        return decode(index, E, h, cfg, rng=rng, packed=packed, quant=quant)

    return run


def containment(index: ClusteredIndex, E: EmbeddingMatrix, queries: HiddenBatch,
                cfg: DecodeConfig, k: int = 1,
                quant: QuantizedCentroids | None = None,
                packed: np.ndarray | None = None) -> ContainmentReport:
    """Fraction of queries whose decoded token lies in the dense head's top-k
    (same E, same hidden states for both sides)."""
    if queries.d != E.d:
        raise InvalidConfig(f"query dim {queries.d} != embedding dim {E.d}")
    cfg.validate(index.c)
    if packed is None:
        packed = pack_blocks(index, E)
    rng = np.random.default_rng(cfg.seed)
    cached = queries.oracle_topk
    use_cache = cached is not None and cached.shape[1] >= k
    hits = 0
    for i, h in enumerate(queries.vectors):
        token = decode(index, E, h, cfg, rng=rng, packed=packed, quant=quant)
        topk = cached[i, :k] if use_cache else dense_head_oracle(E, h, k)
        hits += int(token in topk)
    return ContainmentReport(
        k=k, n=queries.n, hits=hits, fraction=hits / queries.n,
        config={"c": index.c, "p": cfg.p, "mode": cfg.mode,
                "bits": quant.bits if quant is not None else None})


def measure_head(fn: Callable[[np.ndarray], int], queries: HiddenBatch,
                 reps: int, warmup: int, threads: int = 1) -> np.ndarray:
    """Per-call wall times in ms, monotonic clock, warmup excluded."""
    if reps < 30:
        raise InvalidConfig("reps must be >= 30")
    if warmup < 0:
        raise InvalidConfig("warmup must be >= 0")
    H = queries.vectors
    n = len(H)
    samples = np.empty(reps, dtype=np.float64)
    with threadpool_limits(limits=threads):
        for i in range(warmup):
            fn(H[i % n])
        for i in range(reps):
            h = H[(warmup + i) % n]
            t0 = time.perf_counter()
            fn(h)
            samples[i] = (time.perf_counter() - t0) * 1e3
    return samples


def _hardware_descriptor(threads: int) -> str:
    return (f"{platform.machine()} {platform.system()} "
            f"{os.cpu_count()} cpus, {threads} compute thread(s)")


def _report(label: str, samples: np.ndarray, warmup: int, threads: int,
            dense_mean: float | None) -> LatencyReport:
    mean = float(samples.mean())
    return LatencyReport(
        label=label, mean_ms=mean, median_ms=float(np.median(samples)),
        p95_ms=float(np.percentile(samples, 95)), reps=len(samples),
        warmup=warmup,
        speedup_vs_dense=None if dense_mean is None else dense_mean / mean,
        hardware=_hardware_descriptor(threads), threads=threads)


def bench_tpot_head(E: EmbeddingMatrix, queries: HiddenBatch,
                    index: ClusteredIndex | None = None,
                    cfg: DecodeConfig | None = None,
                    quant: QuantizedCentroids | None = None,
                    reps: int = 100, warmup: int = 10,
                    threads: int = 1) -> tuple[LatencyReport, LatencyReport]:
    """Time the dense head and the method head; returns (dense, method)
    reports, the method one carrying speedup_vs_dense.

    index=None benches the dense head against itself (speedup ~ 1)."""
    dense_fn = make_dense_head(E)
    dense_samples = measure_head(dense_fn, queries, reps, warmup, threads)
    dense = _report("dense", dense_samples, warmup, threads, None)
    if index is None:
        method_fn, label = dense_fn, "dense-again"
    else:
        if cfg is None:
            raise InvalidConfig("cfg required when benchmarking an index")
        method_fn = make_flash_head(index, E, cfg, quant=quant)
        label = f"flashhead(c={index.c},p={cfg.p}" + (
            f",int{quant.bits})" if quant is not None else ")")
    method_samples = measure_head(method_fn, queries, reps, warmup, threads)
    method = _report(label, method_samples, warmup, threads, dense.mean_ms)
    return dense, method


def ablation_balance(E: EmbeddingMatrix, c: int, queries: HiddenBatch,
                     cfg: DecodeConfig, seed: int = 0, k: int = 1,
                     max_iterations: int = 25, init: str = "kmeans++",
                     reps: int = 50, warmup: int = 10,
                     threads: int = 1) -> AblationReport:
    """Build balanced and unbalanced indexes from the same seed; report
    containment and head latency for each."""
    E_unit = normalize_rows(E)
    reports, latencies = {}, {}
    dense_mean: float | None = None
    for balanced in (True, False):
        opts = ClusterOptions(c=c, seed=seed, balanced=balanced,
                              max_iterations=max_iterations, init=init)
        idx = spherical_kmeans(E_unit, opts)
        idx.validate()
        packed = pack_blocks(idx, E)
        reports[balanced] = containment(idx, E, queries, cfg, k=k, packed=packed)
        fn = make_flash_head(idx, E, cfg, packed=packed)
        samples = measure_head(fn, queries, reps, warmup, threads)
        if dense_mean is None:
            dense_samples = measure_head(make_dense_head(E), queries, reps, warmup, threads)
            dense_mean = float(dense_samples.mean())
        latencies[balanced] = _report(
            "balanced" if balanced else "unbalanced", samples, warmup, threads, dense_mean)
    return AblationReport(balanced=reports[True], unbalanced=reports[False],
                          balanced_latency=latencies[True],
                          unbalanced_latency=latencies[False])


def seed_robustness(E: EmbeddingMatrix, opts: ClusterOptions, seeds: list[int],
                    queries: HiddenBatch, cfg: DecodeConfig,
                    k: int = 1) -> SeedRobustnessReport:
    """Rebuild the clustering once per seed and report mean/std of top-k
    containment across the rebuilds."""
    if len(seeds) < 2:
        raise InvalidConfig("need at least 2 seeds")
    E_unit = normalize_rows(E)
    fractions = []
    for seed in seeds:
        opts_s = ClusterOptions(c=opts.c, seed=seed, balanced=opts.balanced,
                                max_iterations=opts.max_iterations,
                                tolerance=opts.tolerance, init=opts.init)
        idx = spherical_kmeans(E_unit, opts_s)
        fractions.append(containment(idx, E, queries, cfg, k=k).fraction)
    arr = np.asarray(fractions, dtype=np.float64)
    return SeedRobustnessReport(seeds=list(seeds), fractions=fractions,
                                mean=float(arr.mean()),
                                std=float(arr.std(ddof=1)))


def synthetic_embeddings(v: int, d: int, seed: int = 0) -> EmbeddingMatrix:
    """Unit-normal embedding rows (desk-scale stand-in for a real checkpoint)."""
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix.from_array(rng.standard_normal((v, d), dtype=np.float32))


def synthetic_queries(n: int, d: int, seed: int = 0, mode: str = "normal",
                      E: EmbeddingMatrix | None = None) -> HiddenBatch:
    """Query generator. "normal" draws unit-normal vectors; "hard"
    interpolates between two random token embeddings, which lands queries near
    cluster boundaries."""
    rng = np.random.default_rng(seed)
    if mode == "normal":
        return HiddenBatch.from_array(rng.standard_normal((n, d), dtype=np.float32))
    if mode != "hard":
        raise InvalidConfig(f"unknown query mode {mode!r}")
    if E is None:
        raise InvalidConfig("hard mode needs the embedding matrix")
    a = rng.integers(E.v, size=n)
    b = rng.integers(E.v, size=n)
    lam = rng.uniform(size=(n, 1)).astype(np.float32)
    vecs = lam * E.data[a] + (1.0 - lam) * E.data[b]
    return HiddenBatch.from_array(vecs)
