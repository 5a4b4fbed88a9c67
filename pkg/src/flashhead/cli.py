"""Command-line entry point: index building, decoding, evaluation,
benchmarking, Monte Carlo likelihood evaluation, and sweeps.

Every command validates its configuration before writing anything, so invalid
invocations never leave partial outputs. `--gate` turns eval/bench into a
pass/fail check with a nonzero exit status on failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import evalbench, mc, tensor_io
from .clustering import ClusterOptions, build_index
from .errors import FlashHeadError, InvalidConfig
from .head import DecodeConfig, cost_model, decode_batch, pack_blocks
from .quant import quantize_centroids

DEFAULT_C = 8016
DEFAULT_P = 512
DEFAULT_TAU = 1.0
DEFAULT_MC_SAMPLES = 10000
DEFAULT_GROUP_SIZE = 64
DEFAULT_SWEEP_CLUSTERS = (4008, 8016, 16032)
DEFAULT_SWEEP_PROBES = (128, 256, 512)


@dataclass(frozen=True)
class RunConfig:
    embeddings: str | None = None
    hidden: str | None = None
    index: str | None = None
    out: str | None = None
    c: int = DEFAULT_C
    p: int = DEFAULT_P
    mode: str = "greedy"
    temperature: float = DEFAULT_TAU
    seed: int = 0
    bits: int | None = None
    group_size: int = DEFAULT_GROUP_SIZE
    n_samples: int = DEFAULT_MC_SAMPLES
    reps: int = 100
    warmup: int = 10
    threads: int = 1

    def validate(self, v: int | None = None, balanced: bool = True) -> None:
        if self.c < 1:
            raise InvalidConfig(f"c={self.c} must be >= 1")
        if v is not None and balanced and v % self.c:
            raise InvalidConfig(f"c={self.c} does not divide v={v}")
        if not 1 <= self.p <= self.c:
            raise InvalidConfig(f"p={self.p} outside 1..c={self.c}")
        if self.mode == "sample" and self.temperature <= 0:
            raise InvalidConfig("sample mode needs temperature > 0")
        if self.bits is not None and self.bits not in (4, 8):
            raise InvalidConfig("bits must be 4 or 8")
        if self.n_samples < 1:
            raise InvalidConfig("n-samples must be >= 1")


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("FLASHHEAD_THREADS", "1"))


def _decode_config(args) -> DecodeConfig:
    return DecodeConfig(p=args.p, mode=args.mode, temperature=args.temperature,
                        seed=args.seed)


def _write_csv(path: str | None, header: list[str], rows: list[list]) -> None:
    f = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path:
            f.close()


def cmd_cluster(args) -> int:
    E = tensor_io.load_embeddings(args.embeddings)
    opts = ClusterOptions(c=args.c, seed=args.seed, balanced=not args.unbalanced,
                          max_iterations=args.max_iterations,
                          tolerance=args.tolerance, init=args.init)
    cfg = RunConfig(c=args.c, p=1, bits=args.bits, group_size=args.group_size,
                    seed=args.seed)
    cfg.validate(v=E.v, balanced=not args.unbalanced)
    index = build_index(E, opts)
    index.validate()
    quant = None
    if args.bits is not None:
        quant = quantize_centroids(index.centroids, bits=args.bits,
                                   group_size=args.group_size)
    tensor_io.save_index(index, args.out, quant=quant)
    trace = index.meta.objective_trace
    print(f"v={E.v} d={E.d} c={index.c} b={index.b} balanced={index.balanced}")
    print(f"iterations={index.meta.iterations} "
          f"objective first={trace[0]:.6f} last={trace[-1]:.6f}")
    print("exact-cover check: OK")
    if quant is not None:
        print(f"stage-1 quantized: int{quant.bits} group_size={quant.group_size}")
    print(f"wrote {args.out}")
    return 0


def _load_run_inputs(args):
    E = tensor_io.load_embeddings(args.embeddings)
    index, quant = tensor_io.load_index(args.index)
    H = tensor_io.load_hidden(args.hidden)
    if H.d != E.d or index.d != E.d:
        raise InvalidConfig(f"dim mismatch: E d={E.d}, index d={index.d}, hidden d={H.d}")
    if index.v != E.v:
        raise InvalidConfig(f"index built for v={index.v}, embeddings have v={E.v}")
    if not args.quant:
        quant = None
    elif quant is None:
        raise InvalidConfig("--quant requested but the index has no quantized block")
    return E, index, H, quant


def cmd_decode(args) -> int:
    E, index, H, quant = _load_run_inputs(args)
    p = index.c if args.oracle else args.p
    cfg = DecodeConfig(p=p, mode=args.mode, temperature=args.temperature,
                       seed=args.seed)
    cfg.validate(index.c)
    if args.oracle:
        for h in H.vectors:
            print(int(evalbench.dense_head_oracle(E, h, 1)[0]))
        return 0
    packed = pack_blocks(index, E)
    for token in decode_batch(index, E, H.vectors, cfg, packed=packed, quant=quant):
        print(int(token))
    return 0


def cmd_eval(args) -> int:
    E, index, H, quant = _load_run_inputs(args)
    cfg = _decode_config(args)
    cfg.validate(index.c)
    report = evalbench.containment(index, E, H, cfg, k=args.k, quant=quant)
    _write_csv(args.out,
               ["k", "n", "hits", "fraction", "c", "p", "mode", "bits"],
               [[report.k, report.n, report.hits, f"{report.fraction:.6f}",
                 index.c, cfg.p, cfg.mode, report.config["bits"]]])
    if args.gate:
        ok = report.fraction >= args.min_fraction
        print(f"gate containment >= {args.min_fraction}: "
              f"{'PASS' if ok else 'FAIL'} ({report.fraction:.4f})", file=sys.stderr)
        return 0 if ok else 1
    return 0


def cmd_bench(args) -> int:
    E, index, H, quant = _load_run_inputs(args)
    cfg = _decode_config(args)
    cfg.validate(index.c)
    if args.reps < 30 or args.warmup < 10:
        raise InvalidConfig("bench needs reps >= 30 and warmup >= 10")
    dense, method = evalbench.bench_tpot_head(
        E, H, index=index, cfg=cfg, quant=quant, reps=args.reps,
        warmup=args.warmup, threads=_threads(args))
    rows = [[r.label, f"{r.mean_ms:.4f}", f"{r.median_ms:.4f}", f"{r.p95_ms:.4f}",
             r.reps, r.warmup,
             "" if r.speedup_vs_dense is None else f"{r.speedup_vs_dense:.3f}",
             r.hardware] for r in (dense, method)]
    _write_csv(args.out,
               ["method", "mean_ms", "median_ms", "p95_ms", "reps", "warmup",
                "speedup_vs_dense", "hardware"], rows)
    if args.gate:
        ok = (method.speedup_vs_dense or 0.0) >= args.min_speedup
        print(f"gate speedup >= {args.min_speedup}: "
              f"{'PASS' if ok else 'FAIL'} ({method.speedup_vs_dense:.2f}x)",
              file=sys.stderr)
        return 0 if ok else 1
    return 0


def cmd_mc(args) -> int:
    E, index, H, _ = _load_run_inputs(args)
    n_list = [int(x) for x in args.n_samples.split(",")]
    cfg = RunConfig(c=index.c, p=args.p, mode="sample",
                    temperature=args.temperature,
                    n_samples=min(n_list))
    cfg.validate()
    queries = H.vectors[: args.max_queries]
    feasible = math.comb(index.c, args.p) <= 1_000_000
    rows = []
    for qi, h in enumerate(queries):
        oracle = (mc.exact_marginal(index, E, h, args.p, args.temperature)
                  if feasible else None)
        for N in n_list:
            rng = np.random.default_rng(args.seed)
            t0 = time.perf_counter()
            est = mc.mc_marginal(index, E, h, args.p, args.temperature, N, rng)
            wall = time.perf_counter() - t0
            clipped = mc.clip_zeros(est).clipped
            l1 = ("" if oracle is None
                  else f"{np.abs(est.probs - oracle.probs).sum():.6f}")
            rows.append([qi, N, l1, clipped, f"{wall:.4f}"])
    _write_csv(args.out, ["query", "N", "l1_to_oracle", "clipped", "wall_time_s"], rows)
    return 0


def cmd_sweep(args) -> int:
    E = tensor_io.load_embeddings(args.embeddings)
    H = tensor_io.load_hidden(args.hidden)
    clusters = [int(x) for x in args.clusters.split(",")]
    probes = [int(x) for x in args.probes.split(",")]
    for c in clusters:
        RunConfig(c=c, p=min(probes), seed=args.seed).validate(v=E.v)
    if args.reps < 30 or args.warmup < 10:
        raise InvalidConfig("sweep bench needs reps >= 30 and warmup >= 10")
    threads = _threads(args)
    dense_mean = None
    rows = []
    for c in clusters:
        opts = ClusterOptions(c=c, seed=args.seed, max_iterations=args.max_iterations,
                              init=args.init)
        index = build_index(E, opts)
        packed = pack_blocks(index, E)
        for p in probes:
            cfg = DecodeConfig(p=p, mode="greedy", seed=args.seed)
            cfg.validate(c)
            report = evalbench.containment(index, E, H, cfg, k=args.k, packed=packed)
            fn = evalbench.make_flash_head(index, E, cfg, packed=packed)
            samples = evalbench.measure_head(fn, H, args.reps, args.warmup, threads)
            if dense_mean is None:
                dense = evalbench.measure_head(evalbench.make_dense_head(E), H,
                                               args.reps, args.warmup, threads)
                dense_mean = float(dense.mean())
            cm = cost_model(E.v, E.d, c, p)
            rows.append([c, p, index.b, f"{report.fraction:.6f}",
                         f"{samples.mean():.4f}",
                         f"{dense_mean / samples.mean():.3f}",
                         cm.flash_mults, f"{cm.ratio:.3f}"])
    _write_csv(args.out,
               ["c", "p", "b", "containment", "tpot_head_ms", "speedup_vs_dense",
                "flash_mults", "cost_ratio"], rows)
    return 0


def cmd_dump(args) -> int:
    index, _ = tensor_io.load_index(args.index)
    if args.clusters:
        ids = [int(x) for x in args.clusters.split(",")]
    else:
        rng = np.random.default_rng(args.seed)
        ids = sorted(rng.choice(index.c, size=min(args.sample, index.c),
                                replace=False).tolist())
    for k in ids:
        if not 0 <= k < index.c:
            raise InvalidConfig(f"cluster {k} outside 0..{index.c - 1}")
        members = " ".join(str(int(t)) for t in index.members(k))
        print(f"cluster {k}: {members}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flashhead",
                                 description="Two-stage retrieval head toolkit")
    ap.add_argument("--threads", type=int, default=None,
                    help="compute threads (default: FLASHHEAD_THREADS or 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="build an index from an embedding dump")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c", type=int, default=DEFAULT_C)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--unbalanced", action="store_true")
    p.add_argument("--init", choices=["kmeans++", "random"], default="kmeans++")
    p.add_argument("--bits", type=int, default=None, choices=[4, 8])
    p.add_argument("--group-size", type=int, default=DEFAULT_GROUP_SIZE)
    p.set_defaults(func=cmd_cluster)

    def add_run_inputs(p):
        p.add_argument("--embeddings", required=True)
        p.add_argument("--index", required=True)
        p.add_argument("--hidden", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--quant", action="store_true",
                       help="use the index's quantized stage-1 block")

    p = sub.add_parser("decode", help="emit one token id per hidden row")
    add_run_inputs(p)
    p.add_argument("--p", type=int, default=DEFAULT_P)
    p.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    p.add_argument("--temperature", type=float, default=DEFAULT_TAU)
    p.add_argument("--oracle", action="store_true",
                   help="emit the dense head's tokens instead")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="top-k containment vs the dense head")
    add_run_inputs(p)
    p.add_argument("--p", type=int, default=DEFAULT_P)
    p.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    p.add_argument("--temperature", type=float, default=DEFAULT_TAU)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--gate", action="store_true")
    p.add_argument("--min-fraction", type=float, default=1.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="head-only latency (TPOT^H) vs dense")
    add_run_inputs(p)
    p.add_argument("--p", type=int, default=DEFAULT_P)
    p.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    p.add_argument("--temperature", type=float, default=DEFAULT_TAU)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--out", default=None)
    p.add_argument("--gate", action="store_true")
    p.add_argument("--min-speedup", type=float, default=2.0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("mc-eval", help="Monte Carlo marginal quality report")
    add_run_inputs(p)
    p.add_argument("--p", type=int, default=DEFAULT_P)
    p.add_argument("--temperature", type=float, default=DEFAULT_TAU)
    p.add_argument("--n-samples", default=str(DEFAULT_MC_SAMPLES),
                   help="comma-separated list of sample counts")
    p.add_argument("--max-queries", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("sweep", help="containment/latency over a (c, p) grid")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--hidden", required=True)
    p.add_argument("--clusters", default=",".join(str(c) for c in DEFAULT_SWEEP_CLUSTERS))
    p.add_argument("--probes", default=",".join(str(p) for p in DEFAULT_SWEEP_PROBES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--max-iterations", type=int, default=25)
    p.add_argument("--init", choices=["kmeans++", "random"], default="kmeans++")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump", help="print token ids of selected clusters")
    p.add_argument("--index", required=True)
    p.add_argument("--clusters", default=None, help="comma-separated cluster ids")
    p.add_argument("--sample", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dump)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(limits=_threads(args)):
            return args.func(args)
    except FlashHeadError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
