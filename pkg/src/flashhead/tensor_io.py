"""Bit-exact binary container for embeddings, hidden batches, and indexes.

Every file starts with an 8-byte magic "FLSHHD01" followed by a little-endian
header: dtype code u32 (0 = real32, 1 = int-packed), rank u32, then rank u64
dims. Payload follows immediately, row-major little-endian.

Standalone tensor files hold exactly one real32 tensor; the declared element
count must match the remaining file length exactly.

Index files use a single header with rank 3 and dims [c, d, b], then the
centroid matrix (c*d real32), the cluster-to-token map (c*b u32, padding is
0xFFFFFFFF), then build metadata: seed u64, iterations u32, objective-trace
length u32 and that many real64 entries. Optionally a quantized stage-1 block
follows: a dtype=1 section of packed code bytes, a dtype=0 section of group
scales, then bits u32 and group size u32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .clustering import PAD_TOKEN, ClusteredIndex, IndexMeta
from .errors import BadMagic, DimMismatch, IoFailure, NonFiniteValue, TruncatedPayload
from .quant import QuantizedCentroids
from .tensor_types import EmbeddingMatrix, HiddenBatch

MAGIC = b"FLSHHD01"
DTYPE_REAL32 = 0
DTYPE_INT_PACKED = 1

_HEADER_FIXED = struct.Struct("<8sII")  # magic, dtype, rank


def _encode_header(dtype: int, dims: tuple[int, ...]) -> bytes:
    return _HEADER_FIXED.pack(MAGIC, dtype, len(dims)) + struct.pack(f"<{len(dims)}Q", *dims)


def _decode_header(buf: bytes, off: int) -> tuple[int, tuple[int, ...], int]:
    if len(buf) - off < _HEADER_FIXED.size:
        raise TruncatedPayload("file too short for header")
    magic, dtype, rank = _HEADER_FIXED.unpack_from(buf, off)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {magic!r}")
    if dtype not in (DTYPE_REAL32, DTYPE_INT_PACKED):
        raise DimMismatch(f"unknown dtype code {dtype}")
    if rank > 8:
        raise DimMismatch(f"implausible rank {rank}")
    off += _HEADER_FIXED.size
    if len(buf) - off < 8 * rank:
        raise TruncatedPayload("file too short for dims")
    dims = struct.unpack_from(f"<{rank}Q", buf, off)
    return dtype, dims, off + 8 * rank


def _element_count(dims: tuple[int, ...]) -> int:
    n = 1
    for x in dims:
        n *= int(x)  # Python int: no overflow at any dim size
    return n


def save_matrix(arr: np.ndarray, path: str | Path) -> None:
    """Write a real32 tensor file."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    try:
        with open(path, "wb") as f:
            f.write(_encode_header(DTYPE_REAL32, arr.shape))
            f.write(arr.tobytes())
    except OSError as e:
        raise IoFailure(str(e)) from e


def load_matrix(path: str | Path, expected_rank: int = 2) -> np.ndarray:
    """Load a real32 tensor file; values come back bit-identical to the payload."""
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(str(e)) from e
    dtype, dims, off = _decode_header(buf, 0)
    if dtype != DTYPE_REAL32:
        raise DimMismatch(f"expected real32 tensor, got dtype code {dtype}")
    if len(dims) != expected_rank:
        raise DimMismatch(f"expected rank {expected_rank}, got {len(dims)}")
    count = _element_count(dims)
    if len(buf) - off != 4 * count:
        raise TruncatedPayload(
            f"payload holds {(len(buf) - off) // 4} elements, header declares {count}")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(dims)
    bad = ~np.isfinite(arr)
    if bad.any():
        flat_row = int(np.nonzero(bad.reshape(dims[0], -1).any(axis=1))[0][0])
        raise NonFiniteValue(flat_row)
    return arr


def save_embeddings(E: EmbeddingMatrix, path: str | Path) -> None:
    save_matrix(E.data, path)


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    return EmbeddingMatrix.from_array(load_matrix(path, expected_rank=2))


def save_hidden(H: HiddenBatch, path: str | Path) -> None:
    save_matrix(H.vectors, path)


def load_hidden(path: str | Path) -> HiddenBatch:
    return HiddenBatch.from_array(load_matrix(path, expected_rank=2))


def save_index(index: ClusteredIndex, path: str | Path,
               quant: QuantizedCentroids | None = None) -> None:
    """Persist an index (and optionally its quantized stage-1 weights)."""
    index.validate()
    try:
        with open(path, "wb") as f:
            f.write(_encode_header(DTYPE_REAL32, (index.c, index.d, index.b)))
            f.write(np.ascontiguousarray(index.centroids, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(index.c2t, dtype="<u4").tobytes())
            trace = np.ascontiguousarray(index.meta.objective_trace, dtype="<f8")
            f.write(struct.pack("<QII", index.meta.seed, index.meta.iterations, trace.size))
            f.write(trace.tobytes())
            if quant is not None:
                packed = quant.packed()
                f.write(_encode_header(DTYPE_INT_PACKED, (packed.size,)))
                f.write(packed.tobytes())
                f.write(_encode_header(DTYPE_REAL32, (quant.scales.size,)))
                f.write(np.ascontiguousarray(quant.scales, dtype="<f4").tobytes())
                f.write(struct.pack("<II", quant.bits, quant.group_size))
    except OSError as e:
        raise IoFailure(str(e)) from e


def load_index(path: str | Path) -> tuple[ClusteredIndex, QuantizedCentroids | None]:
    """Load an index file; returns (index, quantized stage-1 weights or None)."""
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(str(e)) from e
    dtype, dims, off = _decode_header(buf, 0)
    if dtype != DTYPE_REAL32 or len(dims) != 3:
        raise DimMismatch("not an index file (want dtype 0, rank 3)")
    c, d, b = (int(x) for x in dims)

    def take(n_bytes: int, what: str) -> bytes:
        nonlocal off
        if len(buf) - off < n_bytes:
            raise TruncatedPayload(f"file too short reading {what}")
        out = buf[off : off + n_bytes]
        off += n_bytes
        return out

    centroids = np.frombuffer(take(4 * c * d, "centroids"), dtype="<f4").reshape(c, d)
    c2t = np.frombuffer(take(4 * c * b, "c2t"), dtype="<u4").reshape(c, b)
    seed, iterations, trace_len = struct.unpack("<QII", take(16, "metadata"))
    trace = np.frombuffer(take(8 * trace_len, "objective trace"), dtype="<f8")

    quant = None
    if off < len(buf):
        qdtype, qdims, off = _decode_header(buf, off)
        if qdtype != DTYPE_INT_PACKED or len(qdims) != 1:
            raise DimMismatch("trailing section is not a quantized block")
        packed = np.frombuffer(take(int(qdims[0]), "packed codes"), dtype=np.uint8)
        sdtype, sdims, off = _decode_header(buf, off)
        if sdtype != DTYPE_REAL32 or len(sdims) != 1:
            raise DimMismatch("quantized block missing scales section")
        scales = np.frombuffer(take(4 * int(sdims[0]), "scales"), dtype="<f4")
        bits, group_size = struct.unpack("<II", take(8, "quant metadata"))
        quant = QuantizedCentroids.from_packed(packed, scales, bits, group_size, c, d)
    if off != len(buf):
        raise TruncatedPayload(f"{len(buf) - off} unexpected trailing bytes")

    balanced = not bool((c2t == PAD_TOKEN).any())
    v = c * b if balanced else int((c2t != PAD_TOKEN).sum())
    index = ClusteredIndex(
        c=c, b=b, d=d, v=v, centroids=centroids, c2t=c2t, balanced=balanced,
        meta=IndexMeta(seed=int(seed), iterations=int(iterations),
                       objective_trace=trace))
    index.validate()
    return index, quant
