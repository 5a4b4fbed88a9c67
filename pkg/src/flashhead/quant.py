"""Selective low-bit quantization of the stage-1 centroid weights.

Symmetric per-group round-to-nearest: each contiguous run of `group_size`
weights inside a row shares one float32 scale = max|w| / (2^(bits-1) - 1).
Stage-1 logits are computed dequantize-free (integer dot per group, then
scale), so the low-bit codes are what the kernel actually reads. Stage 2 stays
full precision; this module never touches token embeddings except when a
caller deliberately quantizes a whole dense head for drift comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, InvalidGroup


@dataclass(frozen=True)
class QuantizedCentroids:
    bits: int             # 4 or 8
    group_size: int
    c: int
    d: int
    codes: np.ndarray     # int8 (c, d), values in [-qmax, qmax]
    scales: np.ndarray    # float32 (c * d / group_size,)

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1

    @property
    def n_groups(self) -> int:
        return self.c * self.d // self.group_size

    def packed(self) -> np.ndarray:
        """Serialized code bytes: int4 packs two values per byte, low nibble
        first; int8 is one byte per value."""
        flat = self.codes.ravel()
        if self.bits == 8:
            return flat.view(np.uint8).copy()
        u = (flat.astype(np.uint8) & 0xF)
        if u.size % 2:
            u = np.concatenate([u, np.zeros(1, dtype=np.uint8)])
        return (u[0::2] | (u[1::2] << 4)).copy()

    @classmethod
    def from_packed(cls, packed: np.ndarray, scales: np.ndarray, bits: int,
                    group_size: int, c: int, d: int) -> "QuantizedCentroids":
        n = c * d
        if bits == 8:
            codes = packed[:n].view(np.int8).copy()
        else:
            lo = packed & 0xF
            hi = packed >> 4
            inter = np.empty(2 * packed.size, dtype=np.uint8)
            inter[0::2] = lo
            inter[1::2] = hi
            # sign-extend 4-bit two's complement
            codes = ((inter[:n].astype(np.int8) ^ 8) - 8).astype(np.int8)
        return cls(bits=bits, group_size=group_size, c=c, d=d,
                   codes=codes.reshape(c, d), scales=np.asarray(scales, dtype=np.float32))


def quantize_centroids(C: np.ndarray, bits: int = 4, group_size: int = 64) -> QuantizedCentroids:
    """Quantize a row matrix (works on any (n, d) float32 weights).

    Codes are computed in float64 (this is an offline path; float32 division
    noise around half-points would perturb round-to-nearest), rounded
    half-to-even, and the per-group scales are stored as float32. Zero groups
    get scale 1.0 so they round-trip exactly.
    """
    C = np.ascontiguousarray(C, dtype=np.float32)
    if C.ndim != 2:
        raise InvalidGroup("expected a 2-D weight matrix")
    c, d = C.shape
    if bits not in (4, 8):
        raise InvalidGroup(f"bits must be 4 or 8, got {bits}")
    if group_size < 1 or d % group_size:
        raise InvalidGroup(f"group_size {group_size} does not divide d={d}")
    qmax = (1 << (bits - 1)) - 1
    groups_per_chunk = max(1, (1 << 22) // group_size)
    n_groups = c * d // group_size
    codes = np.empty(c * d, dtype=np.int8)
    scales = np.empty(n_groups, dtype=np.float32)
    flat = C.reshape(-1, group_size)
    for s in range(0, n_groups, groups_per_chunk):
        e = min(s + groups_per_chunk, n_groups)
        w = flat[s:e].astype(np.float64)
        sc = np.abs(w).max(axis=1) / qmax
        sc[sc == 0.0] = 1.0
        q = np.clip(np.round(w / sc[:, None]), -qmax, qmax).astype(np.int8)
        codes[s * group_size : e * group_size] = q.ravel()
        scales[s:e] = sc.astype(np.float32)
    return QuantizedCentroids(bits=bits, group_size=group_size, c=c, d=d,
                              codes=codes.reshape(c, d), scales=scales)


def dequantize(qc: QuantizedCentroids) -> np.ndarray:
    """Reconstructed float32 matrix scale * code, shape (c, d)."""
    w = qc.codes.reshape(-1, qc.group_size).astype(np.float32)
    return (w * qc.scales[:, None]).reshape(qc.c, qc.d)


def centroid_logits_quant(qc: QuantizedCentroids, h: np.ndarray) -> np.ndarray:
    """Stage-1 logits from quantized weights: per-group integer-times-real dot,
    scaled and summed in float32."""
    h = np.asarray(h, dtype=np.float32)
    if h.ndim != 1 or h.shape[0] != qc.d:
        raise DimMismatch(f"hidden length {h.shape} vs d={qc.d}")
    gpr = qc.d // qc.group_size  # groups per row
    hg = h.reshape(gpr, qc.group_size)
    codes3 = qc.codes.reshape(qc.c, gpr, qc.group_size)
    partial = np.einsum("cgk,gk->cg", codes3, hg, dtype=np.float32)
    return np.einsum("cg,cg->c", partial, qc.scales.reshape(qc.c, gpr))


def quant_logit_error_bound(qc: QuantizedCentroids, h: np.ndarray) -> np.ndarray:
    """Analytic per-row bound sum_g (scale_g / 2) * l1norm(h_g), float64."""
    gpr = qc.d // qc.group_size
    l1 = np.abs(h.astype(np.float64)).reshape(gpr, qc.group_size).sum(axis=1)
    return (qc.scales.reshape(qc.c, gpr).astype(np.float64) * 0.5 * l1).sum(axis=1)
