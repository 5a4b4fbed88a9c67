"""In-memory tensor containers with their validation rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, NonFiniteValue


def _check_finite_2d(arr: np.ndarray, what: str) -> None:
    if arr.ndim != 2:
        raise DimMismatch(f"{what} must be rank 2, got rank {arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimMismatch(f"{what} dims must be positive, got {arr.shape}")
    finite_rows = np.isfinite(arr).all(axis=1)
    if not finite_rows.all():
        raise NonFiniteValue(int(np.nonzero(~finite_rows)[0][0]))


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Output-embedding matrix: one float32 row per token."""

    v: int
    d: int
    data: np.ndarray

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "EmbeddingMatrix":
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        _check_finite_2d(arr, "embedding matrix")
        return cls(v=arr.shape[0], d=arr.shape[1], data=arr)

    def row(self, i: int) -> np.ndarray:
        return self.data[i]


@dataclass(frozen=True)
class HiddenBatch:
    """A batch of hidden-state query vectors, optionally with cached oracle
    top-k token ids (n x k) for evaluation reuse."""

    n: int
    d: int
    vectors: np.ndarray
    oracle_topk: np.ndarray | None = None

    @classmethod
    def from_array(cls, arr: np.ndarray,
                   oracle_topk: np.ndarray | None = None) -> "HiddenBatch":
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        _check_finite_2d(arr, "hidden batch")
        return cls(n=arr.shape[0], d=arr.shape[1], vectors=arr, oracle_topk=oracle_topk)
