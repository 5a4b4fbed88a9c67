import numpy as np
import pytest

from flashhead import ClusteredIndex, EmbeddingMatrix, HiddenBatch
from flashhead.clustering import IndexMeta


def f8_vectors() -> np.ndarray:
    """8 unit vectors at angles k*45deg in the plane."""
    angles = np.arange(8) * (np.pi / 4)
    return np.stack([np.cos(angles), np.sin(angles)], axis=1).astype(np.float32)


def make_index(centroids: np.ndarray, c2t: np.ndarray, balanced: bool = True,
               v: int | None = None, seed: int = 0) -> ClusteredIndex:
    """Hand-build an index around explicit centroids and cluster membership."""
    c, d = centroids.shape
    b = c2t.shape[1]
    if v is None:
        v = c * b
    meta = IndexMeta(seed=seed, iterations=1,
                     objective_trace=np.array([0.0], dtype=np.float64))
    idx = ClusteredIndex(c=c, b=b, d=d, v=v,
                         centroids=np.ascontiguousarray(centroids, dtype=np.float32),
                         c2t=np.ascontiguousarray(c2t, dtype=np.uint32),
                         balanced=balanced, meta=meta)
    idx.validate()
    return idx


@pytest.fixture
def f8_embeddings() -> EmbeddingMatrix:
    return EmbeddingMatrix.from_array(f8_vectors())


@pytest.fixture
def f8_index() -> ClusteredIndex:
    """The optimal F8 partition: adjacent pairs, centroids on the bisectors."""
    X = f8_vectors()
    cents = np.empty((4, 2), dtype=np.float32)
    for k in range(4):
        s = X[2 * k] + X[2 * k + 1]
        cents[k] = s / np.linalg.norm(s)
    c2t = np.arange(8, dtype=np.uint32).reshape(4, 2)
    return make_index(cents, c2t)


def random_instance(v: int, d: int, c: int, seed: int = 0, iters: int = 30,
                    init: str = "kmeans++"):
    """Synthetic embeddings plus a balanced index over them."""
    from flashhead import ClusterOptions, build_index, synthetic_embeddings

    E = synthetic_embeddings(v, d, seed=seed)
    idx = build_index(E, ClusterOptions(c=c, seed=seed, max_iterations=iters, init=init))
    return E, idx


@pytest.fixture(scope="session")
def v12_instance():
    """Tiny fixture for marginal-estimator oracles: v=12, c=4, b=3."""
    return random_instance(12, 8, 4, seed=5, iters=50)


@pytest.fixture(scope="session")
def queries16() -> HiddenBatch:
    rng = np.random.default_rng(11)
    return HiddenBatch.from_array(rng.standard_normal((16, 8), dtype=np.float32))


# ---- paper-shape session fixtures (built lazily; used by the acceptance
# suite and the overhead-regime check) ----

PAPER_V, PAPER_D, PAPER_C, PAPER_P = 128256, 2048, 8016, 512


@pytest.fixture(scope="session")
def paper_embeddings() -> EmbeddingMatrix:
    from flashhead import synthetic_embeddings

    return synthetic_embeddings(PAPER_V, PAPER_D, seed=2024)


@pytest.fixture(scope="session")
def paper_index(paper_embeddings):
    from flashhead import ClusterOptions, build_index

    # latency/drift gates need a structurally valid index, not a converged one
    idx = build_index(paper_embeddings,
                      ClusterOptions(c=PAPER_C, seed=7, max_iterations=2, init="random"))
    idx.validate()
    return idx


@pytest.fixture(scope="session")
def paper_packed(paper_index, paper_embeddings):
    from flashhead import pack_blocks

    return pack_blocks(paper_index, paper_embeddings)


@pytest.fixture(scope="session")
def paper_queries() -> HiddenBatch:
    rng = np.random.default_rng(99)
    return HiddenBatch.from_array(rng.standard_normal((64, PAPER_D), dtype=np.float32))
