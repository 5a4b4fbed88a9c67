"""FlashHead: a training-free two-stage retrieval replacement for the dense
vocabulary head of a language model."""

from .clustering import (
    PAD_TOKEN,
    ClusteredIndex,
    ClusterOptions,
    IndexMeta,
    balance_assignment,
    build_index,
    clustering_objective,
    normalize_rows,
    spherical_kmeans,
)
from .errors import (
    AllZero,
    BadMagic,
    DimMismatch,
    FlashHeadError,
    InvalidConfig,
    InvalidGroup,
    InvalidOptions,
    IoFailure,
    NonFiniteValue,
    TooManySubsets,
    TruncatedPayload,
    ZeroNormRow,
    ZeroProbability,
)
from .evalbench import (
    ContainmentReport,
    LatencyReport,
    SeedRobustnessReport,
    ablation_balance,
    bench_tpot_head,
    containment,
    dense_head_oracle,
    seed_robustness,
    synthetic_embeddings,
    synthetic_queries,
)
from .head import (
    CandidateSet,
    CostModel,
    DecodeConfig,
    ProbeSelection,
    centroid_logits,
    cost_model,
    decode,
    decode_batch,
    gather_candidates,
    pack_blocks,
    select_probes_greedy,
    select_probes_sampled,
)
from .mc import (
    MarginalEstimate,
    clip_zeros,
    exact_marginal,
    log_likelihood,
    mc_marginal,
    subset_probability,
)
from .quant import (
    QuantizedCentroids,
    centroid_logits_quant,
    dequantize,
    quant_logit_error_bound,
    quantize_centroids,
)
from .tensor_io import (
    load_embeddings,
    load_hidden,
    load_index,
    load_matrix,
    save_embeddings,
    save_hidden,
    save_index,
    save_matrix,
)
from .tensor_types import EmbeddingMatrix, HiddenBatch

__version__ = "0.1.0"
