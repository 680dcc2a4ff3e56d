"""Rank reduction for small recurrent networks and analysis of the
short-term-memory cost of compressing their recurrent weights."""

from .cells import (
    DenseLayer,
    Embedding,
    MgruLayer,
    RnnLayer,
    forward_sequence,
    mgru_step,
    rnn_step,
)
from .compression import (
    CompressedModel,
    CompressionPlan,
    FactoredLinear,
    compress_matrix,
    compress_model,
    compression_delta,
    compression_report,
    factored_apply,
    forward_factored,
    model_factors,
)
from .linalg import (
    ConvergenceError,
    SpectralRadius,
    SvdFactors,
    rms_diff,
    singular_value_max,
    spectral_radius,
    svd,
    truncate,
)
from .network import (
    Batch,
    SequenceModel,
    forward,
    init_model,
    loss_and_gradients,
    mean_pool,
    perplexity,
    softmax_cross_entropy,
)
from .perturbation import (
    BetaCurve,
    beta,
    exact_linear_error,
    linearity_fit,
    measure_error,
    predict_error,
)
from .sweep import (
    IsolineSpec,
    SweepGrid,
    extract_isoline,
    geometric_ranks,
    grid_to_db,
    perplexity_db,
    rank_sweep,
    temporal_sweep,
)
from .tasks import (
    IngestionError,
    MemorizationSample,
    Vocab,
    build_vocab,
    gen_memorization,
    gen_memorization_batch,
    lm_batches,
    load_mnist,
    scanline_sequence,
    synthetic_corpus,
    tokenize,
)
from .training import AdamState, TrainingConfig, adam_update, dropout_mask, init_adam

__version__ = "0.1.0"
