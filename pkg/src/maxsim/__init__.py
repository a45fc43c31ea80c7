"""Materialization-free MaxSim scoring for late-interaction retrieval.

Exact tiled forward with an online row-max, exact training backward via a
runtime inverse CSR of the saved argmax, plus INT8, variable-length,
out-of-core and Chamfer-distance variants, all instrumented with byte
traffic and scratch-allocation counters and verified against a dense
brute-force reference.
"""

from .errors import (
    BadMagic,
    BadTileConfig,
    DimMismatch,
    EmptyDocument,
    IndexOutOfRange,
    IoError,
    KTooLarge,
    MaxSimError,
    NaNInput,
    ShapeMismatch,
    StaleArgmin,
    StaleCsr,
    TruncatedPayload,
    VersionUnsupported,
)
from .instrument import TrafficReport
from .types import ArgmaxMap, DEFAULT_TILE, DocBatch, EmbeddingMatrix, ScoreMatrix, TileConfig, validate_pair
from .reference import DenseSimTensor, dense_backward, dense_score, dense_score_batch, finite_diff_grad
from .forward import (
    ForwardStrategy,
    RunningRowState,
    dispatch,
    fused_score_batch,
    fused_score_pair,
    query_chunk_decompose,
)
from .backward import (
    CsrInverse,
    backward_dispatch,
    build_inverse_csr,
    choose_gradient_path,
    grad_docs_csr,
    grad_docs_scatter,
    grad_query,
)
from .quant import QuantizedMatrix, dequantize, fused_score_int8, quantize_per_token, two_stage_topk
from .varlen import PackedCorpus, fused_score_varlen, pack, unpack
from .streamio import (
    CorpusReader,
    TopKHeap,
    TrafficModel,
    model_traffic,
    read_embeddings,
    stream_score_topk,
    write_embeddings,
)
from .chamfer import PointSet, chamfer_backward, chamfer_forward, dense_chamfer_backward, dense_chamfer_forward

__version__ = "0.1.0"
