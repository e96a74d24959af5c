"""Caption-alignment scoring and top-k pruning for noisy image-text corpora.

Pipeline: generate r captions per image, mask medium phrases from captions
and alt-text, embed both in a sentence space, score each pair by the maximum
caption-to-alt-text cosine, optionally fuse with a precomputed CLIPScore
after per-corpus min-max normalization, and keep the top-k fraction.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .backends import (
    Backend,
    BackendInfo,
    CaptionRequest,
    FileBackend,
    MockBackend,
    ServiceBackend,
    check_backend,
    hash64,
)
from .config import PipelineConfig, parse_memory, validate_config, with_overrides
from .corpus_io import (
    EmbeddingShard,
    SampleRecord,
    ScoreRow,
    SelectionManifest,
    join_scores,
    read_embedding_shard,
    read_manifest,
    read_scores,
    read_selection,
    selection_size,
    write_embedding_shard,
    write_manifest,
    write_scores,
    write_selection,
)
from .errors import (
    BackendError,
    ConfigError,
    ConflictError,
    DataError,
    DomainError,
    DuplicateUidError,
    IoError,
    NotFoundError,
    OrderError,
    ParseError,
    ProtocolError,
    ResourceError,
    ShardFormatError,
    SieveError,
    TransportError,
)
from .pipeline import (
    caption_cosine_stream,
    fuse_rows,
    make_backend,
    run_pipeline,
    sieve_score_stream,
)
from .pruning import (
    coverage_filter,
    external_topk,
    intersect_selections,
    rank_and_select,
    selection_iou,
)
from .scoring import (
    FusionWeights,
    NormalizationStats,
    clip_score_passthrough,
    compute_stats,
    cosine,
    fuse_scores,
    min_max_normalize,
    normalize_value,
    sieve_score,
)
from .synth import (
    LabeledCorpus,
    SynthSpec,
    detection_metrics,
    generate_synthetic_corpus,
    k_sweep,
    load_corpus,
    save_corpus,
    similarity_matrix,
)
from .textnorm import (
    PhraseList,
    default_phrase_list,
    load_phrase_list,
    mask_medium_phrases,
    normalize_whitespace,
)
