"""Few-sample named entity recognition for security vulnerability reports.

Pipeline pieces: deterministic few-sample data construction (`sampling`),
encoder fine-tuning and transfer learning with weighted-F1 checkpoint
selection (`tagger`), nearest-neighbor + Viterbi tagging (`structshot`),
entity metrics (`evaluation`), and the experiment harness plus CLI
(`harness`, `cli`). The corpus model and CoNLL I/O live in `corpus`.
"""

__version__ = "0.1.0"

from .corpus import (
    CATEGORIES,
    TRANSFER_CATEGORIES,
    Corpus,
    CorpusStats,
    Tag,
    TaggedSentence,
    compute_statistics,
    extract_spans,
    load_viem_dataset,
    parse_conll,
    serialize_conll,
)
from .evaluation import EvalReport, average_reports, span_prf, token_prf
from .sampling import (
    FewSampleSplit,
    SamplingSpec,
    build_aggregate,
    build_fewsample_validation,
    carve_validation,
    sample_count,
    sample_proportion,
)
from .structshot import (
    EmissionTable,
    SupportSet,
    TransitionModel,
    build_support_set,
    compute_emissions,
    estimate_transitions,
    nn_tag,
    structshot_tag,
    viterbi_decode,
)
from .tagger import (
    Checkpoint,
    EncoderHandle,
    TaggerModel,
    TrainingConfig,
    align_labels,
    extract_token_embeddings,
    fine_tune,
    grid_search,
    predict,
    transfer,
    weighted_f1,
)

__all__ = [
    "CATEGORIES",
    "TRANSFER_CATEGORIES",
    "Corpus",
    "CorpusStats",
    "Tag",
    "TaggedSentence",
    "compute_statistics",
    "extract_spans",
    "load_viem_dataset",
    "parse_conll",
    "serialize_conll",
    "EvalReport",
    "average_reports",
    "span_prf",
    "token_prf",
    "FewSampleSplit",
    "SamplingSpec",
    "build_aggregate",
    "build_fewsample_validation",
    "carve_validation",
    "sample_count",
    "sample_proportion",
    "EmissionTable",
    "SupportSet",
    "TransitionModel",
    "build_support_set",
    "compute_emissions",
    "estimate_transitions",
    "nn_tag",
    "structshot_tag",
    "viterbi_decode",
    "Checkpoint",
    "EncoderHandle",
    "TaggerModel",
    "TrainingConfig",
    "align_labels",
    "extract_token_embeddings",
    "fine_tune",
    "grid_search",
    "predict",
    "transfer",
    "weighted_f1",
]
