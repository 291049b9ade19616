"""Structured sentencing chains for opinion generation.

The package turns statutory provisions into explicit reasoning chains
(premise, situation, sentencing range), encodes a charge's chains with
multi-head attention plus a gated charge-specific transform, and conditions a
small autoregressive decoder on them to draft judgment opinions.  Screening
and text-overlap metrics close the loop on the generated drafts.
"""

from .chains import (
    ChainSet,
    LegalChain,
    Node,
    Predicate,
    SentencingRange,
    ValidationReport,
    build_extraction_prompt,
    chain_from_text,
    eval_condition,
    expr_from_json,
    expr_labels,
    expr_to_json,
    expr_to_text,
    load_chain_library,
    normalize_label,
    parse_chain_file,
    parse_extraction_response,
    parse_infix,
    serialize_chain_set,
    validate_chain_set,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .client import CompletionClient
from .corpus import (
    CaseRecord,
    CorpusSplit,
    load_jsonl,
    render_opinion,
    save_jsonl,
    split,
    synthesize_corpus,
)
from .encoder import (
    EmbeddingTable,
    EncodedChainSet,
    build_vocab,
    crime_transform,
    encode_chain,
    encode_chain_set,
    fuse,
)
from .errors import (
    CapacityError,
    ConfigurationError,
    ContractError,
    EvaluationError,
    ExtractionError,
    LexchainError,
    ParseError,
    ShapeError,
    UsageError,
    ValidationError,
)
from .metrics import (
    BleuResult,
    CaseScreening,
    bleu,
    build_pairwise_prompt,
    combined_score,
    evaluate_outputs,
    extract_sentence_months,
    mae_rmse,
    rouge,
    screen_corpus,
    screen_opinion,
)
from .model import (
    Model,
    ModelConfig,
    OpinionOutput,
    build_model,
    combine,
    decode_case,
    generate,
    joint_loss,
    mark_sentencing_span,
)
from .tensor import Tape, Tensor, backward, grad_check
from .tokenizer import detokenize, tokenize, tokenize_with_offsets
from .training import (
    AdamState,
    TrainConfig,
    TrainResult,
    adam_step,
    clip_gradients,
    evaluate_heldout,
    gradcheck_full_pipeline,
    run_ablation,
    train,
    training_vocab,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BleuResult",
    "CapacityError",
    "CaseRecord",
    "CaseScreening",
    "ChainSet",
    "CompletionClient",
    "ConfigurationError",
    "ContractError",
    "CorpusSplit",
    "EmbeddingTable",
    "EncodedChainSet",
    "EvaluationError",
    "ExtractionError",
    "LegalChain",
    "LexchainError",
    "Model",
    "ModelConfig",
    "Node",
    "OpinionOutput",
    "ParseError",
    "Predicate",
    "SentencingRange",
    "ShapeError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "UsageError",
    "ValidationError",
    "ValidationReport",
    "adam_step",
    "backward",
    "bleu",
    "build_extraction_prompt",
    "build_model",
    "build_vocab",
    "chain_from_text",
    "clip_gradients",
    "combine",
    "combined_score",
    "crime_transform",
    "decode_case",
    "detokenize",
    "encode_chain",
    "encode_chain_set",
    "eval_condition",
    "evaluate_heldout",
    "evaluate_outputs",
    "expr_from_json",
    "expr_labels",
    "expr_to_json",
    "expr_to_text",
    "extract_sentence_months",
    "fuse",
    "generate",
    "grad_check",
    "gradcheck_full_pipeline",
    "joint_loss",
    "load_chain_library",
    "load_checkpoint",
    "load_jsonl",
    "mae_rmse",
    "mark_sentencing_span",
    "normalize_label",
    "parse_chain_file",
    "parse_extraction_response",
    "parse_infix",
    "render_opinion",
    "rouge",
    "run_ablation",
    "save_checkpoint",
    "save_jsonl",
    "screen_corpus",
    "screen_opinion",
    "serialize_chain_set",
    "split",
    "synthesize_corpus",
    "tokenize",
    "tokenize_with_offsets",
    "train",
    "training_vocab",
    "validate_chain_set",
]
