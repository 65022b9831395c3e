"""Phone Mixup - phone-level mixup augmentation for word pronunciation scoring."""

from .core import (
    Lexicon,
    LexiconEntry,
    PhoneAlignment,
    PhoneId,
    PhoneInventory,
    PhonePoolSet,
    Provenance,
    Quadruplet,
    Segment,
    UtteranceRecord,
    WordSample,
    validate_utterance,
)
from .errors import DataValidationError, GopMixupError, NumericError
from .gop import GopVariant, PhoneClassMap, phone_gop, utterance_gops, word_gop
from .pool import build_pool, pool_stats, sample_quadruplet
from .mixup import GenerationManifest, generate_dataset, generate_word_sample, mix_pretrain_corpus
from .samples import corpus_word_samples, extract_word_samples, segment_words
from .scorer import ScorerConfig, ScorerModel, backward, forward, forward_batch, init_model, predict
from .trainer import TargetField, adam_step, mse_loss, train
from .evaluation import evaluate, pearson_pcc, scale_human_score
from .synth import SynthSpec, build_corpus, generate_corpus

__all__ = [
    # Domain types
    "Lexicon",
    "LexiconEntry",
    "PhoneAlignment",
    "PhoneId",
    "PhoneInventory",
    "PhonePoolSet",
    "Provenance",
    "Quadruplet",
    "Segment",
    "UtteranceRecord",
    "WordSample",
    "validate_utterance",
    # Errors
    "GopMixupError",
    "DataValidationError",
    "NumericError",
    # GOP and pools
    "GopVariant",
    "PhoneClassMap",
    "phone_gop",
    "word_gop",
    "utterance_gops",
    "build_pool",
    "pool_stats",
    "sample_quadruplet",
    # Mixup generation
    "GenerationManifest",
    "generate_word_sample",
    "generate_dataset",
    "mix_pretrain_corpus",
    "segment_words",
    "extract_word_samples",
    "corpus_word_samples",
    # Scorer and training
    "ScorerConfig",
    "ScorerModel",
    "init_model",
    "forward",
    "forward_batch",
    "backward",
    "predict",
    "TargetField",
    "mse_loss",
    "adam_step",
    "train",
    # Evaluation
    "scale_human_score",
    "pearson_pcc",
    "evaluate",
    # Synthetic data
    "SynthSpec",
    "build_corpus",
    "generate_corpus",
]
