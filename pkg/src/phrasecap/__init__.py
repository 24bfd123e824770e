"""Phrase-first hierarchical caption engine.

Pipeline: dependency-triplet chunking into abbreviated-sentence/noun-phrase
pairs, two-stage LSTM training with hand-derived backpropagation, two-step
beam-search generation, and n-gram evaluation metrics.
"""

__version__ = "0.1.0"

from .corpus import TruncationPolicy, Vocabulary, build_vocab, normalize
from .inference import InferenceConfig, filter_nps, generate_caption, generate_nps
from .metrics import EvalReport, bleu, caption_stats, evaluate, rouge_l
from .model import LossConfig, PhiParams, total_cost
from .phrasing import AsNpPair, DependencyTriplet, RefinementContext, chunk, refine
from .training import TrainConfig, train_full, train_stage1, two_stage_pipeline

__all__ = [
    "AsNpPair",
    "DependencyTriplet",
    "EvalReport",
    "InferenceConfig",
    "LossConfig",
    "PhiParams",
    "RefinementContext",
    "TrainConfig",
    "TruncationPolicy",
    "Vocabulary",
    "bleu",
    "build_vocab",
    "caption_stats",
    "chunk",
    "evaluate",
    "filter_nps",
    "generate_caption",
    "generate_nps",
    "normalize",
    "refine",
    "rouge_l",
    "total_cost",
    "train_full",
    "train_stage1",
    "two_stage_pipeline",
]
