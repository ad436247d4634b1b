"""Dependency-relation-embedded GCN for joint aspect/opinion extraction and
aspect-level sentiment tagging, built on a from-scratch autodiff kernel."""

from .autodiff import Tape, Tensor, backward, finite_diff_gradcheck
from .corpus import (
    DepGraph,
    EmbeddingMatrix,
    RelationVocab,
    Sentence,
    build_dependency_graph,
    corpus_stats,
    load_embedding_table,
    parse_corpus_file,
    split_train_dev,
)
from .encoder import EncoderConfig
from .evaluation import MetricReport, Span, TermPolarityPair, decode_spans, extract_pairs
from .heads import MessagePassingConfig
from .model import Model, ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, joint_loss, multi_run, train

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "finite_diff_gradcheck",
    "DepGraph",
    "EmbeddingMatrix",
    "RelationVocab",
    "Sentence",
    "build_dependency_graph",
    "corpus_stats",
    "load_embedding_table",
    "parse_corpus_file",
    "split_train_dev",
    "EncoderConfig",
    "MetricReport",
    "Span",
    "TermPolarityPair",
    "decode_spans",
    "extract_pairs",
    "MessagePassingConfig",
    "Model",
    "ModelConfig",
    "load_checkpoint",
    "save_checkpoint",
    "TrainConfig",
    "joint_loss",
    "multi_run",
    "train",
]

__version__ = "0.1.0"
