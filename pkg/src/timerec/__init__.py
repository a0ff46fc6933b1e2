"""Session-based, time-aware next-item recommendation."""

__version__ = "0.1.0"

from .config import RunConfig, dataset_preset
from .data import (CorpusStats, Event, SequenceSample, Session, Vocabulary,
                   expand_corpus, expand_sequences, filter_corpus, parse_events,
                   split_chronological, split_validation)
from .glove import average_interval, build_cooccurrence, split_subsessions, train_glove
from .metrics import MetricsReport, mrr_at_k, rank_items, recall_at_k
from .model import Batch, ModelConfig, TimeAwareModel

__all__ = [
    "RunConfig", "dataset_preset",
    "CorpusStats", "Event", "SequenceSample", "Session", "Vocabulary",
    "expand_corpus", "expand_sequences", "filter_corpus", "parse_events",
    "split_chronological", "split_validation",
    "average_interval", "build_cooccurrence", "split_subsessions", "train_glove",
    "MetricsReport", "mrr_at_k", "rank_items", "recall_at_k",
    "Batch", "ModelConfig", "TimeAwareModel",
]
