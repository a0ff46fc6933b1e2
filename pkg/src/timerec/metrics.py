"""Top-k ranking metrics and the popularity / similarity baselines.

Ties are always broken by ascending item id so that every ranking, and
therefore every reported metric, is deterministic and independent of
evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .data import SequenceSample, Session


def rank_items(scores: np.ndarray, k: int) -> list[int]:
    """Top-k item ids by descending score, ties broken by ascending id."""
    n = len(scores)
    if k > n:
        raise ValueError(f"k={k} exceeds item count {n}")
    order = np.lexsort((np.arange(n), -scores))
    return [int(i) for i in order[:k]]


def target_rank(scores: np.ndarray, target: int) -> int:
    """1-based rank of the target under the descending-score, id-tiebreak order."""
    s = scores[target]
    greater = int(np.sum(scores > s))
    tied_before = int(np.sum((scores == s) & (np.arange(len(scores)) < target)))
    return 1 + greater + tied_before


def recall_at_k(ranks: Iterable[int | None], k: int) -> float:
    ranks = list(ranks)
    if not ranks:
        raise ValueError("no ranks to aggregate")
    hits = sum(1 for r in ranks if r is not None and r <= k)
    return hits / len(ranks)


def mrr_at_k(ranks: Iterable[int | None], k: int) -> float:
    ranks = list(ranks)
    if not ranks:
        raise ValueError("no ranks to aggregate")
    total = 0.0
    for r in ranks:
        if r is not None and r <= k:
            total += 1.0 / r
    return total / len(ranks)


@dataclass
class MetricsReport:
    model: str
    dataset: str
    k: int
    recall: float
    mrr: float
    n_samples: int

    def __post_init__(self):
        assert 0.0 <= self.mrr <= self.recall <= 1.0, \
            f"metric invariant violated: mrr={self.mrr} recall={self.recall}"

    def row(self) -> str:
        return (f"{self.model}\t{self.dataset}\t{self.k}\t"
                f"{self.recall:.6f}\t{self.mrr:.6f}\t{self.n_samples}")


REPORT_HEADER = "model\tdataset\tk\trecall\tmrr\tn_samples"


def format_report(reports: list[MetricsReport]) -> str:
    lines = [REPORT_HEADER]
    lines.extend(r.row() for r in reports)
    return "\n".join(lines) + "\n"


def format_summary(reports: list[MetricsReport]) -> str:
    lines = []
    for r in reports:
        lines.append(f"{r.model:>10s} on {r.dataset}: Recall@{r.k} = {100 * r.recall:.2f}  "
                     f"MRR@{r.k} = {100 * r.mrr:.2f}  ({r.n_samples} samples)")
    return "\n".join(lines) + "\n"


def evaluate_scorer(score_fn: Callable[[SequenceSample], np.ndarray],
                    samples: list[SequenceSample], k: int,
                    model: str, dataset: str) -> MetricsReport:
    """Rank every sample's target under `score_fn` and aggregate the metrics."""
    ranks = []
    for s in samples:
        scores = score_fn(s)
        ranks.append(target_rank(scores, s.target))
    return MetricsReport(model=model, dataset=dataset, k=k,
                         recall=recall_at_k(ranks, k), mrr=mrr_at_k(ranks, k),
                         n_samples=len(samples))


# ---------------------------------------------------------------------------
# baselines


class PopScorer:
    """Global train popularity; identical scores for every session."""

    def __init__(self, train_sessions: list[Session], n_items: int):
        counts = np.zeros(n_items, dtype=np.float64)
        for s in train_sessions:
            for e in s.events:
                counts[e.item_id] += 1
        self._scores = counts

    def score(self, sample: SequenceSample) -> np.ndarray:
        return self._scores


class SessionPopScorer:
    """In-session frequency first, global popularity as the secondary key.

    Realized as a single score: in_session_count * C + global_count, with C
    strictly larger than any global count so the keys never interleave.
    """

    def __init__(self, train_sessions: list[Session], n_items: int):
        counts = np.zeros(n_items, dtype=np.float64)
        for s in train_sessions:
            for e in s.events:
                counts[e.item_id] += 1
        self._global = counts
        self._big = counts.max() + 1.0

    def score(self, sample: SequenceSample) -> np.ndarray:
        scores = self._global.copy()
        for item in sample.prefix:
            scores[item] += self._big
        return scores


class ItemKnnScorer:
    """Cosine similarity over binary item-in-session incidence vectors.

    score(j) = sum over session items i != j of cos(i, j), where cos uses
    the number of train sessions containing both items over the geometric
    mean of their session supports.
    """

    def __init__(self, train_sessions: list[Session], n_items: int,
                 counts_based: bool = False):
        self.n_items = n_items
        support = np.zeros(n_items, dtype=np.float64)
        co: dict[tuple[int, int], float] = {}
        for s in train_sessions:
            if counts_based:
                weights: dict[int, float] = {}
                for e in s.events:
                    weights[e.item_id] = weights.get(e.item_id, 0.0) + 1.0
            else:
                weights = {e.item_id: 1.0 for e in s.events}
            items = sorted(weights)
            for i in items:
                support[i] += weights[i] * weights[i]
            for a_pos, i in enumerate(items):
                for j in items[a_pos + 1:]:
                    co[(i, j)] = co.get((i, j), 0.0) + weights[i] * weights[j]
        self._support = support
        self._neighbors: dict[int, list[tuple[int, float]]] = {}
        for (i, j), c in co.items():
            self._neighbors.setdefault(i, []).append((j, c))
            self._neighbors.setdefault(j, []).append((i, c))

    def similarity(self, i: int, j: int) -> float:
        si, sj = self._support[i], self._support[j]
        if si == 0.0 or sj == 0.0:
            return 0.0
        if i == j:
            return 1.0
        key = (i, j) if i < j else (j, i)
        co = 0.0
        for other, c in self._neighbors.get(key[0], []):
            if other == key[1]:
                co = c
                break
        return co / np.sqrt(si * sj)

    def score(self, sample: SequenceSample) -> np.ndarray:
        scores = np.zeros(self.n_items, dtype=np.float64)
        for i in sorted(set(sample.prefix)):
            si = self._support[i]
            if si == 0.0:
                continue
            for j, c in self._neighbors.get(i, []):
                if j == i:
                    continue
                scores[j] += c / np.sqrt(si * self._support[j])
        return scores
