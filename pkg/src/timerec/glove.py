"""Item embedding pretraining from temporally coherent sub-sessions.

Sessions are cut wherever the gap between consecutive clicks exceeds a
threshold theta, item pairs are counted inside the resulting sub-sessions
with 1/distance weighting, and embeddings are fit to the log co-occurrence
counts with per-coordinate adaptive-gradient updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Session
from .nn import DivergenceError

X_MAX = 100.0
ALPHA = 0.75
INITIAL_LEARNING_RATE = 0.05


def average_interval(sessions: list[Session]) -> float:
    """Arithmetic mean of all adjacent-click gaps across the corpus."""
    total = 0
    count = 0
    for s in sessions:
        events = s.events
        for j in range(len(events) - 1):
            total += events[j + 1].timestamp - events[j].timestamp
            count += 1
    if count == 0:
        raise ValueError("no adjacent-event intervals in the corpus")
    return total / count


def split_subsessions(session: Session, theta: float) -> list[list]:
    """Cut the session after every gap strictly greater than theta.

    Concatenating the pieces reproduces the session's item order exactly;
    singleton pieces are kept (they just contribute no co-occurrence).
    """
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    events = session.events
    pieces = []
    current = [events[0].item_id]
    for j in range(1, len(events)):
        gap = events[j].timestamp - events[j - 1].timestamp
        if gap > theta:
            pieces.append(current)
            current = []
        current.append(events[j].item_id)
    pieces.append(current)
    return pieces


def max_session_length(sessions: list[Session]) -> int:
    return max(len(s.events) for s in sessions)


class CooccurrenceMatrix:
    """Sparse symmetric pair weights keyed by (min(i,j), max(i,j))."""

    def __init__(self):
        self._entries: dict[tuple[int, int], float] = {}

    def add(self, i: int, j: int, weight: float) -> None:
        if i == j:
            raise ValueError("diagonal co-occurrence entries are not allowed")
        key = (i, j) if i < j else (j, i)
        self._entries[key] = self._entries.get(key, 0.0) + weight

    def weight(self, i: int, j: int) -> float:
        key = (i, j) if i < j else (j, i)
        return self._entries.get(key, 0.0)

    def items(self):
        return self._entries.items()

    def __len__(self) -> int:
        return len(self._entries)


def build_cooccurrence(subsessions: list[list], window: int,
                       weighting: str = "inverse_distance") -> CooccurrenceMatrix:
    """Count item pairs within `window` positions of each other.

    A pair at distance t contributes 1/t (or 1 with uniform weighting) to
    its symmetric entry.  Self-pairs are skipped.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if weighting not in ("inverse_distance", "uniform"):
        raise ValueError(f"unknown co-occurrence weighting: {weighting}")
    matrix = CooccurrenceMatrix()
    for items in subsessions:
        n = len(items)
        for i in range(n):
            for t in range(1, min(window, n - 1 - i) + 1):
                j = i + t
                if items[i] == items[j]:
                    continue
                w = 1.0 / t if weighting == "inverse_distance" else 1.0
                matrix.add(items[i], items[j], w)
    return matrix


@dataclass
class GloveState:
    w: np.ndarray
    w_tilde: np.ndarray
    b: np.ndarray
    b_tilde: np.ndarray

    def vectors(self) -> np.ndarray:
        return self.w + self.w_tilde


def train_glove(matrix: CooccurrenceMatrix, n_items: int, dim: int = 180,
                epochs: int = 100, seed: int = 0,
                learning_rate: float = INITIAL_LEARNING_RATE,
                x_max: float = X_MAX, alpha: float = ALPHA,
                return_state: bool = False):
    """Fit embeddings so that w_i . w~_j + b_i + b~_j tracks ln X_ij.

    Minimizes sum over observed entries of f(X) * (fit - ln X)^2 with
    f(x) = (x / x_max)^alpha capped at 1.  Updates are per-entry adaptive
    gradient steps over both orientations of each symmetric entry, in a
    seeded shuffled order, so runs are deterministic given the seed.
    Returns the n_items x dim table w + w~ (and the full state on request).
    """
    if len(matrix) == 0:
        raise ValueError("co-occurrence matrix is empty")
    rng = np.random.default_rng(seed)
    span = 0.5 / dim
    state = GloveState(
        w=rng.uniform(-span, span, size=(n_items, dim)),
        w_tilde=rng.uniform(-span, span, size=(n_items, dim)),
        b=rng.uniform(-span, span, size=n_items),
        b_tilde=rng.uniform(-span, span, size=n_items),
    )
    grad_sq_w = np.ones((n_items, dim))
    grad_sq_wt = np.ones((n_items, dim))
    grad_sq_b = np.ones(n_items)
    grad_sq_bt = np.ones(n_items)

    pairs = []
    for (i, j), x in sorted(matrix.items()):
        pairs.append((i, j, x))
        pairs.append((j, i, x))
    pairs = np.array(pairs, dtype=np.float64)
    log_x = np.log(pairs[:, 2])
    f_weight = np.minimum(1.0, (pairs[:, 2] / x_max) ** alpha)
    row_idx = pairs[:, 0].astype(np.int64)
    col_idx = pairs[:, 1].astype(np.int64)

    n_entries = pairs.shape[0]
    epoch_losses = []
    for _ in range(epochs):
        epoch_loss = 0.0
        for e in rng.permutation(n_entries):
            i, j = row_idx[e], col_idx[e]
            wi, wj = state.w[i], state.w_tilde[j]
            diff = wi @ wj + state.b[i] + state.b_tilde[j] - log_x[e]
            fw = f_weight[e]
            epoch_loss += fw * diff * diff
            scale = 2.0 * fw * diff
            gw = scale * wj
            gwt = scale * wi
            state.w[i] -= learning_rate * gw / np.sqrt(grad_sq_w[i])
            state.w_tilde[j] -= learning_rate * gwt / np.sqrt(grad_sq_wt[j])
            grad_sq_w[i] += gw * gw
            grad_sq_wt[j] += gwt * gwt
            state.b[i] -= learning_rate * scale / np.sqrt(grad_sq_b[i])
            state.b_tilde[j] -= learning_rate * scale / np.sqrt(grad_sq_bt[j])
            grad_sq_b[i] += scale * scale
            grad_sq_bt[j] += scale * scale
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"pretraining loss diverged: {epoch_loss}")
        epoch_losses.append(epoch_loss)

    table = state.vectors()
    if return_state:
        return table, state, epoch_losses
    return table


def pretraining_loss(matrix: CooccurrenceMatrix, state: GloveState,
                     x_max: float = X_MAX, alpha: float = ALPHA) -> float:
    """Objective value over both orientations of every observed entry."""
    total = 0.0
    for (i, j), x in sorted(matrix.items()):
        fw = min(1.0, (x / x_max) ** alpha)
        for a, b in ((i, j), (j, i)):
            diff = state.w[a] @ state.w_tilde[b] + state.b[a] + state.b_tilde[b] - np.log(x)
            total += fw * diff * diff
    return float(total)
