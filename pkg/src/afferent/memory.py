"""Episodic memory: event-triggered capture, kNN retrieval, recall risk.

The store keeps a short rolling window of step records.  When a step's damage
increment or CAT crosses its trigger threshold, the window is summarized into
a normalized context key and a pending episode opens; the episode finalizes
once the next h damage increments have been summed (or at episode end with the
partial sum).  Retrieval is exact linear-scan kNN under cosine distance, and
recall risk is the inverse-distance-weighted mean of retrieved future-damage
values.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

__all__ = [
    "StepRecord",
    "Episode",
    "MemoryStore",
    "RecallResult",
    "encode_key",
    "maybe_capture",
    "retrieve",
    "recall_risk",
    "apply_memory_bias",
    "PRE_WINDOW",
    "POST_WINDOW",
    "HORIZON",
    "EPS_D",
    "KAPPA_CAT",
    "CAPACITY",
    "K_RET",
    "EPS_WEIGHT",
]

PRE_WINDOW = 8  # steps summarized into the context key
POST_WINDOW = 4  # trailing-context length of the capture protocol; no downstream consumer
HORIZON = 10  # damage-summation horizon h
# Trigger thresholds sized to the twin's damage scale: per-step increments top
# out near 3e-4 at moderate ages, and the combined CAT crosses 0.4 only in the
# damage-adjacent intensity range, so these fire rarely but regularly.
EPS_D = 2e-4
KAPPA_CAT = 0.4
CAPACITY = 512
K_RET = 5
EPS_WEIGHT = 1e-6


@dataclass(frozen=True)
class StepRecord:
    """Per-step tuple consumed by the capture logic."""

    x: np.ndarray
    activations: np.ndarray
    cat: float
    action: float
    delta_d: float
    t: int


@dataclass
class Episode:
    key: np.ndarray
    delta: float
    scenario: str
    t_event: int
    finalized: bool
    cat_hist: float  # pre-normalization mean CAT of the capture window


@dataclass
class _Pending:
    key: np.ndarray
    scenario: str
    t_event: int
    cat_hist: float
    delta_sum: float
    steps_left: int


@dataclass
class RecallResult:
    y_hat: float
    d_mean: float


class MemoryStore:
    """Capacity-bounded FIFO episode store owned by a single rollout worker."""

    def __init__(self, capacity: int = CAPACITY, scenario: str = "normal"):
        if capacity <= 0:
            raise ValidationError("capacity must be positive")
        self.capacity = int(capacity)
        self.scenario = scenario
        self.episodes: list[Episode] = []
        self.pending: list[_Pending] = []
        self.window: deque = deque(maxlen=PRE_WINDOW)

    def __len__(self) -> int:
        return len(self.episodes)

    def observe(self, x, activations, cat) -> None:
        """Push one step into the rolling context window without capture logic."""
        self.window.append((np.asarray(x, float), np.asarray(activations, float),
                            float(cat)))

    def insert(self, ep: Episode) -> None:
        self.episodes.append(ep)
        while len(self.episodes) > self.capacity:
            self.episodes.pop(0)

    def query(self, x, activations, cat, k_ret: int = K_RET) -> RecallResult:
        """Recall risk for the current context before it is recorded.

        The query key summarizes the last PRE_WINDOW−1 recorded steps plus the
        current (x, activations, cat) triple; with fewer than two points the
        result is the empty-memory (0, 0).
        """
        recent = list(self.window)[-(PRE_WINDOW - 1):]
        win = recent + [(np.asarray(x, float), np.asarray(activations, float), float(cat))]
        if len(win) < 2 or not self.episodes:
            return RecallResult(0.0, 0.0)
        key = encode_key(win, len(win))
        return recall_risk(retrieve(self, key, k_ret))

    def end_episode(self) -> None:
        """Finalize pendings with their partial sums and clear the window."""
        for p in self.pending:
            self.insert(
                Episode(
                    key=p.key, delta=p.delta_sum, scenario=p.scenario,
                    t_event=p.t_event, finalized=True, cat_hist=p.cat_hist,
                )
            )
        self.pending = []
        self.window.clear()


def encode_key(window, k: int) -> np.ndarray:
    """Summarize the last k steps of (x, activations, cat) into a unit key.

    Layout: [mean x (K), mean activations (M), mean CAT (1),
    endpoint finite-difference (x_last − x_first)/(k−1) (K)], then
    L2-normalized; an all-zero summary falls back to the first basis vector.
    """
    window = list(window)[-k:]
    if len(window) < 2:
        raise ValidationError("key window needs at least 2 steps")
    xs = np.stack([np.asarray(w[0], float) for w in window])
    acts = np.stack([np.asarray(w[1], float) for w in window])
    cats = np.array([float(w[2]) for w in window])
    xdot = (xs[-1] - xs[0]) / (len(window) - 1)
    raw = np.concatenate([xs.mean(axis=0), acts.mean(axis=0), [cats.mean()], xdot])
    norm = float(np.linalg.norm(raw))
    if norm < 1e-12:
        key = np.zeros(raw.shape)
        key[0] = 1.0
        return key
    return raw / norm


def maybe_capture(
    store: MemoryStore,
    record: StepRecord,
    eps_d: float = EPS_D,
    kappa_cat: float = KAPPA_CAT,
) -> bool:
    """Record one step, advance pending horizons, and open a capture on trigger.

    The current step's damage increment counts toward every open horizon,
    including one opened at this step (the event step is term j=0 of the sum).
    Returns whether a new capture was opened.
    """
    store.observe(record.x, record.activations, record.cat)
    still_open = []
    for p in store.pending:
        p.delta_sum += record.delta_d
        p.steps_left -= 1
        if p.steps_left <= 0:
            store.insert(
                Episode(
                    key=p.key, delta=p.delta_sum, scenario=p.scenario,
                    t_event=p.t_event, finalized=True, cat_hist=p.cat_hist,
                )
            )
        else:
            still_open.append(p)
    store.pending = still_open

    triggered = record.delta_d > eps_d or record.cat > kappa_cat
    if not triggered or len(store.window) < 2:
        return False
    win = list(store.window)
    key = encode_key(win, len(win))
    cat_hist = float(np.mean([w[2] for w in win]))
    store.pending.append(
        _Pending(
            key=key, scenario=store.scenario, t_event=record.t,
            cat_hist=cat_hist, delta_sum=record.delta_d, steps_left=HORIZON - 1,
        )
    )
    return True


def retrieve(store: MemoryStore, key: np.ndarray, k_ret: int = K_RET):
    """The k_ret finalized episodes nearest in cosine distance, ties by age."""
    key = np.asarray(key, dtype=float)
    if not store.episodes:
        return []
    keys = np.stack([ep.key for ep in store.episodes])
    dist = 1.0 - keys @ key
    order = np.argsort(dist, kind="stable")[: min(k_ret, len(store.episodes))]
    return [(store.episodes[i], float(dist[i])) for i in order]


def recall_risk(retrieved) -> RecallResult:
    """Inverse-distance-weighted mean of retrieved future-damage values."""
    if not retrieved:
        return RecallResult(0.0, 0.0)
    d = np.array([dist for _, dist in retrieved], dtype=float)
    if np.any(d < 0):
        raise ValidationError("negative retrieval distance")
    deltas = np.array([ep.delta for ep, _ in retrieved], dtype=float)
    w = 1.0 / (d + EPS_WEIGHT)
    w = w / w.sum()
    return RecallResult(float(w @ deltas), float(d.mean()))


def apply_memory_bias(cat_mech: float, store: MemoryStore, scenario: str) -> float:
    """Blend 70% mechanical CAT with 30% historical mean CAT for the scenario.

    Requires at least 3 finalized episodes tagged with the scenario; otherwise
    the mechanical CAT passes through unchanged.
    """
    hist = [ep.cat_hist for ep in store.episodes if ep.finalized and ep.scenario == scenario]
    if len(hist) < 3:
        return cat_mech
    return 0.7 * cat_mech + 0.3 * float(np.mean(hist))
