"""Difficulty-sensitive neuron selection via the per-neuron gap statistic.

For a difficulty threshold, gap(n) is the mean activation of neuron n over
the low-difficulty group minus the mean over the high-difficulty group.
Neurons whose gap clears the margin at the easy threshold or at the hard
threshold form the selection; the union feeds the probe as its feature set.

Everything here is a pure function of (records, config): no RNG, no state,
and results are independent of record or neuron evaluation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .activation_store import ActivationRecord
from .errors import ConfigError, EmptyGroupError, EmptySelectionError


class Boundary(str, Enum):
    """Which side of the threshold the boundary label falls on."""

    LE_GT = "le_gt"  # low group d <= theta, high group d > theta
    LT_GE = "lt_ge"  # low group d < theta, high group d >= theta


class SelectionMode(str, Enum):
    SIGN = "sign"    # gap > margin, literal rule
    ABS = "abs"      # |gap| > margin
    TOP_K = "top_k"  # k largest |gap| per threshold


@dataclass(frozen=True)
class GapConfig:
    theta_easy: int = 1
    theta_hard: int = 5
    margin: float = 0.0
    selection_mode: SelectionMode = SelectionMode.SIGN
    top_k: int | None = None

    def __post_init__(self):
        if not (1 <= self.theta_easy < self.theta_hard <= 5):
            raise ConfigError(
                f"need 1 <= theta_easy < theta_hard <= 5, got ({self.theta_easy}, {self.theta_hard})"
            )
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if self.selection_mode == SelectionMode.TOP_K and (self.top_k is None or self.top_k < 1):
            raise ConfigError("top_k mode requires top_k >= 1")


@dataclass(frozen=True)
class DsnSelection:
    """Selected neuron indices with full per-neuron gap diagnostics."""

    easy_set: tuple[int, ...]
    hard_set: tuple[int, ...]
    union_set: tuple[int, ...]
    gaps_easy: np.ndarray
    gaps_hard: np.ndarray

    @property
    def size(self) -> int:
        return len(self.union_set)


def _difficulty_matrix(records: Sequence[ActivationRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Stack activations (float64) and difficulty labels; rejects unlabeled records."""
    if not records:
        raise EmptyGroupError("no records supplied")
    labels = np.empty(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        if rec.difficulty is None:
            raise EmptyGroupError(
                f"record '{rec.problem_id}' has no difficulty label; gap statistics need labels"
            )
        labels[i] = rec.difficulty
    matrix = np.stack([rec.activations for rec in records]).astype(np.float64)
    return matrix, labels


def group_mean_activation(
    records: Sequence[ActivationRecord],
    predicate: Callable[[int], bool],
) -> np.ndarray:
    """Per-neuron mean activation over records whose difficulty satisfies the predicate."""
    matrix, labels = _difficulty_matrix(records)
    mask = np.array([predicate(int(d)) for d in labels], dtype=bool)
    if not mask.any():
        raise EmptyGroupError("no record matches the difficulty predicate")
    return matrix[mask].mean(axis=0)


def gap_vector(
    records: Sequence[ActivationRecord],
    theta: int,
    boundary: Boundary = Boundary.LE_GT,
) -> np.ndarray:
    """Gap for every neuron: low-group mean minus high-group mean at the threshold."""
    matrix, labels = _difficulty_matrix(records)
    if boundary == Boundary.LE_GT:
        low = labels <= theta
    else:
        low = labels < theta
    high = ~low
    if not low.any():
        raise EmptyGroupError(f"low-difficulty group empty at threshold {theta} ({boundary.value})")
    if not high.any():
        raise EmptyGroupError(f"high-difficulty group empty at threshold {theta} ({boundary.value})")
    return matrix[low].mean(axis=0) - matrix[high].mean(axis=0)


def gap(
    records: Sequence[ActivationRecord],
    neuron: int,
    theta: int,
    boundary: Boundary = Boundary.LE_GT,
) -> float:
    """Gap statistic for a single neuron."""
    return float(gap_vector(records, theta, boundary)[neuron])


def _select(gaps: np.ndarray, config: GapConfig) -> np.ndarray:
    if config.selection_mode == SelectionMode.SIGN:
        return np.flatnonzero(gaps > config.margin)
    if config.selection_mode == SelectionMode.ABS:
        return np.flatnonzero(np.abs(gaps) > config.margin)
    # top_k: k largest |gap|, ties broken toward the lower index
    k = min(config.top_k, gaps.shape[0])
    order = np.lexsort((np.arange(gaps.shape[0]), -np.abs(gaps)))
    return np.sort(order[:k])


def identify_dsn(records: Sequence[ActivationRecord], config: GapConfig) -> DsnSelection:
    """Select difficulty-sensitive neurons at both thresholds and union them.

    The easy-threshold gap uses the (d <= theta) / (d > theta) split. At the
    hard threshold that split would leave the high group empty for
    theta_hard = 5, so the hard gap uses (d < theta) / (d >= theta), which
    still isolates the top difficulty level.
    """
    gaps_easy = gap_vector(records, config.theta_easy, Boundary.LE_GT)
    gaps_hard = gap_vector(records, config.theta_hard, Boundary.LT_GE)
    easy_idx = _select(gaps_easy, config)
    hard_idx = _select(gaps_hard, config)
    union = np.union1d(easy_idx, hard_idx)
    if union.size == 0:
        raise EmptySelectionError(
            "no neuron cleared the selection rule; the probe would have zero features "
            f"(mode={config.selection_mode.value}, margin={config.margin})"
        )
    return DsnSelection(
        easy_set=tuple(int(i) for i in easy_idx),
        hard_set=tuple(int(i) for i in hard_idx),
        union_set=tuple(int(i) for i in union),
        gaps_easy=gaps_easy,
        gaps_hard=gaps_hard,
    )


def save_selection(selection: DsnSelection, config: GapConfig, path: str | Path) -> None:
    """Persist a selection as JSON with the config echo and full gap arrays."""
    doc = {
        "easy_set": list(selection.easy_set),
        "hard_set": list(selection.hard_set),
        "union_set": list(selection.union_set),
        "gaps_easy": [float(g) for g in selection.gaps_easy],
        "gaps_hard": [float(g) for g in selection.gaps_hard],
        "config": {
            "theta_easy": config.theta_easy,
            "theta_hard": config.theta_hard,
            "margin": config.margin,
            "selection_mode": config.selection_mode.value,
            "top_k": config.top_k,
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_selection(path: str | Path) -> tuple[DsnSelection, GapConfig]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = doc["config"]
    config = GapConfig(
        theta_easy=cfg["theta_easy"],
        theta_hard=cfg["theta_hard"],
        margin=cfg["margin"],
        selection_mode=SelectionMode(cfg["selection_mode"]),
        top_k=cfg["top_k"],
    )
    selection = DsnSelection(
        easy_set=tuple(doc["easy_set"]),
        hard_set=tuple(doc["hard_set"]),
        union_set=tuple(doc["union_set"]),
        gaps_easy=np.asarray(doc["gaps_easy"], dtype=np.float64),
        gaps_hard=np.asarray(doc["gaps_hard"], dtype=np.float64),
    )
    return selection, config
