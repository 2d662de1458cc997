"""Detection metrics, top-k localization metrics, and the two study
protocols built on them (diagnostic bias, diagnosis quadrants).

Ranking metrics are reported x100; detection metrics as fractions. Positions
are ranked by score descending with ties broken toward the lower index, so
every metric is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .embedding import embed_batch
from .model import ModelParams, diagnose
from .parsing import EventSequence

DEFAULT_KS = (1, 3, 5)


@dataclass
class RankingCase:
    """One window as seen by the localizer: scores, truth, and verdicts."""

    scores: np.ndarray
    truth: np.ndarray
    detected: bool
    label: bool

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=bool)
        if self.scores.shape != self.truth.shape:
            raise ValueError("scores and truth must align")


@dataclass
class RankingReport:
    """Averaged metrics (x100) over the cases that carry ground truth."""

    values: dict[str, float]
    num_cases: int
    num_excluded: int


@dataclass
class QuadrantCounts:
    """Partition of ground-truth-anomalous windows by (detected, localized)."""

    dlf: int = 0
    df: int = 0
    lf: int = 0
    mf: int = 0

    @property
    def total(self) -> int:
        return self.dlf + self.df + self.lf + self.mf


@dataclass
class BiasReport:
    theoretical: dict[str, float]
    actual: dict[str, float]
    bias: dict[str, float]
    num_theoretical: int
    num_actual: int
    degenerate_actual: bool = field(default=False)


def detection_metrics(predictions: Sequence[bool], labels: Sequence[bool]) -> tuple[float, float, float]:
    """Binary precision/recall/F1 with the usual 0/0 conventions."""
    pred = np.asarray(predictions, dtype=bool)
    lab = np.asarray(labels, dtype=bool)
    if pred.shape != lab.shape:
        raise ValueError("predictions and labels must align")
    tp = int(np.sum(pred & lab))
    fp = int(np.sum(pred & ~lab))
    fn = int(np.sum(~pred & lab))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def rank_positions(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by score descending; ties keep the lower index first."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def _case_metrics(case: RankingCase, ks: Sequence[int]) -> dict[str, float]:
    order = rank_positions(case.scores)
    ranked_truth = case.truth[order]
    n_true = int(case.truth.sum())
    hits = np.flatnonzero(ranked_truth)  # 0-based hit ranks
    first_rank = int(hits[0]) + 1

    out = {"MRR": 1.0 / first_rank}
    cum = np.cumsum(ranked_truth)
    for k in ks:
        kk = min(k, len(ranked_truth))
        topk_hits = int(cum[kk - 1])
        out[f"HR@{k}"] = 1.0 if topk_hits else 0.0
        out[f"PR@{k}"] = topk_hits / min(k, n_true)
        in_k = hits[hits < kk]
        if in_k.size:
            precisions = cum[in_k] / (in_k + 1)
            out[f"MAP@{k}"] = float(precisions.mean())
        else:
            out[f"MAP@{k}"] = 0.0
    return out


def ranking_metrics(cases: Sequence[RankingCase], ks: Sequence[int] = DEFAULT_KS) -> RankingReport:
    """Average HR@k / PR@k / MAP@k / MRR over cases, reported x100.

    HR@k is 1 when any true root cause lands in the top k. PR@k divides the
    top-k hit count by min(k, #true). MAP@k averages precision at each hit
    rank within the top k. MRR is the reciprocal rank of the first true line.
    Cases without any true position are excluded and counted.
    """
    keys = ["MRR"] + [f"{m}@{k}" for k in ks for m in ("HR", "PR", "MAP")]
    usable = [c for c in cases if c.truth.any()]
    excluded = len(cases) - len(usable)
    if not usable:
        return RankingReport(values={k: 0.0 for k in keys},
                             num_cases=0, num_excluded=excluded)
    sums = {k: 0.0 for k in keys}
    for case in usable:
        for k, v in _case_metrics(case, ks).items():
            sums[k] += v
    values = {k: 100.0 * sums[k] / len(usable) for k in keys}
    return RankingReport(values=values, num_cases=len(usable), num_excluded=excluded)


def is_localized(case: RankingCase, k: int) -> bool:
    """Top-k hit criterion used by the quadrant study."""
    order = rank_positions(case.scores)[:k]
    return bool(case.truth[order].any())


def quadrant_study(cases: Sequence[RankingCase], k: int = 5) -> QuadrantCounts:
    """Assign every ground-truth-anomalous window to exactly one quadrant."""
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = QuadrantCounts()
    for case in cases:
        if not case.label:
            continue
        localized = case.truth.any() and is_localized(case, k)
        if case.detected and localized:
            counts.dlf += 1
        elif case.detected:
            counts.df += 1
        elif localized:
            counts.lf += 1
        else:
            counts.mf += 1
    return counts


def bias_study(cases: Sequence[RankingCase], ks: Sequence[int] = DEFAULT_KS) -> BiasReport:
    """Compare localization metrics when every true anomaly reaches the
    localizer (theoretical) against only detector-flagged ones (actual)."""
    theoretical_cases = [c for c in cases if c.label]
    actual_cases = [c for c in theoretical_cases if c.detected]
    theoretical = ranking_metrics(theoretical_cases, ks)
    degenerate = not actual_cases
    if degenerate:
        actual_values = {k: 0.0 for k in theoretical.values}
        num_actual = 0
    else:
        actual = ranking_metrics(actual_cases, ks)
        actual_values = actual.values
        num_actual = actual.num_cases
    bias = {k: actual_values[k] - theoretical.values[k] for k in theoretical.values}
    return BiasReport(theoretical=theoretical.values, actual=actual_values, bias=bias,
                      num_theoretical=theoretical.num_cases, num_actual=num_actual,
                      degenerate_actual=degenerate)


# ---------------------------------------------------------------------------
# model adapter

def predict_probs(params: ModelParams, sequences: Sequence[EventSequence],
                  batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Detector probabilities and localizer scores for a list of windows."""
    probs, scores = [], []
    with ad.no_grad():
        for start in range(0, len(sequences), batch_size):
            chunk = sequences[start:start + batch_size]
            embeds = embed_batch(params.vocab, params.table,
                                 [s.event_ids for s in chunk])
            _, out = diagnose(params, embeds)
            probs.append(out.y_hat.data)
            scores.append(out.scores.data)
    if not probs:
        return np.zeros(0), np.zeros((0, 0))
    return np.concatenate(probs), np.concatenate(scores)


def build_cases(params: ModelParams, sequences: Sequence[EventSequence],
                threshold: float, batch_size: int = 64) -> list[RankingCase]:
    probs, scores = predict_probs(params, sequences, batch_size=batch_size)
    return [RankingCase(scores=scores[i],
                        truth=np.asarray(seq.root_cause_flags, dtype=bool),
                        detected=bool(probs[i] >= threshold),
                        label=bool(seq.seq_label))
            for i, seq in enumerate(sequences)]
