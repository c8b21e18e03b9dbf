"""BCE loss and demographic parity gap on a dataset split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dgp import Dataset
from .nn_core import SCORE_EPS, MlpModel, forward


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EvalResult:
    bce: float
    dp_gap: float
    group_means: tuple[float, float]
    n_evaluated: int


def scores_of(model, X, A) -> np.ndarray:
    """Clamped scores from an ``MlpModel`` or any ``(X, A) -> scores`` callable."""
    if isinstance(model, MlpModel):
        return forward(model, X, A)
    s = np.asarray(model(X, A), dtype=np.float64).reshape(-1)
    return np.clip(s, SCORE_EPS, 1.0 - SCORE_EPS)


def bce_from_scores(scores, Y) -> float:
    s = np.clip(np.asarray(scores, dtype=np.float64), SCORE_EPS, 1.0 - SCORE_EPS)
    Y = np.asarray(Y, dtype=np.float64)
    if s.size == 0:
        raise EvaluationError("cannot evaluate BCE on an empty split")
    return float(-np.mean(Y * np.log(s) + (1.0 - Y) * np.log1p(-s)))


def group_means(scores, A) -> tuple[float, float]:
    scores = np.asarray(scores, dtype=np.float64)
    A = np.asarray(A)
    means = []
    for g in (0, 1):
        mask = A == g
        if not mask.any():
            raise EvaluationError(f"group a={g} is absent from the evaluated rows")
        means.append(float(scores[mask].mean()))
    return means[0], means[1]


def dp_gap_from_scores(scores, A) -> float:
    m0, m1 = group_means(scores, A)
    return abs(m1 - m0)


def _split(data: Dataset, split: str):
    X, A, Y = data.part(split)
    if X.shape[0] == 0:
        raise EvaluationError(f"split {split!r} is empty")
    return X, A, Y


def bce_loss(model, data: Dataset, split: str = "test") -> float:
    X, A, Y = _split(data, split)
    return bce_from_scores(scores_of(model, X, A), Y)


def dp_gap(model, data: Dataset, split: str = "test") -> float:
    X, A, _ = _split(data, split)
    return dp_gap_from_scores(scores_of(model, X, A), A)


def evaluate(model, data: Dataset, split: str = "test") -> EvalResult:
    X, A, Y = _split(data, split)
    s = scores_of(model, X, A)
    m0, m1 = group_means(s, A)
    return EvalResult(bce_from_scores(s, Y), abs(m1 - m0), (m0, m1), int(s.size))
