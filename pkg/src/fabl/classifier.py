"""Argmax decision rule over a trained weight model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import LayoutMismatch
from .features import FeatureVector
from .solver import WeightModel


@dataclass(frozen=True, eq=False)
class ScoreVector:
    scores: np.ndarray
    predicted: int

    def top_k(self, k: int) -> list[int]:
        """Class indices by descending score; ties keep the lower index first."""
        order = np.argsort(-self.scores, kind="stable")
        return order[:k].tolist()


def _as_rows(X, model: WeightModel, layout=None) -> np.ndarray:
    if layout is not None and layout != model.layout:
        raise LayoutMismatch("feature layout differs from the model's layout")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != model.layout.d:
        raise LayoutMismatch(f"expected a d x n matrix with d={model.layout.d}, got shape {X.shape}")
    return np.ascontiguousarray(X.T)


def score_matrix(X, model: WeightModel, layout=None) -> np.ndarray:
    """Raw scores for a d x n feature matrix, shape (n, c)."""
    Wf, bf = model.folded
    return kernels.affine_scores(_as_rows(X, model, layout), Wf, bf)


def predict_batch(X, model: WeightModel, layout=None) -> list[ScoreVector]:
    """Score every column of ``X``; identical to calling :func:`predict_scores` per column."""
    S = score_matrix(X, model, layout)
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    pred = np.argmax(S, axis=1)
    return [ScoreVector(S[i], int(pred[i])) for i in range(S.shape[0])]


def predict_labels(X, model: WeightModel, layout=None) -> np.ndarray:
    return np.argmax(score_matrix(X, model, layout), axis=1)


def predict_scores(x, model: WeightModel) -> ScoreVector:
    if isinstance(x, FeatureVector):
        layout, values = x.layout, x.values
    else:
        layout, values = None, np.asarray(x, dtype=np.float64)
    if values.ndim != 1:
        raise LayoutMismatch("predict_scores takes a single feature vector")
    return predict_batch(values[:, None], model, layout)[0]
