"""Group-sparse multi-class regression trained by iterative reweighting.

The objective over the weight matrix ``W`` (d x c) is::

    ||X^T W + 1 b^T - Y||_F^2 + gamma1 * M1(W) + gamma2 * J1(W)

where ``M1`` sums the l2 norms of every (class, modality) block and ``J1``
sums the l2 norms of every (class, joint) group gathered across modalities.
The intercept ``b`` is the class-frequency vector and stays fixed.

Each iteration replaces both group norms by their quadratic upper bounds at
the current iterate and solves one SPD system per class.  The bound touches
the norm at the current iterate, so the objective never increases.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import linalg

from . import kernels
from .errors import (
    EmptyTrainingSet,
    NonFiniteObjective,
    ShapeMismatch,
    SingularSystem,
    ValidationError,
)
from .features import FeatureRanges, HistogramConfig, PartitionLayout

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparams:
    gamma1: float = 0.1
    gamma2: float = 0.1
    epsilon: float = 1e-8
    tol: float = 1e-6
    max_iter: int = 100
    init_ridge: float = 1e-8
    threads: int = 1

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "init_ridge"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")
        for name in ("epsilon", "tol"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be finite and > 0, got {v}")
        if int(self.max_iter) < 1:
            raise ValidationError(f"max_iter must be >= 1, got {self.max_iter}")
        if int(self.threads) < 1:
            raise ValidationError(f"threads must be >= 1, got {self.threads}")

    @property
    def unregularized(self) -> bool:
        return self.gamma1 == 0 and self.gamma2 == 0

    def to_dict(self):
        return {
            "gamma1": self.gamma1, "gamma2": self.gamma2, "epsilon": self.epsilon,
            "tol": self.tol, "max_iter": self.max_iter, "init_ridge": self.init_ridge,
        }

    @classmethod
    def from_dict(cls, doc) -> "Hyperparams":
        return cls(**{k: doc[k] for k in ("gamma1", "gamma2", "epsilon", "tol", "max_iter", "init_ridge") if k in doc})


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """``X`` is d x n (one column per instance); ``Y`` is an n x c one-hot matrix."""

    X: np.ndarray
    Y: np.ndarray
    layout: PartitionLayout
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2:
            raise ShapeMismatch("X and Y must be 2-D")
        if X.shape[1] == 0:
            raise EmptyTrainingSet("training set has no instances")
        if X.shape[0] != self.layout.d:
            raise ShapeMismatch(f"X has {X.shape[0]} rows, layout has d={self.layout.d}")
        if Y.shape[0] != X.shape[1]:
            raise ShapeMismatch(f"X has {X.shape[1]} instances but Y has {Y.shape[0]} rows")
        if not np.all(np.isfinite(X)):
            raise ValidationError("X contains non-finite values")
        if not (np.all((Y == 0) | (Y == 1)) and np.all(Y.sum(axis=1) == 1)):
            raise ValidationError("every row of Y must be one-hot")
        missing = np.flatnonzero(Y.sum(axis=0) == 0)
        if missing.size:
            raise ValidationError(f"categories {missing.tolist()} have no training instances")
        names = self.class_names
        names = tuple(str(i) for i in range(Y.shape[1])) if names is None else tuple(str(n) for n in names)
        if len(names) != Y.shape[1]:
            raise ShapeMismatch(f"{len(names)} class names for {Y.shape[1]} categories")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "class_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def c(self) -> int:
        return self.Y.shape[1]

    @classmethod
    def from_labels(cls, X, labels, layout, c=None, class_names=None) -> "TrainingSet":
        from .data_io import build_label_matrix

        labels = np.asarray(labels, dtype=np.intp)
        c = int(labels.max()) + 1 if c is None else c
        return cls(X, build_label_matrix(labels, c).Y, layout, class_names)


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-feature centering and unit-variance scaling; constant features keep scale 1."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=1)
        std = X.std(axis=1)
        scale = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
        return cls(mean, scale)

    @classmethod
    def identity(cls, d) -> "Standardizer":
        return cls(np.zeros(d), np.ones(d))

    def transform(self, X) -> np.ndarray:
        """Apply to a d x n matrix (or a length-d vector)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            return (X - self.mean) / self.scale
        return (X - self.mean[:, None]) / self.scale[:, None]


@dataclass
class FitTrace:
    objective_per_iter: list = field(default_factory=list)
    m1_per_iter: list = field(default_factory=list)
    j1_per_iter: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def record(self, obj, m1, j1):
        self.objective_per_iter.append(float(obj))
        self.m1_per_iter.append(float(m1))
        self.j1_per_iter.append(float(j1))

    @property
    def final_objective(self) -> float:
        return self.objective_per_iter[-1]

    def is_monotone(self, rel_slack=1e-9) -> bool:
        obj = self.objective_per_iter
        return all(b <= a * (1 + rel_slack) for a, b in zip(obj, obj[1:]))

    def to_dict(self):
        return {
            "objective_per_iter": self.objective_per_iter,
            "m1_per_iter": self.m1_per_iter,
            "j1_per_iter": self.j1_per_iter,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass(frozen=True, eq=False)
class WeightModel:
    """A trained model: scores are ``standardize(x) @ W + b``."""

    W: np.ndarray
    b: np.ndarray
    layout: PartitionLayout
    class_names: tuple[str, ...]
    standardizer: Standardizer
    feature_ranges: FeatureRanges | None = None
    hist_config: HistogramConfig | None = None
    hyperparams: Hyperparams | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        if W.shape != (self.layout.d, b.shape[0]):
            raise ShapeMismatch(f"W has shape {W.shape}, expected ({self.layout.d}, {b.shape[0]})")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValidationError("model weights must be finite")
        if len(self.class_names) != b.shape[0]:
            raise ShapeMismatch("class_names length does not match the number of categories")
        for a in (W, b):
            a.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def c(self) -> int:
        return self.b.shape[0]

    @cached_property
    def folded(self) -> tuple[np.ndarray, np.ndarray]:
        """``(W', b')`` with the standardization folded in, so scores = x @ W' + b'."""
        Wf = np.ascontiguousarray(self.W / self.standardizer.scale[:, None])
        bf = np.ascontiguousarray(self.b - self.standardizer.mean @ Wf)
        return Wf, bf


# -- group norms --------------------------------------------------------------

def _check_w(W, layout):
    W = np.asarray(W, dtype=np.float64)
    if W.ndim == 1:
        W = W[:, None]
    if W.shape[0] != layout.d:
        raise ShapeMismatch(f"W has {W.shape[0]} rows, layout has d={layout.d}")
    return np.ascontiguousarray(W)


def modality_group_norms(W, layout: PartitionLayout) -> np.ndarray:
    """l2 norm of every (modality, class) block, shape (m, c)."""
    W = _check_w(W, layout)
    return np.sqrt(kernels.group_sq_norms(W, layout.modality_ids, layout.m))


def joint_group_norms(W, layout: PartitionLayout) -> np.ndarray:
    """l2 norm of every (joint, class) group across modalities, shape (s, c)."""
    W = _check_w(W, layout)
    return np.sqrt(kernels.group_sq_norms(W, layout.joint_ids, layout.s))


def m1_norm(W, layout: PartitionLayout) -> float:
    return float(modality_group_norms(W, layout).sum())


def j1_norm(W, layout: PartitionLayout) -> float:
    return float(joint_group_norms(W, layout).sum())


def reweighting_gap(a, b) -> float:
    """``(||b|| - ||b||^2 / 2||b||) - (||a|| - ||a||^2 / 2||b||)``; never negative."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    return (nb - nb * nb / (2 * nb)) - (na - na * na / (2 * nb))


# -- objective pieces ---------------------------------------------------------

def compute_intercept(Y) -> np.ndarray:
    """Class frequencies ``Y^T 1 / n``."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise EmptyTrainingSet("cannot compute an intercept from an empty label matrix")
    return Y.sum(axis=0) / Y.shape[0]


def residual_loss(X, Y, W, b) -> float:
    R = np.asarray(X).T @ W + np.asarray(b)[None, :] - Y
    return float(np.sum(R * R))


def objective(X, Y, W, b, gamma1, gamma2, layout: PartitionLayout) -> float:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    W = _check_w(W, layout)
    if X.shape[0] != layout.d or X.shape[1] != Y.shape[0] or W.shape[1] != Y.shape[1]:
        raise ShapeMismatch(f"inconsistent shapes X{X.shape}, Y{Y.shape}, W{W.shape}")
    value = residual_loss(X, Y, W, b)
    if gamma1:
        value += gamma1 * m1_norm(W, layout)
    if gamma2:
        value += gamma2 * j1_norm(W, layout)
    return value


def build_group_weights(w_i, layout: PartitionLayout, epsilon: float):
    """Diagonals of the two reweighting matrices for one class.

    Returns ``(diag_M, diag_J)``, each of length d, holding ``1 / (2 max(||g||, eps))``
    for the modality group and joint group containing each entry.
    """
    if epsilon <= 0:
        raise ValidationError("epsilon must be > 0")
    w = _check_w(w_i, layout)
    m_norms = np.sqrt(kernels.group_sq_norms(w, layout.modality_ids, layout.m))[:, 0]
    j_norms = np.sqrt(kernels.group_sq_norms(w, layout.joint_ids, layout.s))[:, 0]
    diag_M = (0.5 / np.maximum(m_norms, epsilon))[layout.modality_ids]
    diag_J = (0.5 / np.maximum(j_norms, epsilon))[layout.joint_ids]
    return diag_M, diag_J


# -- linear systems -----------------------------------------------------------

def _cholesky_solve(A, rhs, ridge):
    try:
        return linalg.cho_solve(linalg.cho_factor(A, lower=True, check_finite=False), rhs, check_finite=False)
    except linalg.LinAlgError:
        if ridge <= 0:
            raise SingularSystem("system matrix is not positive definite") from None
    A = A + ridge * np.eye(A.shape[0])
    try:
        return linalg.cho_solve(linalg.cho_factor(A, lower=True, check_finite=False), rhs, check_finite=False)
    except linalg.LinAlgError:
        raise SingularSystem("system matrix is not positive definite even after adding the ridge") from None


def solve_class_system(
    X,
    y_i,
    b_i,
    diag_M,
    diag_J,
    gamma1,
    gamma2,
    *,
    init_ridge=0.0,
    gram=None,
    method="auto",
):
    """Solve ``(X X^T + gamma1 diag_M + gamma2 diag_J + init_ridge I) w = X (y_i - b_i)``.

    ``method="dual"`` works through the n x n matrix ``I + X^T D^-1 X``
    (Woodbury identity); ``"auto"`` picks it whenever d > n and the diagonal
    part is positive.  Both routes use a Cholesky factorization.
    """
    X = np.asarray(X, dtype=np.float64)
    d, n = X.shape
    r = np.asarray(y_i, dtype=np.float64) - b_i
    diag = gamma1 * np.asarray(diag_M) + gamma2 * np.asarray(diag_J) + init_ridge
    if method == "auto":
        method = "dual" if d > n and np.all(diag > 0) else "primal"
    if method == "dual":
        if not np.all(diag > 0):
            raise SingularSystem("dual solve needs a strictly positive diagonal")
        XD = X / diag[:, None]
        K = X.T @ XD
        K[np.diag_indices_from(K)] += 1.0
        alpha = _cholesky_solve(K, r, 0.0)
        return XD @ alpha
    A = X @ X.T if gram is None else np.array(gram, dtype=np.float64, copy=True)
    A[np.diag_indices_from(A)] += diag
    return _cholesky_solve(A, X @ r, init_ridge)


def system_residual(X, y_i, b_i, diag, w) -> tuple[float, float]:
    """``(||A w - rhs||, ||rhs||)`` for ``A = X X^T + diag(diag)``, without forming A."""
    X = np.asarray(X)
    rhs = X @ (np.asarray(y_i) - b_i)
    res = X @ (X.T @ w) + diag * w - rhs
    return float(np.linalg.norm(res)), float(np.linalg.norm(rhs))


def ridge_init(X, Y, b, init_ridge=1e-8) -> np.ndarray:
    """Least-squares starting point ``(X X^T + init_ridge I)^-1 X (Y - 1 b^T)``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    d, n = X.shape
    R = Y - np.asarray(b)[None, :]
    if d > n:
        if init_ridge <= 0:
            raise SingularSystem("more features than instances: init_ridge must be > 0")
        K = X.T @ X
        K[np.diag_indices_from(K)] += init_ridge
        return X @ _cholesky_solve(K, R, 0.0)
    A = X @ X.T
    A[np.diag_indices_from(A)] += init_ridge
    return _cholesky_solve(A, X @ R, init_ridge)


# -- training -----------------------------------------------------------------

def _relative_change(prev, curr):
    return abs(prev - curr) / max(prev, 1.0)


def fabl_train(
    train: TrainingSet,
    hp: Hyperparams = Hyperparams(),
    *,
    standardize: bool = True,
    feature_ranges: FeatureRanges | None = None,
    hist_config: HistogramConfig | None = None,
    callback=None,
) -> tuple[WeightModel, FitTrace]:
    """Fit the weight matrix by iterative reweighting.

    Starting from the ridge solution, each iteration rebuilds both
    reweighting diagonals from the current ``W``, solves the c class systems
    and records the objective.  Stops when the relative objective change
    drops below ``hp.tol`` or after ``hp.max_iter`` iterations.

    ``callback(t, W, trace)`` is called after every iteration.

    Raises
    ------
    SingularSystem
        A class system could not be factorized.
    NonFiniteObjective
        An iterate produced NaN or Inf.
    """
    layout = train.layout
    scaler = Standardizer.fit(train.X) if standardize else Standardizer.identity(layout.d)
    X = scaler.transform(train.X)
    Y = train.Y
    d, n = X.shape
    c = train.c
    b = compute_intercept(Y)

    def evaluate(W):
        m1 = m1_norm(W, layout)
        j1 = j1_norm(W, layout)
        value = residual_loss(X, Y, W, b) + hp.gamma1 * m1 + hp.gamma2 * j1
        if not math.isfinite(value):
            raise NonFiniteObjective("objective became non-finite; check feature scaling")
        return value, m1, j1

    W = ridge_init(X, Y, b, hp.init_ridge)
    trace = FitTrace()
    trace.record(*evaluate(W))

    gram = X @ X.T if d <= n and not hp.unregularized else None

    def solve_one(i, W_prev):
        diag_M, diag_J = build_group_weights(W_prev[:, i], layout, hp.epsilon)
        return solve_class_system(X, Y[:, i], b[i], diag_M, diag_J, hp.gamma1, hp.gamma2,
                                  init_ridge=hp.init_ridge, gram=gram)

    pool = ThreadPoolExecutor(hp.threads) if hp.threads > 1 and c > 1 else None
    try:
        for t in range(1, hp.max_iter + 1):
            if hp.unregularized:
                # no reweighting: the step reproduces the starting solution
                cols = list(ridge_init(X, Y, b, hp.init_ridge).T)
            elif pool is None:
                cols = [solve_one(i, W) for i in range(c)]
            else:
                W_prev = W
                cols = list(pool.map(lambda i: solve_one(i, W_prev), range(c)))
            W = np.column_stack(cols)
            trace.record(*evaluate(W))
            trace.iterations = t
            if callback is not None:
                callback(t, W, trace)
            change = _relative_change(trace.objective_per_iter[-2], trace.objective_per_iter[-1])
            log.debug("iteration %d objective %.12g change %.3g", t, trace.final_objective, change)
            if change < hp.tol:
                trace.converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    model = WeightModel(
        W=W,
        b=b,
        layout=layout,
        class_names=train.class_names,
        standardizer=scaler,
        feature_ranges=feature_ranges,
        hist_config=hist_config,
        hyperparams=hp,
        metadata={
            "iterations": trace.iterations,
            "converged": trace.converged,
            "final_objective": trace.final_objective,
            "n_train": n,
            "standardized": standardize,
        },
    )
    return model, trace


def with_gammas(hp: Hyperparams, gamma1=None, gamma2=None) -> Hyperparams:
    return replace(
        hp,
        gamma1=hp.gamma1 if gamma1 is None else gamma1,
        gamma2=hp.gamma2 if gamma2 is None else gamma2,
    )
