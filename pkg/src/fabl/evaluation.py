"""Splits, accuracy and confusion matrices, ablations, synthetic data, timing."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classifier import predict_labels
from .data_io import FeatureMatrix, build_label_matrix
from .errors import EmptyTestSet, FABLError, MissingSubjectIds, SingleSubject, ValidationError
from .features import PartitionLayout
from .solver import Hyperparams, TrainingSet, WeightModel, fabl_train, joint_group_norms, with_gammas


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are true classes, columns are predicted classes."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.class_names)

    def to_dict(self):
        return {"class_names": list(self.class_names), "counts": self.counts.tolist()}

    def format(self) -> str:
        names = [str(n) for n in self.class_names]
        w = max(5, max(len(n) for n in names), len(str(self.counts.max())))
        lines = [" " * w + " | " + " ".join(n.rjust(w) for n in names)]
        lines.append("-" * len(lines[0]))
        for name, row in zip(names, self.counts):
            lines.append(name.rjust(w) + " | " + " ".join(str(v).rjust(w) for v in row))
        return "\n".join(lines)


def confusion_matrix(true, pred, c: int, class_names=None) -> ConfusionMatrix:
    true = np.asarray(true, dtype=np.intp)
    pred = np.asarray(pred, dtype=np.intp)
    counts = np.zeros((c, c), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    names = tuple(str(i) for i in range(c)) if class_names is None else tuple(class_names)
    return ConfusionMatrix(counts, names)


def evaluate(model: WeightModel, test: FeatureMatrix) -> tuple[float, ConfusionMatrix]:
    """Accuracy and confusion matrix of ``model`` on ``test``."""
    if test.n == 0:
        raise EmptyTestSet("test set is empty")
    pred = predict_labels(test.X, model, test.layout)
    cm = confusion_matrix(test.labels, pred, model.c, model.class_names)
    return cm.accuracy, cm


# -- splits -------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """``mode`` is ``"subject_wise"`` (leave one subject out), ``"k_fold"`` or ``"fixed"``."""

    mode: str = "subject_wise"
    k: int = 5
    train_ids: tuple | None = None
    test_ids: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("subject_wise", "k_fold", "fixed"):
            raise ValidationError(f"unknown split mode {self.mode!r}")
        if self.mode == "k_fold" and self.k < 2:
            raise ValidationError("k_fold needs k >= 2")
        if self.mode == "fixed":
            if self.train_ids is None or self.test_ids is None:
                raise ValidationError("fixed split needs train_ids and test_ids")
            if set(self.train_ids) & set(self.test_ids):
                raise ValidationError("fixed split train and test ids overlap")


def split(dataset, spec: SplitSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Return ``[(train_idx, test_idx), ...]`` over the dataset's instances.

    ``dataset`` is a :class:`FeatureMatrix` or a sequence of subject ids.
    Subject-wise folds hold out one subject each, in sorted subject order.
    """
    subjects = list(dataset.subject_ids if isinstance(dataset, FeatureMatrix) else dataset)
    n = len(subjects)
    if spec.mode == "fixed":
        train = np.asarray(spec.train_ids, dtype=np.intp)
        test = np.asarray(spec.test_ids, dtype=np.intp)
        if train.size and train.max() >= n or test.size and test.max() >= n:
            raise ValidationError("fixed split ids exceed the dataset size")
        return [(train, test)]
    if spec.mode == "k_fold":
        order = np.random.default_rng(spec.seed).permutation(n)
        folds = np.array_split(order, spec.k)
        return [
            (np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i])), np.sort(folds[i]))
            for i in range(spec.k)
        ]
    if any(s is None for s in subjects):
        raise MissingSubjectIds("subject-wise splitting needs a subject id on every instance")
    unique = sorted(set(subjects), key=str)
    if len(unique) < 2:
        raise SingleSubject("subject-wise splitting needs at least two subjects")
    subjects = np.array([str(s) for s in subjects])
    out = []
    for s in unique:
        mask = subjects == str(s)
        out.append((np.flatnonzero(~mask), np.flatnonzero(mask)))
    return out


# -- cross-validation and ablation -------------------------------------------

def _training_set(fm: FeatureMatrix) -> TrainingSet:
    return TrainingSet(fm.X, build_label_matrix(fm.labels, fm.c).Y, fm.layout, fm.class_names)


def _present_classes(fm: FeatureMatrix) -> FeatureMatrix:
    """Drop unused categories so every training column has a positive count."""
    present = np.unique(fm.labels)
    if present.size == fm.c:
        return fm
    remap = {int(old): new for new, old in enumerate(present)}
    return FeatureMatrix(
        fm.X, np.array([remap[int(l)] for l in fm.labels]), tuple(fm.class_names[i] for i in present),
        fm.layout, fm.subject_ids, fm.ids, fm.hist_config, fm.ranges, fm.body_model,
    )


def train_on(fm: FeatureMatrix, hp: Hyperparams, **kw):
    """Train on a feature matrix; categories missing from it are never predicted."""
    train = _present_classes(fm)
    model, trace = fabl_train(_training_set(train), hp, feature_ranges=fm.ranges, hist_config=fm.hist_config, **kw)
    if train.c == fm.c:
        return model, trace
    # widen back to the full class list; absent classes get a score that never wins
    keep = [fm.class_names.index(n) for n in train.class_names]
    W = np.zeros((fm.layout.d, fm.c))
    b = np.full(fm.c, model.b.min() - 1e6)
    W[:, keep] = model.W
    b[keep] = model.b
    model = WeightModel(W, b, model.layout, fm.class_names, model.standardizer,
                        model.feature_ranges, model.hist_config, model.hyperparams, model.metadata)
    return model, trace


@dataclass
class FoldResult:
    fold: int
    train_size: int
    test_size: int
    accuracy: float | None
    confusion: ConfusionMatrix | None
    iterations: int | None = None
    converged: bool | None = None
    train_seconds: float | None = None
    error: str | None = None

    def to_dict(self):
        return {
            "fold": self.fold,
            "train_size": self.train_size,
            "test_size": self.test_size,
            "accuracy": self.accuracy,
            "confusion": None if self.confusion is None else self.confusion.to_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "train_seconds": self.train_seconds,
            "error": self.error,
        }


def _run_fold(fm, i, tr, te, hp):
    try:
        t0 = time.perf_counter()
        model, trace = train_on(fm.subset(tr), hp)
        elapsed = time.perf_counter() - t0
        acc, cm = evaluate(model, fm.subset(te))
        return FoldResult(i, len(tr), len(te), acc, cm, trace.iterations, trace.converged, elapsed)
    except FABLError as exc:
        return FoldResult(i, len(tr), len(te), None, None, error=f"{type(exc).__name__}: {exc}")


def cross_validate(fm: FeatureMatrix, folds, hp: Hyperparams, workers: int = 1) -> list[FoldResult]:
    """Train and test every fold; results come back in fold order."""
    jobs = [(fm, i, tr, te, hp) for i, (tr, te) in enumerate(folds)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda a: _run_fold(*a), jobs))
    return [_run_fold(*a) for a in jobs]


ABLATION_CONFIGS = ("fabl", "feature_only", "part_only", "unregularized")


def ablation_hyperparams(hp: Hyperparams) -> dict[str, Hyperparams]:
    """The four configurations: both norms, M1 only, J1 only, neither."""
    return {
        "fabl": hp,
        "feature_only": with_gammas(hp, gamma2=0.0),
        "part_only": with_gammas(hp, gamma1=0.0),
        "unregularized": with_gammas(hp, gamma1=0.0, gamma2=0.0),
    }


@dataclass
class AblationReport:
    folds: int
    cells: dict = field(default_factory=dict)  # config -> list[FoldResult]
    hyperparams: dict = field(default_factory=dict)

    def mean_accuracy(self, config: str) -> float | None:
        accs = [r.accuracy for r in self.cells[config] if r.accuracy is not None]
        return float(np.mean(accs)) if accs else None

    def failed(self, config: str) -> list[int]:
        return [r.fold for r in self.cells[config] if r.error is not None]

    def to_dict(self):
        return {
            "folds": self.folds,
            "configs": {
                name: {
                    "hyperparams": self.hyperparams[name],
                    "mean_accuracy": self.mean_accuracy(name),
                    "failed_folds": self.failed(name),
                    "per_fold": [r.to_dict() for r in results],
                }
                for name, results in self.cells.items()
            },
        }

    def format(self) -> str:
        lines = [f"{'configuration':<16}{'gamma1':>10}{'gamma2':>10}{'mean acc':>12}{'failed':>8}"]
        for name in self.cells:
            hp = self.hyperparams[name]
            acc = self.mean_accuracy(name)
            acc_s = "failed" if acc is None else f"{100 * acc:.2f}%"
            lines.append(f"{name:<16}{hp['gamma1']:>10g}{hp['gamma2']:>10g}{acc_s:>12}{len(self.failed(name)):>8}")
        return "\n".join(lines)


def run_ablation(fm: FeatureMatrix, folds, hp_grid=None, workers: int = 1) -> AblationReport:
    """Cross-validate each configuration on identical data and folds.

    ``hp_grid`` maps configuration names to hyperparameters; by default the
    four ablation configurations derived from the package defaults.  A fold
    that fails to train is recorded as failed instead of aborting the table.
    """
    if hp_grid is None:
        hp_grid = ablation_hyperparams(Hyperparams())
    elif isinstance(hp_grid, Hyperparams):
        hp_grid = ablation_hyperparams(hp_grid)
    folds = list(folds)
    report = AblationReport(folds=len(folds))
    for name, hp in hp_grid.items():
        report.hyperparams[name] = hp.to_dict()
        report.cells[name] = cross_validate(fm, folds, hp, workers)
    return report


# -- synthetic data -----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-group data: only ``active_joints`` (0-based) carry class signal.

    Active entries are ``signal * mu[class] + noise_sigma * N(0, 1)``;
    inactive entries are ``inactive_sigma * N(0, 1)``.
    """

    n: int = 120
    block_dim: int = 3
    m: int = 4
    s: int = 10
    c: int = 3
    active_joints: tuple[int, ...] = (0,)
    noise_sigma: float = 1.0
    seed: int = 0
    signal: float = 1.0
    inactive_sigma: float = 1.0
    n_subjects: int = 4

    def __post_init__(self):
        object.__setattr__(self, "active_joints", tuple(int(j) for j in self.active_joints))
        if not self.active_joints or not set(self.active_joints) <= set(range(self.s)):
            raise ValidationError(f"active_joints must be a nonempty subset of 0..{self.s - 1}")
        if self.noise_sigma < 0 or self.inactive_sigma < 0:
            raise ValidationError("noise scales must be >= 0")
        if self.n < self.c or min(self.block_dim, self.m, self.s, self.c, self.n_subjects) < 1:
            raise ValidationError("invalid synthetic dimensions")


def generate_synthetic(spec: SyntheticSpec) -> tuple[FeatureMatrix, frozenset]:
    """Draw a planted-group dataset; returns it with the set of active joints."""
    rng = np.random.default_rng(spec.seed)
    layout = PartitionLayout.uniform(spec.m, spec.s, spec.block_dim)
    labels = rng.permutation(np.arange(spec.n) % spec.c)
    X = spec.inactive_sigma * rng.standard_normal((layout.d, spec.n))
    for k in spec.active_joints:
        idx = layout.joint_indices(k)
        means = rng.standard_normal((idx.size, spec.c))
        X[idx] = spec.signal * means[:, labels] + spec.noise_sigma * rng.standard_normal((idx.size, spec.n))
    fm = FeatureMatrix(
        X,
        labels,
        tuple(f"class{i}" for i in range(spec.c)),
        layout,
        subject_ids=tuple(f"subject{i % spec.n_subjects}" for i in range(spec.n)),
        ids=tuple(f"synthetic{i}" for i in range(spec.n)),
    )
    return fm, frozenset(spec.active_joints)


def sparsity_ratio(model: WeightModel, active: Sequence[int]) -> float:
    """Mean joint-group norm over inactive joints divided by the mean over active joints."""
    norms = joint_group_norms(model.W, model.layout)
    active = sorted(active)
    inactive = [k for k in range(model.layout.s) if k not in active]
    return float(norms[inactive].mean() / norms[active].mean())


# -- throughput ---------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkResult:
    predictions_per_second: float
    seconds_per_observation: float
    n_instances: int
    repeats: int
    seconds: tuple[float, ...]
    backend: str
    mode: str = "classification"

    def to_dict(self):
        return {
            "predictions_per_second": self.predictions_per_second,
            "seconds_per_observation": self.seconds_per_observation,
            "n_instances": self.n_instances,
            "repeats": self.repeats,
            "seconds": list(self.seconds),
            "backend": self.backend,
            "mode": self.mode,
        }


def benchmark_throughput(model: WeightModel, n_instances: int = 100_000, repeats: int = 3, seed: int = 0,
                         X=None) -> BenchmarkResult:
    """Median wall-clock rate of :func:`predict_batch` over random (or given) inputs.

    Feature extraction is not timed.
    """
    from . import kernels
    from .classifier import predict_batch

    if n_instances < 1000:
        raise ValidationError("benchmark needs n_instances >= 1000")
    if X is None:
        # drawn row-major so the transposed view needs no copy before scoring
        X = np.random.default_rng(seed).random((n_instances, model.layout.d)).T
    times = []
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        predict_batch(X, model)
        times.append(time.perf_counter() - t0)
    med = float(np.median(times))
    n = X.shape[1]
    return BenchmarkResult(n / med, med / n, n, len(times), tuple(times), kernels.BACKEND)


def benchmark_end_to_end(model: WeightModel, sequences, repeats: int = 3) -> BenchmarkResult:
    """Like :func:`benchmark_throughput` but includes feature extraction per sequence."""
    from . import kernels
    from .classifier import predict_scores
    from .features import extract_features

    if model.hist_config is None or model.feature_ranges is None:
        raise ValidationError("model carries no histogram configuration for end-to-end timing")
    times = []
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        for seq in sequences:
            predict_scores(extract_features(seq, model.hist_config, model.feature_ranges, model.layout), model)
        times.append(time.perf_counter() - t0)
    med = float(np.median(times))
    n = len(sequences)
    return BenchmarkResult(n / med, med / n, n, len(times), tuple(times), kernels.BACKEND, "end_to_end")
