"""
Confusion-matrix bookkeeping, detection metrics and the two validation
protocols: k-fold over records (or subjects) and leave-one-subject-out.

AF is the positive class throughout. Metrics whose denominator is zero are
reported as None and printed as "undefined"; so is F1 when precision and
recall are both zero.
"""

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix
from sklearn.model_selection import GroupKFold, LeaveOneGroupOut, StratifiedKFold, train_test_split

from acoustic_af.config import DetectorConfig, TrainConfig
from acoustic_af.detector import CLASS_NAMES, LabeledSegments, build_model, forward_batch, train
from acoustic_af.errors import ConfigurationError, ContractError

logger = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "precision", "recall", "specificity", "f1")
UNDEFINED = "undefined"
RECORD_MODE = "record"
SUBJECT_MODE = "subject"


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ContractError(f"confusion count {name} is negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_predictions(cls, labels: Sequence[int], predictions: Sequence[int]) -> "ConfusionMatrix":
        """Counts from class indices (1 = AF)"""
        if len(labels) == 0:
            return cls()
        tn, fp, fn, tp = confusion_matrix(labels, predictions, labels=[0, 1]).ravel()
        return cls(tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn))

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return None if denominator == 0 else numerator / denominator


def metrics(cm: ConfusionMatrix) -> Dict[str, Optional[float]]:
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    f1 = None
    if precision and recall:
        f1 = 2 * precision * recall / (precision + recall)
    return {
        "accuracy": _ratio(cm.tp + cm.tn, cm.total),
        "precision": precision,
        "recall": recall,
        "specificity": _ratio(cm.tn, cm.tn + cm.fp),
        "f1": f1,
    }


def format_metric(value: Optional[float]) -> str:
    return UNDEFINED if value is None else f"{value:.4f}"


@dataclass
class FoldPlan:
    k: int
    assignments: np.ndarray
    mode: str = RECORD_MODE
    seed: int = 0

    def folds(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(train indices, test indices) per fold"""
        everything = np.arange(len(self.assignments))
        return [(everything[self.assignments != fold], everything[self.assignments == fold])
                for fold in range(self.k)]

    @property
    def sizes(self) -> List[int]:
        return [int(np.count_nonzero(self.assignments == fold)) for fold in range(self.k)]

    def to_dict(self) -> Dict[str, Any]:
        return {"k": self.k, "mode": self.mode, "seed": self.seed,
                "assignments": [int(a) for a in self.assignments], "sizes": self.sizes}


def record_fold_plan(labels: Sequence[int], k: int, seed: int = 0) -> FoldPlan:
    """Label-stratified folds whose sizes differ by at most one"""
    labels = np.asarray(labels)
    if k < 2:
        raise ConfigurationError("k >= 2", f"k = {k}")
    if k > len(labels):
        raise ConfigurationError("k <= dataset size", f"k = {k}, {len(labels)} records")
    counts = np.bincount(labels.astype(np.int64))
    assignments = np.zeros(len(labels), dtype=np.int64)
    if counts.max() < k:
        # no class fills every fold; plain shuffled round robin
        order = np.random.default_rng(seed).permutation(len(labels))
        assignments[order] = np.arange(len(labels)) % k
    else:
        splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message="The least populated class")
            for fold, (_, test) in enumerate(splitter.split(np.zeros(len(labels)), labels)):
                assignments[test] = fold
    return FoldPlan(k=k, assignments=assignments, mode=RECORD_MODE, seed=seed)


def subject_fold_plan(subjects: Sequence[str], k: int, seed: int = 0) -> FoldPlan:
    """Subject-disjoint folds; the seed permutes which subjects group together"""
    subjects = np.asarray(subjects)
    unique = np.unique(subjects)
    if k < 2:
        raise ConfigurationError("k >= 2", f"k = {k}")
    if k > len(unique):
        raise ConfigurationError("k <= number of subjects", f"k = {k}, {len(unique)} subjects")
    relabel = dict(zip(unique, np.random.default_rng(seed).permutation(len(unique))))
    groups = np.array([relabel[s] for s in subjects])
    assignments = np.zeros(len(subjects), dtype=np.int64)
    for fold, (_, test) in enumerate(GroupKFold(n_splits=k).split(np.zeros(len(subjects)), groups=groups)):
        assignments[test] = fold
    return FoldPlan(k=k, assignments=assignments, mode=SUBJECT_MODE, seed=seed)


def validation_split(labels: np.ndarray, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Positions of a stratified train / validation split of `labels`"""
    positions = np.arange(len(labels))
    if len(positions) < 2:
        raise ConfigurationError("at least 2 records to split off a validation set", f"{len(positions)} records")
    stratify = labels if np.bincount(labels, minlength=2).min() >= 2 else None
    train_part, validation_part = train_test_split(
        positions, test_size=fraction, random_state=seed, stratify=stratify
    )
    return np.sort(train_part), np.sort(validation_part)


@dataclass
class PredictionRow:
    name: str
    subject: str
    label: int
    probability_af: float
    fold: int

    @property
    def predicted(self) -> int:
        return int(self.probability_af > 0.5)


def _fit_and_test(
    dataset: LabeledSegments, train_indices: np.ndarray, test_indices: np.ndarray,
    train_config: TrainConfig, detector_config: DetectorConfig, seed: int,
) -> np.ndarray:
    train_part = dataset.subset(train_indices)
    fit, validation = validation_split(train_part.labels, train_config.validation_fraction, seed)
    model = build_model(detector_config, seed=seed)
    model, _ = train(model, train_part.subset(fit), train_part.subset(validation), train_config)
    return forward_batch(model, dataset.samples[test_indices])[:, 1]


def _row(dataset: LabeledSegments, index: int, probability: float, fold: int) -> PredictionRow:
    return PredictionRow(
        name=dataset.names[index] if dataset.names else str(index),
        subject=dataset.subjects[index] if dataset.subjects else "",
        label=int(dataset.labels[index]),
        probability_af=float(probability),
        fold=fold,
    )


@dataclass
class KFoldResult:
    plan: FoldPlan
    fold_matrices: List[ConfusionMatrix]
    predictions: List[PredictionRow] = field(default_factory=list)

    @property
    def accumulated(self) -> ConfusionMatrix:
        total = ConfusionMatrix()
        for cm in self.fold_matrices:
            total = total + cm
        return total

    def to_dict(self) -> Dict[str, Any]:
        return {
            "protocol": "kfold",
            "plan": self.plan.to_dict(),
            "folds": [{"fold": i, "confusion": cm.to_dict(), "metrics": metrics(cm)}
                      for i, cm in enumerate(self.fold_matrices)],
            "accumulated": self.accumulated.to_dict(),
            "metrics": metrics(self.accumulated),
        }


def kfold(
    dataset: LabeledSegments,
    k: int = 6,
    seed: int = 0,
    mode: str = RECORD_MODE,
    train_config: Optional[TrainConfig] = None,
    detector_config: Optional[DetectorConfig] = None,
) -> KFoldResult:
    """Train on k-1 folds, test on the remaining one, accumulate the counts"""
    train_config = train_config or TrainConfig(seed=seed)
    detector_config = detector_config or DetectorConfig()
    if mode == SUBJECT_MODE:
        if not dataset.subjects:
            raise ConfigurationError("subject ids for subject-disjoint folds")
        plan = subject_fold_plan(dataset.subjects, k, seed)
    elif mode == RECORD_MODE:
        plan = record_fold_plan(dataset.labels, k, seed)
    else:
        raise ConfigurationError(f"mode in ({RECORD_MODE}, {SUBJECT_MODE})", mode)

    matrices, rows = [], []
    for fold, (train_indices, test_indices) in enumerate(plan.folds()):
        probabilities = _fit_and_test(dataset, train_indices, test_indices, train_config, detector_config, seed + fold)
        predicted = (probabilities > 0.5).astype(np.int64)
        cm = ConfusionMatrix.from_predictions(dataset.labels[test_indices], predicted)
        logger.info("fold %d/%d: %s", fold + 1, k, cm.to_dict())
        matrices.append(cm)
        rows.extend(_row(dataset, i, p, fold) for i, p in zip(test_indices, probabilities))
    return KFoldResult(plan=plan, fold_matrices=matrices, predictions=rows)


def subject_kfold(dataset: LabeledSegments, k: int = 6, seed: int = 0, **kwargs: Any) -> KFoldResult:
    return kfold(dataset, k=k, seed=seed, mode=SUBJECT_MODE, **kwargs)


@dataclass
class SubjectResult:
    subject: str
    confusion: ConfusionMatrix

    @property
    def accuracy(self) -> Optional[float]:
        return metrics(self.confusion)["accuracy"]


@dataclass
class LeaveOneSubjectOutResult:
    subjects: List[SubjectResult]
    skipped: List[str] = field(default_factory=list)
    predictions: List[PredictionRow] = field(default_factory=list)

    @property
    def accuracies(self) -> List[float]:
        return [s.accuracy for s in self.subjects if s.accuracy is not None]

    @property
    def mean_accuracy(self) -> Optional[float]:
        return float(np.mean(self.accuracies)) if self.accuracies else None

    @property
    def std_accuracy(self) -> Optional[float]:
        return float(np.std(self.accuracies)) if self.accuracies else None

    @property
    def accumulated(self) -> ConfusionMatrix:
        total = ConfusionMatrix()
        for s in self.subjects:
            total = total + s.confusion
        return total

    def to_dict(self) -> Dict[str, Any]:
        return {
            "protocol": "leave-one-subject-out",
            "subjects": [{"subject": s.subject, "confusion": s.confusion.to_dict(), "accuracy": s.accuracy}
                         for s in self.subjects],
            "skipped": self.skipped,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "accumulated": self.accumulated.to_dict(),
            "metrics": metrics(self.accumulated),
        }


def leave_one_subject_out(
    dataset: LabeledSegments,
    expected_subjects: Optional[Sequence[str]] = None,
    seed: int = 0,
    train_config: Optional[TrainConfig] = None,
    detector_config: Optional[DetectorConfig] = None,
) -> LeaveOneSubjectOutResult:
    """
    Hold out each subject in turn; the rest is split 80/20 into training and
    validation records. Subjects listed in expected_subjects without any
    record (all segments rejected upstream) are skipped with a warning.
    """
    train_config = train_config or TrainConfig(seed=seed)
    detector_config = detector_config or DetectorConfig()
    if not dataset.subjects:
        raise ConfigurationError("subject ids for leave-one-subject-out")
    present = sorted(set(dataset.subjects))
    skipped = sorted(set(expected_subjects or []) - set(present))
    for subject in skipped:
        logger.warning("subject %s has no records; skipped", subject)
    if len(present) < 3:
        raise ConfigurationError("at least 3 subjects with records", f"{len(present)} subjects")

    groups = np.array([present.index(s) for s in dataset.subjects])
    results, rows = [], []
    splitter = LeaveOneGroupOut()
    for fold, (train_indices, test_indices) in enumerate(splitter.split(dataset.samples, dataset.labels, groups)):
        subject = present[groups[test_indices[0]]]
        probabilities = _fit_and_test(dataset, train_indices, test_indices, train_config, detector_config, seed + fold)
        cm = ConfusionMatrix.from_predictions(dataset.labels[test_indices], (probabilities > 0.5).astype(np.int64))
        logger.info("held-out subject %s: %s", subject, cm.to_dict())
        results.append(SubjectResult(subject=subject, confusion=cm))
        rows.extend(_row(dataset, i, p, fold) for i, p in zip(test_indices, probabilities))
    return LeaveOneSubjectOutResult(subjects=results, skipped=skipped, predictions=rows)


def format_table(result) -> str:
    """Plain-text metrics table for either protocol"""
    lines = []
    if isinstance(result, KFoldResult):
        lines.append(f"{result.plan.k}-fold ({result.plan.mode} mode)")
        lines.append(f"{'fold':>6} {'tp':>5} {'fp':>5} {'tn':>5} {'fn':>5}")
        for fold, cm in enumerate(result.fold_matrices):
            lines.append(f"{fold:>6} {cm.tp:>5} {cm.fp:>5} {cm.tn:>5} {cm.fn:>5}")
    else:
        lines.append("leave-one-subject-out")
        for subject in result.subjects:
            lines.append(f"  {subject.subject:<20} accuracy {format_metric(subject.accuracy)}")
        lines.append(f"  mean {format_metric(result.mean_accuracy)}  std {format_metric(result.std_accuracy)}")
        if result.skipped:
            lines.append(f"  skipped: {', '.join(result.skipped)}")
    cm = result.accumulated
    lines.append(f"accumulated: tp={cm.tp} fp={cm.fp} tn={cm.tn} fn={cm.fn}")
    for name, value in metrics(cm).items():
        lines.append(f"{name:<12} {format_metric(value)}")
    return "\n".join(lines) + "\n"


def write_predictions_csv(path: Path, rows: Sequence[PredictionRow]) -> Path:
    """One line per tested record with its AF probability, for ROC derivation"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["name", "subject", "fold", "label", "predicted", "probability_af"])
        for row in rows:
            writer.writerow([row.name, row.subject, row.fold, CLASS_NAMES[row.label],
                             CLASS_NAMES[row.predicted], f"{row.probability_af:.6f}"])
    return path
