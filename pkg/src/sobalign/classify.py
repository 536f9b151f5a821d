"""1-NN and nearest-class-center classification under the alignment distance."""
from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .align import AlignOptions, DistanceWeights, alignment_distance, distance_matrix
from .errors import InputError
from .frechet import FrechetResult, MeanOptions, frechet_mean, medoid
from .kernel import gram
from .klds import KldsDescriptor

__all__ = [
    "CenterKind", "ClassModel", "ClassificationResult", "LabeledDataset", "confusion_matrix",
    "distance_matrix", "grid_search_lambda", "mu_dist_matrix", "ncc_classify", "ncc_train",
    "nn_classify",
]


@dataclass
class LabeledDataset:
    items: list[tuple[KldsDescriptor, str]]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.items = [(t, str(lab)) for t, lab in self.items]
        if not self.items:
            raise InputError("dataset is empty")
        t0 = self.items[0][0]
        for i, (t, _) in enumerate(self.items):
            if (t.n, t.p, t.kernel) != (t0.n, t0.p, t0.kernel):
                raise InputError(f"item {i} has (n, p) = {(t.n, t.p)}, expected {(t0.n, t0.p)}")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def descriptors(self) -> list[KldsDescriptor]:
        return [t for t, _ in self.items]

    @property
    def labels(self) -> list[str]:
        return [lab for _, lab in self.items]

    @property
    def classes(self) -> list[str]:
        return sorted(set(self.labels))

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset([self.items[i] for i in idx], dict(self.metadata))


class CenterKind(str, enum.Enum):
    FRECHET = "frechet"
    MEDOID = "medoid"


@dataclass
class ClassModel:
    centers: dict[str, KldsDescriptor]
    center_kind: CenterKind
    #: Per class: the Fréchet result, or the medoid's index in the training set.
    details: dict = field(default_factory=dict)

    @property
    def classes(self) -> list[str]:
        return sorted(self.centers)


class ClassificationResult(NamedTuple):
    labels: list[str]
    accuracy: float
    confusion: np.ndarray
    classes: list[str]


def confusion_matrix(true: Sequence[str], pred: Sequence[str], classes: Sequence[str]) -> np.ndarray:
    """Counts with true classes in rows and predictions in columns."""
    pos = {c: i for i, c in enumerate(classes)}
    C = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(true, pred):
        C[pos[t], pos[p]] += 1
    return C


def _result(true, pred, extra_classes=()) -> ClassificationResult:
    classes = sorted(set(true) | set(pred) | set(extra_classes))
    acc = float(np.mean([t == p for t, p in zip(true, pred)])) if true else float("nan")
    return ClassificationResult(list(pred), acc, confusion_matrix(true, pred, classes), classes)


def mu_dist_matrix(set1: Sequence[KldsDescriptor], set2: Sequence[KldsDescriptor]) -> np.ndarray:
    """``||mu_i - mu_j||^2`` for all pairs, from one joint Gram matrix."""
    Y = np.hstack([t.Y for t in set1] + [t.Y for t in set2])
    K = gram(Y, Y, set1[0].kernel, validate=False)
    B1 = _block_beta(set1, 0, Y.shape[1])
    B2 = _block_beta(set2, sum(t.N for t in set1), Y.shape[1])
    G = B1.T @ K @ B2
    n1 = np.einsum("ij,ij->j", B1, K @ B1)
    n2 = np.einsum("ij,ij->j", B2, K @ B2)
    return np.maximum(n1[:, None] + n2[None, :] - 2.0 * G, 0.0)


def _block_beta(descriptors, offset, total) -> np.ndarray:
    B = np.zeros((total, len(descriptors)))
    for j, t in enumerate(descriptors):
        B[offset:offset + t.N, j] = t.beta
        offset += t.N
    return B


def nn_classify(train: LabeledDataset, test: LabeledDataset, w: DistanceWeights,
                align_opts: AlignOptions = AlignOptions(), *, D: np.ndarray | None = None,
                exclude_self: bool = False, n_jobs: int = 1) -> ClassificationResult:
    """Label each test item with its nearest training item (smallest index on ties).

    ``exclude_self`` ignores the diagonal, giving leave-one-out semantics
    when test and train are the same list. ``D`` may hold precomputed
    ``test x train`` distances.
    """
    if D is None:
        same = test is train
        D = distance_matrix(train.descriptors if same else test.descriptors,
                            None if same else train.descriptors, w, align_opts, n_jobs=n_jobs)
    D = np.array(D, dtype=float)
    if D.shape != (len(test), len(train)):
        raise InputError(f"distance matrix has shape {D.shape}, expected {(len(test), len(train))}")
    if exclude_self:
        if len(test) != len(train):
            raise InputError("exclude_self needs test and train of equal length")
        if len(train) < 2:
            raise InputError("exclude_self needs at least two training items")
        np.fill_diagonal(D, np.inf)
    tl = train.labels
    pred = [tl[int(np.argmin(row))] for row in D]
    return _result(test.labels, pred, train.classes)


def _class_indices(ds: LabeledDataset) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for i, lab in enumerate(ds.labels):
        out.setdefault(lab, []).append(i)
    return out


def ncc_train(train: LabeledDataset, w: DistanceWeights, mean_opts: MeanOptions = MeanOptions(),
              align_opts: AlignOptions = AlignOptions(), center_kind=CenterKind.FRECHET,
              *, D: np.ndarray | None = None) -> ClassModel:
    """One center per class: its Fréchet mean or its medoid.

    A precomputed training self-distance matrix ``D`` is reused for the
    medoids (which also seed the Fréchet iteration).
    """
    kind = CenterKind(center_kind)
    centers, details = {}, {}
    for lab, idx in sorted(_class_indices(train).items()):
        members = [train.items[i][0] for i in idx]
        sub = None if D is None else np.asarray(D)[np.ix_(idx, idx)]
        if kind is CenterKind.FRECHET:
            res: FrechetResult = frechet_mean(members, w, mean_opts, align_opts, D=sub)
            centers[lab], details[lab] = res.mean, res
        else:
            k = medoid(members, w, align_opts, D=sub)
            centers[lab], details[lab] = members[k], idx[k]
    return ClassModel(centers, kind, details)


def ncc_classify(model: ClassModel, test: LabeledDataset, w: DistanceWeights,
                 align_opts: AlignOptions = AlignOptions(), *,
                 D: np.ndarray | None = None) -> ClassificationResult:
    """Nearest class center per test item; ties go to the lexicographically first class."""
    classes = model.classes
    if not classes:
        raise InputError("model has no classes")
    if D is None:
        centers = [model.centers[c] for c in classes]
        D = np.array([[alignment_distance(c, t, w, align_opts).dist_sq for c in centers]
                      for t in test.descriptors])
    D = np.asarray(D, dtype=float).reshape(len(test), len(classes))
    pred = [classes[int(np.argmin(row))] for row in D]
    return _result(test.labels, pred, classes)


def grid_search_lambda(train: LabeledDataset, folds: int, lambda_A_grid: Sequence[float],
                       lambda_mu_grid: Sequence[float], align_opts: AlignOptions = AlignOptions(),
                       seed: int = 0, n_jobs: int = 1):
    """Stratified k-fold 1-NN accuracy over a grid of weights.

    Returns ``(best_w, table)`` where ``table`` rows are
    ``(lambda_A, lambda_mu, accuracy)`` in grid order (ascending
    ``lambda_A``, then ``lambda_mu``); accuracy is pooled over all folds.
    Ties go to the first row. The aligner does not depend on ``lambda_mu``,
    so each ``lambda_A`` needs only one distance matrix.
    """
    if folds < 2:
        raise InputError("need at least two folds")
    counts = {c: len(i) for c, i in _class_indices(train).items()}
    short = {c: k for c, k in counts.items() if k < folds}
    if short:
        raise InputError(f"every class needs at least {folds} items; too few in {sorted(short)}")
    grid_A = sorted(set(float(x) for x in lambda_A_grid))
    grid_mu = sorted(set(float(x) for x in lambda_mu_grid))
    if not grid_A or not grid_mu:
        raise InputError("grids must be nonempty")
    for x in grid_A:
        DistanceWeights(x, 0.0)
    for x in grid_mu:
        DistanceWeights(1.0, x)

    labels = np.array(train.labels)
    splits = list(StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
                  .split(np.zeros(len(labels)), labels))
    descs = train.descriptors
    mu = mu_dist_matrix(descs, descs) if any(x > 0 for x in grid_mu) else None
    table = []
    for lam_A in grid_A:
        D0 = distance_matrix(descs, None, DistanceWeights(lam_A, 0.0), align_opts, n_jobs=n_jobs)
        for lam_mu in grid_mu:
            D = D0 if lam_mu == 0 else D0 + lam_mu * mu
            correct = 0
            for tr, te in splits:
                nearest = tr[np.argmin(D[np.ix_(te, tr)], axis=1)]
                correct += int(np.sum(labels[nearest] == labels[te]))
            table.append((lam_A, lam_mu, correct / len(labels)))
    best = max(range(len(table)), key=lambda i: (table[i][2], -i))
    return DistanceWeights(table[best][0], table[best][1]), table
