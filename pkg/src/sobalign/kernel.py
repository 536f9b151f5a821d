"""Histogram validation and the exponential chi-squared kernel.

Every feature-space quantity in this package is expressed through Gram
matrices computed here; the feature map itself is never formed.

Streams are stored as ``p x N`` arrays: one histogram per column, columns
ordered in time.
"""
from __future__ import annotations

import enum

import numpy as np

from .errors import HistogramError, InputError

#: Histograms whose l1 mass deviates from one by at most this much are
#: renormalized on ingestion; larger deviations are rejected.
RENORMALIZE_TOL = 1e-6
#: Mass tolerance of a validated histogram.
MASS_TOL = 1e-9


class Kernel(str, enum.Enum):
    CHI2 = "chi2"


def as_histogram(y, *, renormalize: bool = True) -> np.ndarray:
    """Validate a single histogram and return it as a float vector."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise InputError(f"histogram must be a nonempty vector, got shape {y.shape}")
    return as_stream(y[:, None], renormalize=renormalize, min_columns=1)[:, 0]


def as_stream(Y, *, renormalize: bool = True, min_columns: int = 1) -> np.ndarray:
    """Validate a ``p x N`` matrix of histogram columns.

    Columns whose mass is within ``RENORMALIZE_TOL`` of one are rescaled to
    unit mass (when ``renormalize``); anything else raises
    :class:`HistogramError`. The returned array is a fresh copy.
    """
    Y = np.array(Y, dtype=float, copy=True)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise InputError(f"stream must be a p x N matrix, got shape {Y.shape}")
    if Y.shape[1] < min_columns:
        raise InputError(f"stream needs at least {min_columns} columns, got {Y.shape[1]}")
    if not np.all(np.isfinite(Y)):
        raise HistogramError("histogram entries must be finite")
    neg = np.argwhere(Y < 0)
    if neg.size:
        i, j = neg[0]
        raise HistogramError(f"negative bin {i} in column {j}: {Y[i, j]!r}")
    mass = Y.sum(axis=0)
    dev = np.abs(mass - 1.0)
    bad = np.flatnonzero(dev > (RENORMALIZE_TOL if renormalize else MASS_TOL))
    if bad.size:
        j = bad[0]
        raise HistogramError(f"column {j} has l1 mass {mass[j]!r}, expected 1")
    if renormalize:
        Y /= mass
    return Y


def _check_kernel(kernel) -> None:
    if Kernel(kernel) is not Kernel.CHI2:  # pragma: no cover - single member
        raise InputError(f"unsupported kernel {kernel!r}")


def _chi2_exponent(Y1: np.ndarray, Y2: np.ndarray) -> np.ndarray:
    # Bins are accumulated strictly left to right so that results do not
    # depend on array layout; (a-b)^2 and a+b are symmetric in IEEE
    # arithmetic, hence gram(Y1, Y2) == gram(Y2, Y1).T bit for bit.
    acc = np.zeros((Y1.shape[1], Y2.shape[1]))
    with np.errstate(invalid="ignore", divide="ignore"):
        for i in range(Y1.shape[0]):
            a = Y1[i][:, None]
            b = Y2[i][None, :]
            den = a + b
            term = np.where(den > 0, (a - b) ** 2 / den, 0.0)
            acc += term
    return acc


def chi2_kernel(y1, y2) -> float:
    """Exponential chi-squared kernel between two histograms.

    Bins empty in both histograms are skipped. The result lies in (0, 1]
    and equals one exactly when the histograms coincide.
    """
    y1 = as_histogram(y1)
    y2 = as_histogram(y2)
    if y1.shape != y2.shape:
        raise InputError(f"histogram dimensions differ: {y1.size} vs {y2.size}")
    return float(np.exp(-0.5 * _chi2_exponent(y1[:, None], y2[:, None])[0, 0]))


def gram(Y1, Y2, kernel=Kernel.CHI2, *, validate: bool = True) -> np.ndarray:
    """Kernel matrix with entry ``(i, j) = k(Y1[:, i], Y2[:, j])`` (uncentered)."""
    _check_kernel(kernel)
    if validate:
        Y1 = as_stream(Y1)
        Y2 = as_stream(Y2)
    if Y1.shape[0] != Y2.shape[0]:
        raise InputError(f"histogram dimensions differ: {Y1.shape[0]} vs {Y2.shape[0]}")
    return np.exp(-0.5 * _chi2_exponent(Y1, Y2))


def centering_matrix(N: int) -> np.ndarray:
    return np.eye(N) - np.full((N, N), 1.0 / N)


def center_gram(K) -> np.ndarray:
    """Double-center a square Gram matrix: ``H K H`` with ``H = I - 11^T/N``."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InputError(f"center_gram needs a square matrix, got shape {K.shape}")
    # Row/column mean subtraction equals H K H but is cheaper and keeps the
    # result exactly symmetric after explicit symmetrization.
    Kc = K - K.mean(axis=0, keepdims=True)
    Kc = Kc - Kc.mean(axis=1, keepdims=True)
    return 0.5 * (Kc + Kc.T)
