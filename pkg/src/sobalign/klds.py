"""Kernelized linear dynamic system descriptors.

A descriptor ``(A, Y, alpha, beta)`` describes the system

    x_{t+1} = A x_t,    phi(y_t) = Phi (beta + alpha x_t)

where ``Phi`` stacks the feature maps of the sample columns ``Y``. The
feature-space observer is ``C = Phi alpha`` and the bias ``mu = Phi beta``.
"""
from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError, InputError
from .kernel import Kernel, as_stream, center_gram, centering_matrix, gram

#: Orthonormality residual accepted by :func:`validate`.
ORTHONORMALITY_TOL = 1e-8
#: Spectral norm bound accepted by :func:`validate` (``||A||_2 <= 1 - tol``).
STABILITY_TOL = 1e-6
#: Orthogonality tolerance for state-space changes of basis.
ORTHOGONALITY_TOL = 1e-10


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class KldsDescriptor:
    """Immutable KLDS parameter tuple.

    Attributes:
        A: ``n x n`` state transition matrix.
        Y: ``p x N`` sample matrix of histogram columns.
        alpha: ``N x n`` observer coefficients (``C = Phi alpha``).
        beta: length-``N`` bias coefficients (``mu = Phi beta``).
        kernel: kernel defining the feature space.
    """

    A: np.ndarray
    Y: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    kernel: Kernel = Kernel.CHI2

    def __post_init__(self):
        A, Y = _frozen(self.A), _frozen(self.Y)
        alpha, beta = _frozen(self.alpha), _frozen(self.beta)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InputError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        if Y.ndim != 2:
            raise InputError(f"Y must be a p x N matrix, got shape {Y.shape}")
        N = Y.shape[1]
        if alpha.shape != (N, n):
            raise InputError(f"alpha must have shape {(N, n)}, got {alpha.shape}")
        if beta.shape != (N,):
            raise InputError(f"beta must have shape {(N,)}, got {beta.shape}")
        if N < n:
            raise InputError(f"need at least n={n} samples, got N={N}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "kernel", Kernel(self.kernel))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[0]

    @property
    def N(self) -> int:
        return self.Y.shape[1]

    @functools.cached_property
    def self_gram(self) -> np.ndarray:
        K = gram(self.Y, self.Y, self.kernel, validate=False)
        K.setflags(write=False)
        return K

    @functools.cached_property
    def mu_norm_sq(self) -> float:
        return float(self.beta @ self.self_gram @ self.beta)

    @functools.cached_property
    def orthonormality_residual(self) -> float:
        G = self.alpha.T @ self.self_gram @ self.alpha
        return float(np.linalg.norm(G - np.eye(self.n)))

    def replace(self, **changes) -> "KldsDescriptor":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class EstimationOptions:
    n: int
    stability_margin: float = 1e-4
    eig_floor: float = 1e-10

    def __post_init__(self):
        if self.n < 1:
            raise InputError(f"state dimension must be >= 1, got {self.n}")
        if not 0 < self.stability_margin < 1:
            raise InputError("stability_margin must lie in (0, 1)")


def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so that the first non-negligible entry is positive."""
    V = V.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        thresh = 1e-12 * np.max(np.abs(col))
        idx = np.flatnonzero(np.abs(col) > thresh)
        if idx.size and col[idx[0]] < 0:
            V[:, j] = -col
    return V


def sorted_eigh(K: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric EVD sorted in descending order with the sign convention applied."""
    lam, V = np.linalg.eigh(K)
    order = np.argsort(lam)[::-1]
    return lam[order], _fix_signs(V[:, order])


def fit_transition(X: np.ndarray, stability_margin: float) -> np.ndarray:
    """Least-squares ``A`` with ``X[:, 1:] ~ A X[:, :-1]``, rescaled if unstable.

    When the unconstrained fit has spectral norm at least ``1 - margin`` it
    is scaled down to exactly that norm.
    """
    X0, X1 = X[:, :-1], X[:, 1:]
    A = np.linalg.lstsq(X0.T, X1.T, rcond=None)[0].T
    bound = 1.0 - stability_margin
    norm = np.linalg.norm(A, 2)
    if norm >= bound:
        A = A * (bound / norm)
    return A


def estimate(Y, opts: EstimationOptions | int, kernel=Kernel.CHI2) -> KldsDescriptor:
    """Identify a KLDS from a histogram stream via kernel PCA.

    The observer coefficients are orthonormal against the *uncentered*
    Gram matrix: the kernel-PCA coefficients obtained from the centered Gram
    are left-multiplied by the centering matrix, which makes
    ``C = Phi alpha`` hold for the plain feature map.

    Raises:
        EstimationError: if the centered Gram matrix has fewer than ``n``
            eigenvalues above ``eig_floor * lambda_max``.
    """
    if isinstance(opts, int):
        opts = EstimationOptions(n=opts)
    Y = as_stream(Y, min_columns=2)
    n = opts.n
    N = Y.shape[1]
    if N < n + 1:
        raise InputError(f"state dimension n={n} needs at least {n + 1} samples, got N={N}")

    K = gram(Y, Y, kernel, validate=False)
    Kc = center_gram(K)
    lam, V = sorted_eigh(Kc)
    lam_max = lam[0]
    if not lam_max > 0 or lam_max < 1e-14:
        raise EstimationError("centered Gram matrix vanishes: the stream is constant")
    usable = int(np.count_nonzero(lam > opts.eig_floor * lam_max))
    if usable < n:
        raise EstimationError(
            f"centered Gram matrix has rank {usable} (above floor), cannot fit n={n}; "
            f"highest achievable state dimension is {usable}"
        )
    lam_n, V_n = lam[:n], V[:, :n]
    alpha0 = V_n / np.sqrt(lam_n)
    X = np.sqrt(lam_n)[:, None] * V_n.T
    A = fit_transition(X, opts.stability_margin)
    alpha = centering_matrix(N) @ alpha0
    beta = np.full(N, 1.0 / N)
    return KldsDescriptor(A=A, Y=Y, alpha=alpha, beta=beta, kernel=kernel)


def latent_states(theta: KldsDescriptor) -> np.ndarray:
    """State sequence ``X = C^T (Phi - mu 1^T)`` of the training samples (``n x N``)."""
    K = theta.self_gram
    return theta.alpha.T @ (K - (K @ theta.beta)[:, None])


@dataclass(frozen=True)
class ValidationReport:
    orthonormality_residual: float
    spectral_norm: float
    histograms_valid: bool
    orthonormal: bool = field(init=False)
    stable: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "orthonormal", self.orthonormality_residual <= ORTHONORMALITY_TOL)
        object.__setattr__(self, "stable", self.spectral_norm <= 1.0 - STABILITY_TOL)

    @property
    def passed(self) -> bool:
        return self.orthonormal and self.stable and self.histograms_valid

    def as_dict(self) -> dict:
        return {
            "orthonormality_residual": self.orthonormality_residual,
            "orthonormal": self.orthonormal,
            "spectral_norm": self.spectral_norm,
            "stable": self.stable,
            "histograms_valid": self.histograms_valid,
            "passed": self.passed,
        }


def validate(theta: KldsDescriptor) -> ValidationReport:
    """Check membership in the set of valid, stable descriptors. Never raises."""
    try:
        as_stream(theta.Y, renormalize=False)
        hist_ok = True
    except InputError:
        hist_ok = False
    try:
        resid = theta.orthonormality_residual
    except Exception:  # noqa: BLE001 - report, never throw
        resid = float("inf")
    if not np.isfinite(resid):
        resid = float("inf")
    return ValidationReport(
        orthonormality_residual=resid,
        spectral_norm=float(np.linalg.norm(theta.A, 2)),
        histograms_valid=hist_ok,
    )


def check_orthogonal(Q, n: int | None = None, tol: float = ORTHOGONALITY_TOL) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or (n is not None and Q.shape[0] != n):
        raise InputError(f"expected an orthogonal {n} x {n} matrix, got shape {Q.shape}")
    err = np.max(np.abs(Q.T @ Q - np.eye(Q.shape[0])))
    if err > tol:
        raise InputError(f"matrix is not orthogonal (max |Q^T Q - I| = {err:.3e})")
    return Q


def transform(theta: KldsDescriptor, Q) -> KldsDescriptor:
    """Orthogonal change of state basis: ``(Q^T A Q, Y, alpha Q, beta)``."""
    Q = check_orthogonal(Q, theta.n)
    out = KldsDescriptor(Q.T @ theta.A @ Q, theta.Y, theta.alpha @ Q, theta.beta, theta.kernel)
    # The sample Gram does not depend on the basis.
    if "self_gram" in theta.__dict__:
        out.__dict__["self_gram"] = theta.self_gram
    return out


def _check_compatible(theta1: KldsDescriptor, theta2: KldsDescriptor) -> None:
    if theta1.p != theta2.p:
        raise InputError(f"histogram dimensions differ: {theta1.p} vs {theta2.p}")
    if theta1.kernel is not theta2.kernel:
        raise InputError("descriptors use different kernels")


def mu_inner(theta1: KldsDescriptor, theta2: KldsDescriptor) -> float:
    """Feature-space inner product of the biases, ``beta1^T k(Y1, Y2) beta2``."""
    _check_compatible(theta1, theta2)
    if theta1 is theta2:
        return theta1.mu_norm_sq
    return float(theta1.beta @ gram(theta1.Y, theta2.Y, theta1.kernel, validate=False) @ theta2.beta)


def mu_dist_sq(theta1: KldsDescriptor, theta2: KldsDescriptor, cross: np.ndarray | None = None) -> float:
    """``||mu1 - mu2||^2`` expanded through kernel evaluations."""
    _check_compatible(theta1, theta2)
    if cross is None:
        cross_term = mu_inner(theta1, theta2)
    else:
        cross_term = float(theta1.beta @ cross @ theta2.beta)
    return theta1.mu_norm_sq + theta2.mu_norm_sq - 2.0 * cross_term
