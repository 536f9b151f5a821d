"""Alignment distance between KLDS descriptors.

The weighted squared Frobenius distance splits as ``tau - 2 rho``; ``tau``
does not depend on the state basis, so the alignment distance is obtained
by maximizing

    rho(Q) = lambda_A tr(A1^T Q^T A2 Q) + tr(alpha1^T k(Y1, Y2) alpha2 Q)

over the orthogonal group. The maximization is a Jacobi-type method: sweeps
of Givens rotations, each solved exactly through a quartic in the sine.
Each connected component of O(n) is searched from its own starting points.
"""
from __future__ import annotations

import itertools
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _sweep
from ._sweep import REORTHO_EVERY, ROOT_IMAG_TOL, TIE_TOL  # noqa: F401
from .errors import InputError
from .kernel import gram
from .klds import (
    ORTHONORMALITY_TOL,
    KldsDescriptor,
    _check_compatible,
    check_orthogonal,
    mu_dist_sq,
)


@dataclass(frozen=True)
class DistanceWeights:
    """Weights of the transition (``lambda_A``) and bias (``lambda_mu``) terms."""

    lambda_A: float
    lambda_mu: float

    def __post_init__(self):
        if not self.lambda_A > 0:
            raise InputError(f"lambda_A must be positive, got {self.lambda_A}")
        if not self.lambda_mu >= 0:
            raise InputError(f"lambda_mu must be nonnegative, got {self.lambda_mu}")


@dataclass(frozen=True)
class AlignOptions:
    """Settings of the Jacobi alignment.

    ``n_init`` random starts are used per connected component of O(n), each
    being the best-rho member of a batch of ``batch_size`` random
    orthogonal matrices. The canonical starts ``I`` and
    ``diag(1, ..., 1, -1)`` are added when ``include_canonical_inits``.
    """

    tol: float = 1e-10
    max_sweeps: int = 100
    n_init: int = 4
    batch_size: int = 8
    seed: int = 0
    include_canonical_inits: bool = True

    def __post_init__(self):
        if self.n_init < 0 or (self.n_init == 0 and not self.include_canonical_inits):
            raise InputError("need at least one initialization per component")
        if self.batch_size < 1 or self.max_sweeps < 1:
            raise InputError("batch_size and max_sweeps must be >= 1")


@dataclass(frozen=True)
class GivensCoeffs:
    """Coefficients of ``k0 c^2 + k1 s^2 + k2 cs + k3 c + k4 s``."""

    k0: float
    k1: float
    k2: float
    k3: float
    k4: float

    def __iter__(self):
        return iter((self.k0, self.k1, self.k2, self.k3, self.k4))

    def value(self, c, s):
        return self.k0 * c * c + self.k1 * s * s + self.k2 * c * s + self.k3 * c + self.k4 * s


@dataclass
class AlignmentResult:
    Q: np.ndarray
    dist_sq: float
    rho: float
    rho_trace: list[float]
    sweeps: int
    converged: bool
    det_sign: int
    plane_trace: list[float] = field(default_factory=list, repr=False)


def tau(theta1: KldsDescriptor, theta2: KldsDescriptor, w: DistanceWeights, *, _cross=None) -> float:
    """Basis-independent part of the squared Frobenius distance.

    Uses ``C_i^T C_i = I_n``, so both observer traces equal ``n``.
    """
    _check_pair(theta1, theta2)
    mu_term = mu_dist_sq(theta1, theta2, _cross) if w.lambda_mu > 0 else 0.0
    return (
        w.lambda_A * (float(np.sum(theta1.A ** 2)) + float(np.sum(theta2.A ** 2)))
        + w.lambda_mu * mu_term
        + 2.0 * theta1.n
    )


def tau_full(theta1: KldsDescriptor, theta2: KldsDescriptor, w: DistanceWeights) -> float:
    """``tau`` with the observer traces evaluated explicitly through the Gram matrices."""
    _check_compatible(theta1, theta2)
    obs = sum(float(np.trace(t.alpha.T @ t.self_gram @ t.alpha)) for t in (theta1, theta2))
    return (
        w.lambda_A * (float(np.sum(theta1.A ** 2)) + float(np.sum(theta2.A ** 2)))
        + obs
        + w.lambda_mu * mu_dist_sq(theta1, theta2)
    )


def _check_pair(theta1: KldsDescriptor, theta2: KldsDescriptor) -> None:
    _check_compatible(theta1, theta2)
    if theta1.n != theta2.n:
        raise InputError(f"state dimensions differ: {theta1.n} vs {theta2.n}")
    for name, t in (("first", theta1), ("second", theta2)):
        r = t.orthonormality_residual
        if not r <= ORTHONORMALITY_TOL:
            raise InputError(f"{name} descriptor violates alpha^T K alpha = I (residual {r:.3e})")


def observer_cross(theta1: KldsDescriptor, theta2: KldsDescriptor, cross_gram=None) -> np.ndarray:
    """``C1^T C2 = alpha1^T k(Y1, Y2) alpha2``."""
    if cross_gram is None:
        cross_gram = gram(theta1.Y, theta2.Y, theta1.kernel, validate=False)
    return theta1.alpha.T @ cross_gram @ theta2.alpha


class _Pair:
    """Precomputed quantities for repeated evaluations of rho on one pair."""

    def __init__(self, theta1, theta2, w: DistanceWeights, cross_gram=None):
        _check_pair(theta1, theta2)
        if cross_gram is None:
            cross_gram = gram(theta1.Y, theta2.Y, theta1.kernel, validate=False)
        self.n = theta1.n
        self.lam = float(w.lambda_A)
        self.B = np.array(theta1.A)
        self.A2 = np.array(theta2.A)
        self.M = observer_cross(theta1, theta2, cross_gram)
        self.tau = tau(theta1, theta2, w, _cross=cross_gram)

    def rho(self, Q: np.ndarray) -> float:
        return self.lam * float(np.sum(self.B * (Q.T @ self.A2 @ Q))) + float(np.trace(self.M @ Q))

    def dist_sq(self, Q: np.ndarray) -> float:
        return max(self.tau - 2.0 * self.rho(Q), 0.0)


def rho(theta1, theta2, Q, w: DistanceWeights) -> float:
    """Basis-dependent part ``rho(theta1, Q . theta2)``."""
    Q = check_orthogonal(Q, theta1.n)
    return _Pair(theta1, theta2, w).rho(Q)


def frob_dist_sq(theta1, theta2, Q, w: DistanceWeights) -> float:
    """Squared weighted Frobenius distance between ``theta1`` and ``Q . theta2``.

    Values within roundoff below zero are clamped to 0.
    """
    Q = check_orthogonal(Q, theta1.n)
    return _Pair(theta1, theta2, w).dist_sq(Q)


def _coeffs(B, T, M, lam, p, q) -> GivensCoeffs:
    return GivensCoeffs(*_sweep.plane_coeffs(B, T, M, float(lam), p, q))


def _check_plane(n: int, p: int, q: int) -> None:
    if not (0 <= p < q < n):
        raise InputError(f"plane indices must satisfy 0 <= p < q < n={n}, got ({p}, {q})")


def givens_coeffs(theta, theta_tilde, p: int, q: int, w: DistanceWeights) -> GivensCoeffs:
    """Quadratic form of ``rho(theta, G_{p,q}(c, s) . theta_tilde)`` in ``(c, s)``.

    Indices are zero-based. The constant term is dropped.
    """
    _check_plane(theta.n, p, q)
    pair = _Pair(theta, theta_tilde, w)
    return _coeffs(pair.B, pair.A2, pair.M, pair.lam, p, q)


def quartic(k: GivensCoeffs) -> np.ndarray:
    """Coefficients (highest degree first) of the stationarity quartic in ``s``."""
    return _sweep.quartic_coeffs(*(float(x) for x in k))


def _real_roots(coeffs) -> list[float]:
    """Real roots (clipped to [-1, 1]) of a polynomial, highest degree first."""
    return _sweep.real_roots(np.asarray(coeffs, dtype=float)).tolist()


def maximize_on_circle(k: GivensCoeffs) -> tuple[float, float]:
    """Global maximizer ``(c, s)`` of the quadratic form on ``c^2 + s^2 = 1``.

    Candidates are the real quartic roots, the boundary points ``s = +-1``
    and the identity ``s = 0``; both signs of ``c`` are tried for each.
    Ties prefer the smallest ``|s|``, then positive ``c``.
    """
    return _sweep.maximize_on_circle(*(float(x) for x in k))


def solve_givens(theta, theta_tilde, p: int, q: int, w: DistanceWeights) -> tuple[float, float]:
    """Optimal rotation ``(c, s)`` in plane ``(p, q)`` for ``rho(theta, G . theta_tilde)``."""
    return maximize_on_circle(givens_coeffs(theta, theta_tilde, p, q, w))


def givens(n: int, p: int, q: int, c: float, s: float) -> np.ndarray:
    """The plane rotation ``G_{p,q}(c, s)`` (zero-based indices)."""
    _check_plane(n, p, q)
    G = np.eye(n)
    G[p, p] = G[q, q] = c
    G[p, q] = s
    G[q, p] = -s
    return G


def _planes(n: int) -> np.ndarray:
    return np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64).reshape(-1, 2)


def _jacobi(pair: _Pair, Q0: np.ndarray, opts: AlignOptions, rng: np.random.Generator) -> AlignmentResult:
    n = pair.n
    planes = _planes(n)
    # Sweep orders are drawn up front so the compiled loop stays seeded by rng.
    if len(planes):
        orders = rng.permuted(np.tile(np.arange(len(planes)), (opts.max_sweeps, 1)), axis=1)
    else:
        orders = np.zeros((opts.max_sweeps, 0), dtype=np.int64)
    Q, rho_tr, plane_tr, sweeps, converged = _sweep.sweeps(
        pair.B, pair.A2, pair.M, pair.lam, np.ascontiguousarray(Q0, dtype=float),
        planes, orders, float(opts.tol),
    )
    if n > 1 and np.max(np.abs(Q.T @ Q - np.eye(n))) > 1e-13:
        Q = scipy.linalg.polar(Q)[0]
    r = pair.rho(Q)
    return AlignmentResult(
        Q=Q,
        dist_sq=max(pair.tau - 2.0 * r, 0.0),
        rho=r,
        rho_trace=rho_tr.tolist(),
        sweeps=int(sweeps),
        converged=bool(converged),
        det_sign=1 if np.linalg.det(Q) > 0 else -1,
        plane_trace=plane_tr.tolist(),
    )


def jacobi_align(theta1, theta2, Q0, w: DistanceWeights, opts: AlignOptions = AlignOptions(),
                 rng: np.random.Generator | None = None) -> AlignmentResult:
    """Maximize ``rho(theta1, Q . theta2)`` by Givens sweeps starting from ``Q0``.

    Every sweep visits all planes in a freshly shuffled order. The returned
    ``Q`` stays in the connected component of ``Q0``.
    """
    Q0 = check_orthogonal(Q0, theta1.n)
    if rng is None:
        rng = np.random.default_rng(opts.seed)
    return _jacobi(_Pair(theta1, theta2, w), Q0, opts, rng)


def random_orthogonal(n: int, rng: np.random.Generator, det_sign: int = 1) -> np.ndarray:
    """Haar-distributed orthogonal matrix with the requested determinant sign."""
    Z = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    Q = Q * np.where(np.diag(R) < 0, -1.0, 1.0)
    if np.linalg.det(Q) * det_sign < 0:
        Q[:, -1] = -Q[:, -1]
    return Q


def reflection(n: int) -> np.ndarray:
    R = np.eye(n)
    R[-1, -1] = -1.0
    return R


def _initializations(pair: _Pair, opts: AlignOptions, rng: np.random.Generator) -> list[np.ndarray]:
    n = pair.n
    inits = []
    for sign in (1, -1):
        if opts.include_canonical_inits:
            inits.append(np.eye(n) if sign > 0 else reflection(n))
        for _ in range(opts.n_init):
            batch = [random_orthogonal(n, rng, sign) for _ in range(opts.batch_size)]
            inits.append(max(batch, key=pair.rho))
    return inits


def _align(pair: _Pair, opts: AlignOptions, extra_inits: Sequence = ()) -> AlignmentResult:
    rng = np.random.default_rng(opts.seed)
    inits = list(extra_inits) + _initializations(pair, opts, rng)
    best = None
    for k, Q0 in enumerate(inits):
        res = _jacobi(pair, Q0, opts, np.random.default_rng([opts.seed, k]))
        if best is None or res.dist_sq < best.dist_sq:
            best = res
    return best


def alignment_distance(theta1, theta2, w: DistanceWeights, opts: AlignOptions = AlignOptions(),
                       extra_inits: Sequence = ()) -> AlignmentResult:
    """Alignment distance ``min_Q d_F(theta1, Q . theta2)^2`` over both components of O(n).

    ``extra_inits`` are additional starting points (e.g. a warm start) tried
    before the standard ones. The best run by ``dist_sq`` is returned.
    """
    extra = [check_orthogonal(Q, theta1.n) for Q in extra_inits]
    return _align(_Pair(theta1, theta2, w), opts, extra)


def _pair_job(args):
    theta1, theta2, w, opts = args
    return alignment_distance(theta1, theta2, w, opts).dist_sq


def distance_matrix(set1: Sequence[KldsDescriptor], set2: Sequence[KldsDescriptor] | None,
                    w: DistanceWeights, opts: AlignOptions = AlignOptions(), n_jobs: int = 1) -> np.ndarray:
    """Pairwise alignment distances; ``set2=None`` (or ``set2 is set1``) yields a symmetric self-matrix.

    For the self-matrix only the upper triangle (with diagonal) is computed.
    """
    symmetric = set2 is None or set2 is set1
    if symmetric:
        set2 = set1
    jobs = [
        (i, j) for i in range(len(set1)) for j in range(len(set2))
        if not symmetric or j >= i
    ]
    args = [(set1[i], set2[j], w, opts) for i, j in jobs]
    if n_jobs == 1 or len(args) < 2:
        values = [_pair_job(a) for a in args]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=None if n_jobs < 1 else n_jobs) as ex:
            values = list(ex.map(_pair_job, args, chunksize=max(1, len(args) // 64)))
    D = np.zeros((len(set1), len(set2)))
    for (i, j), v in zip(jobs, values):
        D[i, j] = v
        if symmetric:
            D[j, i] = v
    return D
