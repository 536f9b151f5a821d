"""Fréchet means of KLDS sets under the alignment distance.

The mean is found by alternating between aligning every member to the
current mean and re-estimating the mean for fixed aligners. The sample
matrix of the mean is fixed up front, either to the concatenated samples
of all members or to a k-means compression of them.
"""
from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from sklearn.cluster import KMeans

from .align import AlignOptions, DistanceWeights, _align, _Pair, alignment_distance, distance_matrix
from .errors import InputError, NumericalError
from .kernel import Kernel, as_stream, gram
from .klds import KldsDescriptor, check_orthogonal, sorted_eigh


#: Starting aligners: all identities, the aligners of every member to the
#: medoid, or both (the alternation is run twice and the lower cost kept).
INITS = ("identity", "medoid", "both")


@dataclass(frozen=True)
class MeanOptions:
    """Settings of the Fréchet mean iteration.

    ``n_bar = 0`` uses every distinct column of the concatenated samples as
    the sample matrix of the mean; otherwise ``n_bar`` k-means landmarks
    are used.
    """

    n_bar: int = 0
    kmeans_iters: int = 50
    kmeans_restarts: int = 3
    seed: int = 0
    outer_tol: float = 1e-8
    max_outer: int = 50
    ridge: float = 1e-10
    eig_floor: float = 1e-10
    init: str = "both"

    def __post_init__(self):
        if self.n_bar < 0 or self.max_outer < 1:
            raise InputError("n_bar must be >= 0 and max_outer >= 1")
        if self.init not in INITS:
            raise InputError(f"init must be one of {INITS}, got {self.init!r}")


@dataclass
class FrechetResult:
    mean: KldsDescriptor
    aligners: list[np.ndarray]
    cost_trace: list[float]
    converged: bool
    distances: list[float] = field(default_factory=list)
    init: str = "identity"

    @property
    def cost(self) -> float:
        """``g`` at the returned mean (the best iterate)."""
        return min(self.cost_trace)


def _check_set(descriptors: Sequence[KldsDescriptor]) -> None:
    if len(descriptors) == 0:
        raise InputError("need at least one descriptor")
    first = descriptors[0]
    for i, t in enumerate(descriptors[1:], start=1):
        if (t.n, t.p, t.kernel) != (first.n, first.p, first.kernel):
            raise InputError(
                f"descriptor {i} has (n, p, kernel) = {(t.n, t.p, t.kernel.value)}, "
                f"expected {(first.n, first.p, first.kernel.value)}"
            )


def concat_samples(descriptors: Sequence[KldsDescriptor]) -> np.ndarray:
    """Column-wise concatenation ``[Y_1 ... Y_K]`` of the sample matrices."""
    if len(descriptors) == 0:
        raise InputError("need at least one descriptor")
    p = descriptors[0].p
    for i, t in enumerate(descriptors):
        if t.p != p:
            raise InputError(f"descriptor {i} has histogram dimension {t.p}, expected {p}")
    return np.hstack([t.Y for t in descriptors])


def sample_index(descriptors: Sequence[KldsDescriptor]) -> list[tuple[int, int]]:
    """``(descriptor, local column)`` for every column of :func:`concat_samples`."""
    return [(i, j) for i, t in enumerate(descriptors) for j in range(t.N)]


def _offsets(descriptors: Sequence[KldsDescriptor]) -> np.ndarray:
    return np.concatenate(([0], np.cumsum([t.N for t in descriptors])))


def distinct_columns(Y: np.ndarray) -> np.ndarray:
    """Drop exact duplicate columns, keeping first occurrences in order."""
    _, idx = np.unique(Y, axis=1, return_index=True)
    return Y[:, np.sort(idx)]


def kmeans_landmarks(Ystar, n_bar: int, seed: int = 0, *, iters: int = 50, restarts: int = 3) -> np.ndarray:
    """``n_bar`` k-means centroids of the columns of ``Ystar``, renormalized to unit mass.

    Uses k-means++ seeding and keeps the best of ``restarts`` runs by
    within-cluster sum of squares. ``n_bar`` equal to the number of
    columns returns the columns unchanged.
    """
    Ystar = as_stream(Ystar)
    N = Ystar.shape[1]
    if not 1 <= n_bar <= N:
        raise InputError(f"n_bar must lie in [1, {N}], got {n_bar}")
    if n_bar == N:
        return Ystar.copy()
    km = KMeans(n_clusters=n_bar, init="k-means++", n_init=restarts, max_iter=iters,
                random_state=seed, algorithm="lloyd")
    with warnings.catch_warnings():
        # Fewer distinct points than clusters is legitimate input.
        warnings.simplefilter("ignore")
        km.fit(Ystar.T)
    centers = np.clip(km.cluster_centers_.T, 0.0, None)
    return centers / centers.sum(axis=0, keepdims=True)


def mean_beta(Ybar, Ystar, descriptors: Sequence[KldsDescriptor], kernel=Kernel.CHI2,
              ridge: float = 1e-10) -> np.ndarray:
    """Bias coefficients of the mean: ``(1/K) (k(Yb, Yb) + ridge I)^-1 k(Yb, Y*) b``."""
    K = len(descriptors)
    b = np.concatenate([t.beta for t in descriptors])
    Kbb = gram(Ybar, Ybar, kernel)
    rhs = gram(Ybar, Ystar, kernel) @ b
    return _solve_beta(Kbb, rhs, K, ridge)


def _solve_beta(Kbb: np.ndarray, rhs: np.ndarray, K: int, ridge: float) -> np.ndarray:
    try:
        sol = scipy.linalg.solve(Kbb + ridge * np.eye(Kbb.shape[0]), rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalError(f"regularized landmark Gram matrix is singular: {exc}") from exc
    return sol / K


def mean_A(A_list: Sequence[np.ndarray], Q_list: Sequence[np.ndarray]) -> np.ndarray:
    """Average of the aligned transition matrices ``Q_i^T A_i Q_i``."""
    if len(A_list) != len(Q_list) or not A_list:
        raise InputError("need equally many, and at least one, transition matrices and aligners")
    return sum(Q.T @ A @ Q for A, Q in zip(A_list, Q_list)) / len(A_list)


class _LandmarkBasis:
    """EVD of the landmark Gram matrix and its cross-Gram with all samples."""

    def __init__(self, Ybar: np.ndarray, Ystar: np.ndarray, kernel, n: int, eig_floor: float):
        self.Ybar = Ybar
        self.gram = gram(Ybar, Ybar, kernel, validate=False)
        self.cross = gram(Ybar, Ystar, kernel, validate=False)
        lam, V = sorted_eigh(self.gram)
        keep = lam > eig_floor * lam[0]
        r = int(np.count_nonzero(keep))
        if r < n:
            raise NumericalError(
                f"landmark Gram matrix has numerical rank {r}, below the state dimension {n}"
            )
        self.V = V[:, keep]
        self.inv_sqrt = 1.0 / np.sqrt(lam[keep])

    def alpha(self, a: np.ndarray) -> np.ndarray:
        n = a.shape[1]
        W = self.inv_sqrt[:, None] * (self.V.T @ (self.cross @ a))
        U, _, Vt = np.linalg.svd(W, full_matrices=False)
        alpha = self.V @ (self.inv_sqrt[:, None] * (U[:, :n] @ Vt))
        # One symmetric re-orthonormalization step against roundoff.
        G = alpha.T @ self.gram @ alpha
        lam, E = np.linalg.eigh(0.5 * (G + G.T))
        return alpha @ (E / np.sqrt(lam)) @ E.T


def _stacked_alpha(descriptors, Q_list) -> np.ndarray:
    return np.vstack([t.alpha @ Q for t, Q in zip(descriptors, Q_list)])


def mean_alpha(Ybar, Ystar, descriptors: Sequence[KldsDescriptor], Q_list: Sequence[np.ndarray],
               kernel=Kernel.CHI2, eig_floor: float = 1e-10) -> np.ndarray:
    """Observer coefficients of the mean for fixed aligners.

    Maximizes ``tr(alpha^T k(Yb, Y*) a)`` subject to
    ``alpha^T k(Yb, Yb) alpha = I`` where ``a`` stacks ``alpha_i Q_i``.
    Eigen-directions of ``k(Yb, Yb)`` below ``eig_floor * lambda_max`` are
    dropped.
    """
    if len(descriptors) != len(Q_list):
        raise InputError("need one aligner per descriptor")
    n = descriptors[0].n
    basis = _LandmarkBasis(as_stream(Ybar), as_stream(Ystar), kernel, n, eig_floor)
    Qs = [check_orthogonal(Q, n) for Q in Q_list]
    return basis.alpha(_stacked_alpha(descriptors, Qs))


def frechet_cost(mean: KldsDescriptor, descriptors: Sequence[KldsDescriptor], w: DistanceWeights,
                 align_opts: AlignOptions = AlignOptions()) -> float:
    """Average alignment distance ``g`` from ``mean`` to the members."""
    return float(np.mean([alignment_distance(mean, t, w, align_opts).dist_sq for t in descriptors]))


def frechet_mean(descriptors: Sequence[KldsDescriptor], w: DistanceWeights,
                 mean_opts: MeanOptions = MeanOptions(),
                 align_opts: AlignOptions = AlignOptions(), *,
                 D: np.ndarray | None = None) -> FrechetResult:
    """Fréchet mean of a set of descriptors.

    Each outer iteration averages the aligned transition matrices,
    projects the stacked aligned observers onto the landmark feature space,
    and re-aligns every member to the new mean, warm-started at its
    previous aligner. The landmark samples and bias coefficients are
    computed once.

    The alternation starts from identity aligners, from the aligners of
    every member to the medoid, or from both (``mean_opts.init``); with
    both, the run ending at the lower cost is returned. ``D`` is an
    optional precomputed self-distance matrix used to find the medoid.
    """
    _check_set(descriptors)
    K = len(descriptors)
    n, kernel = descriptors[0].n, descriptors[0].kernel
    Ystar = concat_samples(descriptors)
    if mean_opts.n_bar == 0:
        Ybar = distinct_columns(Ystar)
    else:
        if mean_opts.n_bar < n:
            raise InputError(f"n_bar={mean_opts.n_bar} is below the state dimension {n}")
        Ybar = kmeans_landmarks(Ystar, mean_opts.n_bar, mean_opts.seed,
                                iters=mean_opts.kmeans_iters, restarts=mean_opts.kmeans_restarts)
    basis = _LandmarkBasis(Ybar, Ystar, kernel, n, mean_opts.eig_floor)
    b = np.concatenate([t.beta for t in descriptors])
    beta = _solve_beta(basis.gram, basis.cross @ b, K, mean_opts.ridge)
    offsets = _offsets(descriptors)
    crosses = [basis.cross[:, offsets[i]:offsets[i + 1]] for i in range(K)]

    starts = []
    if mean_opts.init in ("identity", "both"):
        starts.append(("identity", [np.eye(n) for _ in range(K)]))
    if mean_opts.init in ("medoid", "both") and K > 1:
        m = medoid(descriptors, w, align_opts, D=D)
        Qm = [np.eye(n) if i == m else alignment_distance(descriptors[m], t, w, align_opts).Q
              for i, t in enumerate(descriptors)]
        starts.append(("medoid", Qm))
    if not starts:
        starts.append(("identity", [np.eye(n) for _ in range(K)]))

    best = None
    for name, Qs in starts:
        res = _alternate(descriptors, w, mean_opts, align_opts, basis, beta, crosses, Qs)
        res.init = name
        if best is None or res.cost < best.cost:
            best = res
    return best


def _alternate(descriptors, w, mean_opts, align_opts, basis, beta, crosses, Qs) -> FrechetResult:
    kernel = descriptors[0].kernel
    cost_trace: list[float] = []
    best = None
    converged = False
    for _ in range(mean_opts.max_outer):
        A = mean_A([t.A for t in descriptors], Qs)
        alpha = basis.alpha(_stacked_alpha(descriptors, Qs))
        mean = KldsDescriptor(A, basis.Ybar, alpha, beta, kernel)
        mean.__dict__["self_gram"] = basis.gram
        results = [_align(_Pair(mean, t, w, cross_gram=crosses[i]), align_opts, extra_inits=[Qs[i]])
                   for i, t in enumerate(descriptors)]
        g = float(np.mean([r.dist_sq for r in results]))
        prev = cost_trace[-1] if cost_trace else None
        cost_trace.append(g)
        if best is None or g <= best[2]:
            best = (mean, [r.Q for r in results], g, [r.dist_sq for r in results])
        Qs = [r.Q for r in results]
        if prev is not None and prev - g <= mean_opts.outer_tol * max(prev, 1e-12):
            converged = True
            break
    mean, aligners, _, dists = best
    return FrechetResult(mean=mean, aligners=aligners, cost_trace=cost_trace,
                         converged=converged, distances=dists)


def medoid(descriptors: Sequence[KldsDescriptor], w: DistanceWeights,
           align_opts: AlignOptions = AlignOptions(), D: np.ndarray | None = None) -> int:
    """Index minimizing the summed alignment distance to all members (first index on ties)."""
    _check_set(descriptors)
    if D is None:
        D = distance_matrix(descriptors, None, w, align_opts)
    return int(np.argmin(D.sum(axis=1)))
