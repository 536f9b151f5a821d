"""Kernelized linear dynamic systems of histogram streams.

Estimation, alignment distances over the orthogonal group, Fréchet means
and nearest-neighbor / nearest-center classification.
"""
from .align import (
    AlignmentResult,
    AlignOptions,
    DistanceWeights,
    GivensCoeffs,
    alignment_distance,
    distance_matrix,
    frob_dist_sq,
    givens_coeffs,
    jacobi_align,
    rho,
    solve_givens,
    tau,
)
from .classify import (
    CenterKind,
    ClassModel,
    LabeledDataset,
    grid_search_lambda,
    ncc_classify,
    ncc_train,
    nn_classify,
)
from .errors import EstimationError, FormatError, HistogramError, InputError, NumericalError, SobError
from .frechet import FrechetResult, MeanOptions, frechet_mean, medoid
from .kernel import Kernel, center_gram, chi2_kernel, gram
from .klds import EstimationOptions, KldsDescriptor, estimate, mu_inner, transform, validate

__version__ = "0.1.0"
