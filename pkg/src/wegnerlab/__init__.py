"""Numerical laboratory for Schrödinger operators with Gaussian random potentials."""

__version__ = "0.1.0"

from .covariance import (CovarianceModel, GaussHermiteCovariance, KernelCovariance,  # noqa: F401
                         PiecewiseConstantKernel, QuadratureSpec, TabulatedCovariance,
                         autocorrelation_from_kernel, evaluate, example_5b_model,
                         is_pointwise_nonnegative, model_from_dict,
                         spectral_nonnegativity_check, summarize, triangular_model)
from .certificate import (CertificateGrid, build_certificate, choose_decay_rate,  # noqa: F401
                          compute_normalization, convolution_lower_bound, verify_condition4)
from .field_sampler import (LatticeSpec, build_embedding, empirical_covariance,  # noqa: F401
                            sample)
from .hamiltonian import assemble, count_below, eigenvalues  # noqa: F401
from .ids import estimate_ids, lipschitz_probe, wegner_report  # noqa: F401
