"""Geographically and temporally weighted regression with fractional-coloured noise."""

__version__ = "0.1.0"

from .stgrid import (RegularDesign, SpaceTimePoint, ball_volume, chebyshev_distance,  # noqa: E402
                     delta_n, make_pixel_grid)
from .noise import (CovarianceFactorization, FactorizationError, NoiseDomainError,  # noqa: E402
                    NoiseSpec, build_cov_factorization, fbm_cov, riesz_constant, sample_noise,
                    sigma_sq, sigma_sq_exact, spatial_increment_cov, temporal_increment_cov)
from .kernels import KernelSpec, WeightVector, k_h, st_kernel, weight_vector  # noqa: E402
from .covariates import (NeighborWeights, NonStationaryError, StarSpec,  # noqa: E402
                         build_contiguity, empirical_chi, simulate_star)
from .estimator import (DegenerateFitError, FieldFit, FitDiagnostics, LocalFit,  # noqa: E402
                        adjusted_r2, fit_field, fit_local, qme_curve, select_bandwidth)
