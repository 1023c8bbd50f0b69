"""Linear extremile regression through parameterized quantile regression."""

from .basis import BasisSpec, asymmetric_logistic, make_basis, normal_rayleigh, polynomial, user_defined
from .data import LabeledData, UnlabeledData, ZMap, make_zmap
from .errors import (ConfigError, ConvergenceError, DesignError, DomainError, EstimationError,
                     EvaluationError, ExtremileError, SchemaError, SingularMatrixError)
from .estimators import (ExtremileFit, OrdinaryFit, default_bandwidth, fit_ordinary,
                         fit_semisupervised, fit_supervised, nw_cdf, ssl_weights)
from .inference import (BetaCovariance, SandwichParts, beta_covariance, hessian_hat, sandwich_parts,
                        score_contributions, sigma_hat, sigma_rho_hat, standard_errors)
from .qrcm import FitOptions, QRCMFit, check_monotonicity, eval_quantile, fit_qrcm, integrated_loss, score
from .quadrature import IntegrationGrid, gauss_legendre, make_grid, uniform
from .simlab import SimConfig, SimSummary, gen_model_a, gen_model_b, run_replications, tae
from .weights import MomentVector, WeightMeasure, basis_moment, h_weight, j_weight, sample_extremile

__version__ = "0.1.0"
