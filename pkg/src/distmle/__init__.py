"""Combining local maximum-likelihood estimates: linear and KL averaging,
statistical curvature and the asymptotic theory that relates them."""

from . import combine, curved, expfam, gmm, harness, kernels, theory
from .combine import CombinedEstimate, LocalFit, kl_average_bootstrap, kl_average_curved, kl_average_full, linear_average
from .curved import CurvedModel, EllipseModel, curvature_general, curvature_scalar, fisher_info, mle_curved
from .errors import ConfigError, DistMLEError, DomainError, FitError, MomentRangeError, RankDeficiencyError
from .expfam import FullExpFamily, SampleSet, mle_full, unit_gaussian, zero_mean_gaussian
from .gmm import GmmParams, em_fit, kl_average_gmm, matched_linear_average
from .harness import ExperimentConfig, aggregate, run_experiment
from .theory import beta_linear, predict_asymptotics

__version__ = "0.1.0"
