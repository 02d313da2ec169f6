"""Multi-layer kernel machines: random-feature networks trained by cross-fitting, with conformal intervals."""

from .errors import (ConfigError, DegenerateFit, DimMismatch, DivergenceDetected, IncompatibleScenario, InvalidDim,
                     InvalidRate, InvalidWidth, MLKMError, NonFiniteInput, ParseError, SingularSystem,
                     TimingUnstable, TooFewSamples)
from .kernels import (FeatureMap, KernelFamily, KernelSpec, apply, cauchy, gaussian, kernel_eval, kernel_matrix,
                      laplacian, matern, mc_kernel_error, spectral_sample)
from .network import (Architecture, GradientBundle, Network, Weights, backward, forward, init_weights,
                      layer_gradient, param_jacobian, parse_layers, scale_schedule)
from .training import (CrossFitModel, FoldPlan, TrainConfig, adds_fit, make_fold_plan, predict_crossfit,
                       rate_exponent, recommend_widths, sgd_fit)
from .baselines import KrrModel, RfRidgeModel, cv_select_lambda, krr_fit, rf_ridge_fit
from .conformal import (ConformalCalibration, CoverageResult, calibrate, coverage_study, fit_variance,
                        predict_interval)
from .simdata import Dataset, Scenario, generate, load_csv

__version__ = "0.1.0"
