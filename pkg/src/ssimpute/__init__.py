"""Stable spline kernels for output imputation and predictor identification."""

from .armax import ArmaxModel, Dataset, random_armax, simulate, mask_missing
from .errors import (
    ConfigurationError,
    DataError,
    NumericalError,
    SSImputeError,
)
from .identify import PredictorModel, cod, fit_predictor, kstep_predict
from .imputer import Hyperparameters, ImputationResult, impute, stable_spline_imputation
from .kernels import KernelSpec, rbf_h_continuous, rbf_h_discrete, stable_spline_k
from .search import SearchConfig

__version__ = "0.1.0"
