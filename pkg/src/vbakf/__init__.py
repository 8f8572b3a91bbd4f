"""Variational Bayes adaptive Kalman filtering for multi-sensor fusion with packet dropouts and corrupted readings."""

__version__ = "0.1.0"

from .distributions import BetaParams, GaussianBelief, InverseWishartParams  # noqa: E402
from .errors import (  # noqa: E402
    ConfigError,
    EmptyInput,
    ExperimentError,
    FilterError,
    LengthMismatch,
    NotPositiveDefinite,
    UnknownPreset,
    VbakfError,
)
from .experiments import ExperimentSpec, preset, rmse, run_experiment, summarize  # noqa: E402
from .filtering import (  # noqa: E402
    VbHyperParams,
    VbPosterior,
    VbTrace,
    default_hyper,
    kalman_oracle,
    kalman_static,
    run_filter,
    vb_step,
    vb_trace,
)
from .simulator import RegimeSegment, ScenarioConfig, SensorDataset, generate, single_regime  # noqa: E402
