"""Continuous-time classifiers driven by spline-interpolated control paths,
for partially observed series sampled at uneven times.  NumPy only."""

from .cdeint import adjoint_backward, direct_backward, make_field, rk4_solve, time_grid
from .errors import (
    CdeflowError, DomainError, InsufficientObservations, MalformedSeries, ModeError,
    NumericalBlowup, NumericalFailure, SchemaMismatch, ShapeError,
)
from .models import MODEL_KINDS, build_model, load_model, save_model
from .nn import MLPParams, mlp_forward, mlp_init, mlp_vjp
from .signature import SignatureTensor, kappa, signature_cde, signature_oracle
from .spline import SplinePath, crude_bound, fit_natural_cubic, solve_tridiagonal
from .timeseries import (
    MISSING, ChannelStats, TimeSeries, TimeSeriesSet, append_intensity, drop_observations,
    gen_toy_curves, load_csv, normalize,
)
from .train import TrainConfig, TrainedModel, cross_entropy, evaluate, train

__version__ = "0.1.0"
