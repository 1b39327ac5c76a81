"""Differentially private distributed estimation and online learning over networks."""

from . import budget, estimators, graph, kernels, metrics, privacy, signals, streams
from .errors import (
    ConfigError,
    DataError,
    DimensionMismatch,
    DPNetError,
    EmptyInput,
    InvalidLearningRate,
    IsolatedNode,
    NotConverged,
    OutOfSupport,
    ParseError,
    PeriodicChain,
    UnboundedSensitivity,
)
from .estimators import EstimatorState, RunConfig, run
from .graph import MixingMatrix, Topology, mh_weights, modified_mh_weights, random_geometric, uniform_complete
from .metrics import RunTrace, bound_report, empirical_errors
from .privacy import NoisePlan, laplace_scale
from .signals import SignalModel, gaussian_known_var, lognormal_known_var, sensitivity_spec

__version__ = "0.1.0"
