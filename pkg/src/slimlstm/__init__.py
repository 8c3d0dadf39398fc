"""From-scratch LSTM and three simplified-gating variants with verified
backpropagation through time, RMSprop training with a loss-driven learning
rate, and an experiment CLI."""

from .cell import CellDims, CellParams, CellState, GateVariant, init_params, param_count, step
from .bptt import backward_sequence, finite_difference_grads, forward_sequence
from .estimator import SequenceLstmClassifier
from .runner import ExperimentConfig, MetricsRecord, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "CellDims",
    "CellParams",
    "CellState",
    "GateVariant",
    "init_params",
    "param_count",
    "step",
    "forward_sequence",
    "backward_sequence",
    "finite_difference_grads",
    "SequenceLstmClassifier",
    "ExperimentConfig",
    "MetricsRecord",
    "train",
    "evaluate",
    "__version__",
]
