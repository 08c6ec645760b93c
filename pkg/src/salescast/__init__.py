"""salescast: a from-scratch CNN-LSTM toolkit for quarterly sales forecasting.

Everything numerical is hand-derived and float64: layers ship their own
backward passes (checked against finite differences), training is plain
Adam over MSE, and datasets flow CSV -> cleaning -> windows -> forecasts.
"""

from .data import prepare_datasets
from .metrics import MetricsReport, benchmark, evaluate, export_curve
from .models import KINDS, Model, ModelSpec, build, forward
from .synth import SynthConfig, generate_benchmark_suite, write_csv
from .tensor import RngStream
from .train import TrainConfig, TrainHistory, load_model, save_model, train

__version__ = "0.1.0"

__all__ = [
    "KINDS", "MetricsReport", "Model", "ModelSpec", "RngStream", "SynthConfig",
    "TrainConfig", "TrainHistory", "benchmark", "build", "evaluate",
    "export_curve", "forward", "generate_benchmark_suite", "load_model",
    "prepare_datasets", "save_model", "train", "write_csv",
]
