"""Communication-efficient federated learning for wireless traffic prediction.

Top-gamma gradient sparsification with error feedback and gradient
tracking, correlation-driven personalized aggregation, and FedAvg/FedProx
baselines, on a small numpy MLP.
"""

from .aggregation import StrategyConfig
from .compression import SparseGradient, densify, sparsify_topk
from .fedcore import RoundConfig, run_training
from .model import MlpModel, init_params
from .numerics import RngStream

__all__ = [
    "MlpModel",
    "RngStream",
    "RoundConfig",
    "SparseGradient",
    "StrategyConfig",
    "densify",
    "init_params",
    "run_training",
    "sparsify_topk",
]

__version__ = "0.1.0"
