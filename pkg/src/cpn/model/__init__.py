from .config import CpnConfig, TrainConfig
from .inference import extract, predict
from .network import Outputs, ProposalGrid, forward, init_params, proposal_grid
from .targets import TargetGrid, build_targets
from .training import TrainingDiverged, TrainResult, batch_loss, evaluate_model, train, write_history_csv

__all__ = [
    "CpnConfig",
    "Outputs",
    "ProposalGrid",
    "TargetGrid",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "batch_loss",
    "build_targets",
    "evaluate_model",
    "extract",
    "forward",
    "init_params",
    "predict",
    "proposal_grid",
    "train",
    "write_history_csv",
]
