from .checkpoint import load_checkpoint, save_checkpoint
from .network import Architecture, Network
from .training import TrainResult, class_weights, train

__all__ = ["Architecture", "Network", "TrainResult", "class_weights", "train",
           "load_checkpoint", "save_checkpoint"]
