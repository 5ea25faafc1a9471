"""Multi-view action selection learning on weakly labelled videos."""
from .asl import LossConfig
from .datagen import SynthConfig, generate, read_dataset, write_dataset
from .encoder import EncoderConfig
from .model import ModelConfig, MultiASL
from .trainer import TrainConfig, evaluate, fit

__all__ = ["EncoderConfig", "LossConfig", "ModelConfig", "MultiASL", "SynthConfig", "TrainConfig",
           "evaluate", "fit", "generate", "read_dataset", "write_dataset"]
__version__ = "0.1.0"
