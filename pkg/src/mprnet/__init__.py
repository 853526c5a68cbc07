"""MPR-Net: multi-scale pattern reproduction forecasting on a small numpy autodiff engine."""
from .model import MPRNet, ModelConfig, normalize, denormalize
from .training import Adam, TrainConfig, train
from .metrics import MetricsReport

__all__ = ["MPRNet", "ModelConfig", "normalize", "denormalize", "Adam", "TrainConfig", "train",
           "MetricsReport"]
__version__ = "0.1.0"
