"""3D deep-back-projection refiner for ect3d reconstructions."""

from .data import RefinerDataset, positive_back_projection, split_by_condition
from .infer import infer
from .model import NetworkConfig, UNet3d, build_network, pad_to_multiple
from .train import TrainConfig, TrainResult, load_checkpoint, masked_mse, train

__version__ = "0.1.0"
