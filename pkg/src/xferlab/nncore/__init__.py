"""Small numpy neural-network toolkit: layers, networks, SGD training and checkpoints."""
from .checkpoint import dump_network, load_network, parse_network, save_network
from .gradcheck import KINDS as GRADCHECK_KINDS
from .gradcheck import gradient_check, max_relative_error
from .layers import (BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, MaxPool2x2, ReLU, SoftmaxOutput,
                     layer_from_spec, softmax, softmax_cross_entropy)
from .network import (DESK, PAPER, PROFILES, Arch, FreezePlan, Init, Network, ScaleProfile, build_network,
                      convolutional_layers, fully_connected_layers, right_half_mask, to_input)
from .training import (SGD, OptimizerConfig, TrainingLog, cosine_lr, evaluate, finetune, layer_sweep, predict,
                       train)

__all__ = [
    "Arch", "BatchNorm", "Conv2d", "DESK", "Dense", "Dropout", "Flatten", "FreezePlan", "GRADCHECK_KINDS", "Init",
    "Layer", "MaxPool2x2", "Network", "OptimizerConfig", "PAPER", "PROFILES", "ReLU", "SGD", "ScaleProfile",
    "SoftmaxOutput", "TrainingLog", "build_network", "convolutional_layers", "cosine_lr", "dump_network",
    "evaluate", "finetune", "fully_connected_layers", "gradient_check", "layer_from_spec", "layer_sweep",
    "load_network", "max_relative_error", "parse_network", "predict", "right_half_mask", "save_network",
    "softmax", "softmax_cross_entropy", "to_input", "train",
]
