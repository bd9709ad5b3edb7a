"""Dense tensor engine: layers, graphs, losses, SGD and gradient checking."""
from .gradcheck import finite_diff_check
from .graph import ModelGraph
from .kernels import backend_name
from .layers import (
    Conv2D,
    Dense,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2D,
    NearestUpsample,
    ReLU,
    ResidualBlock,
    Softmax,
)
from .loss import cross_entropy, nll_from_probs, pixel_nll_from_probs
from .optim import sgd_step
from .tensor import Tensor

__all__ = [
    "Tensor", "Layer", "Conv2D", "MaxPool2D", "ReLU", "Flatten", "Dense",
    "Softmax", "ResidualBlock", "NearestUpsample", "GlobalAvgPool",
    "ModelGraph", "cross_entropy", "nll_from_probs", "pixel_nll_from_probs",
    "sgd_step", "finite_diff_check", "backend_name",
]
