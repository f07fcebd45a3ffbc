"""Patch-standardized convolution micro-framework.

Convolution is lowered to per-sample patch matrices (im2col); the standardized
variant normalizes each patch column to zero mean and unit population std
before the GEMM, fusing normalization into the convolution itself. The package
ships exact analytic backward passes, a GroupNorm baseline, a micro-batch
training harness, and a numerical verification suite.
"""

from .activations import ELU, SELU, SELU_ALPHA, SELU_SCALE, ReLU, make_activation
from .conv import (DEFAULT_EPS, Conv2d, NCConv2d, PatchStats,
                   conv_output_from_columns, naive_conv2d, standardize_columns)
from .data import (Dataset, augment, batches, load_cifar10, load_mnist_idx,
                   standardize_channels, subset, synth_classification)
from .im2col import ConvGeometry, conv_geometry, fold, unfold
from .models import (BlockItem, ConvItem, Model, ModelSpec, build, cnn4_spec,
                     load_checkpoint, resnet8_spec, save_checkpoint)
from .normalization import GroupNorm, default_group_count
from .tensor import make_rng, matmul, randn, reduce_stats, resolve_dtype
from .training import (MetricsRecord, TrainConfig, cross_entropy, evaluate,
                       fit, lr_at_epoch, train_epoch)

__version__ = "0.1.0"

__all__ = [
    "ELU", "SELU", "SELU_ALPHA", "SELU_SCALE", "ReLU", "make_activation",
    "DEFAULT_EPS", "Conv2d", "NCConv2d", "PatchStats",
    "conv_output_from_columns", "naive_conv2d", "standardize_columns",
    "Dataset", "augment", "batches", "load_cifar10", "load_mnist_idx",
    "standardize_channels", "subset", "synth_classification",
    "ConvGeometry", "conv_geometry", "fold", "unfold",
    "BlockItem", "ConvItem", "Model", "ModelSpec", "build", "cnn4_spec",
    "load_checkpoint", "resnet8_spec", "save_checkpoint",
    "GroupNorm", "default_group_count",
    "make_rng", "matmul", "randn", "reduce_stats", "resolve_dtype",
    "MetricsRecord", "TrainConfig", "cross_entropy", "evaluate", "fit",
    "lr_at_epoch", "train_epoch",
    "__version__",
]
