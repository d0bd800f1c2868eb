"""Tiny weight-shared low-light image enhancer with unsupervised training."""

from .bench import BenchReport, flops_estimate, time_pipeline
from .enhance import EnhanceConfig, enhance_image, enhance_step, restore_step
from .errors import (
    DatasetError,
    DecodeError,
    DegenerateInput,
    DivergenceError,
    FormatError,
    InvalidArgument,
    IoError,
    LiteIEError,
    NotFound,
    ShapeError,
)
from .image import load_image, resize_bilinear, save_image
from .losses import LossBreakdown, LossConfig, total_loss
from .metrics import MetricsReport, evaluate_pair, psnr, ssim
from .net import (
    NetTopology,
    Weights,
    deserialize_weights,
    extract_features,
    init_weights,
    param_count,
    serialize_weights,
)
from .train import TrainConfig, backward_gradients, gradient_check, train

__version__ = "0.1.0"
