"""DmADs-Net medical image segmentation on a small numpy autodiff engine."""

from . import functional
from .blocks import FRFB, LFA, MSCFA
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SegmentationSample, generate_synthetic, load_dataset
from .encoder import Encoder, EncoderConfig
from .losses import deep_supervised_loss, pixel_loss
from .metrics import MetricsReport, compute_metrics
from .model import DmADsNet, ForwardOutput, ModelConfig, estimate_flops
from .nn import ESA, ParameterStore, ResidualBlock, SEGate, count_parameters, init_parameters
from .optim import Adam
from .overlay import render_overlay
from .tensor import GradTape, Tensor, default_dtype, no_grad
from .training import Schedule, train

__version__ = "0.1.0"
