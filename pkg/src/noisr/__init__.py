"""Super-resolution of noisy grayscale images that preserves the noise distribution."""
from .image import NormalizationStats, load_image, save_image
from .metrics import MetricReport, evaluate_all
from .net import NetworkConfig, param_count
from .noise import NoiseSpec, apply_noise
from .resample import decimate, upsample_bilinear, upsample_cc
from .train import TrainConfig, predict, train

__version__ = "0.1.0"
