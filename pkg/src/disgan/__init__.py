"""Wavelet-informed GAN for x2 3D MRI super-resolution, at desk scale."""
from .dwt import dwt3_forward, dwt3_inverse
from .generator import Generator, GeneratorConfig, build_generator
from .discriminator import Discriminator, DiscriminatorConfig, build_discriminator
from .inference import super_resolve, trilinear_upsample
from .metrics import MetricReport, evaluate
from .trainer import Trainer, TrainerConfig, train
from .volume import Volume, phantom, read_volume, standardize, write_volume

__version__ = "0.1.0"

__all__ = [
    "Discriminator", "DiscriminatorConfig", "Generator", "GeneratorConfig", "MetricReport", "Trainer",
    "TrainerConfig", "Volume", "build_discriminator", "build_generator", "dwt3_forward", "dwt3_inverse",
    "evaluate", "phantom", "read_volume", "standardize", "super_resolve", "train", "trilinear_upsample",
    "write_volume",
]
