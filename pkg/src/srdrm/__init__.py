"""srdrm: deterministic CPU toolkit for underwater single-image
super-resolution with residual-multiplier generators and PatchGAN
adversarial training."""

from .errors import (
    CheckpointCorruptionError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointVersionError,
    ConfigurationError,
    ContractViolation,
    NumericError,
    SrdrmError,
)
from .models import (
    DiscriminatorConfig,
    GeneratorConfig,
    build_discriminator,
    build_generator,
    forward_discriminator,
    forward_generator,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import LossWeights, build_feature_extractor
from .metrics import evaluate_dataset, psnr, ssim, uiqm
from .data import DatasetManifest, batch_iter, prepare_lr_sets
from .train import TrainConfig, bench, eval_report, infer, train_adversarial, train_generative

__version__ = "0.1.0"
