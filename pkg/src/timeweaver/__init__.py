"""Metadata-conditioned time-series diffusion and joint Frechet evaluation."""

from .data import PairedDataset, SyntheticConfig, generate_synthetic, normalize, read_csv, split, write_csv
from .denoiser import ModelConfig, TimeWeaver
from .diffusion import NoiseSchedule, linear_schedule, sample
from .extractors import DualExtractor, ExtractorConfig, train_extractors
from .metric import frechet_distance, ftsd, jftsd

__version__ = "0.1.0"
