"""Robustness toolkit for speech emotion recognition under channel degradation."""
from .errors import (AssetError, ConfigError, DataError, DivergedError, EmptyInputError,
                     ManifestError, SerError, ShapeError)
from .audio import Waveform, ImpulseResponse, read_wav, write_wav, mix_at_nsr, convolve_ir
from .augment import AugmentationConfig, AugmentationPlan, AssetPool, sample_plan, apply_plan
from .features import FeatureMatrix, FEATURE_NAMES, extract, fit_normalizer
from .metrics import EvalReport, make_loso_folds, gap_percent, improvement_percent

__version__ = "0.1.0"
