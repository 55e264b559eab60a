"""Food recognition toolkit: dataset preparation, augmentation, MobileNet-v2
inference, head-only training, evaluation, and a classification service."""

__version__ = "0.1.0"

from .model import ModelSpec, Prediction, build_model, load_weights, save_weights  # noqa: F401
from .dataset import ClassTaxonomy, SampleRecord  # noqa: F401
