"""Feature extraction from pretrained speech models into binary feature banks."""

from .extract import ExtractorConfig, extract
from .manifest import build_manifest
from .ptms import MODEL_REGISTRY

__version__ = "0.1.0"

__all__ = ["ExtractorConfig", "extract", "build_manifest", "MODEL_REGISTRY", "__version__"]
