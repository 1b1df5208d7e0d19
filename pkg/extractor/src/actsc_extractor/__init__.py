__version__ = "0.1.0"

from .extract import ExtractionConfig, ExtractionError, extract, resolve_layers
