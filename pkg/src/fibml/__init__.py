"""Fecal indicator bacteria prediction from monitoring and environmental data."""

__version__ = "0.1.0"

from .errors import FibError, InputError  # noqa: E402
from .pipeline import FittedPipeline, Pipeline, load_pipeline  # noqa: E402

__all__ = ["FibError", "InputError", "Pipeline", "FittedPipeline", "load_pipeline", "__version__"]
