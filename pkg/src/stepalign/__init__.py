"""Step-to-video alignment and mistake classification on feature corpora."""

__version__ = "0.1.0"
