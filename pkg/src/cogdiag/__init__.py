"""Cognitive diagnosis engine: generative models, transductive baselines,
reliability metrics, a FastAPI service and a thin CLI client."""

__version__ = "0.1.0"
