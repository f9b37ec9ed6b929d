"""FastAPI service wrapping the diagnosis engine."""
