"""Fixed-lag visual-inertial smoothing with mesh-detected planar regularities."""

from .pipeline import RunConfig, execute, run_pipeline

__all__ = ["RunConfig", "execute", "run_pipeline"]
__version__ = "0.1.0"
