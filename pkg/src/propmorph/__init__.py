"""propmorph: turn an RGB-D capture of a physical prop into a prompt-guided
virtual asset and anchor it to the (simulated) tracked object."""

from . import analytics, backends, geometry, imaging, pipeline, service, tracking

__all__ = ["analytics", "backends", "geometry", "imaging", "pipeline", "service", "tracking"]
__version__ = "0.1.0"
