"""Afferent sensing arrays, episodic recall risk, and bi-level damage-avoidance learning.

The package couples four pieces on a synthetic biomechanical twin:

* leaky-integrator afferent units aggregated into a scalar CAT risk signal,
* an episodic memory that turns past damage events into a recall-risk signal,
* a PPO inner loop that learns work-intensity policies from those signals,
* a CMA-ES outer loop that evolves the sensing parameters on learning outcomes.
"""

__version__ = "0.1.0"

from .errors import ConfigError, TrainingError, ValidationError

__all__ = ["ConfigError", "TrainingError", "ValidationError", "__version__"]
