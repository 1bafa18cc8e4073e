"""Variable-horizon diffusion planning in 2D point-mass mazes.

The package trains an unconditional trajectory diffusion model on
variable-length crops of offline demonstrations, pairs it with a learned
state-pair step-distance model that picks a planning horizon per instance,
and evaluates both against fixed-horizon baselines in a built-in maze world.
"""

__version__ = "0.1.0"

from . import (maze, oracle, data, nn, distance, diffusion, execution,
               evaluation, config)

__all__ = [
    "maze",
    "oracle",
    "data",
    "nn",
    "distance",
    "diffusion",
    "execution",
    "evaluation",
    "config",
]
