"""tactrack: 6-DOF object tracking from tactile surface-normal images.

Reconstructs local contact geometry by Poisson integration of normals,
fuses it into an online local patch map, and solves a factor-graph
nonlinear least-squares problem over SE(3) poses.
"""

__version__ = "0.1.0"

from .geometry import Pose, compose, exp, inverse, log, ominus, oplus
from .render import GelConfig
from .tracker import Tracker, TrackerConfig, TrackerMode, track_episode

__all__ = [
    "Pose", "compose", "inverse", "exp", "log", "oplus", "ominus",
    "GelConfig", "Tracker", "TrackerConfig", "TrackerMode", "track_episode",
    "__version__",
]
