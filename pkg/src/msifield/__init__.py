"""Omnidirectional multi-sphere-image radiance fields.

Four wide-FoV fisheye views are swept onto concentric sphere layers
uniform in inverse depth; a per-scene field (explicit grid or small MLP)
is fitted with a joint color+depth loss and rendered by occupancy
compositing, giving omnidirectional inverse depth and 6DoF novel views.
"""

from .geometry import (
    FisheyeCamera,
    OutOfVolumeError,
    Pose,
    Ray,
    SphereSchedule,
)
from .msi import MsiGrid
from .optim import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "FisheyeCamera", "OutOfVolumeError", "Pose", "Ray", "SphereSchedule",
    "MsiGrid", "TrainConfig", "__version__",
]
