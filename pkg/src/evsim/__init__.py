"""Event-camera simulation, calibration and dataset tooling."""
from .events import Event, EventStream
from .geometry import CameraIntrinsics, RigidTransform, UnitQuaternion

__version__ = "0.1.0"

__all__ = ["CameraIntrinsics", "Event", "EventStream", "RigidTransform", "UnitQuaternion", "__version__"]
