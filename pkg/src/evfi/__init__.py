"""Event-guided video frame interpolation: synthesis, recurrent warping and attention blending."""

from .errors import EvfiError
from .events import EventStream, TimeWindow, VoxelGrid, reverse, slice_stream, voxelize
from .flow import FlowField, backward_warp, fuse_initial_flow
from .model import Interpolator, ModelConfig

__all__ = [
    "EvfiError", "EventStream", "TimeWindow", "VoxelGrid", "reverse", "slice_stream", "voxelize",
    "FlowField", "backward_warp", "fuse_initial_flow", "Interpolator", "ModelConfig",
]
__version__ = "0.1.0"
