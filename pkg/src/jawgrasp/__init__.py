"""Parallel-jaw 6-DoF grasp dataset generation from watertight triangle meshes."""

from .geometry import GraspPose, TransformChain, compose, inverse, se3_distance, world_grasp
from .gripper import GripperModel, preset
from .mesh import TriMesh, is_watertight, load_mesh

__version__ = "0.1.0"

__all__ = ["GraspPose", "TransformChain", "compose", "inverse", "se3_distance", "world_grasp",
           "GripperModel", "preset", "TriMesh", "is_watertight", "load_mesh", "__version__"]
