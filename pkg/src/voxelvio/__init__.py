"""Event-camera stereo visual-inertial odometry with a voxelized landmark map."""

__version__ = "0.1.0"
