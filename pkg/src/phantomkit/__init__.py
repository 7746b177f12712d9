"""Coordinated camera-LiDAR phantom injection and evaluation on KITTI scenes."""

__version__ = "0.1.0"
