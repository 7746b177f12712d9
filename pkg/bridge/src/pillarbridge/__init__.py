"""Detector bridge: KITTI-layout trees in, 16-field result files out."""

__version__ = "0.1.0"
