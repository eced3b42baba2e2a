"""Tightly-coupled visual-inertial odometry with parking-slot constraints, plus a
parking-lot simulator and benchmark harness."""

__version__ = "0.1.0"
