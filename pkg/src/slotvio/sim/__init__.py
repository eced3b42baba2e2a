"""Synthetic parking lots, trajectories and sensor logs."""

from slotvio.sim.sensors import NoiseModel, SensorLog, simulate_ps_detections, simulate_sensors
from slotvio.sim.trajectory import KINDS, GroundTruthTrajectory, TrajectoryParams, generate_trajectory
from slotvio.sim.world import (InfeasibleWorldError, ParkingLotWorld, RouteWorldSpec, WorldSpec,
                               generate_world, world_along_path)

__all__ = ["KINDS", "GroundTruthTrajectory", "InfeasibleWorldError", "NoiseModel", "ParkingLotWorld",
           "RouteWorldSpec", "SensorLog", "TrajectoryParams", "WorldSpec", "generate_trajectory",
           "generate_world", "simulate_ps_detections", "simulate_sensors", "world_along_path"]
