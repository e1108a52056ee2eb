"""Visual-servoing guidance and pre-detection exploration.

The servo law is PD feedback from image-plane error: yaw rate centers
the target horizontally, climb rate centers it vertically, and forward
speed regulates the known-size range estimate to a standoff. Commands
are produced in the camera frame (boresight along vehicle +x), rotated
to world by yaw, and saturated preserving horizontal direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, CameraMount
from .frames import vehicle_to_world, wrap_angle
from .perception import TrackEstimate, TrackStatus
from .world import Frame, UavState, VelocityCommand


class GuidanceError(Exception):
    """Raised when no servo command can be formed (no usable track)."""


@dataclass
class GuidanceGains:
    """PD gains for the pixel-error and range-error loops."""

    kp_yaw: float = 0.01       # rad/s per px
    kd_yaw: float = 0.004      # rad/s per px/s
    kp_z: float = 0.004        # m/s per px
    kd_z: float = 0.001        # m/s per px/s
    kp_range: float = 0.8      # 1/s
    kd_range: float = 0.3      # unitless, on range rate
    r_des: float = 2.5         # standoff, m

    def __post_init__(self):
        if self.kp_yaw <= 0.0 or self.kp_z <= 0.0 or self.kp_range <= 0.0:
            raise ValueError("proportional gains must be positive")


@dataclass
class CommandLimits:
    v_max_xy: float = 3.0
    v_max_z: float = 1.5
    yaw_rate_max: float = 1.5

    def __post_init__(self):
        if min(self.v_max_xy, self.v_max_z, self.yaw_rate_max) <= 0.0:
            raise ValueError("limits must be positive")


def servo_command(
    track: TrackEstimate,
    intr: CameraIntrinsics,
    gains: GuidanceGains,
) -> VelocityCommand:
    """PD servo command in the camera frame from a live track.

    yaw_rate  = kp_yaw * (W/2 - x) - kd_yaw * x_rate
    climb     = kp_z   * (H/2 - y) - kd_z   * y_rate
    forward   = kp_range * (r - r_des) + kd_range * r_rate

    The lateral camera-frame component is always zero: azimuth is
    corrected by yawing, not sidestepping. Raises GuidanceError on an
    uninitialized track.
    """
    if track.status is TrackStatus.UNINITIALIZED:
        raise GuidanceError("no track to servo on")
    x, y = track.pixel
    xr, yr = track.pixel_rate
    yaw_rate = gains.kp_yaw * (intr.cx - x) - gains.kd_yaw * xr
    climb = gains.kp_z * (intr.cy - y) - gains.kd_z * yr
    forward = gains.kp_range * (track.range - gains.r_des) + gains.kd_range * track.range_rate
    return VelocityCommand(vx=forward, vy=0.0, vz=climb, yaw_rate=yaw_rate, frame=Frame.CAMERA)


def camera_to_vehicle(
    cmd: VelocityCommand,
    mount: CameraMount,
    vehicle_yaw: float,
) -> VelocityCommand:
    """Resolve a camera-frame command into the world frame.

    The forward mount aligns camera axes with vehicle FLU (forward,
    left, up), so components carry over and only the yaw rotation to
    world remains; the yaw-rate command passes through.
    """
    if cmd.frame is not Frame.CAMERA:
        raise ValueError("expected a camera-frame command")
    wx, wy = vehicle_to_world(cmd.vx, cmd.vy, vehicle_yaw)
    return VelocityCommand(vx=wx, vy=wy, vz=cmd.vz, yaw_rate=cmd.yaw_rate, frame=Frame.WORLD)


def saturate(cmd: VelocityCommand, limits: CommandLimits) -> VelocityCommand:
    """Clamp a command to the limits, scaling the horizontal pair so its
    direction is preserved."""
    vx, vy = cmd.vx, cmd.vy
    h = math.hypot(vx, vy)
    if h > limits.v_max_xy:
        scale = limits.v_max_xy / h
        vx *= scale
        vy *= scale
    vz = min(max(cmd.vz, -limits.v_max_z), limits.v_max_z)
    yaw_rate = min(max(cmd.yaw_rate, -limits.yaw_rate_max), limits.yaw_rate_max)
    return VelocityCommand(vx=vx, vy=vy, vz=vz, yaw_rate=yaw_rate, frame=cmd.frame)


# ---------------------------------------------------------------------------
# Exploration
# ---------------------------------------------------------------------------

WAYPOINT_CAPTURE_RADIUS = 0.5


def lawnmower_waypoints(
    area: tuple[float, float, float, float],
    lane_spacing: float,
    altitude: float,
) -> list[np.ndarray]:
    """Serpentine coverage of a rectangle (x_min, x_max, y_min, y_max).

    Lanes run along x and are spaced at most lane_spacing apart, with
    lanes on both y edges, so no point of the area is farther than half
    a lane spacing from the path.
    """
    x0, x1, y0, y1 = area
    if x1 <= x0 or y1 <= y0 or lane_spacing <= 0.0:
        raise ValueError("degenerate exploration area or lane spacing")
    n_lanes = max(2, int(math.ceil((y1 - y0) / lane_spacing)) + 1)
    ys = np.linspace(y0, y1, n_lanes)
    pts = []
    for i, y in enumerate(ys):
        xs = (x0, x1) if i % 2 == 0 else (x1, x0)
        pts.append(np.array([xs[0], y, altitude]))
        pts.append(np.array([xs[1], y, altitude]))
    return pts


@dataclass
class ExplorePlan:
    """Progress through a lawnmower pattern; loops when exhausted."""

    waypoints: list[np.ndarray]
    index: int = 0
    started: bool = False

    @classmethod
    def lawnmower(cls, area, lane_spacing, altitude) -> "ExplorePlan":
        return cls(waypoints=lawnmower_waypoints(area, lane_spacing, altitude))

    def active_waypoint(self, position) -> np.ndarray:
        """Current goal, advancing past any waypoint already reached.

        The first call enters the pattern at the nearest waypoint instead
        of a fixed corner.
        """
        if not self.started:
            self.started = True
            px, py, pz = float(position[0]), float(position[1]), float(position[2])
            self.index = min(
                range(len(self.waypoints)),
                key=lambda i: math.dist((self.waypoints[i][0], self.waypoints[i][1], self.waypoints[i][2]), (px, py, pz)),
            )
        for _ in range(len(self.waypoints)):
            wp = self.waypoints[self.index]
            d = math.dist(
                (wp[0], wp[1], wp[2]),
                (float(position[0]), float(position[1]), float(position[2])),
            )
            if d > WAYPOINT_CAPTURE_RADIUS:
                return wp
            self.index = (self.index + 1) % len(self.waypoints)
        return self.waypoints[self.index]


def explore_command(
    plan: ExplorePlan,
    state: UavState,
    speed: float,
    yaw_gain: float,
    t: float | None = None,
    scan_amplitude: float = 0.0,
    scan_period: float = 8.0,
) -> VelocityCommand:
    """World-frame velocity toward the active waypoint, nose leading.

    With a scan amplitude and the current time, the nose weaves
    sinusoidally around the track so the camera sweeps ground that lies
    abeam of the lanes.
    """
    wp = plan.active_waypoint(state.position)
    dx = wp[0] - state.position[0]
    dy = wp[1] - state.position[1]
    dz = wp[2] - state.position[2]
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    if dist < 1e-9:
        return VelocityCommand(frame=Frame.WORLD)
    s = speed / dist
    yaw_des = math.atan2(dy, dx)
    if t is not None and scan_amplitude > 0.0:
        yaw_des += scan_amplitude * math.sin(2.0 * math.pi * t / scan_period)
    yaw_err = wrap_angle(yaw_des - state.yaw)
    return VelocityCommand(
        vx=s * dx, vy=s * dy, vz=s * dz, yaw_rate=yaw_gain * yaw_err, frame=Frame.WORLD
    )


def goto_command(
    target: np.ndarray,
    state: UavState,
    speed: float,
    yaw_gain: float,
    face_point: np.ndarray | None = None,
) -> VelocityCommand:
    """World-frame velocity toward a point, yawing to face it (or another)."""
    dx = float(target[0]) - state.position[0]
    dy = float(target[1]) - state.position[1]
    dz = float(target[2]) - state.position[2]
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    fp = target if face_point is None else face_point
    fx = float(fp[0]) - state.position[0]
    fy = float(fp[1]) - state.position[1]
    if abs(fx) + abs(fy) > 1e-9:
        yaw_err = wrap_angle(math.atan2(fy, fx) - state.yaw)
    else:
        yaw_err = 0.0
    if dist < 1e-9:
        return VelocityCommand(yaw_rate=yaw_gain * yaw_err, frame=Frame.WORLD)
    s = min(speed, dist) / dist
    return VelocityCommand(
        vx=s * dx, vy=s * dy, vz=s * dz, yaw_rate=yaw_gain * yaw_err, frame=Frame.WORLD
    )
