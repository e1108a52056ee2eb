"""Plant models: own-vehicle kinematics, target trajectories, and the
suspended ball.

The own vehicles are velocity-command-following kinematic drones with a
first-order lag (the autopilot's velocity loop is abstracted away). The
target vehicle follows an analytic pattern exactly. The ball hangs from
the target on a rigid rod and behaves as a spherical pendulum with a
moving pivot, linear angular damping, and an external wind force applied
at the bob.

Angles: theta is the deflection from straight down, phi the azimuth of
the deflection in the world frame. Bob position relative to the pivot is

    L * (sin(theta)cos(phi), sin(theta)sin(phi), -cos(theta))

so theta = 0 is the hanging equilibrium.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .frames import vehicle_to_world, wrap_angle

GRAVITY = 9.81


class Frame(enum.Enum):
    CAMERA = "camera"
    VEHICLE = "vehicle"
    WORLD = "world"


@dataclass
class VelocityCommand:
    """Velocity and yaw-rate setpoint, tagged with the frame it lives in."""

    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0
    yaw_rate: float = 0.0
    frame: Frame = Frame.WORLD

    def is_finite(self) -> bool:
        return all(
            math.isfinite(v) for v in (self.vx, self.vy, self.vz, self.yaw_rate)
        )


@dataclass
class UavState:
    """Pose and velocity of one vehicle in the world frame."""

    position: np.ndarray
    velocity: np.ndarray
    yaw: float = 0.0
    yaw_rate: float = 0.0

    @classmethod
    def at(cls, x: float, y: float, z: float, yaw: float = 0.0) -> "UavState":
        return cls(
            position=np.array([x, y, z], dtype=float),
            velocity=np.zeros(3),
            yaw=wrap_angle(yaw),
        )


@dataclass
class UavParams:
    """First-order velocity-lag model and its physical limits."""

    tau: float = 0.4            # velocity loop time constant, s
    v_max_xy: float = 3.0       # horizontal speed limit, m/s
    v_max_z: float = 1.5        # climb/descent limit, m/s
    yaw_rate_max: float = 1.5   # rad/s


def step_uav(state: UavState, cmd: VelocityCommand, params: UavParams, dt: float) -> UavState:
    """Advance one vehicle by dt under a velocity command.

    The velocity relaxes toward the commanded value with a first-order
    lag, v' = v + (dt/tau)(v_cmd - v), is then saturated, and the position
    is integrated with the updated velocity (semi-implicit Euler). Yaw
    integrates the rate-limited yaw-rate command directly.

    Raises ValueError for non-finite commands or a camera-frame tag;
    camera-frame commands must be resolved by guidance first.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if not cmd.is_finite():
        raise ValueError("non-finite velocity command rejected")
    if cmd.frame is Frame.CAMERA:
        raise ValueError("camera-frame command cannot drive the vehicle directly")

    if cmd.frame is Frame.VEHICLE:
        cx, cy = vehicle_to_world(cmd.vx, cmd.vy, state.yaw)
    else:
        cx, cy = cmd.vx, cmd.vy
    cz = cmd.vz

    a = dt / params.tau
    vx = state.velocity[0] + a * (cx - state.velocity[0])
    vy = state.velocity[1] + a * (cy - state.velocity[1])
    vz = state.velocity[2] + a * (cz - state.velocity[2])

    h = math.hypot(vx, vy)
    if h > params.v_max_xy:
        scale = params.v_max_xy / h
        vx *= scale
        vy *= scale
    vz = min(max(vz, -params.v_max_z), params.v_max_z)

    rate = min(max(cmd.yaw_rate, -params.yaw_rate_max), params.yaw_rate_max)
    yaw = wrap_angle(state.yaw + dt * rate)

    px = state.position[0] + dt * vx
    py = state.position[1] + dt * vy
    pz = state.position[2] + dt * vz

    return UavState(
        position=np.array([px, py, pz]),
        velocity=np.array([vx, vy, vz]),
        yaw=yaw,
        yaw_rate=rate,
    )


# ---------------------------------------------------------------------------
# Target trajectory patterns
# ---------------------------------------------------------------------------

class PatternKind(enum.Enum):
    STATIC_HOVER = "static_hover"
    STRAIGHT_LINE = "straight_line"
    FIGURE_EIGHT = "figure_eight"


def _gerono_speed_constant() -> float:
    # Mean of sqrt(cos^2 u + cos^2 2u) over one period, times 2*pi. Used to
    # normalize the lemniscate parameter rate so the path speed averages the
    # configured value.
    u = np.linspace(0.0, 2.0 * np.pi, 200_001)
    return float(np.trapezoid(np.sqrt(np.cos(u) ** 2 + np.cos(2.0 * u) ** 2), u))


_GERONO_C = _gerono_speed_constant()


@dataclass
class TrajectoryPattern:
    """Analytic target-vehicle trajectory.

    The figure-eight is a Gerono lemniscate, x = A sin(w t),
    y = A sin(w t) cos(w t) in the heading-aligned frame, with the
    parameter rate w chosen so the path speed averages `speed`.
    """

    kind: PatternKind
    center: np.ndarray
    heading: float = 0.0
    speed: float = 0.0
    extent: float = 4.0
    omega: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.speed < 0.0:
            raise ValueError("pattern speed must be >= 0")
        if self.kind is PatternKind.FIGURE_EIGHT:
            if self.extent <= 0.0:
                raise ValueError("figure_eight extent must be > 0")
            self.omega = 2.0 * math.pi * self.speed / (self.extent * _GERONO_C)

    @property
    def period(self) -> float:
        """Lemniscate lap time; inf for non-periodic patterns."""
        if self.kind is PatternKind.FIGURE_EIGHT and self.omega > 0.0:
            return 2.0 * math.pi / self.omega
        return math.inf


def target_pose(pattern: TrajectoryPattern, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Target position and exact velocity at time t >= 0."""
    if t < 0.0:
        raise ValueError("t must be >= 0")
    ch, sh = math.cos(pattern.heading), math.sin(pattern.heading)
    if pattern.kind is PatternKind.STATIC_HOVER:
        return pattern.center.copy(), np.zeros(3)
    if pattern.kind is PatternKind.STRAIGHT_LINE:
        d = pattern.speed * t
        pos = pattern.center + np.array([ch * d, sh * d, 0.0])
        vel = np.array([ch * pattern.speed, sh * pattern.speed, 0.0])
        return pos, vel
    a, w = pattern.extent, pattern.omega
    x = a * math.sin(w * t)
    y = a * math.sin(w * t) * math.cos(w * t)
    vx = a * w * math.cos(w * t)
    vy = a * w * math.cos(2.0 * w * t)
    pos = pattern.center + np.array([ch * x - sh * y, sh * x + ch * y, 0.0])
    vel = np.array([ch * vx - sh * vy, sh * vx + ch * vy, 0.0])
    return pos, vel


# ---------------------------------------------------------------------------
# Suspended ball
# ---------------------------------------------------------------------------

@dataclass
class BallState:
    """Spherical-pendulum angles and rates, or free-flight kinematics
    once detached."""

    theta: float = 0.0
    phi: float = 0.0
    theta_dot: float = 0.0
    phi_dot: float = 0.0
    attached: bool = True
    free_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    free_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class BallParams:
    length: float = 1.5       # rod length, m
    diameter: float = 0.18    # ball diameter, m
    mass: float = 0.1         # kg
    damping: float = 0.05     # angular damping, 1/s
    gravity: float = GRAVITY


def _rod_vector_state(ball: BallState):
    # Angles to rod direction u and its rate; u points pivot -> bob.
    sth, cth = math.sin(ball.theta), math.cos(ball.theta)
    sph, cph = math.sin(ball.phi), math.cos(ball.phi)
    td, pd = ball.theta_dot, ball.phi_dot
    u = (sth * cph, sth * sph, -cth)
    du = (
        td * cth * cph - pd * sth * sph,
        td * cth * sph + pd * sth * cph,
        td * sth,
    )
    return u, du


def _angles_from_rod(u, du, prev_phi: float):
    ux, uy, uz = u
    s = math.hypot(ux, uy)
    theta = math.atan2(s, -uz)
    if s > 1e-12:
        phi = math.atan2(uy, ux)
        cph, sph = ux / s, uy / s
        phi_dot = (-du[0] * sph + du[1] * cph) / s
    else:
        # Hanging vertically: azimuth is degenerate, keep the previous one.
        phi = prev_phi
        cph, sph = math.cos(phi), math.sin(phi)
        phi_dot = 0.0
    cth = -uz
    theta_dot = du[0] * cth * cph + du[1] * cth * sph + du[2] * s
    return theta, phi, theta_dot, phi_dot


def _rod_accel(u, du, A, length, damping):
    # Rigid-rod constrained point under apparent specific force A:
    #   u'' = A/L - ((A.u)/L + |u'|^2) u - c u'
    # The radial multiplier keeps |u| = 1; damping acts on the swing rate.
    ux, uy, uz = u
    dux, duy, duz = du
    a_dot_u = A[0] * ux + A[1] * uy + A[2] * uz
    lam = a_dot_u / length + (dux * dux + duy * duy + duz * duz)
    return (
        A[0] / length - lam * ux - damping * dux,
        A[1] / length - lam * uy - damping * duy,
        A[2] / length - lam * uz - damping * duz,
    )


def step_ball(
    ball: BallState,
    support_accel,
    wind_force,
    params: BallParams,
    dt: float,
) -> BallState:
    """Advance the ball by dt.

    While attached, integrates the spherical pendulum with RK4 under
    gravity, the moving-pivot pseudo-force, the wind force at the bob,
    and linear damping. Integration runs on the rod direction vector
    (free of the polar-coordinate singularity at the vertical) and maps
    back to the angle state. Once detached, the ball is ballistic.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")

    if not ball.attached:
        p = ball.free_position
        v = ball.free_velocity
        g = params.gravity
        new_v = np.array([v[0], v[1], v[2] - g * dt])
        new_p = np.array([p[0] + v[0] * dt, p[1] + v[1] * dt, p[2] + v[2] * dt - 0.5 * g * dt * dt])
        return replace(ball, free_position=new_p, free_velocity=new_v)

    A = (
        float(wind_force[0]) / params.mass - float(support_accel[0]),
        float(wind_force[1]) / params.mass - float(support_accel[1]),
        float(wind_force[2]) / params.mass - float(support_accel[2]) - params.gravity,
    )
    L, c = params.length, params.damping
    u, du = _rod_vector_state(ball)

    def rates(u_, du_):
        return du_, _rod_accel(u_, du_, A, L, c)

    k1u, k1d = rates(u, du)
    u2 = tuple(u[i] + 0.5 * dt * k1u[i] for i in range(3))
    d2 = tuple(du[i] + 0.5 * dt * k1d[i] for i in range(3))
    k2u, k2d = rates(u2, d2)
    u3 = tuple(u[i] + 0.5 * dt * k2u[i] for i in range(3))
    d3 = tuple(du[i] + 0.5 * dt * k2d[i] for i in range(3))
    k3u, k3d = rates(u3, d3)
    u4 = tuple(u[i] + dt * k3u[i] for i in range(3))
    d4 = tuple(du[i] + dt * k3d[i] for i in range(3))
    k4u, k4d = rates(u4, d4)

    un = [u[i] + (dt / 6.0) * (k1u[i] + 2.0 * k2u[i] + 2.0 * k3u[i] + k4u[i]) for i in range(3)]
    dn = [du[i] + (dt / 6.0) * (k1d[i] + 2.0 * k2d[i] + 2.0 * k3d[i] + k4d[i]) for i in range(3)]

    # Re-project onto the constraint manifold (|u| = 1, u' tangent).
    norm = math.sqrt(un[0] ** 2 + un[1] ** 2 + un[2] ** 2)
    un = [v / norm for v in un]
    radial = dn[0] * un[0] + dn[1] * un[1] + dn[2] * un[2]
    dn = [dn[i] - radial * un[i] for i in range(3)]

    theta, phi, theta_dot, phi_dot = _angles_from_rod(un, dn, ball.phi)
    return replace(ball, theta=theta, phi=phi, theta_dot=theta_dot, phi_dot=phi_dot)


def ball_world_position(support, ball: BallState, length: float) -> np.ndarray:
    """Bob position for an attached ball: support + L * rod direction."""
    sth, cth = math.sin(ball.theta), math.cos(ball.theta)
    sph, cph = math.sin(ball.phi), math.cos(ball.phi)
    return np.array(
        [
            support[0] + length * sth * cph,
            support[1] + length * sth * sph,
            support[2] - length * cth,
        ]
    )


def ball_world_velocity(support_velocity, ball: BallState, length: float) -> np.ndarray:
    """Bob velocity for an attached ball (pivot velocity plus rod swing)."""
    sth, cth = math.sin(ball.theta), math.cos(ball.theta)
    sph, cph = math.sin(ball.phi), math.cos(ball.phi)
    td, pd = ball.theta_dot, ball.phi_dot
    return np.array(
        [
            support_velocity[0] + length * (td * cth * cph - pd * sth * sph),
            support_velocity[1] + length * (td * cth * sph + pd * sth * cph),
            support_velocity[2] + length * td * sth,
        ]
    )


def pendulum_energy(ball: BallState, params: BallParams) -> float:
    """Mechanical energy of the attached pendulum about a stationary pivot."""
    L, m, g = params.length, params.mass, params.gravity
    sth = math.sin(ball.theta)
    kinetic = 0.5 * m * L * L * (ball.theta_dot**2 + sth * sth * ball.phi_dot**2)
    potential = m * g * L * (1.0 - math.cos(ball.theta))
    return kinetic + potential


def detach_check(pull_force: float, threshold: float) -> bool:
    """True when the applied pull meets the release threshold (inclusive)."""
    if pull_force < 0.0:
        raise ValueError("pull_force must be >= 0")
    return pull_force >= threshold


def detach(ball: BallState, support, support_velocity, length: float) -> BallState:
    """Release the ball, seeding free flight from its current kinematics."""
    pos = ball_world_position(support, ball, length)
    vel = ball_world_velocity(support_velocity, ball, length)
    return replace(ball, attached=False, free_position=pos, free_velocity=vel)


@dataclass
class OrnsteinUhlenbeckWind:
    """Per-axis OU wind force acting on the ball bob.

    dW = (mean - W) dt/tau + sigma sqrt(2 dt/tau) N(0,1), which has
    stationary standard deviation sigma per axis.
    """

    mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma: float = 0.0
    tau: float = 2.0
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def step(self, rng: np.random.Generator, dt: float) -> np.ndarray:
        a = dt / self.tau
        noise = rng.standard_normal(3)
        self.force = self.force + (self.mean - self.force) * a + self.sigma * math.sqrt(2.0 * a) * noise
        return self.force
