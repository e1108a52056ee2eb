"""Deterministic multirate simulation engine and Monte Carlo driver.

A scenario advances at the dynamics rate; vision (detection synthesis
plus tracking) and control (mission logic, guidance, channel) fire on
the nearest dynamics steps to their configured rates. One global seed
fans out into named per-subsystem streams (wind, channel, one per
camera) so toggling a noise source never shifts the others' draws; a
run is a pure function of (config, seed) down to the log bytes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
import numpy as np

from . import camera as cam
from . import coordination as coord
from .camera import (
    CameraIntrinsics,
    CameraMount,
    DetectionClass,
    DetectionNoise,
    estimate_range,
    gate_below_drone,
    synth_detection,
)
from .config import ScenarioConfig, config_from_dict
from .coordination import (
    Channel,
    ChannelModel,
    CaptureGeometry,
    DroneAgent,
    MissionPhase,
    MissionSettings,
)
from .guidance import CommandLimits, GuidanceGains
from .logs import SCHEMA_NAME, SCHEMA_VERSION, SimLog
from .perception import FilterParams, PerceptionState
from .world import (
    BallParams,
    BallState,
    Frame,
    OrnsteinUhlenbeckWind,
    PatternKind,
    TrajectoryPattern,
    UavParams,
    UavState,
    VelocityCommand,
    ball_world_position,
    ball_world_velocity,
    detach,
    detach_check,
    step_ball,
    step_uav,
    target_pose,
)

# Named substream ids under the scenario seed.
_STREAM_WIND = 0
_STREAM_CHANNEL = 1
_STREAM_CAMERA_BASE = 16


def substream(seed: int, stream_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, stream_id)))


def _build_pattern(cfg: ScenarioConfig) -> TrajectoryPattern:
    return TrajectoryPattern(
        kind=PatternKind(cfg.target.pattern),
        center=np.array(cfg.target.center),
        heading=cfg.target.heading,
        speed=cfg.target.speed,
        extent=cfg.target.extent,
    )


def _filter_params(cfg: ScenarioConfig, cls: DetectionClass) -> FilterParams:
    p = cfg.perception
    if cls is DetectionClass.BALL:
        return FilterParams(
            q_pixel=p.q_pixel_ball,
            q_range=p.q_range_ball,
            sigma_px=p.sigma_px,
            sigma_range=p.sigma_range,
            init_range=p.init_range_ball,
            loss_timeout=p.loss_timeout,
            gate_chi2=p.gate_chi2,
            init_vel_var=p.init_vel_var,
            init_range_rate_var=p.init_range_rate_var,
        )
    return FilterParams(
        q_pixel=p.q_pixel,
        q_range=p.q_range,
        sigma_px=p.sigma_px,
        sigma_range=p.sigma_range,
        init_range=None,
        loss_timeout=p.loss_timeout,
        gate_chi2=p.gate_chi2,
        init_vel_var=p.init_vel_var,
        init_range_rate_var=p.init_range_rate_var,
    )


class _DroneRuntime:
    """Everything the engine tracks for one own drone."""

    def __init__(self, dcfg, cfg: ScenarioConfig, collaborative: bool, rng: np.random.Generator):
        self.id = dcfg.id
        self.role = dcfg.role
        self.uav = UavState.at(*dcfg.start, yaw=dcfg.yaw)
        self.params = UavParams(
            tau=dcfg.tau,
            v_max_xy=dcfg.limits.v_xy,
            v_max_z=dcfg.limits.v_z,
            yaw_rate_max=dcfg.limits.yaw_rate,
        )
        self.intr = CameraIntrinsics(
            width=dcfg.camera.width,
            height=dcfg.camera.height,
            focal_px=dcfg.camera.focal_px,
            frame_rate=cfg.rates.vision,
        )
        self.mount = CameraMount(translation=np.array(dcfg.camera.mount))
        self.noise = DetectionNoise(
            sigma_center_px=dcfg.camera.sigma_center_px,
            sigma_size_px=dcfg.camera.sigma_size_px,
            p_det_near_m=dcfg.camera.p_det_near,
            p_det_far_m=dcfg.camera.p_det_far,
            p_det_floor=dcfg.camera.p_det_floor,
            min_box_px=dcfg.camera.min_box_px,
        )
        self.rng = rng
        self.percep = PerceptionState(
            drone_params=_filter_params(cfg, DetectionClass.DRONE),
            ball_params=_filter_params(cfg, DetectionClass.BALL),
        )
        self.percep.selection.switch_range = cfg.perception.switch_range
        gains = GuidanceGains(
            kp_yaw=dcfg.gains.kp_yaw,
            kd_yaw=dcfg.gains.kd_yaw,
            kp_z=dcfg.gains.kp_z,
            kd_z=dcfg.gains.kd_z,
            kp_range=dcfg.gains.kp_range,
            kd_range=dcfg.gains.kd_range,
            r_des=cfg.mission.grabber_standoff,
        )
        limits = CommandLimits(
            v_max_xy=dcfg.limits.v_xy,
            v_max_z=dcfg.limits.v_z,
            yaw_rate_max=dcfg.limits.yaw_rate,
        )
        settings = MissionSettings(
            takeoff_altitude=cfg.mission.takeoff_altitude,
            takeoff_speed=cfg.mission.takeoff_speed,
            explore_area=tuple(cfg.mission.explore_area),
            explore_speed=cfg.mission.explore_speed,
            lane_spacing=cfg.mission.lane_spacing,
            yaw_gain=cfg.mission.yaw_gain,
            tracker_standoff=cfg.mission.tracker_standoff,
            grabber_standoff=cfg.mission.grabber_standoff,
            drone_approach_range=cfg.mission.drone_approach_range,
            approach_speed=cfg.mission.approach_speed,
            arrival_radius=cfg.mission.arrival_radius,
            scan_yaw_rate=cfg.mission.scan_yaw_rate,
            align_px=cfg.mission.align_px,
            align_range_tol=cfg.mission.align_range_tol,
            grab_ramp_rate=cfg.mission.grab_ramp_rate,
            grab_closing_bias=cfg.mission.grab_closing_bias,
            grab_time_budget=cfg.mission.grab_time_budget,
            sighting_period=cfg.mission.sighting_period,
            land_speed=cfg.mission.land_speed,
            home_tolerance=cfg.mission.home_tolerance,
            memory_timeout=cfg.mission.memory_timeout,
            mission_budget=(
                cfg.mission.mission_budget
                if cfg.mission.mission_budget is not None
                else math.inf
            ),
        )
        self.agent = DroneAgent(
            drone_id=dcfg.id,
            role=dcfg.role,
            settings=settings,
            gains=gains,
            limits=limits,
            intr=self.intr,
            mount=self.mount,
            home=np.array(dcfg.start),
            collaborative=collaborative,
        )
        self.held_cmd = VelocityCommand(frame=Frame.WORLD)
        self.inbox: list = []


def _det_record(det) -> dict | None:
    if det is None:
        return None
    return {"x": det.x, "y": det.y, "w": det.w, "h": det.h}


def _track_record(track) -> dict:
    return {
        "status": track.status.value,
        "x": track.state[0],
        "y": track.state[1],
        "x_rate": track.state[2],
        "y_rate": track.state[3],
        "r": track.state[4],
        "r_rate": track.state[5],
    }


def run_scenario(config: ScenarioConfig, detail: bool = True) -> SimLog:
    """Simulate one scenario; deterministic for a fixed config.

    With detail=False the bulky state/vision/command/message records are
    skipped (phases, events, and the verdict are always logged), which
    Monte Carlo batches use for speed. Detail never affects the
    simulated trajectory.
    """
    rates = config.rates
    dt = 1.0 / rates.dynamics
    n_steps = round(config.duration * rates.dynamics)
    vision_every = max(1, round(rates.dynamics / rates.vision))
    control_every = max(1, round(rates.dynamics / rates.control))

    header = {
        "schema": SCHEMA_NAME,
        "version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "multirate": {
            "dt": dt,
            "vision_every": vision_every,
            "control_every": control_every,
            "vision_hz": rates.dynamics / vision_every,
            "control_hz": rates.dynamics / control_every,
        },
    }
    log = SimLog(header=header)

    wcfg = config.world
    ball_params = BallParams(
        length=wcfg.rod_length,
        diameter=wcfg.ball_diameter,
        mass=wcfg.ball_mass,
        damping=wcfg.damping,
        gravity=wcfg.gravity,
    )
    ball = BallState()
    wind = OrnsteinUhlenbeckWind(
        mean=np.array(wcfg.wind.mean), sigma=wcfg.wind.sigma, tau=wcfg.wind.tau
    )
    wind_enabled = wcfg.wind.enabled
    wind_rng = substream(config.seed, _STREAM_WIND)
    pattern = _build_pattern(config)
    channel = Channel(
        ChannelModel(
            latency=config.channel.latency,
            drop_probability=config.channel.drop_probability,
            rate_limit_hz=config.channel.rate_hz,
        ),
        substream(config.seed, _STREAM_CHANNEL),
    )
    geom = CaptureGeometry(
        radius=config.capture.radius,
        cone_half_angle=math.radians(config.capture.cone_half_angle_deg),
        max_rel_speed=config.capture.max_rel_speed,
        gripper_offset=np.array(config.capture.gripper_offset),
    )

    collaborative = any(d.role == "tracker" for d in config.drones)
    drones = [
        _DroneRuntime(dcfg, config, collaborative, substream(config.seed, _STREAM_CAMERA_BASE + i))
        for i, dcfg in enumerate(config.drones)
    ]
    grabber = next(d for d in drones if d.role == "grabber")

    support_pos, support_vel = target_pose(pattern, 0.0)
    held = False
    grab_flag = False
    t_capture = None
    invalid = False
    swing_flagged = False
    engaged = False
    terminal_track_loss = False
    counters = {"dynamics_steps": 0, "vision_ticks": 0, "control_ticks": 0}

    def ball_position() -> np.ndarray:
        if held:
            return coord.gripper_point(grabber.uav, geom)
        if ball.attached:
            return ball_world_position(support_pos, ball, ball_params.length)
        return ball.free_position.copy()

    def ball_velocity() -> np.ndarray:
        if held:
            return grabber.uav.velocity.copy()
        if ball.attached:
            return ball_world_velocity(support_vel, ball, ball_params.length)
        return ball.free_velocity.copy()

    t_end = 0.0
    for k in range(n_steps):
        t = k * dt

        if k % vision_every == 0:
            counters["vision_ticks"] += 1
            bp = ball_position()
            for d in drones:
                drone_det = synth_detection(
                    support_pos, config.target.span, DetectionClass.DRONE,
                    d.uav, d.mount, d.intr, d.noise, d.rng, t,
                )
                gate = (
                    gate_below_drone(drone_det, d.intr, config.target.span, ball_params.length)
                    if drone_det is not None
                    else None
                )
                ball_det = synth_detection(
                    bp, ball_params.diameter, DetectionClass.BALL,
                    d.uav, d.mount, d.intr, d.noise, d.rng, t, gate=gate,
                )
                drone_range = (
                    estimate_range(drone_det, d.intr, config.target.span)
                    if drone_det is not None
                    else None
                )
                ball_range = (
                    estimate_range(ball_det, d.intr, ball_params.diameter)
                    if ball_det is not None
                    else None
                )
                events = d.percep.vision_update(
                    drone_det, drone_range, ball_det, ball_range, t,
                    ego_px_rate=d.intr.focal_px * d.uav.yaw_rate,
                )
                for name, cls in events:
                    if (
                        name == "track_lost"
                        and cls == "ball"
                        and d.role == "grabber"
                        and d.agent.phase in (MissionPhase.SERVO_BALL, MissionPhase.GRAB)
                    ):
                        terminal_track_loss = True
                    log.append(
                        {
                            "kind": "event",
                            "t": t,
                            "event": name,
                            "drone": d.id,
                            "data": {"cls": cls, "phase": d.agent.phase.value},
                        }
                    )
                if detail:
                    log.append(
                        {
                            "kind": "vision",
                            "t": t,
                            "drone": d.id,
                            "dets": {
                                "drone": _det_record(drone_det),
                                "ball": _det_record(ball_det),
                            },
                            "tracks": {
                                "drone": _track_record(d.percep.drone_track),
                                "ball": _track_record(d.percep.ball_track),
                            },
                            "selection": d.percep.selection.active.value,
                            "ball_depth": cam.point_depth(bp, d.uav, d.mount),
                            "ball_range": float(
                                np.linalg.norm(bp - cam.camera_position(d.uav, d.mount))
                            ),
                        }
                    )

        if k % control_every == 0:
            counters["control_ticks"] += 1
            for msg in channel.collect(t):
                for d in drones:
                    if d.id != msg.sender:
                        d.inbox.append(msg)
                if detail:
                    log.append(
                        {
                            "kind": "message",
                            "t": t,
                            "status": "delivered",
                            "sender": msg.sender,
                            "msg_kind": msg.kind.value,
                            "t_sent": msg.t_sent,
                            "position": None if msg.position is None else list(msg.position),
                        }
                    )
            outbox = []
            for d in drones:
                flag = grab_flag if d.role == "grabber" else False
                cmd, msgs, transitions = d.agent.step(d.percep, d.uav, d.inbox, flag, t)
                d.inbox = []
                d.held_cmd = cmd
                outbox.extend(msgs)
                for src, dst in transitions:
                    if dst is MissionPhase.SERVO_BALL and d.role == "grabber":
                        engaged = True
                    log.append(
                        {
                            "kind": "phase",
                            "t": t,
                            "drone": d.id,
                            "from": src.value,
                            "to": dst.value,
                        }
                    )
                if detail:
                    log.append(
                        {
                            "kind": "command",
                            "t": t,
                            "drone": d.id,
                            "phase": d.agent.phase.value,
                            "cmd": {
                                "vx": cmd.vx,
                                "vy": cmd.vy,
                                "vz": cmd.vz,
                                "yaw_rate": cmd.yaw_rate,
                            },
                        }
                    )
            for msg, status in channel.submit(outbox, t):
                if detail or status == "sent":
                    log.append(
                        {
                            "kind": "message",
                            "t": t,
                            "status": status,
                            "sender": msg.sender,
                            "msg_kind": msg.kind.value,
                            "t_sent": msg.t_sent,
                            "position": None if msg.position is None else list(msg.position),
                        }
                    )
            if detail:
                log.append(
                    {
                        "kind": "state",
                        "t": t,
                        "target": {"p": list(support_pos), "v": list(support_vel)},
                        "ball": {
                            "p": list(ball_position()),
                            "v": list(ball_velocity()),
                            "attached": ball.attached,
                            "held": held,
                            "theta": ball.theta,
                            "phi": ball.phi,
                        },
                        "drones": {
                            d.id: {
                                "p": list(d.uav.position),
                                "v": list(d.uav.velocity),
                                "yaw": d.uav.yaw,
                            }
                            for d in drones
                        },
                    }
                )
            if not all(
                np.all(np.isfinite(d.uav.position)) and np.all(np.isfinite(d.uav.velocity))
                for d in drones
            ):
                invalid = True
                log.append({"kind": "event", "t": t, "event": "nonfinite_state", "drone": None, "data": {}})
                t_end = t
                break

        # Contact check at the dynamics rate while the grabber commits.
        if not held and grabber.agent.phase is MissionPhase.GRAB:
            bp = ball_position()
            bv = ball_velocity()
            if coord.grab_detect(bp, bv, grabber.uav, geom) and detach_check(
                wcfg.claw_pull_force, wcfg.detach_threshold
            ):
                ball = detach(ball, support_pos, support_vel, ball_params.length)
                held = True
                grab_flag = True
                t_capture = t
                log.append(
                    {"kind": "event", "t": t, "event": "detach", "drone": grabber.id,
                     "data": {"pull_force": wcfg.claw_pull_force}}
                )
                log.append(
                    {"kind": "event", "t": t, "event": "capture", "drone": grabber.id,
                     "data": {"ball_p": list(bp)}}
                )

        # Integrate t -> t + dt.
        next_pos, next_vel = target_pose(pattern, (k + 1) * dt)
        support_accel = (next_vel - support_vel) / dt
        if wind_enabled:
            wind_force = wind.step(wind_rng, dt)
        else:
            wind_force = np.zeros(3)
        if not held and ball.attached:
            ball = step_ball(ball, support_accel, wind_force, ball_params, dt)
            if abs(ball.theta) >= math.pi / 2 and not swing_flagged:
                swing_flagged = True
                log.append(
                    {"kind": "event", "t": t, "event": "invalid_swing", "drone": None,
                     "data": {"theta": ball.theta}}
                )
        elif not held:
            ball = step_ball(ball, np.zeros(3), np.zeros(3), ball_params, dt)
        for d in drones:
            d.uav = step_uav(d.uav, d.held_cmd, d.params, dt)
        support_pos, support_vel = next_pos, next_vel
        counters["dynamics_steps"] += 1
        t_end = (k + 1) * dt

        if all(d.agent.phase in coord.TERMINAL_PHASES for d in drones):
            break

    if t_capture is not None:
        verdict = "captured"
        failure = None
    elif invalid:
        verdict = "invalid"
        failure = "nonfinite_state"
    else:
        verdict = "timeout"
        if not engaged:
            failure = "never_engaged"
        elif terminal_track_loss:
            failure = "terminal_track_loss"
        elif wind_enabled:
            failure = "wind_displacement"
        else:
            failure = "other"

    log.append(
        {
            "kind": "verdict",
            "verdict": verdict,
            "t_end": t_end,
            "t_capture": t_capture,
            "failure": failure,
            "counters": counters,
        }
    )
    return log


# ---------------------------------------------------------------------------
# Replay validation
# ---------------------------------------------------------------------------

def replay_divergence(log: SimLog) -> float:
    """Re-integrate the world from logged commands; return the largest
    position deviation against the logged ground truth.

    Drives world_dynamics open loop with the logged control-tick
    commands and the reconstructed wind stream. Drone states are checked
    at every logged state record; the ball is checked while it is still
    attached (after capture it is carried, which is engine logic, not
    plant dynamics).
    """
    cfg = config_from_dict(log.header["config"])
    rates = cfg.rates
    dt = 1.0 / rates.dynamics
    control_every = max(1, round(rates.dynamics / rates.control))

    cmds: dict = {}
    for r in log.iter_kind("command"):
        cmds.setdefault(r["t"], {})[r["drone"]] = VelocityCommand(
            vx=r["cmd"]["vx"], vy=r["cmd"]["vy"], vz=r["cmd"]["vz"],
            yaw_rate=r["cmd"]["yaw_rate"], frame=Frame.WORLD,
        )
    states = list(log.iter_kind("state"))
    if not states:
        raise ValueError("log has no state records to replay against")

    ball_params = BallParams(
        length=cfg.world.rod_length,
        diameter=cfg.world.ball_diameter,
        mass=cfg.world.ball_mass,
        damping=cfg.world.damping,
        gravity=cfg.world.gravity,
    )
    wind = OrnsteinUhlenbeckWind(
        mean=np.array(cfg.world.wind.mean), sigma=cfg.world.wind.sigma, tau=cfg.world.wind.tau
    )
    wind_rng = substream(cfg.seed, _STREAM_WIND)
    pattern = _build_pattern(cfg)
    uavs = {d.id: UavState.at(*d.start, yaw=d.yaw) for d in cfg.drones}
    params = {
        d.id: UavParams(tau=d.tau, v_max_xy=d.limits.v_xy, v_max_z=d.limits.v_z,
                        yaw_rate_max=d.limits.yaw_rate)
        for d in cfg.drones
    }
    held_cmds = {d.id: VelocityCommand(frame=Frame.WORLD) for d in cfg.drones}
    ball = BallState()
    support_pos, support_vel = target_pose(pattern, 0.0)

    by_time = {s["t"]: s for s in states}
    t_last = states[-1]["t"]
    n_steps = round(t_last / dt) + 1

    worst = 0.0
    for k in range(n_steps):
        t = k * dt
        if k % control_every == 0 and t in cmds:
            for drone_id, cmd in cmds[t].items():
                held_cmds[drone_id] = cmd
        rec = by_time.get(t)
        if rec is not None:
            for drone_id, s in rec["drones"].items():
                dev = float(np.max(np.abs(uavs[drone_id].position - np.array(s["p"]))))
                worst = max(worst, dev)
            if rec["ball"]["attached"] and not rec["ball"]["held"]:
                bp = ball_world_position(support_pos, ball, ball_params.length)
                worst = max(worst, float(np.max(np.abs(bp - np.array(rec["ball"]["p"])))))
        if t >= t_last:
            break
        next_pos, next_vel = target_pose(pattern, (k + 1) * dt)
        support_accel = (next_vel - support_vel) / dt
        if cfg.world.wind.enabled:
            wind_force = wind.step(wind_rng, dt)
        else:
            wind_force = np.zeros(3)
        if ball.attached:
            ball = step_ball(ball, support_accel, wind_force, ball_params, dt)
        for drone_id in uavs:
            uavs[drone_id] = step_uav(uavs[drone_id], held_cmds[drone_id], params[drone_id], dt)
        support_pos, support_vel = next_pos, next_vel
    return worst


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

def _mc_single(args) -> dict:
    config_dict, seed = args
    cfg = config_from_dict(config_dict).with_seed(seed)
    log = run_scenario(cfg, detail=False)
    rec = log.verdict_record
    return {
        "seed": seed,
        "verdict": rec["verdict"],
        "t_capture": rec["t_capture"],
        "failure": rec["failure"],
    }


def monte_carlo(
    config: ScenarioConfig,
    n_runs: int,
    seed_base: int,
    n_jobs: int = 1,
) -> dict:
    """Run the scenario across seeds seed_base..seed_base+n_runs-1.

    Geometry stays fixed; only the seeded noise (wind, detection,
    channel) varies. The summary is keyed and ordered by seed, so it is
    invariant to the parallelism degree.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    config_dict = config.to_dict()
    jobs = [(config_dict, seed_base + i) for i in range(n_runs)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            runs = list(ex.map(_mc_single, jobs))
    else:
        runs = [_mc_single(j) for j in jobs]
    runs.sort(key=lambda r: r["seed"])

    captured = [r for r in runs if r["verdict"] == "captured"]
    failures: dict = {}
    for r in runs:
        if r["failure"]:
            failures[r["failure"]] = failures.get(r["failure"], 0) + 1
    times = [r["t_capture"] for r in captured]
    capture_time = None
    if times:
        arr = np.array(times)
        capture_time = {
            "mean": float(arr.mean()),
            "std": float(arr.std()),
            "min": float(arr.min()),
            "max": float(arr.max()),
        }
    return {
        "n_runs": n_runs,
        "seed_base": seed_base,
        "captured": len(captured),
        "success_rate": len(captured) / n_runs,
        "capture_time": capture_time,
        "failures": dict(sorted(failures.items())),
        "runs": runs,
    }
