"""Physics-based generator of labeled gesture samples.

A gesture is a hand trajectory above the device. The microphone at the
origin hears the emitted carrier plus one reflection whose instantaneous
frequency follows the trajectory's radial velocity; the proximity
sensor reports lateral speed and heading whenever the hand crosses its
detection sphere. The gesture kinematics live in archetypes.txt so the
whole motion vocabulary is auditable and editable in one place.
"""

from __future__ import annotations

import importlib.resources
import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    MODE_IR_REQUIRED,
    SEGMENTATION_MODES,
    Dataset,
    GestureClass,
    IrEvent,
    IrStream,
    PipelineConfig,
    SampleRecord,
    Waveform,
    derive_rng,
    validate_config,
)
from .dsp import featurize_segment
from .errors import ClipWarning, DomainError, SimulationStall, TooFewUsers
from .segment import cut_segment, segment_by_ir, segment_freeform

TRAJECTORY_DT = 0.001  # trajectory sampling interval, seconds

# Every gesture starts from and returns to a rest pose lifted this far
# above its path, reached over APPROACH_S; the descent both keeps the
# hand outside the sensor sphere between gestures and gives the energy
# detector a clean onset.
REST_LIFT_M = 0.15
APPROACH_S = 0.12

# below this lateral speed a sensor crossing counts as straight-on
STRAIGHT_ON_MPS = 0.05

IR_RETRY_LIMIT = 20

AIM_SENSOR = "sensor"
AIM_LOOSE = "loose"


@dataclass(frozen=True)
class MotionTrajectory:
    """Hand positions (meters, relative to the microphone) on a dt grid."""

    positions: np.ndarray  # [N, 3]
    areas: np.ndarray  # [N], relative reflecting surface in (0, 1]
    dt: float
    motion_start_s: float = 0.0
    motion_end_s: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        areas = np.asarray(self.areas, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) < 2:
            raise ValueError("positions must be [N >= 2, 3]")
        if not np.all(np.isfinite(pos)):
            raise DomainError("non-finite trajectory positions")
        if len(areas) != len(pos):
            raise ValueError("areas must match positions")
        if np.any(areas <= 0) or np.any(areas > 1):
            raise DomainError("effector area must lie in (0, 1]")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "areas", areas)

    @property
    def duration_s(self) -> float:
        return (len(self.positions) - 1) * self.dt

    def times(self) -> np.ndarray:
        return np.arange(len(self.positions)) * self.dt

    def lateral_velocities(self) -> np.ndarray:
        """Per-interval xy velocity, shape [N-1, 2]."""
        return np.diff(self.positions[:, :2], axis=0) / self.dt


@dataclass(frozen=True)
class UserProfile:
    """How one simulated user distorts the canonical archetypes."""

    speed_scale: float = 1.0
    angle_jitter_deg: float = 4.0
    timing_jitter_s: float = 0.05
    sloppiness: float = 0.15

    def __post_init__(self):
        if not 0.5 <= self.speed_scale <= 2.0:
            raise DomainError("speed_scale outside [0.5, 2.0]")
        if min(self.angle_jitter_deg, self.timing_jitter_s, self.sloppiness) < 0:
            raise DomainError("jitter parameters must be non-negative")


def make_user_profile(rng) -> UserProfile:
    return UserProfile(
        speed_scale=rng.uniform(0.7, 1.4),
        angle_jitter_deg=rng.uniform(2.0, 8.0),
        timing_jitter_s=rng.uniform(0.02, 0.12),
        sloppiness=rng.uniform(0.05, 0.35),
    )


@dataclass(frozen=True)
class AcousticScene:
    """Amplitudes of what the microphone hears."""

    carrier_amp: float = 0.05
    reflection_gain: float = 0.02
    noise_std: float = 0.003
    ref_distance_m: float = 0.3

    def __post_init__(self):
        if self.carrier_amp <= 0:
            raise DomainError("carrier_amp must be positive")
        if self.noise_std < 0:
            raise DomainError("noise_std must be non-negative")


@dataclass(frozen=True)
class IrSensorModel:
    """Proximity sensor: a detection sphere reporting speed and heading."""

    sensor_position: tuple = (0.0, 0.06, 0.0)
    detection_radius_m: float = 0.08
    speed_gain: float = 60.0  # maps m/s of lateral motion to the 0-100 scale
    angle_noise_deg: float = 0.0
    speed_noise: float = 0.0

    def __post_init__(self):
        if self.detection_radius_m <= 0:
            raise DomainError("detection_radius_m must be positive")
        object.__setattr__(
            self, "sensor_position", tuple(float(v) for v in self.sensor_position)
        )


def doppler_shift(v, theta, f0, c):
    """Frequency shift of a reflection off a mover: f0 * v * cos(theta) / c.

    v is the speed toward the microphone (positive = approach), theta
    the angle between the motion and the microphone direction.
    """
    if np.any(np.asarray(c) <= 0):
        raise DomainError("speed of sound must be positive")
    if np.any(np.abs(v) >= np.asarray(c)):
        raise DomainError("|v| must stay below the speed of sound")
    return f0 * v * np.cos(theta) / c


# ---------------------------------------------------------------------------
# archetype table

_ARCHETYPES: dict[str, dict] | None = None


def load_archetypes() -> dict[str, dict]:
    """Parse archetypes.txt into {gesture label: parameter dict}."""
    global _ARCHETYPES
    if _ARCHETYPES is None:
        text = importlib.resources.files("airware").joinpath("archetypes.txt").read_text()
        table: dict[str, dict] = {}
        section = None
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                table[section] = {}
                continue
            if section is None or "=" not in line:
                raise ValueError("malformed archetype line: %r" % raw)
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            try:
                table[section][key] = float(value)
            except ValueError:
                table[section][key] = value
        missing = [g.label for g in GestureClass if g.label not in table]
        if missing:
            raise ValueError("archetypes.txt lacks sections for %s" % missing)
        _ARCHETYPES = table
    return _ARCHETYPES


# ---------------------------------------------------------------------------
# trajectory synthesis

def _smoothstep(n: int) -> np.ndarray:
    """0 -> 1 with zero endpoint velocity: (1 - cos(pi t)) / 2."""
    return (1.0 - np.cos(np.pi * np.linspace(0.0, 1.0, n))) / 2.0


def _heading_unit(heading_deg: float) -> np.ndarray:
    rad = np.deg2rad(heading_deg)
    return np.array([np.cos(rad), np.sin(rad), 0.0])


def _ramped_sine(n: int, freq_hz: float, duration_s: float) -> np.ndarray:
    """sin(2 pi f t) with smooth 8% edge ramps so velocity starts at 0."""
    t = np.linspace(0.0, duration_s, n)
    ramp = max(0.08 * duration_s, 1e-6)
    env = np.minimum(1.0, np.minimum(t / ramp, (duration_s - t) / ramp))
    return np.sin(2.0 * np.pi * freq_hz * t) * np.clip(env, 0.0, 1.0)


def _motion_core(params: dict, anchor: np.ndarray, heading_deg: float,
                 drift_m: float, dt: float, speed_scale: float) -> np.ndarray:
    """Positions of the motion itself (no rest phases), shape [M, 3]."""
    kind = params["kind"]
    scale = 1.0 / speed_scale

    def steps(duration):
        return max(int(round(duration / dt)) + 1, 2)

    if kind == "sweep":
        dur = params["duration_s"] * scale
        n = steps(dur)
        s = _smoothstep(n)
        u = _heading_unit(heading_deg)
        perp = np.array([-u[1], u[0], 0.0])
        pos = anchor + np.outer(s - 0.5, u * params["extent_m"])
        pos += np.outer(s - 0.5, perp * drift_m)
        return pos

    if kind == "oscillate":
        dur = params["duration_s"] * scale
        n = steps(dur)
        u = _heading_unit(heading_deg)
        wave = params["amplitude_m"] * _ramped_sine(n, params["freq_hz"] * speed_scale, dur)
        pos = anchor + np.outer(wave, u)
        pos[:, :2] += np.outer(np.linspace(-0.5, 0.5, n), [0.0, drift_m])
        return pos

    if kind == "radial":
        dur = params["duration_s"] * scale
        n = steps(dur)
        z = params["z_start_m"] + (params["z_end_m"] - params["z_start_m"]) * _smoothstep(n)
        pos = np.tile(anchor, (n, 1))
        pos[:, 2] = z
        return pos

    if kind == "whip":
        down = steps(params["down_s"] * scale)
        up = steps(params["up_s"] * scale)
        z = np.concatenate([
            params["z_start_m"] + (params["z_low_m"] - params["z_start_m"]) * _smoothstep(down),
            params["z_low_m"] + (params["z_end_m"] - params["z_low_m"]) * _smoothstep(up)[1:],
        ])
        pos = np.tile(anchor, (len(z), 1))
        pos[:, 2] = z
        return pos

    if kind == "strike":
        half = steps(params["bounce_s"] * scale / 2.0)
        bounce = np.concatenate([
            params["z_top_m"] + (params["z_low_m"] - params["z_top_m"]) * _smoothstep(half),
            params["z_low_m"] + (params["z_top_m"] - params["z_low_m"]) * _smoothstep(half)[1:],
        ])
        z = bounce
        for _ in range(int(params["repeats"]) - 1):
            hold = np.full(steps(params["gap_s"] * scale) - 1, params["z_top_m"])
            z = np.concatenate([z, hold, bounce[1:]])
        pos = np.tile(anchor, (len(z), 1))
        pos[:, 2] = z
        return pos

    if kind == "flutter":
        dur = params["duration_s"] * scale
        n = steps(dur)
        pos = np.tile(anchor, (n, 1))
        pos[:, 2] = anchor[2] + params["amplitude_m"] * _ramped_sine(
            n, params["freq_hz"], dur  # tremor rate is not user-scaled
        )
        return pos

    if kind == "loop":
        dur = params["duration_s"] * scale
        n = steps(dur)
        r = params["radius_m"]
        phi = 2.0 * np.pi * _smoothstep(n)
        center = anchor + np.array([0.0, r, 0.0])
        pos = np.tile(center, (n, 1))
        pos[:, 0] += r * np.sin(phi)
        pos[:, 1] += -r * np.cos(phi)
        return pos

    raise ValueError("unknown archetype kind %r" % kind)


def synth_trajectory(
    gesture: GestureClass,
    profile: UserProfile,
    rng,
    duration_s: float = 2.5,
    start_s: float | None = None,
    aim: str = AIM_SENSOR,
    sensor: IrSensorModel | None = None,
) -> MotionTrajectory:
    """Sample one performance of a gesture as a hand trajectory.

    The motion core follows the class archetype, distorted by the user
    profile; it is wrapped in rest -> approach -> motion -> retreat ->
    rest so the hand starts and ends well above the device. aim="sensor"
    centers the path on the proximity sensor, aim="loose" scatters it.
    """
    sensor = sensor or IrSensorModel()
    params = load_archetypes()[GestureClass(gesture).label]
    dt = TRAJECTORY_DT

    heading = params.get("heading_deg", 0.0) + rng.normal(0.0, profile.angle_jitter_deg)
    drift_m = profile.sloppiness * params.get("extent_m", 0.1) * rng.normal(0.0, 0.5)
    area = float(np.clip(params["area"] * (1.0 + 0.1 * rng.normal()), 0.05, 1.0))

    sx, sy, _ = sensor.sensor_position
    if aim == AIM_SENSOR:
        anchor_xy = np.array([sx, sy]) + rng.normal(0.0, 0.008, size=2)
        height = params.get("height_m", 0.05) + rng.normal(0.0, 0.005)
    elif aim == AIM_LOOSE:
        anchor_xy = np.array([sx, sy]) + rng.normal(0.0, 0.11, size=2)
        height = params.get("height_m", 0.05) + abs(rng.normal(0.0, 0.05))
    else:
        raise ValueError("aim must be 'sensor' or 'loose'")
    anchor = np.array([anchor_xy[0], anchor_xy[1], max(height, 0.02)])

    core = _motion_core(params, anchor, heading, drift_m, dt, profile.speed_scale)

    # approach from and retreat to a lifted rest pose
    lift = np.array([0.0, 0.0, REST_LIFT_M])
    n_app = max(int(round(APPROACH_S / profile.speed_scale / dt)) + 1, 2)
    approach = core[0] + np.outer(1.0 - _smoothstep(n_app), lift)
    retreat = core[-1] + np.outer(_smoothstep(n_app), lift)
    moving = np.concatenate([approach, core[1:], retreat[1:]])

    total_n = int(round(duration_s / dt)) + 1
    move_n = len(moving)
    if move_n > total_n:  # squeeze slow performances into the window
        idx = np.linspace(0, move_n - 1, total_n).round().astype(int)
        moving, move_n = moving[idx], total_n
    if start_s is None:
        start_s = (duration_s - (move_n - 1) * dt) / 2.0 + rng.normal(
            0.0, profile.timing_jitter_s
        )
    lead_n = int(round(start_s / dt))
    lead_n = int(np.clip(lead_n, 0, total_n - move_n))
    tail_n = total_n - move_n - lead_n
    positions = np.concatenate([
        np.tile(moving[0], (lead_n, 1)),
        moving,
        np.tile(moving[-1], (tail_n, 1)),
    ])
    return MotionTrajectory(
        positions=positions,
        areas=np.full(total_n, area),
        dt=dt,
        motion_start_s=(lead_n + n_app - 1) * dt,
        motion_end_s=(lead_n + move_n - n_app) * dt,
    )


# ---------------------------------------------------------------------------
# rendering

def render_audio(
    traj: MotionTrajectory,
    scene: AcousticScene,
    cfg: PipelineConfig,
    rng=None,
) -> Waveform:
    """Microphone signal: carrier + Doppler-shifted reflection (+ noise).

    The reflection's phase is the exact integral of its instantaneous
    frequency f0 * (1 - r'(t)/c): phi(t) = 2 pi (f0 t - (f0/c)(r(t)-r(0))).
    Amplitude follows effector area and an inverse power of distance.
    Output length is exactly the configured segment length.
    """
    if traj.duration_s > cfg.segment_len_s + 1e-9:
        raise ValueError("trajectory longer than one segment")
    sr = cfg.sample_rate_hz
    f0 = cfg.carrier_hz
    t = np.arange(cfg.segment_samples) / sr

    r_traj = np.linalg.norm(traj.positions, axis=1)
    r = np.interp(t, traj.times(), r_traj)
    area = np.interp(t, traj.times(), traj.areas)
    np.clip(r, 1e-3, None, out=r)

    amp = scene.reflection_gain * area * (scene.ref_distance_m / r) ** cfg.distance_exponent
    phase = 2.0 * np.pi * (f0 * t - (f0 / cfg.speed_of_sound_mps) * (r - r[0]))
    x = scene.carrier_amp * np.sin(2.0 * np.pi * f0 * t) + amp * np.sin(phase)
    if rng is not None and scene.noise_std > 0:
        x = x + rng.normal(0.0, scene.noise_std, size=len(x))
    peak = np.max(np.abs(x))
    if peak > 1.0:
        warnings.warn("rendered audio clipped; normalizing", ClipWarning, stacklevel=2)
        x = x / peak
    return Waveform(x, sr)


def _wrap_angle_deg(a: float) -> float:
    """Into (-180, 180]."""
    a = (a + 180.0) % 360.0 - 180.0
    return 180.0 if a == -180.0 else a


def render_ir(traj: MotionTrajectory, sensor: IrSensorModel, rng=None) -> IrStream:
    """Proximity events: one per crossing of the detection sphere.

    Timestamp = middle of the inside-sphere run; speed = clamped
    speed_gain * mean lateral speed over the run; angle = circular mean
    of the entry and exit headings. Straight-on (no lateral motion)
    crossings report speed 0, angle 0.
    """
    pos = traj.positions
    rel = pos - np.asarray(sensor.sensor_position)
    inside = np.linalg.norm(rel, axis=1) < sensor.detection_radius_m
    v_xy = traj.lateral_velocities()
    v_mag = np.linalg.norm(v_xy, axis=1)

    events = []
    starts = list(np.flatnonzero(np.diff(inside.astype(np.int8)) == 1) + 1)
    if inside[0]:
        starts.insert(0, 0)
    for i0 in starts:
        i1 = i0
        while i1 + 1 < len(inside) and inside[i1 + 1]:
            i1 += 1
        t_mid = (i0 + i1) / 2.0 * traj.dt
        seg = slice(i0, min(i1, len(v_xy)))
        path = float(np.sum(v_mag[seg]) * traj.dt)
        run_dur = max((i1 - i0) * traj.dt, traj.dt)
        lat_speed = path / run_dur
        if lat_speed < STRAIGHT_ON_MPS:
            speed, angle = 0.0, 0.0
        else:
            moving = np.flatnonzero(v_mag[seg] > STRAIGHT_ON_MPS) + i0
            enter, exit_ = v_xy[moving[0]], v_xy[moving[-1]]
            bearings = np.arctan2([enter[1], exit_[1]], [enter[0], exit_[0]])
            mean_vec = np.array([np.cos(bearings).sum(), np.sin(bearings).sum()])
            angle = _wrap_angle_deg(np.rad2deg(np.arctan2(mean_vec[1], mean_vec[0])))
            speed = float(np.clip(sensor.speed_gain * lat_speed, 0.0, 100.0))
            if rng is not None:
                if sensor.speed_noise > 0:
                    speed = float(np.clip(speed + rng.normal(0, sensor.speed_noise), 0, 100))
                if sensor.angle_noise_deg > 0:
                    angle = _wrap_angle_deg(angle + rng.normal(0, sensor.angle_noise_deg))
        events.append(IrEvent(t_mid, speed, angle))
    return IrStream(tuple(events), traj.duration_s)


# ---------------------------------------------------------------------------
# dataset generation

# stream ids for deriving independent per-purpose generators
_STREAM_PROFILE = 1000
_STREAM_RECORD = 2000


def _simulate_record(
    gesture: GestureClass,
    profile: UserProfile,
    mode: str,
    cfg: PipelineConfig,
    scene: AcousticScene,
    sensor: IrSensorModel,
    rng,
):
    """One (trajectory, waveform, segment) draw; returns features + raw."""
    aim = AIM_SENSOR if mode == MODE_IR_REQUIRED else AIM_LOOSE
    traj = ir = None
    for attempt in range(IR_RETRY_LIMIT):
        traj = synth_trajectory(
            gesture, profile, rng, duration_s=cfg.segment_len_s, aim=aim, sensor=sensor
        )
        ir = render_ir(traj, sensor, rng)
        if mode != MODE_IR_REQUIRED or not ir.is_empty:
            break
    else:
        raise SimulationStall(
            "gesture %s failed to activate the IR sensor in %d attempts"
            % (gesture.label, IR_RETRY_LIMIT)
        )
    wave = render_audio(traj, scene, cfg, rng)
    if mode == MODE_IR_REQUIRED:
        segments = segment_by_ir(wave, ir, cfg)
    else:
        segments = segment_freeform(wave, ir, cfg)
        if not segments:  # nothing fired: fall back to a center cut
            segments = [cut_segment(wave, ir, wave.duration_s / 2.0, cfg)]
    seg_wave, seg_ir = segments[0]
    return featurize_segment(seg_wave, seg_ir, cfg), seg_wave, seg_ir


def simulate_dataset(
    n_users: int,
    reps_per_gesture: int,
    mode: str,
    cfg: PipelineConfig,
    rng,
    scene: AcousticScene | None = None,
    sensor: IrSensorModel | None = None,
    keep_raw: bool = False,
) -> Dataset:
    """Generate n_users x 21 x reps labeled records under one config.

    Per-record generators are derived from (root seed, user, class, rep),
    so the dataset is bit-reproducible no matter how work is scheduled.
    """
    if n_users < 2:
        raise TooFewUsers("need at least 2 users, got %d" % n_users)
    if reps_per_gesture < 1:
        raise ValueError("reps_per_gesture must be >= 1")
    if mode not in SEGMENTATION_MODES:
        raise ValueError("unknown segmentation mode %r" % mode)
    cfg = validate_config(cfg)
    scene = scene or AcousticScene()
    sensor = sensor or IrSensorModel()

    root_seed = int(rng.integers(0, 2**63 - 1))
    records = []
    for user in range(n_users):
        profile = make_user_profile(derive_rng(root_seed, _STREAM_PROFILE, user))
        for gesture in GestureClass:
            for rep in range(reps_per_gesture):
                rec_rng = derive_rng(root_seed, _STREAM_RECORD, user, int(gesture), rep)
                feats, seg_wave, seg_ir = _simulate_record(
                    gesture, profile, mode, cfg, scene, sensor, rec_rng
                )
                records.append(
                    SampleRecord(
                        user_id=user,
                        gesture=gesture,
                        rep_index=rep,
                        features=feats,
                        segmentation_mode=mode,
                        wave=seg_wave if keep_raw else None,
                        ir_stream=seg_ir if keep_raw else None,
                    )
                )
    return Dataset(cfg, tuple(records))
