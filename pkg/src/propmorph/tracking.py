"""Model-target tracking simulation and anchoring.

Simulates the observable behavior of a 6-DoF model-based tracker driving a
virtual overlay: a capped camera cadence, tracking loss when the object is
occluded or moved too fast, freeze-on-loss (the overlay holds its last pose),
and reacquisition after a configurable streak of clean observations.

The virtual mesh is overlaid at the anchor pose with no occlusion culling;
occlusion affects tracking only, never rendering.
"""

from __future__ import annotations

import csv
import io
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import Pose, TriMesh, UnitQuaternion, compose, normalize_mesh, rotation_angle_deg
from .imaging import RGBImage


class DegenerateTarget(ValueError):
    pass


class TimeWentBackwards(ValueError):
    pass


class Phase(str, Enum):
    INITIALIZING = "Initializing"
    TRACKING = "Tracking"
    LOST = "Lost"


@dataclass(frozen=True)
class ModelTarget:
    """Tracking reference: the ORIGINAL object image (never the generated
    one), the normalized mesh, and the object's physical extent."""

    reference_image: RGBImage
    normalized_mesh: TriMesh
    physical_extent: tuple[float, float, float]
    alignment_offset: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if min(self.physical_extent) < 0 or max(self.physical_extent) <= 0:
            raise DegenerateTarget("physical extent must be >= 0 with a positive maximum")


@dataclass(frozen=True)
class TrackerConfig:
    camera_fps: float = 15.0
    noise_sigma_t: float = 0.0  # meters, per axis
    noise_sigma_r: float = 0.0  # degrees, about a random axis
    occlusion_threshold: float = 0.4
    max_linear_speed: float = 1.5  # m/s
    max_angular_speed: float = 180.0  # deg/s
    reacquire_frames: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if self.camera_fps <= 0:
            raise ValueError("camera_fps must be positive")
        if not (0.0 < self.occlusion_threshold <= 1.0):
            raise ValueError("occlusion_threshold must be in (0, 1]")
        if self.max_linear_speed <= 0 or self.max_angular_speed <= 0:
            raise ValueError("speed limits must be positive")
        if self.reacquire_frames < 1:
            raise ValueError("reacquire_frames must be >= 1")


@dataclass(frozen=True)
class Observation:
    t: float
    true_pose: Pose
    occlusion_fraction: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.occlusion_fraction <= 1.0):
            raise ValueError("occlusion_fraction must be in [0, 1]")


@dataclass(frozen=True)
class TrackerState:
    """In Lost the output pose stays bit-identical to the last Tracking pose;
    in Initializing no output is published (output_pose is None)."""

    phase: Phase = Phase.INITIALIZING
    output_pose: Pose | None = None
    last_true_seen: float | None = None
    consecutive_visible: int = 0
    prev_obs: Observation | None = None


def build_model_target(
    original_image: RGBImage, mesh: TriMesh, extent: tuple[float, float, float]
) -> ModelTarget:
    """Build a tracking reference from the original capture image plus the
    reconstructed mesh scaled to the physical extent.  The alignment offset
    is identity: backends emit meshes in the capture camera's orientation."""
    if min(extent) < 0 or max(extent) <= 0:
        raise DegenerateTarget("extent must be >= 0 componentwise with max > 0")
    try:
        normalized = normalize_mesh(mesh, max(extent))
    except ValueError as e:
        raise DegenerateTarget(str(e)) from None
    return ModelTarget(
        reference_image=original_image,
        normalized_mesh=normalized,
        physical_extent=tuple(float(e) for e in extent),
        alignment_offset=Pose.identity(),
    )


def _speeds(prev: Observation, cur: Observation) -> tuple[float, float]:
    dt = cur.t - prev.t
    dp = [a - b for a, b in zip(cur.true_pose.translation, prev.true_pose.translation)]
    lin = math.sqrt(sum(c * c for c in dp)) / dt
    ang = rotation_angle_deg(cur.true_pose.rotation, prev.true_pose.rotation) / dt
    return lin, ang


def _perturbed(pose: Pose, cfg: TrackerConfig, rng: np.random.Generator) -> Pose:
    if cfg.noise_sigma_t == 0.0 and cfg.noise_sigma_r == 0.0:
        return pose  # exact pass-through; no rng draws
    dt = rng.normal(0.0, cfg.noise_sigma_t, 3) if cfg.noise_sigma_t > 0 else np.zeros(3)
    rot = pose.rotation
    if cfg.noise_sigma_r > 0:
        axis = rng.normal(size=3)
        while np.linalg.norm(axis) < 1e-12:
            axis = rng.normal(size=3)
        angle = math.radians(rng.normal(0.0, cfg.noise_sigma_r))
        rot = UnitQuaternion.from_axis_angle(axis, angle).multiply(rot)
    t = pose.translation
    return Pose(rot, (t[0] + dt[0], t[1] + dt[1], t[2] + dt[2]))


def tracker_step(
    state: TrackerState, obs: Observation, cfg: TrackerConfig, rng: np.random.Generator
) -> TrackerState:
    """Advance the tracker by one observation.

    An observation is "visible" when its occlusion fraction is at or below
    the threshold and the inter-frame linear/angular speeds (vs the previous
    observation) are within limits.  Tracking follows visibility directly;
    leaving Lost (or Initializing) requires reacquire_frames consecutive
    visible observations.  While Lost the published pose is frozen.
    """
    if state.prev_obs is not None and obs.t <= state.prev_obs.t:
        raise TimeWentBackwards(f"observation at t={obs.t} not after t={state.prev_obs.t}")
    visible = obs.occlusion_fraction <= cfg.occlusion_threshold
    if visible and state.prev_obs is not None:
        lin, ang = _speeds(state.prev_obs, obs)
        visible = lin <= cfg.max_linear_speed and ang <= cfg.max_angular_speed

    streak = state.consecutive_visible + 1 if visible else 0
    if state.phase is Phase.TRACKING:
        phase = Phase.TRACKING if visible else Phase.LOST
    else:
        phase = Phase.TRACKING if streak >= cfg.reacquire_frames else state.phase

    if phase is Phase.TRACKING:
        output = _perturbed(obs.true_pose, cfg, rng)
    else:
        output = state.output_pose  # frozen (None while Initializing)

    return TrackerState(
        phase=phase,
        output_pose=output,
        last_true_seen=obs.t if visible else state.last_true_seen,
        consecutive_visible=streak,
        prev_obs=obs,
    )


def anchor_pose(tracked: Pose, target: ModelTarget) -> Pose:
    """Pose at which the virtual mesh is overlaid on the tracked object."""
    return compose(tracked, target.alignment_offset)


def pose_error(estimated: Pose, truth: Pose) -> tuple[float, float]:
    """(translation error in meters, rotation error in degrees)."""
    dp = [a - b for a, b in zip(estimated.translation, truth.translation)]
    return (
        math.sqrt(sum(c * c for c in dp)),
        rotation_angle_deg(estimated.rotation, truth.rotation),
    )


# --- trajectories ---

def _slerp(a: UnitQuaternion, b: UnitQuaternion, u: float) -> UnitQuaternion:
    d = a.dot(b)
    bw, bx, by, bz = (b.w, b.x, b.y, b.z) if d >= 0 else (-b.w, -b.x, -b.y, -b.z)
    d = abs(d)
    if d > 1.0 - 1e-12:
        return UnitQuaternion.normalized(
            a.w + u * (bw - a.w), a.x + u * (bx - a.x), a.y + u * (by - a.y), a.z + u * (bz - a.z)
        )
    theta = math.acos(min(1.0, d))
    s = math.sin(theta)
    ka, kb = math.sin((1 - u) * theta) / s, math.sin(u * theta) / s
    return UnitQuaternion.normalized(
        ka * a.w + kb * bw, ka * a.x + kb * bx, ka * a.y + kb * by, ka * a.z + kb * bz
    )


@dataclass(frozen=True)
class Trajectory:
    """Keyframed ground-truth motion: linear translation, spherical-linear
    rotation and linear occlusion between keyframes."""

    keyframes: tuple[tuple[float, Pose, float], ...]

    def __post_init__(self):
        kf = tuple((float(t), p, float(o)) for t, p, o in self.keyframes)
        if len(kf) < 2:
            raise ValueError("trajectory needs at least 2 keyframes")
        times = [t for t, _, _ in kf]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("keyframe times must be strictly increasing")
        if any(not (0.0 <= o <= 1.0) for _, _, o in kf):
            raise ValueError("occlusion fractions must be in [0, 1]")
        object.__setattr__(self, "keyframes", kf)

    @property
    def t_start(self) -> float:
        return self.keyframes[0][0]

    @property
    def t_end(self) -> float:
        return self.keyframes[-1][0]

    def sample(self, t: float) -> Observation:
        if not (self.t_start <= t <= self.t_end):
            raise ValueError(f"t={t} outside trajectory [{self.t_start}, {self.t_end}]")
        times = [k[0] for k in self.keyframes]
        i = min(max(bisect_right(times, t) - 1, 0), len(times) - 2)
        t0, p0, o0 = self.keyframes[i]
        t1, p1, o1 = self.keyframes[i + 1]
        u = (t - t0) / (t1 - t0)
        pos = tuple(a + u * (b - a) for a, b in zip(p0.translation, p1.translation))
        rot = _slerp(p0.rotation, p1.rotation, u)
        occ = o0 + u * (o1 - o0)
        return Observation(t=t, true_pose=Pose(rot, pos), occlusion_fraction=occ)

    def to_dict(self) -> dict:
        return {
            "keyframes": [
                {"t": t, **p.to_dict(), "occlusion": o} for t, p, o in self.keyframes
            ]
        }

    @staticmethod
    def from_dict(d: dict) -> "Trajectory":
        return Trajectory(
            tuple(
                (k["t"], Pose.from_dict(k), k.get("occlusion", 0.0))
                for k in d["keyframes"]
            )
        )

    @staticmethod
    def from_json(data: bytes | str) -> "Trajectory":
        return Trajectory.from_dict(json.loads(data))


@dataclass(frozen=True)
class FrameRecord:
    t: float
    phase: Phase
    true_pose: Pose
    output_pose: Pose | None
    err_t_m: float | None
    err_r_deg: float | None


@dataclass(frozen=True)
class LossEpisode:
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class TrackLog:
    frames: tuple[FrameRecord, ...]
    episodes: tuple[LossEpisode, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "phase", "err_t_m", "err_r_deg"])
        for f in self.frames:
            w.writerow([
                f"{f.t:.6f}",
                f.phase.value,
                "" if f.err_t_m is None else f"{f.err_t_m:.9f}",
                "" if f.err_r_deg is None else f"{f.err_r_deg:.7f}",
            ])
        return buf.getvalue()

    def episodes_summary(self) -> dict:
        return {
            "episodes": [
                {"start": e.start, "end": e.end, "duration": e.duration} for e in self.episodes
            ]
        }


def run_trajectory(traj: Trajectory, target: ModelTarget, cfg: TrackerConfig) -> TrackLog:
    """Sample the trajectory at the camera cadence and run the tracker.

    Frames are emitted at t_start + k / camera_fps, so no two frames are
    closer than one frame period; per-frame errors compare the anchored
    output against ground truth, and maximal Lost runs become episodes.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    state = TrackerState()
    frames: list[FrameRecord] = []
    episodes: list[LossEpisode] = []
    period = 1.0 / cfg.camera_fps
    n = int(math.floor((traj.t_end - traj.t_start) / period + 1e-9))
    lost_since: float | None = None
    last_lost: float | None = None
    for k in range(n + 1):
        t = traj.t_start + k * period
        obs = traj.sample(min(t, traj.t_end))
        state = tracker_step(state, obs, cfg, rng)
        if state.output_pose is not None:
            anchored = anchor_pose(state.output_pose, target)
            err_t, err_r = pose_error(anchored, compose(obs.true_pose, target.alignment_offset))
            frames.append(FrameRecord(t, state.phase, obs.true_pose, anchored, err_t, err_r))
        else:
            frames.append(FrameRecord(t, state.phase, obs.true_pose, None, None, None))
        if state.phase is Phase.LOST:
            if lost_since is None:
                lost_since = t
            last_lost = t
        elif lost_since is not None:
            episodes.append(LossEpisode(lost_since, last_lost))
            lost_since = None
    if lost_since is not None:
        episodes.append(LossEpisode(lost_since, last_lost))
    return TrackLog(tuple(frames), tuple(episodes))
