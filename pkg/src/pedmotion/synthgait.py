"""Kinematic synthetic gait: labeled walking/standing tracks with transitions.

Walking swings the ankles sinusoidally in x, in antiphase left/right, at
``cadence`` Hz. Knees follow at half amplitude; wrists swing antiphase to
the ankle on the same side, elbows at half arm amplitude. Standing holds
the rest pose. Every joint gets Gaussian jitter. Labels switch exactly at
schedule boundaries; the swing amplitude ramps over 3 frames at the inner
edges of each walking run.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .skeleton import N_KEYPOINTS, STANDING, WALKING, Track

# rest pose in units of body_scale (neck-to-hip length), neck at the origin
REST_POSE = np.array(
    [
        (0.00, -0.30),  # nose
        (0.00, 0.00),  # neck
        (-0.22, 0.02),  # r-shoulder
        (-0.26, 0.38),  # r-elbow
        (-0.28, 0.72),  # r-wrist
        (0.22, 0.02),  # l-shoulder
        (0.26, 0.38),  # l-elbow
        (0.28, 0.72),  # l-wrist
        (-0.13, 1.00),  # r-hip
        (-0.14, 1.48),  # r-knee
        (-0.15, 1.95),  # r-ankle
        (0.13, 1.00),  # l-hip
        (0.14, 1.48),  # l-knee
        (0.15, 1.95),  # l-ankle
        (-0.05, -0.36),  # r-eye
        (0.05, -0.36),  # l-eye
        (-0.10, -0.33),  # r-ear
        (0.10, -0.33),  # l-ear
    ]
)
LEG_LENGTH = 0.95
ARM_LENGTH = 0.70
RAMP_FRAMES = 3

# (joint, +1/-1 phase sign, relative amplitude, "leg" or "arm")
_SWING = (
    (10, 1.0, 1.0, "leg"),
    (13, -1.0, 1.0, "leg"),
    (9, 1.0, 0.5, "leg"),
    (12, -1.0, 0.5, "leg"),
    (4, -1.0, 1.0, "arm"),
    (7, 1.0, 1.0, "arm"),
    (3, -1.0, 0.5, "arm"),
    (6, 1.0, 0.5, "arm"),
)

STATE_NAMES = {"walking": WALKING, "standing": STANDING}


@dataclass
class GaitConfig:
    fps: float = 30.0
    cadence: float = 2.0  # Hz of the ankle swing
    swing_amplitude: float = 0.15  # fraction of leg length
    arm_amplitude: float = 0.10  # fraction of arm length
    jitter_sigma: float = 0.5  # px
    body_scale: float = 80.0  # px, neck to hip
    schedule: list = field(default_factory=lambda: [("walking", 90)])
    origin: tuple = (320.0, 200.0)
    walk_speed: float = 0.0  # px / frame of whole-body drift while walking
    confidence: tuple = (0.6, 1.0)
    stance_width: float = 0.15  # rest ankle x offset from the midline, body_scale units
    stance_offset: float = 0.0  # extra x shift of the right foot at rest (staggered stance)

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if min(self.swing_amplitude, self.arm_amplitude, self.jitter_sigma) < 0:
            raise ValueError("amplitudes and jitter must be >= 0")
        if self.body_scale <= 0:
            raise ValueError("body_scale must be positive")
        for state, n in self.schedule:
            if state not in STATE_NAMES:
                raise ValueError(f"unknown state {state!r}")
            if n < 1:
                raise ValueError("schedule durations must be >= 1")


def rest_pose(stance_width=0.15, stance_offset=0.0):
    """REST_POSE with the feet placed per stance; knees stay between hip and ankle."""
    pose = REST_POSE.copy()
    pose[10, 0] = -stance_width + stance_offset
    pose[13, 0] = stance_width
    pose[9, 0] = 0.5 * (pose[8, 0] + pose[10, 0])
    pose[12, 0] = 0.5 * (pose[11, 0] + pose[13, 0])
    return pose


def _amplitude_envelope(states):
    """Swing amplitude per frame: 0 when standing, ramping inside walking runs.

    A walking run ramps up over its first RAMP_FRAMES frames and down over
    its last ones, so every walking frame moves and every standing frame is
    at rest. Runs touching the start or end of the track do not ramp there.
    """
    T = len(states)
    amp = np.zeros(T)
    t = 0
    while t < T:
        end = t
        while end < T and states[end] == states[t]:
            end += 1
        if states[t] == WALKING:
            k = np.arange(end - t)
            up = np.ones(end - t) if t == 0 else (k + 1) / RAMP_FRAMES
            down = np.ones(end - t) if end == T else (end - t - k) / RAMP_FRAMES
            amp[t:end] = np.minimum(1.0, np.minimum(up, down))
        t = end
    return amp


def generate_track(config: GaitConfig, seed, track_id="synth") -> Track:
    """Render one labeled track from ``config``; deterministic per seed."""
    rng = np.random.default_rng(seed)
    states = np.concatenate([np.full(n, STATE_NAMES[s], dtype=np.int64) for s, n in config.schedule])
    T = len(states)
    amp = _amplitude_envelope(states)
    L = config.body_scale
    phase0 = rng.uniform(0, 2 * np.pi)
    t = np.arange(T)
    phase = phase0 + 2 * np.pi * config.cadence * t / config.fps
    swing = np.sin(phase) * amp
    direction = 1.0 if rng.random() < 0.5 else -1.0
    drift = direction * config.walk_speed * np.cumsum(amp)

    xy = np.broadcast_to(rest_pose(config.stance_width, config.stance_offset) * L, (T, N_KEYPOINTS, 2)).copy()
    leg_px = config.swing_amplitude * LEG_LENGTH * L
    arm_px = config.arm_amplitude * ARM_LENGTH * L
    for j, sign, rel, kind in _SWING:
        xy[:, j, 0] += sign * rel * (leg_px if kind == "leg" else arm_px) * swing
    xy[:, :, 0] += config.origin[0] + drift[:, None]
    xy[:, :, 1] += config.origin[1]
    if config.jitter_sigma > 0:
        xy += rng.normal(0.0, config.jitter_sigma, size=xy.shape)
    lo, hi = config.confidence
    conf = rng.uniform(lo, hi, size=(T, N_KEYPOINTS)) if hi > lo else np.full((T, N_KEYPOINTS), lo)
    kp = np.concatenate([xy, conf[..., None]], axis=2)
    return Track(track_id, kp, np.arange(T), states, config.fps, meta={"amplitude": amp})


def random_schedule(rng, mix=0.5, mean_segment=200, max_segments=8):
    """Alternating walking/standing segments; walking frame share about ``mix``."""
    if mix >= 1.0:
        return [("walking", int(rng.integers(mean_segment // 2, 3 * mean_segment // 2 + 1)))]
    if mix <= 0.0:
        return [("standing", int(rng.integers(mean_segment // 2, 3 * mean_segment // 2 + 1)))]
    n_seg = int(rng.integers(1, max_segments + 1))
    state = "walking" if rng.random() < mix else "standing"
    sched = []
    for _ in range(n_seg):
        share = mix if state == "walking" else 1.0 - mix
        n = int(round(rng.uniform(0.5, 1.5) * 2 * mean_segment * share))
        if n >= 1:
            sched.append((state, n))
        state = "standing" if state == "walking" else "walking"
    return sched or [("walking", mean_segment)]


def random_config(rng, mix=0.5, fps=30.0, **fixed) -> GaitConfig:
    """Gait parameters drawn from the documented ranges; ``fixed`` pins any field."""
    body = rng.uniform(50.0, 150.0)
    swing = rng.uniform(0.10, 0.25)
    cfg = GaitConfig(
        fps=fps,
        cadence=rng.uniform(1.6, 2.4),
        swing_amplitude=swing,
        arm_amplitude=rng.uniform(0.05, 0.15),
        # below 5% of the ankle swing in pixels
        jitter_sigma=rng.uniform(0.02, 0.05) * swing * LEG_LENGTH * body,
        body_scale=body,
        schedule=random_schedule(rng, mix),
        origin=(rng.uniform(100.0, 1800.0), rng.uniform(100.0, 600.0)),
        walk_speed=rng.uniform(0.3, 2.0),
        stance_width=rng.uniform(0.08, 0.25),
        stance_offset=rng.uniform(-0.15, 0.15),
    )
    return replace(cfg, **fixed) if fixed else cfg


def generate_dataset(n_tracks, mix=0.5, seed=0, fps=30.0, **fixed):
    """``n_tracks`` tracks with random configs and schedules."""
    if n_tracks < 1:
        raise ValueError("n_tracks must be >= 1")
    rng = np.random.default_rng(seed)
    tracks = []
    for i in range(n_tracks):
        cfg = random_config(rng, mix, fps, **fixed)
        child = int(rng.integers(2**63 - 1))
        tracks.append(generate_track(cfg, child, track_id=f"synth{i:04d}"))
    return tracks


def transition_frames(labels, radius=5):
    """Bool mask of frames within ``radius`` of a label change."""
    labels = np.asarray(labels)
    mask = np.zeros(len(labels), dtype=bool)
    for b in np.flatnonzero(labels[1:] != labels[:-1]) + 1:
        mask[max(0, b - radius):b + radius] = True
    return mask
