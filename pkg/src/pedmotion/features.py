"""Static and dynamic micro-motion features from 2D poses.

Per frame the feature vector has 72 entries in four groups:

==============  =====  ==================================================
group           width  content
==============  =====  ==================================================
position        16     limb joints relative to the neck, over bbox height
distance        24     12 static pair distances, then their 12 differences
angle_static    16     segment / pair / cross directions, radians over pi
angle_dynamic   16     wrapped frame-to-frame change of angle_static
==============  =====  ==================================================
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePose
from .skeleton import (
    CONF_THRESHOLD,
    EPS_HEIGHT,
    L_HIP,
    NECK,
    R_HIP,
    BBox,
    Pose,
    Track,
    impute_track,
)

EPS_HIP_WIDTH = 2.0
HIP_FALLBACK_RATIO = 0.25

POSITION_JOINTS = (3, 4, 6, 7, 9, 10, 12, 13)
DISTANCE_PAIRS = ((10, 13), (9, 12), (4, 7), (3, 6))
SEGMENTS = ((2, 3), (3, 4), (5, 6), (6, 7), (8, 9), (9, 10), (11, 12), (12, 13))
# (left segment, right segment) indices into SEGMENTS: upper arms, forearms, thighs, shanks
SEGMENT_PAIRS = ((2, 0), (3, 1), (6, 4), (7, 5))
CROSS_DIRECTIONS = ((4, 6), (7, 3), (10, 12), (13, 9))

GROUPS = ("position", "distance", "angle_static", "angle_dynamic")
GROUP_SLICES = {
    "position": slice(0, 16),
    "distance": slice(16, 40),
    "angle_static": slice(40, 56),
    "angle_dynamic": slice(56, 72),
}
DISTANCE_DYNAMIC = slice(28, 40)
N_FEATURES = 72
FEATURE_VERSION = 1


def wrap_angle_diff(prev, cur):
    """``cur - prev`` mapped into (-pi, pi]. Works on scalars and arrays."""
    d = np.asarray(cur, dtype=np.float64) - np.asarray(prev, dtype=np.float64)
    r = d - 2.0 * np.pi * np.ceil((d - np.pi) / (2.0 * np.pi))
    r = np.where(r > np.pi, r - 2.0 * np.pi, r)
    r = np.where(r <= -np.pi, r + 2.0 * np.pi, r)
    return float(r) if r.ndim == 0 else r


def _direction(dx, dy):
    a = np.arctan2(dy, dx)
    # atan2 can return -pi for a -0.0 dy; the range is (-pi, pi]
    return np.where(a <= -np.pi, np.pi, a)


@dataclass
class StaticFrames:
    """Per-frame static features before differencing (angles in radians)."""

    position: np.ndarray  # (T, 16)
    distance: np.ndarray  # (T, 12)
    angle: np.ndarray  # (T, 16) radians
    valid: np.ndarray  # (T, 3) position / distance / angle group validity
    ok: np.ndarray  # (T,) False where the frame is degenerate


def _static(kp: np.ndarray, conf_threshold: float) -> StaticFrames:
    kp = np.asarray(kp, dtype=np.float64)
    T = kp.shape[0]
    x, y = kp[..., 0], kp[..., 1]
    vis = kp[..., 2] >= conf_threshold

    # bbox height from valid keypoints
    y_hi = np.where(vis, y, -np.inf).max(axis=1) if T else np.zeros(0)
    y_lo = np.where(vis, y, np.inf).min(axis=1) if T else np.zeros(0)
    n_vis = vis.sum(axis=1)
    with np.errstate(invalid="ignore"):
        height = y_hi - y_lo
    ok = (n_vis >= 2) & (height >= EPS_HEIGHT) & vis[:, NECK]
    H = np.where(ok, height, 1.0)

    j = list(POSITION_JOINTS)
    px = (x[:, j] - x[:, [NECK]]) / H[:, None]
    py = (y[:, j] - y[:, [NECK]]) / H[:, None]
    pos_ok = vis[:, j]
    position = np.empty((T, 16))
    position[:, 0::2] = np.where(pos_ok, px, 0.0)
    position[:, 1::2] = np.where(pos_ok, py, 0.0)

    hip_w = np.hypot(x[:, L_HIP] - x[:, R_HIP], y[:, L_HIP] - y[:, R_HIP])
    hips_ok = vis[:, L_HIP] & vis[:, R_HIP] & (hip_w >= EPS_HIP_WIDTH)
    W = np.where(hips_ok, hip_w, HIP_FALLBACK_RATIO * H)
    a = [p[0] for p in DISTANCE_PAIRS]
    b = [p[1] for p in DISTANCE_PAIRS]
    dx = x[:, b] - x[:, a]
    dy = y[:, b] - y[:, a]
    pair_ok = vis[:, a] & vis[:, b]
    distance = np.empty((T, 12))
    distance[:, 0::3] = np.where(pair_ok, np.hypot(dx, dy) / W[:, None], 0.0)
    distance[:, 1::3] = np.where(pair_ok, np.abs(dx) / H[:, None], 0.0)
    distance[:, 2::3] = np.where(pair_ok, np.abs(dy) / H[:, None], 0.0)

    sa = [s[0] for s in SEGMENTS]
    sb = [s[1] for s in SEGMENTS]
    sdx = x[:, sb] - x[:, sa]
    sdy = y[:, sb] - y[:, sa]
    seg_ok = vis[:, sa] & vis[:, sb] & ((sdx != 0) | (sdy != 0))
    seg = np.where(seg_ok, _direction(sdx, sdy), 0.0)
    li = [p[0] for p in SEGMENT_PAIRS]
    ri = [p[1] for p in SEGMENT_PAIRS]
    pair_ang_ok = seg_ok[:, li] & seg_ok[:, ri]
    pair_ang = np.where(pair_ang_ok, wrap_angle_diff(seg[:, ri], seg[:, li]), 0.0)
    ca = [c[0] for c in CROSS_DIRECTIONS]
    cb = [c[1] for c in CROSS_DIRECTIONS]
    cdx = x[:, cb] - x[:, ca]
    cdy = y[:, cb] - y[:, ca]
    cross_ok = vis[:, ca] & vis[:, cb] & ((cdx != 0) | (cdy != 0))
    cross = np.where(cross_ok, _direction(cdx, cdy), 0.0)
    angle = np.concatenate([seg, pair_ang, cross], axis=1)

    valid = np.stack(
        [
            pos_ok.all(axis=1),
            pair_ok.all(axis=1),
            seg_ok.all(axis=1) & cross_ok.all(axis=1),
        ],
        axis=1,
    )
    return StaticFrames(position, distance, angle, valid, ok)


def position_features(pose: Pose, bbox: BBox) -> np.ndarray:
    """Arm and leg joints relative to the neck, normalized by bbox height."""
    H = bbox.height
    if H < EPS_HEIGHT:
        raise DegeneratePose(f"bounding box height {H:g} below {EPS_HEIGHT:g} px")
    xy = pose.xy
    rel = (xy[list(POSITION_JOINTS)] - xy[NECK]) / H
    return rel.reshape(-1)


def distance_features_static(pose: Pose, bbox: BBox) -> np.ndarray:
    """(euclid / hip width, |dx| / H, |dy| / H) for ankles, knees, wrists, elbows."""
    H = bbox.height
    xy = pose.xy
    W = float(np.hypot(*(xy[L_HIP] - xy[R_HIP])))
    if W < EPS_HIP_WIDTH:
        W = HIP_FALLBACK_RATIO * H
    out = []
    for a, b in DISTANCE_PAIRS:
        dx, dy = xy[b] - xy[a]
        out += [np.hypot(dx, dy) / W, abs(dx) / H, abs(dy) / H]
    return np.array(out)


def angle_features_static(pose: Pose, conf_threshold: float = CONF_THRESHOLD) -> np.ndarray:
    """16 direction features in units of pi (see module docstring for order)."""
    return _static(pose.keypoints[None], conf_threshold).angle[0] / np.pi


@dataclass
class FeatureFrame:
    position: np.ndarray
    distance: np.ndarray
    angle_static: np.ndarray
    angle_dynamic: np.ndarray
    valid_mask: np.ndarray  # (4,) bool, one per group

    def vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.distance, self.angle_static, self.angle_dynamic])


@dataclass
class TrackFeatures:
    """Feature matrix of one track.

    ``kept`` lists the track positions that produced a row; degenerate frames
    are dropped and the next retained frame differences against the previous
    retained one.
    """

    matrix: np.ndarray  # (T', 72)
    valid_mask: np.ndarray  # (T', 4)
    kept: np.ndarray  # (T',) indices into the track

    def __len__(self):
        return self.matrix.shape[0]

    def frame(self, i: int) -> FeatureFrame:
        row = self.matrix[i]
        return FeatureFrame(*(row[GROUP_SLICES[g]] for g in GROUPS), self.valid_mask[i])

    def group(self, name: str) -> np.ndarray:
        return self.matrix[:, GROUP_SLICES[name]]


def assemble(static: StaticFrames, prev_distance=None, prev_angle=None, prev_valid=None):
    """Build the (T, 72) matrix from retained static rows.

    ``prev_*`` carry the static values of the frame before the first row
    (None means the first row starts the track and gets zero dynamics).
    Returns (matrix, valid_mask).
    """
    T = static.position.shape[0]
    dist = static.distance
    ang = static.angle
    ddist = np.zeros_like(dist)
    dang = np.zeros_like(ang)
    dyn_ok = np.zeros(T, dtype=bool)
    if T:
        if T > 1:
            ddist[1:] = dist[1:] - dist[:-1]
            dang[1:] = wrap_angle_diff(ang[:-1], ang[1:])
            dyn_ok[1:] = (
                static.valid[1:, 1] & static.valid[:-1, 1] & static.valid[1:, 2] & static.valid[:-1, 2]
            )
        if prev_distance is not None:
            ddist[0] = dist[0] - prev_distance
            dang[0] = wrap_angle_diff(prev_angle, ang[0])
            dyn_ok[0] = bool(static.valid[0, 1] & static.valid[0, 2] & prev_valid[1] & prev_valid[2])
        else:
            dyn_ok[0] = static.valid[0, 1] & static.valid[0, 2]
    matrix = np.concatenate([static.position, dist, ddist, ang / np.pi, dang / np.pi], axis=1)
    valid = np.concatenate([static.valid, dyn_ok[:, None]], axis=1)
    return matrix, valid


def extract_track_features(
    track: Track, conf_threshold: float = CONF_THRESHOLD, impute: bool = True
) -> TrackFeatures:
    """Feature rows for every non-degenerate frame of ``track``."""
    if impute:
        track = impute_track(track, conf_threshold)
    st = _static(track.keypoints, conf_threshold)
    kept = np.flatnonzero(st.ok)
    st = StaticFrames(st.position[kept], st.distance[kept], st.angle[kept], st.valid[kept], st.ok[kept])
    matrix, valid = assemble(st)
    return TrackFeatures(matrix, valid, kept)


def static_frame(keypoints: np.ndarray, conf_threshold: float = CONF_THRESHOLD) -> StaticFrames:
    """Static features of one (18, 3) pose; raises DegeneratePose."""
    st = _static(np.asarray(keypoints)[None], conf_threshold)
    if not st.ok[0]:
        raise DegeneratePose("pose has no usable bounding box or neck")
    return st


def feature_matrix(tracks, conf_threshold: float = CONF_THRESHOLD):
    """Extract features for each track; returns a list of TrackFeatures."""
    return [extract_track_features(t, conf_threshold) for t in tracks]
