"""2D pose and track data model.

Keypoints follow the 18-point COCO layout with a neck joint::

    0 nose, 1 neck,
    2 r-shoulder, 3 r-elbow, 4 r-wrist, 5 l-shoulder, 6 l-elbow, 7 l-wrist,
    8 r-hip, 9 r-knee, 10 r-ankle, 11 l-hip, 12 l-knee, 13 l-ankle,
    14 r-eye, 15 l-eye, 16 r-ear, 17 l-ear

Image coordinates: x grows rightward, y grows downward. A keypoint is valid
when its confidence is at least ``conf_threshold``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePose

N_KEYPOINTS = 18
CONF_THRESHOLD = 0.3
EPS_HEIGHT = 1.0

NOSE, NECK = 0, 1
R_SHOULDER, R_ELBOW, R_WRIST = 2, 3, 4
L_SHOULDER, L_ELBOW, L_WRIST = 5, 6, 7
R_HIP, R_KNEE, R_ANKLE = 8, 9, 10
L_HIP, L_KNEE, L_ANKLE = 11, 12, 13

LR_PAIRS = ((2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13), (14, 15), (16, 17))

# index permutation applied by a horizontal flip
FLIP_PERM = np.arange(N_KEYPOINTS)
for _a, _b in LR_PAIRS:
    FLIP_PERM[_a], FLIP_PERM[_b] = _b, _a
del _a, _b

WALKING, STANDING, UNKNOWN = 1, 0, -1
LABEL_NAMES = {WALKING: "walking", STANDING: "standing", UNKNOWN: "unknown"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def x_center(self) -> float:
        return 0.5 * (self.x_min + self.x_max)


@dataclass(frozen=True, eq=False)
class Pose:
    """One skeleton: ``keypoints`` is an (18, 3) array of x, y, confidence."""

    keypoints: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        kp = np.array(self.keypoints, dtype=np.float64)
        if kp.shape != (N_KEYPOINTS, 3):
            raise ValueError(f"pose needs shape (18, 3), got {kp.shape}")
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        kp.flags.writeable = False
        object.__setattr__(self, "keypoints", kp)

    @property
    def xy(self) -> np.ndarray:
        return self.keypoints[:, :2]

    @property
    def confidence(self) -> np.ndarray:
        return self.keypoints[:, 2]

    def valid(self, conf_threshold: float = CONF_THRESHOLD) -> np.ndarray:
        return self.keypoints[:, 2] >= conf_threshold

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return self.frame_index == other.frame_index and np.array_equal(
            self.keypoints, other.keypoints
        )


@dataclass(frozen=True, eq=False)
class Track:
    """Time-ordered poses of one pedestrian.

    Stored column-wise: ``keypoints`` is (T, 18, 3), ``frame_indices`` is (T,),
    ``labels`` is an int array of WALKING / STANDING / UNKNOWN or None.
    """

    track_id: str
    keypoints: np.ndarray
    frame_indices: np.ndarray
    labels: np.ndarray | None = None
    fps: float = 30.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        kp = np.array(self.keypoints, dtype=np.float64)
        if kp.ndim != 3 or kp.shape[1:] != (N_KEYPOINTS, 3):
            raise ValueError(f"track keypoints need shape (T, 18, 3), got {kp.shape}")
        fi = np.array(self.frame_indices, dtype=np.int64)
        if fi.shape != (kp.shape[0],):
            raise ValueError("frame_indices length differs from pose count")
        if fi.size and (fi[0] < 0 or np.any(np.diff(fi) <= 0)):
            raise ValueError("frame indices must be non-negative and strictly increasing")
        kp.flags.writeable = False
        fi.flags.writeable = False
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "frame_indices", fi)
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int64)
            if lab.shape != fi.shape:
                raise ValueError("labels length differs from pose count")
            lab.flags.writeable = False
            object.__setattr__(self, "labels", lab)

    def __len__(self):
        return self.keypoints.shape[0]

    @property
    def poses(self) -> list[Pose]:
        return [Pose(k, int(f)) for k, f in zip(self.keypoints, self.frame_indices)]

    @classmethod
    def from_poses(cls, track_id, poses, labels=None, fps=30.0):
        kp = np.stack([p.keypoints for p in poses]) if poses else np.zeros((0, N_KEYPOINTS, 3))
        fi = [p.frame_index for p in poses]
        return cls(track_id, kp, fi, labels, fps)

    def replace(self, **changes) -> "Track":
        kw = dict(
            track_id=self.track_id,
            keypoints=self.keypoints,
            frame_indices=self.frame_indices,
            labels=self.labels,
            fps=self.fps,
            meta=dict(self.meta),
        )
        kw.update(changes)
        return Track(**kw)

    def __eq__(self, other):
        if not isinstance(other, Track):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None
            and other.labels is not None
            and np.array_equal(self.labels, other.labels)
        )
        return (
            self.track_id == other.track_id
            and self.fps == other.fps
            and np.array_equal(self.frame_indices, other.frame_indices)
            and np.array_equal(self.keypoints, other.keypoints)
            and same_labels
        )


def _bbox_from_array(kp: np.ndarray, conf_threshold: float) -> BBox:
    ok = kp[:, 2] >= conf_threshold
    if np.count_nonzero(ok) < 2:
        raise DegeneratePose("fewer than 2 valid keypoints")
    xs = kp[ok, 0]
    ys = kp[ok, 1]
    box = BBox(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))
    if box.height < EPS_HEIGHT:
        raise DegeneratePose(f"bounding box height {box.height:g} below {EPS_HEIGHT:g} px")
    return box


def bbox_from_pose(pose: Pose, conf_threshold: float = CONF_THRESHOLD) -> BBox:
    """Axis-aligned extent of the valid keypoints."""
    return _bbox_from_array(pose.keypoints, conf_threshold)


def mirror_keypoints(kp: np.ndarray, axis_x: float) -> np.ndarray:
    """Reflect keypoint array(s) of shape (..., 18, 3) about ``x = axis_x``."""
    out = kp[..., FLIP_PERM, :].copy()
    out[..., 0] = 2.0 * axis_x - out[..., 0]
    return out


def mirror_pose(pose: Pose, axis_x: float) -> Pose:
    """Horizontal flip: x -> 2*axis_x - x and left/right joints swapped."""
    return Pose(mirror_keypoints(pose.keypoints, axis_x), pose.frame_index)


def mirror_track(track: Track, axis_x: float | None = None) -> Track:
    """Flip a whole track. Default axis is the x-center of its valid keypoints."""
    if axis_x is None:
        ok = track.keypoints[..., 2] >= CONF_THRESHOLD
        xs = track.keypoints[..., 0][ok]
        axis_x = 0.5 * (xs.min() + xs.max()) if xs.size else 0.0
    return track.replace(keypoints=mirror_keypoints(track.keypoints, axis_x))


def impute_track(track: Track, conf_threshold: float = CONF_THRESHOLD) -> Track:
    """Carry each invalid keypoint forward from its last valid observation.

    Imputed points get confidence ``conf_threshold`` so they count as valid
    afterwards. Points with no earlier valid observation are left untouched,
    so they stay invalid.
    """
    kp = np.array(track.keypoints)
    last = np.full((N_KEYPOINTS, 3), np.nan)
    changed = False
    for t in range(kp.shape[0]):
        ok = kp[t, :, 2] >= conf_threshold
        fill = ~ok & ~np.isnan(last[:, 0])
        if fill.any():
            kp[t, fill, :2] = last[fill, :2]
            kp[t, fill, 2] = conf_threshold
            changed = True
        last[ok] = kp[t, ok]
    if not changed:
        return track
    return track.replace(keypoints=kp)


def invalid_mask(track: Track, conf_threshold: float = CONF_THRESHOLD) -> np.ndarray:
    """(T, 18) bool array, True where a keypoint is still invalid."""
    return track.keypoints[..., 2] < conf_threshold
