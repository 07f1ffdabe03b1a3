"""Track files, dataset splitting and model files.

Track file (text, UTF-8, one frame per line)::

    # pedmotion-tracks v1 fps=30
    <track_id>,<frame_index>,<label>,x0,y0,c0,x1,y1,c1,...,x17,y17,c17

``label`` is walking, standing or unknown; any other token reads as
unknown. Blank lines and lines starting with ``#`` are skipped. Numbers are
written with ``repr`` so a write/read cycle is exact.

Model file (binary)::

    b"MMSTATE\\n"
    header: one line of compact JSON with sorted keys, terminated by b"\\n"
            {"arch", "arrays": [{"name", "shape"}...], "config",
             "feature_version", "format_version"}
    payload: every array in header order, float64 little-endian, C order
    trailer: 32-byte SHA-256 over everything before it
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import os
from collections import OrderedDict

import numpy as np

from .errors import ChecksumMismatch, DuplicateFrame, InsufficientData, ParseError, VersionUnsupported
from .features import FEATURE_VERSION
from .network import Arch, ModelParams, expected_shapes
from .skeleton import CONF_THRESHOLD, LABEL_CODES, LABEL_NAMES, N_KEYPOINTS, UNKNOWN, Track, impute_track

log = logging.getLogger(__name__)

TRACK_FORMAT_VERSION = 1
TRACK_HEADER = "# pedmotion-tracks v{version} fps={fps:g}"
N_FIELDS = 3 + 3 * N_KEYPOINTS

MAGIC = b"MMSTATE\n"
MODEL_FORMAT_VERSION = 1
DIGEST_SIZE = 32


# -- tracks ------------------------------------------------------------------


def _parse_header(line):
    meta = {}
    for tok in line.lstrip("#").split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            meta[k] = v
        elif tok.startswith("v") and tok[1:].isdigit():
            meta["version"] = int(tok[1:])
    return meta


def parse_track_line(line, lineno=None):
    """Parse one record -> (track_id, frame_index, label_code, (18, 3) array)."""
    parts = [p.strip() for p in line.rstrip("\r\n").split(",")]
    if len(parts) != N_FIELDS:
        n_triples = (len(parts) - 3) / 3
        raise ParseError(f"expected 18 keypoint triples, got {n_triples:g}", lineno)
    track_id, frame, label = parts[:3]
    if not track_id:
        raise ParseError("empty track_id", lineno)
    try:
        frame_index = int(frame)
    except ValueError:
        raise ParseError(f"bad frame_index {frame!r}", lineno) from None
    if frame_index < 0:
        raise ParseError("negative frame_index", lineno)
    if not label:
        raise ParseError("empty label", lineno)
    code = LABEL_CODES.get(label.lower(), UNKNOWN)
    try:
        vals = np.array([float(v) for v in parts[3:]], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"bad number: {exc}", lineno) from None
    if not np.all(np.isfinite(vals)):
        raise ParseError("non-finite coordinate or confidence", lineno)
    kp = vals.reshape(N_KEYPOINTS, 3)
    if np.any(kp[:, 2] < 0) or np.any(kp[:, 2] > 1):
        raise ParseError("confidence outside [0, 1]", lineno)
    return track_id, frame_index, code, kp


def iter_track_lines(stream):
    """Yield (lineno, track_id, frame_index, label_code, keypoints) in file order."""
    for lineno, line in enumerate(stream, start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        yield (lineno, *parse_track_line(line, lineno))


def read_tracks(stream, conf_threshold=CONF_THRESHOLD, impute=True):
    """Read tracks from an open text stream; see :func:`load_tracks`."""
    fps = 30.0
    groups: "OrderedDict[str, dict]" = OrderedDict()
    for lineno, line in enumerate(stream, start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            meta = _parse_header(s)
            if "fps" in meta:
                try:
                    fps = float(meta["fps"])
                except ValueError:
                    raise ParseError(f"bad fps {meta['fps']!r}", lineno) from None
            if meta.get("version", TRACK_FORMAT_VERSION) > TRACK_FORMAT_VERSION:
                raise VersionUnsupported(f"track format v{meta['version']} not supported")
            continue
        tid, frame, code, kp = parse_track_line(line, lineno)
        g = groups.setdefault(tid, {})
        if frame in g:
            raise DuplicateFrame(f"duplicate frame {frame} in track {tid!r}", lineno)
        g[frame] = (code, kp)

    tracks = []
    for tid, frames in groups.items():
        order = sorted(frames)
        kp = np.stack([frames[f][1] for f in order])
        labels = np.array([frames[f][0] for f in order], dtype=np.int64)
        tr = Track(tid, kp, order, labels, fps)
        if impute:
            tr = impute_track(tr, conf_threshold)
        tracks.append(tr)
    for s in dataset_stats(tracks):
        log.debug("track %s: %d frames, %d walking, %d standing", *s)
    return tracks


def load_tracks(path, conf_threshold=CONF_THRESHOLD, impute=True):
    """Load a track file into a list of Track, grouped by id and sorted by frame."""
    with open(path, encoding="utf-8") as fh:
        return read_tracks(fh, conf_threshold, impute)


def dataset_stats(tracks):
    """Per-track (track_id, frames, walking frames, standing frames)."""
    out = []
    for t in tracks:
        lab = t.labels if t.labels is not None else np.full(len(t), UNKNOWN)
        out.append((t.track_id, len(t), int(np.sum(lab == 1)), int(np.sum(lab == 0))))
    return out


def format_track_line(track_id, frame_index, label_code, keypoints):
    vals = ",".join(repr(float(v)) for v in np.asarray(keypoints).reshape(-1))
    return f"{track_id},{int(frame_index)},{LABEL_NAMES[int(label_code)]},{vals}"


def write_tracks(tracks, dest, fps=None):
    """Write tracks to a path or text stream in the track file format."""
    tracks = list(tracks)
    if fps is None:
        fps = tracks[0].fps if tracks else 30.0
    own = isinstance(dest, (str, os.PathLike))
    fh = open(dest, "w", encoding="utf-8", newline="\n") if own else dest
    try:
        fh.write(TRACK_HEADER.format(version=TRACK_FORMAT_VERSION, fps=fps) + "\n")
        for t in tracks:
            labels = t.labels if t.labels is not None else np.full(len(t), UNKNOWN)
            for kp, f, lab in zip(t.keypoints, t.frame_indices, labels):
                fh.write(format_track_line(t.track_id, f, lab, kp) + "\n")
    finally:
        if own:
            fh.close()


def split_dataset(tracks, val_fraction, seed):
    """Deterministic split by whole tracks; both parts non-empty."""
    tracks = list(tracks)
    n = len(tracks)
    if n < 2:
        raise InsufficientData("need at least 2 tracks to split")
    n_val = min(max(int(round(n * val_fraction)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = set(perm[:n_val].tolist())
    train = [t for i, t in enumerate(tracks) if i not in val_idx]
    val = [t for i, t in enumerate(tracks) if i in val_idx]
    return train, val


# -- model files -------------------------------------------------------------


def model_to_bytes(params: ModelParams, config=None, format_version=MODEL_FORMAT_VERSION):
    names = list(params.keys())
    header = {
        "format_version": format_version,
        "feature_version": FEATURE_VERSION,
        "arch": params.arch.to_dict(),
        "config": config or {},
        "arrays": [{"name": k, "shape": list(params[k].shape)} for k in names],
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n")
    for k in names:
        buf.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def save_model(params: ModelParams, config, path):
    data = model_to_bytes(params, config)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def model_from_bytes(data: bytes):
    """Decode a model file; returns (params, header dict)."""
    if len(data) < len(MAGIC) + DIGEST_SIZE or not data.startswith(MAGIC):
        raise ChecksumMismatch("not a model file (bad magic or truncated)")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatch("model file checksum does not match")
    nl = body.index(b"\n", len(MAGIC))
    header = json.loads(body[len(MAGIC):nl].decode("utf-8"))
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise VersionUnsupported(f"model format version {header.get('format_version')} not supported")
    if header.get("feature_version") != FEATURE_VERSION:
        raise VersionUnsupported(f"feature layout version {header.get('feature_version')} not supported")
    arch = Arch.from_dict(header["arch"])
    shapes = expected_shapes(arch)
    arrays = {}
    off = nl + 1
    for entry in header["arrays"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if shapes.get(name) != shape:
            raise VersionUnsupported(f"array {name} has shape {shape}, architecture expects {shapes.get(name)}")
        n = math.prod(shape)
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape)
        arrays[name] = arr
        off += 8 * n
    if off != len(body) or set(arrays) != set(shapes):
        raise VersionUnsupported("model arrays do not match the architecture")
    return ModelParams(arch, arrays), header


def load_model(path, with_header=False):
    with open(path, "rb") as fh:
        params, header = model_from_bytes(fh.read())
    return (params, header) if with_header else params
