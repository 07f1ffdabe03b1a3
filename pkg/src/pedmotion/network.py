"""Forward model: per-group embeddings with batch norm, GRU, softmax.

Parameters live in a plain ``dict[str, np.ndarray]`` inside
:class:`ModelParams`. Key names::

    embed_W.<group>  (embed, d_group)    bn_gamma.<group>, bn_beta.<group>
    bn_mean.<group>, bn_var.<group>      running statistics, not learned
    W_rx, W_zx, W_xh (hidden, input)     W_rh, W_zh, W_hh (hidden, hidden)
    C (2, hidden), c_bias (2,)

Class index 1 is walking, 0 is standing. The GRU has no bias terms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegeneratePose, NonFinite
from .features import GROUP_SLICES, GROUPS, N_FEATURES, assemble, static_frame
from .skeleton import CONF_THRESHOLD, N_KEYPOINTS

BN_MOMENTUM = 0.9
BN_EPS = 1e-5
N_CLASSES = 2
CLASS_WALKING = 1


@dataclass(frozen=True)
class Arch:
    """Network shape. ``groups`` holds (name, start, stop) column ranges of the input."""

    groups: tuple = tuple((g, GROUP_SLICES[g].start, GROUP_SLICES[g].stop) for g in GROUPS)
    embed_dim: int = 16
    hidden_dim: int = 64
    n_inputs: int = N_FEATURES

    @property
    def input_dim(self) -> int:
        return self.embed_dim * len(self.groups)

    @property
    def group_names(self):
        return [g[0] for g in self.groups]

    def to_dict(self):
        return {
            "groups": [list(g) for g in self.groups],
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "n_inputs": self.n_inputs,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            groups=tuple((str(g[0]), int(g[1]), int(g[2])) for g in d["groups"]),
            embed_dim=int(d["embed_dim"]),
            hidden_dim=int(d["hidden_dim"]),
            n_inputs=int(d["n_inputs"]),
        )


ABLATIONS = {
    "without position features": ("distance", "angle_static", "angle_dynamic"),
    "without distance features": ("position", "angle_static", "angle_dynamic"),
    "without angle features": ("position", "distance"),
    "without dynamic features": ("position", "distance_static", "angle_static"),
    "with all features": GROUPS,
}


def arch_for(groups, embed_dim=16, hidden_dim=64) -> Arch:
    """Arch over a subset of feature groups. ``distance_static`` is the
    static half of the distance group."""
    layout = []
    for g in groups:
        if g == "distance_static":
            layout.append(("distance", GROUP_SLICES["distance"].start, GROUP_SLICES["distance"].start + 12))
        else:
            layout.append((g, GROUP_SLICES[g].start, GROUP_SLICES[g].stop))
    return Arch(tuple(layout), embed_dim, hidden_dim, N_FEATURES)


GRU_INPUT_KEYS = ("W_rx", "W_zx", "W_xh")
GRU_HIDDEN_KEYS = ("W_rh", "W_zh", "W_hh")


@dataclass
class ModelParams:
    arch: Arch
    arrays: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.arrays[key]

    def __setitem__(self, key, value):
        self.arrays[key] = value

    def keys(self):
        return self.arrays.keys()

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.arrays.items()})

    def learnable_keys(self):
        return [k for k in self.arrays if not k.startswith(("bn_mean.", "bn_var."))]

    def regularized_keys(self):
        return [k for k in self.arrays if k.startswith("embed_W.") or k.startswith("W_") or k == "C"]

    def equals(self, other: "ModelParams") -> bool:
        return (
            self.arch == other.arch
            and list(self.arrays) == list(other.arrays)
            and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays)
        )


def expected_shapes(arch: Arch) -> dict:
    shapes = {}
    for g, a, b in arch.groups:
        shapes[f"embed_W.{g}"] = (arch.embed_dim, b - a)
        for p in ("bn_gamma", "bn_beta", "bn_mean", "bn_var"):
            shapes[f"{p}.{g}"] = (arch.embed_dim,)
    H, I = arch.hidden_dim, arch.input_dim
    for k in GRU_INPUT_KEYS:
        shapes[k] = (H, I)
    for k in GRU_HIDDEN_KEYS:
        shapes[k] = (H, H)
    shapes["C"] = (N_CLASSES, H)
    shapes["c_bias"] = (N_CLASSES,)
    return shapes


def init_params(seed: int, arch: Arch | None = None) -> ModelParams:
    """Glorot-uniform weights, identity batch norm, zero classifier bias."""
    arch = arch or Arch()
    rng = np.random.default_rng(seed)
    arrays = {}
    for key, shape in expected_shapes(arch).items():
        if key.startswith(("bn_gamma.", "bn_var.")):
            arrays[key] = np.ones(shape)
        elif key.startswith(("bn_beta.", "bn_mean.")) or key == "c_bias":
            arrays[key] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[key] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(arch, arrays)


def sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def softmax(logits):
    """Row-wise softmax over the last axis with max-subtraction."""
    s = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def embed(x, W, gamma, beta, mean=None, var=None, mode="infer", mask=None, eps=BN_EPS):
    """tanh(BN(x @ W.T)) for inputs of shape (..., d).

    ``mode="train"`` normalizes with statistics over the entries selected by
    ``mask`` (all leading positions by default) and returns them as well:
    ``(out, batch_mean, batch_var)``. ``mode="infer"`` uses ``mean``/``var``.
    """
    a = np.asarray(x, dtype=np.float64) @ W.T
    if mode == "train":
        flat = a.reshape(-1, a.shape[-1])
        if mask is not None:
            flat = flat[np.asarray(mask).reshape(-1)]
        mu = flat.mean(axis=0)
        v = ((flat - mu) ** 2).mean(axis=0)
        out = np.tanh(gamma * (a - mu) / np.sqrt(v + eps) + beta)
        _check_finite(out, "embedding")
        return out, mu, v
    out = np.tanh(gamma * (a - mean) / np.sqrt(var + eps) + beta)
    _check_finite(out, "embedding")
    return out


def gru_step(I_t, h_prev, params: ModelParams):
    """One GRU update on (..., input) / (..., hidden) arrays."""
    p = params
    I_t = np.asarray(I_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    r = sigmoid(I_t @ p["W_rx"].T + h_prev @ p["W_rh"].T)
    z = sigmoid(I_t @ p["W_zx"].T + h_prev @ p["W_zh"].T)
    n = np.tanh(I_t @ p["W_xh"].T + (r * h_prev) @ p["W_hh"].T)
    h = (1.0 - z) * h_prev + z * n
    _check_finite(h, "gru_step")
    return h


@dataclass(frozen=True)
class Probs:
    p_walking: float
    p_standing: float
    stale: bool = False


def classify(h_t, params: ModelParams) -> np.ndarray:
    """Softmax class probabilities; last axis is (p_standing, p_walking)."""
    return softmax(np.asarray(h_t) @ params["C"].T + params["c_bias"])


def _check_finite(a, where):
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"non-finite values in {where}", where=where)


@dataclass
class ForwardCache:
    """Intermediates kept by a train-mode forward pass for backward."""

    X: np.ndarray
    mask: np.ndarray
    n_valid: int
    bn: dict  # group -> (a, mu, var, xhat, E)
    I: np.ndarray
    keep: np.ndarray | None
    D: np.ndarray
    hs: np.ndarray
    r: np.ndarray
    z: np.ndarray
    n: np.ndarray
    probs: np.ndarray
    new_running: dict


def dropout_mask(rng, shape, rate):
    """Inverted-dropout multiplier: 0 or 1/(1-rate)."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward_batch(
    params: ModelParams,
    X,
    mask=None,
    mode="infer",
    rng=None,
    dropout_rate=0.5,
    keep=None,
    backend=None,
):
    """Batched forward over padded sequences.

    ``X`` is (B, T, n_inputs), ``mask`` (B, T) marks real frames (padding
    only at the end). In train mode returns ``(probs, cache)``; in infer mode
    returns probs of shape (B, T, 2). ``keep`` overrides the dropout draw.
    """
    arch = params.arch
    X = np.asarray(X, dtype=np.float64)
    B, T, _ = X.shape
    if mask is None:
        mask = np.ones((B, T), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    train = mode == "train"
    if not train and mode != "infer":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")

    parts = []
    bn = {}
    new_running = {}
    n_valid = int(mask.sum())
    for g, a0, a1 in arch.groups:
        W = params[f"embed_W.{g}"]
        gamma = params[f"bn_gamma.{g}"]
        beta = params[f"bn_beta.{g}"]
        a = X[:, :, a0:a1] @ W.T
        if train:
            sel = a[mask]
            mu = sel.mean(axis=0)
            var = ((sel - mu) ** 2).mean(axis=0)
            new_running[f"bn_mean.{g}"] = BN_MOMENTUM * params[f"bn_mean.{g}"] + (1 - BN_MOMENTUM) * mu
            new_running[f"bn_var.{g}"] = BN_MOMENTUM * params[f"bn_var.{g}"] + (1 - BN_MOMENTUM) * var
        else:
            mu = params[f"bn_mean.{g}"]
            var = params[f"bn_var.{g}"]
        xhat = (a - mu) / np.sqrt(var + BN_EPS)
        E = np.tanh(gamma * xhat + beta)
        if train:
            E = E * mask[:, :, None]
            bn[g] = (mu, var, xhat, E)
        parts.append(E)
    I = np.concatenate(parts, axis=-1)
    _nonfinite_step(I, "embedding")

    if train:
        if keep is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            keep = dropout_mask(rng, I.shape, dropout_rate)
        D = I * keep
    else:
        D = I

    Dt = np.ascontiguousarray(D.transpose(1, 0, 2))
    xr = Dt @ params["W_rx"].T
    xz = Dt @ params["W_zx"].T
    xn = Dt @ params["W_xh"].T
    h0 = np.zeros((B, arch.hidden_dim))
    hs, r, z, n = kernels.gru_forward(
        xr, xz, xn, params["W_rh"], params["W_zh"], params["W_hh"], h0, backend=backend
    )
    _nonfinite_step(hs[1:].transpose(1, 0, 2), "gru")
    logits = hs[1:] @ params["C"].T + params["c_bias"]
    probs = softmax(logits).transpose(1, 0, 2)
    if not train:
        return probs
    cache = ForwardCache(X, mask, n_valid, bn, I, keep, D, hs, r, z, n, probs, new_running)
    return probs, cache


def _nonfinite_step(a, where):
    bad = ~np.isfinite(a)
    if bad.any():
        t = int(np.argwhere(bad)[0][1])
        raise NonFinite(f"non-finite values in {where} at timestep {t}", where=t)


def forward_sequence(features, params: ModelParams, mode="infer", rng=None, dropout_rate=0.5, backend=None):
    """Per-timestep probabilities (T, 2) for one feature sequence.

    ``features`` is a (T, n_inputs) matrix or a TrackFeatures. Train mode
    returns ``(probs, cache)``.
    """
    M = getattr(features, "matrix", features)
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1:
        raise ValueError("forward_sequence needs a non-empty (T, n_inputs) matrix")
    out = forward_batch(params, M[None], None, mode, rng, dropout_rate, backend=backend)
    if mode == "train":
        probs, cache = out
        return probs[0], cache
    return out[0]


@dataclass
class StreamState:
    """Per-track online state. Never share one between tracks."""

    h: np.ndarray
    prev_distance: np.ndarray | None = None
    prev_angle: np.ndarray | None = None
    prev_valid: np.ndarray | None = None
    step: int = 0
    last_keypoints: np.ndarray | None = None  # carry-forward imputation memory
    last_probs: Probs | None = None

    @classmethod
    def fresh(cls, hidden_dim=64):
        return cls(h=np.zeros(hidden_dim))


def stream_step(state: StreamState, pose, params: ModelParams, conf_threshold=CONF_THRESHOLD):
    """Consume one pose, return ``(new_state, Probs)``.

    A degenerate pose leaves the state untouched and repeats the previous
    probabilities flagged stale (uniform before the first good frame).
    """
    kp = np.array(getattr(pose, "keypoints", pose), dtype=np.float64)
    if kp.shape != (N_KEYPOINTS, 3):
        raise ValueError("stream_step expects an (18, 3) pose")
    last_kp = state.last_keypoints
    if last_kp is None:
        last_kp = np.full((N_KEYPOINTS, 3), np.nan)
    ok = kp[:, 2] >= conf_threshold
    fill = ~ok & ~np.isnan(last_kp[:, 0])
    kp[fill, :2] = last_kp[fill, :2]
    kp[fill, 2] = conf_threshold
    new_last = last_kp.copy()
    new_last[ok] = kp[ok]

    try:
        st = static_frame(kp, conf_threshold)
    except DegeneratePose:
        prev = state.last_probs
        if prev is None:
            prev = Probs(0.5, 0.5)
        stale = Probs(prev.p_walking, prev.p_standing, stale=True)
        kept = StreamState(
            state.h, state.prev_distance, state.prev_angle, state.prev_valid,
            state.step, new_last, state.last_probs,
        )
        return kept, stale

    matrix, _ = assemble(st, state.prev_distance, state.prev_angle, state.prev_valid)
    x = matrix[0]
    parts = []
    for g, a0, a1 in params.arch.groups:
        parts.append(
            embed(
                x[a0:a1],
                params[f"embed_W.{g}"],
                params[f"bn_gamma.{g}"],
                params[f"bn_beta.{g}"],
                params[f"bn_mean.{g}"],
                params[f"bn_var.{g}"],
            )
        )
    I = np.concatenate(parts)
    h = gru_step(I, state.h, params)
    p = classify(h, params)
    probs = Probs(float(p[CLASS_WALKING]), float(p[1 - CLASS_WALKING]))
    new_state = StreamState(
        h, st.distance[0].copy(), st.angle[0].copy(), st.valid[0].copy(),
        state.step + 1, new_last, probs,
    )
    return new_state, probs


def predict_track(track, params: ModelParams, conf_threshold=CONF_THRESHOLD, backend=None):
    """p_walking for every frame of ``track`` (batch path).

    Frames dropped as degenerate repeat the previous value (0.5 before the
    first good frame), matching :func:`stream_step`. Returns (p_walking, stale).
    """
    from .features import extract_track_features

    tf = extract_track_features(track, conf_threshold)
    T = len(track)
    p_walk = np.full(T, 0.5)
    stale = np.ones(T, dtype=bool)
    if len(tf):
        probs = forward_sequence(tf, params, backend=backend)
        p_walk[tf.kept] = probs[:, CLASS_WALKING]
        stale[tf.kept] = False
        for t in range(1, T):
            if stale[t]:
                p_walk[t] = p_walk[t - 1]
    return p_walk, stale
