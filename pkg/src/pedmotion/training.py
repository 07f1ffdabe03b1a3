"""Reverse-mode gradients, Adam, batching and the training loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import kernels
from .errors import InsufficientData, NonFinite
from .features import DISTANCE_DYNAMIC, GROUP_SLICES, GROUPS, extract_track_features
from .network import CLASS_WALKING, Arch, ModelParams, arch_for, forward_batch, init_params
from .skeleton import CONF_THRESHOLD, STANDING, WALKING, mirror_track

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    lr0: float = 0.0002
    epochs: int = 80
    batch_size: int = 32
    decay_factor: float = 0.9
    decay_every: int = 3000
    l2_weight: float = 0.0005
    dropout_rate: float = 0.5
    seq_len_min: int = 30
    seq_len_max: int = 64
    seed: int = 0
    clip_norm: float = 5.0
    val_fraction: float = 0.1
    flip_prob: float = 0.5
    conf_threshold: float = CONF_THRESHOLD
    embed_dim: int = 16
    hidden_dim: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    groups: tuple = GROUPS

    def __post_init__(self):
        self.groups = tuple(self.groups)
        if not 0 < self.seq_len_min <= self.seq_len_max:
            raise ValueError("need 0 < seq_len_min <= seq_len_max")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must be in [0, 1]")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")

    def arch(self) -> Arch:
        return arch_for(self.groups, self.embed_dim, self.hidden_dim)

    def to_dict(self):
        d = asdict(self)
        d["groups"] = list(self.groups)
        return d

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Batch:
    X: np.ndarray  # (B, T, n_inputs)
    mask: np.ndarray  # (B, T) real frames
    labels: np.ndarray  # (B, T) class index, -1 = excluded from the loss

    @property
    def loss_mask(self):
        return self.mask & (self.labels >= 0)


def labels_to_classes(labels):
    """Track label codes -> class indices (-1 for unknown)."""
    labels = np.asarray(labels)
    out = np.full(labels.shape, -1, dtype=np.int64)
    out[labels == WALKING] = CLASS_WALKING
    out[labels == STANDING] = 1 - CLASS_WALKING
    return out


# -- loss and gradients ------------------------------------------------------


def l2_penalty(params: ModelParams, l2_weight):
    return l2_weight * sum(float(np.sum(params[k] ** 2)) for k in params.regularized_keys())


def loss(probs_seq, labels_seq, params: ModelParams | None = None, l2_weight=0.0):
    """Mean cross-entropy over labeled steps plus the L2 penalty.

    ``probs_seq`` is (..., 2), ``labels_seq`` class indices with -1 ignored.
    """
    probs_seq = np.asarray(probs_seq, dtype=np.float64)
    labels_seq = np.asarray(labels_seq)
    sel = labels_seq >= 0
    if not sel.any():
        ce = 0.0
    else:
        p_true = np.take_along_axis(probs_seq, np.where(sel, labels_seq, 0)[..., None], axis=-1)[..., 0]
        ce = float(-np.log(np.maximum(p_true[sel], PROB_FLOOR)).mean())
    if params is not None and l2_weight:
        ce += l2_penalty(params, l2_weight)
    return ce


def backward(batch: Batch, params: ModelParams, rng=None, l2_weight=0.0005, dropout_rate=0.5, keep=None, backend=None):
    """Loss and exact gradients for every learnable parameter.

    Returns ``(loss, grads, cache)``; ``cache.new_running`` carries the
    updated batch-norm running statistics (params are not mutated).
    """
    probs, cache = forward_batch(
        params, batch.X, batch.mask, "train", rng, dropout_rate, keep=keep, backend=backend
    )
    arch = params.arch
    labels = batch.labels
    lm = batch.loss_mask
    n_lab = int(lm.sum())
    value = loss(probs, np.where(lm, labels, -1)) + l2_penalty(params, l2_weight)

    grads = {}
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, np.where(lm, labels, 0)[..., None], 1.0, axis=-1)
    ds = (probs - onehot) * lm[..., None] / max(n_lab, 1)  # (B, T, 2)
    ds_t = ds.transpose(1, 0, 2)
    hs = cache.hs
    H = arch.hidden_dim
    grads["C"] = ds_t.reshape(-1, 2).T @ hs[1:].reshape(-1, H)
    grads["c_bias"] = ds.sum(axis=(0, 1))
    dh_out = ds_t @ params["C"]

    dxr, dxz, dxn, dW_rh, dW_zh, dW_hh, _ = kernels.gru_backward(
        dh_out, hs, cache.r, cache.z, cache.n, params["W_rh"], params["W_zh"], params["W_hh"], backend=backend
    )
    grads["W_rh"], grads["W_zh"], grads["W_hh"] = dW_rh, dW_zh, dW_hh
    I_dim = arch.input_dim
    Dt = cache.D.transpose(1, 0, 2).reshape(-1, I_dim)
    for key, dx in (("W_rx", dxr), ("W_zx", dxz), ("W_xh", dxn)):
        grads[key] = dx.reshape(-1, H).T @ Dt
    dD = dxr @ params["W_rx"] + dxz @ params["W_zx"] + dxn @ params["W_xh"]  # (T, B, I)
    dI = dD.transpose(1, 0, 2) * cache.keep

    mask = batch.mask
    N = cache.n_valid
    e = arch.embed_dim
    for gi, (g, a0, a1) in enumerate(arch.groups):
        mu, var, xhat, E = cache.bn[g]
        dE = dI[:, :, gi * e:(gi + 1) * e]
        dY = dE * (1.0 - E * E) * mask[..., None]
        grads[f"bn_gamma.{g}"] = np.sum(dY * xhat, axis=(0, 1))
        grads[f"bn_beta.{g}"] = dY.sum(axis=(0, 1))
        dxhat = dY * params[f"bn_gamma.{g}"]
        inv_std = 1.0 / np.sqrt(var + 1e-5)
        s1 = dxhat.sum(axis=(0, 1))
        s2 = np.sum(dxhat * xhat * mask[..., None], axis=(0, 1))
        dA = (inv_std / N) * (N * dxhat - s1 - xhat * s2) * mask[..., None]
        Xg = batch.X[:, :, a0:a1]
        grads[f"embed_W.{g}"] = dA.reshape(-1, e).T @ Xg.reshape(-1, a1 - a0)

    for k in params.regularized_keys():
        grads[k] = grads[k] + 2.0 * l2_weight * params[k]
    for k, gk in grads.items():
        if not np.all(np.isfinite(gk)):
            raise NonFinite(f"non-finite gradient for {k}", where=k)
    ordered = {k: grads[k] for k in params.learnable_keys()}
    return value, ordered, cache


def clip_gradients(grads, max_norm):
    """Scale ``grads`` so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm and norm > max_norm:
        s = max_norm / norm
        return {k: g * s for k, g in grads.items()}, norm
    return grads, norm


# -- optimizer ---------------------------------------------------------------


def lr_schedule(update_step, lr0=0.0002, decay_factor=0.9, decay_every=3000):
    """Step-wise exponential decay: lr0 * decay_factor ** floor(step / decay_every)."""
    if update_step < 0:
        raise ValueError("update_step must be >= 0")
    return lr0 * decay_factor ** (update_step // decay_every)


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_update(params: ModelParams, grads, state: OptimizerState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step. Returns new (params, state); inputs untouched."""
    t = state.step + 1
    new = params.copy()
    m_all, v_all = {}, {}
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for k, g in grads.items():
        m = beta1 * state.m.get(k, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(k, 0.0) + (1.0 - beta2) * (g * g)
        m_all[k], v_all[k] = m, v
        new[k] = params[k] - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return new, OptimizerState(m_all, v_all, t)


# -- data --------------------------------------------------------------------


@dataclass
class PreparedTrack:
    track_id: str
    features: np.ndarray  # (T', n_inputs)
    flipped: np.ndarray  # features of the mirrored track
    classes: np.ndarray  # (T',) class index or -1


def prepare_tracks(tracks, conf_threshold=CONF_THRESHOLD, min_len=1):
    """Extract features for a track and its mirror image.

    Tracks with fewer than ``min_len`` usable frames are skipped.
    """
    out = []
    for tr in tracks:
        f = extract_track_features(tr, conf_threshold)
        if len(f) < min_len:
            continue
        ff = extract_track_features(mirror_track(tr), conf_threshold)
        labels = tr.labels if tr.labels is not None else np.full(len(tr), -1)
        classes = labels_to_classes(np.asarray(labels)[f.kept])
        out.append(PreparedTrack(tr.track_id, f.matrix, ff.matrix, classes))
    return out


def _zero_dynamics(rows):
    rows[0, DISTANCE_DYNAMIC] = 0.0
    rows[0, GROUP_SLICES["angle_dynamic"]] = 0.0
    return rows


def sample_batch(dataset, config: TrainConfig, rng) -> Batch:
    """Random crops with flip augmentation and class-balanced loss frames.

    ``dataset`` is a list of PreparedTrack. Tracks are drawn with
    probability proportional to length; each crop is restarted (first-frame
    dynamics zeroed) so it matches a fresh extraction of the cropped frames.
    Within the batch, frames of the over-represented class are subsampled
    out of the loss so both classes contribute equally in expectation.
    """
    pool = [p for p in dataset if len(p.features) >= config.seq_len_min]
    if not pool:
        raise InsufficientData(f"no track has at least {config.seq_len_min} usable frames")
    lengths = np.array([len(p.features) for p in pool], dtype=np.float64)
    choice = rng.choice(len(pool), size=config.batch_size, p=lengths / lengths.sum())
    crops = []
    for i in choice:
        p = pool[i]
        L = int(rng.integers(config.seq_len_min, config.seq_len_max + 1))
        n = len(p.features)
        if n <= L:
            start, L = 0, n
        else:
            start = int(rng.integers(0, n - L + 1))
        src = p.flipped if rng.random() < config.flip_prob else p.features
        rows = _zero_dynamics(src[start:start + L].copy())
        crops.append((rows, p.classes[start:start + L].copy()))

    T = max(len(r) for r, _ in crops)
    B = len(crops)
    F = crops[0][0].shape[1]
    X = np.zeros((B, T, F))
    mask = np.zeros((B, T), dtype=bool)
    labels = np.full((B, T), -1, dtype=np.int64)
    for b, (rows, cls) in enumerate(crops):
        X[b, :len(rows)] = rows
        mask[b, :len(rows)] = True
        labels[b, :len(rows)] = cls

    n_walk = int(np.sum(labels == CLASS_WALKING))
    n_stand = int(np.sum(labels == 1 - CLASS_WALKING))
    if n_walk and n_stand and n_walk != n_stand:
        major = CLASS_WALKING if n_walk > n_stand else 1 - CLASS_WALKING
        keep_p = min(n_walk, n_stand) / max(n_walk, n_stand)
        drop = (labels == major) & (rng.random(labels.shape) >= keep_p)
        labels[drop] = -1
    return Batch(X, mask, labels)


# -- training loop -----------------------------------------------------------


def _epoch_updates(dataset, config: TrainConfig):
    frames = sum(len(p.features) for p in dataset if len(p.features) >= config.seq_len_min)
    capacity = config.batch_size * 0.5 * (config.seq_len_min + config.seq_len_max)
    return max(1, int(round(frames / capacity)))


def train(tracks, config: TrainConfig, val_tracks=None, on_epoch=None):
    """Train from scratch.

    Without ``val_tracks``, ``config.val_fraction`` of the tracks (by track)
    is held out. Returns ``(final_params, best_params, history)`` where
    history has one dict per epoch; ``on_epoch`` is called with each record.
    """
    from .data_io import split_dataset
    from .evaluation import evaluate

    tracks = list(tracks)
    if not tracks:
        raise InsufficientData("empty dataset")
    if val_tracks is None and config.val_fraction > 0 and len(tracks) >= 2:
        tracks, val_tracks = split_dataset(tracks, config.val_fraction, config.seed)
    val_tracks = list(val_tracks or [])

    params = init_params(config.seed, config.arch())
    best = params.copy()
    history = []
    if config.epochs == 0:
        return params, best, history

    data = prepare_tracks(tracks, config.conf_threshold, min_len=config.seq_len_min)
    if not data:
        raise InsufficientData(f"no track has at least {config.seq_len_min} usable frames")
    all_cls = np.concatenate([p.classes for p in data])
    if not (np.any(all_cls == CLASS_WALKING) and np.any(all_cls == 1 - CLASS_WALKING)):
        raise InsufficientData("training data must contain both walking and standing frames")

    rng = np.random.default_rng(config.seed)
    opt = OptimizerState()
    n_updates = _epoch_updates(data, config)
    best_acc = -1.0
    for epoch in range(config.epochs):
        losses = []
        for _ in range(n_updates):
            batch = sample_batch(data, config, rng)
            lr = lr_schedule(opt.step, config.lr0, config.decay_factor, config.decay_every)
            try:
                value, grads, cache = backward(batch, params, rng, config.l2_weight, config.dropout_rate)
                if not np.isfinite(value):
                    raise NonFinite("non-finite loss", where="loss")
            except NonFinite as exc:
                raise NonFinite(str(exc), where=exc.where, checkpoint=params.copy()) from exc
            grads, _ = clip_gradients(grads, config.clip_norm)
            new_params, opt = adam_update(params, grads, opt, lr, config.beta1, config.beta2, config.adam_eps)
            for k, v in cache.new_running.items():
                new_params[k] = v
            params = new_params
            losses.append(value)
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "updates": opt.step,
            "lr": lr_schedule(opt.step, config.lr0, config.decay_factor, config.decay_every),
        }
        if val_tracks:
            rep = evaluate(params, val_tracks, config.conf_threshold)
            record["val"] = rep.to_dict()
            acc = rep.accuracy
        else:
            acc = -record["train_loss"]
        if acc > best_acc:
            best_acc = acc
            best = params.copy()
            record["best"] = True
        else:
            record["best"] = False
        history.append(record)
        log.info("epoch %d loss %.5f", epoch, record["train_loss"])
        if on_epoch is not None:
            on_epoch(record)
    return params, best, history


# -- gradient check ----------------------------------------------------------

GRADCHECK_FLOOR = 1e-7


def tiny_arch(group_dim=2, embed_dim=2, hidden_dim=3) -> Arch:
    groups = tuple((g, i * group_dim, (i + 1) * group_dim) for i, g in enumerate(GROUPS))
    return Arch(groups, embed_dim, hidden_dim, group_dim * len(GROUPS))


def tiny_problem(seed, T=4, B=3, dropout_rate=0.5):
    """Small randomized model and batch for gradient checking.

    One sequence is one step shorter (exercises padding) and one frame is
    unlabeled. Batch-norm affine params are perturbed away from identity.
    """
    rng = np.random.default_rng(seed)
    arch = tiny_arch()
    params = init_params(seed, arch)
    for g in arch.group_names:
        params[f"bn_gamma.{g}"] = rng.uniform(0.5, 1.5, arch.embed_dim)
        params[f"bn_beta.{g}"] = rng.normal(0, 0.3, arch.embed_dim)
    params["c_bias"] = rng.normal(0, 0.3, 2)
    X = rng.normal(size=(B, T, arch.n_inputs))
    mask = np.ones((B, T), dtype=bool)
    mask[-1, -1] = False
    labels = rng.integers(0, 2, size=(B, T))
    labels[0, 1] = -1
    keep_rng = np.random.default_rng(seed + 1)
    from .network import dropout_mask

    keep = dropout_mask(keep_rng, (B, T, arch.input_dim), dropout_rate)
    return params, Batch(X, mask, labels), keep


def grad_check(params: ModelParams, batch: Batch, eps=1e-5, l2_weight=0.0005, keep=None, keys=None, scale_analytic=1.0):
    """Compare analytic gradients with central differences.

    Relative error per entry is |a - n| / max(|a| + |n|, floor). Returns
    ``(max_rel_error, worst_path)``; worst_path is "key[index]" or None for
    an empty selection. ``scale_analytic`` exists to prove the check bites.
    """
    if keep is None:
        keep = np.ones(batch.X.shape[:2] + (params.arch.input_dim,))
    _, grads, _ = backward(batch, params, None, l2_weight, keep=keep)
    keys = params.learnable_keys() if keys is None else list(keys)
    worst, worst_path = 0.0, None

    def f(p):
        value, _, _ = backward(batch, p, None, l2_weight, keep=keep)
        return value

    for k in keys:
        base = params[k]
        for idx in np.ndindex(base.shape):
            p = params.copy()
            p[k][idx] = base[idx] + eps
            fp = f(p)
            p[k][idx] = base[idx] - eps
            fm = f(p)
            num = (fp - fm) / (2 * eps)
            ana = scale_analytic * grads[k][idx]
            rel = abs(ana - num) / max(abs(ana) + abs(num), GRADCHECK_FLOOR)
            if worst_path is None or rel > worst:
                worst, worst_path = rel, f"{k}[{','.join(map(str, idx))}]"
    return worst, worst_path
