"""Command-line interface.

Exit codes: 0 success, 2 usage, 3 I/O, 4 data, 5 numeric/version.

Config files hold one ``key = value`` per line (``#`` starts a comment).
Keys are the TrainConfig fields plus the synth keys; flags given on the
command line win over file values. Unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

import numpy as np

from . import __version__
from .data_io import iter_track_lines, load_model, load_tracks, save_model, write_tracks
from .errors import (
    ChecksumMismatch,
    InsufficientData,
    NonFinite,
    ParseError,
    VersionUnsupported,
)
from .evaluation import (
    REFERENCE_TABLE,
    ablate,
    confusion_from_predictions,
    format_table,
    metrics,
    predict_dataset,
    report_record,
)
from .network import StreamState, predict_track, stream_step
from .skeleton import LABEL_NAMES
from .synthgait import generate_dataset
from .training import TrainConfig, grad_check, tiny_problem, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4, 5
GRADCHECK_TOL = 1e-4

SYNTH_KEYS = {
    "tracks": int,
    "mix": float,
    "fps": float,
    "cadence": float,
    "swing_amplitude": float,
    "arm_amplitude": float,
    "jitter_sigma": float,
    "body_scale": float,
}
GAIT_KEYS = ("cadence", "swing_amplitude", "arm_amplitude", "jitter_sigma", "body_scale")


def _train_types():
    out = {}
    for f in fields(TrainConfig):
        default = f.default
        if isinstance(default, bool):
            out[f.name] = lambda s: s.lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            out[f.name] = int
        elif isinstance(default, float):
            out[f.name] = float
        else:
            out[f.name] = lambda s: tuple(g.strip() for g in s.split(",") if g.strip())
    return out


TRAIN_KEYS = _train_types()
SCHEMA = {**TRAIN_KEYS, **SYNTH_KEYS}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def read_config(path):
    """Parse a key=value config file against the schema."""
    values = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in SCHEMA:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = SCHEMA[key](val)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {val!r}") from None
    return values


def _add_train_flags(p):
    for name, typ in TRAIN_KEYS.items():
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, dest=name, type=str, default=None, metavar=name.upper())


def _effective(args, keys):
    """Config-file values for ``keys``, overridden by explicit flags."""
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    values = {k: v for k, v in file_values.items() if k in keys}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            try:
                values[k] = SCHEMA[k](v) if isinstance(v, str) else v
            except ValueError:
                raise UsageError(f"bad value for --{k.replace('_', '-')}: {v!r}") from None
    return values


def _train_config(args):
    values = _effective(args, TRAIN_KEYS)
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _load_labeled(path, conf_threshold):
    tracks = load_tracks(path, conf_threshold)
    if not tracks:
        raise DataError(f"{path}: no tracks")
    return tracks


def _header(kind, **meta):
    return f"# pedmotion-{kind} v1 " + json.dumps(meta, sort_keys=True)


# -- commands ----------------------------------------------------------------


def cmd_synth(args, out):
    values = _effective(args, {**SYNTH_KEYS, "seed": int})
    seed = values.get("seed", 0)
    n = values.get("tracks")
    if n is None or n < 1:
        raise UsageError("--tracks must be >= 1")
    mix = values.get("mix", 0.5)
    if not 0.0 <= mix <= 1.0:
        raise UsageError("--mix must be in [0, 1]")
    fps = values.get("fps", 30.0)
    fixed = {k: values[k] for k in GAIT_KEYS if k in values}
    tracks = generate_dataset(n, mix, seed, fps=fps, **fixed)
    write_tracks(tracks, args.out, fps=fps)
    frames = sum(len(t) for t in tracks)
    print(f"wrote {len(tracks)} tracks, {frames} frames to {args.out}", file=out)
    return EXIT_OK


def _final_path(path):
    return f"{path}.final"


def cmd_train(args, out):
    cfg = _train_config(args)
    tracks = _load_labeled(args.data, cfg.conf_threshold)
    val = _load_labeled(args.val_data, cfg.conf_threshold) if args.val_data else None
    echo = cfg.to_dict()
    print(_header("history", config=echo, data=str(args.data)), file=out, flush=True)

    def emit(rec):
        print(json.dumps(rec, sort_keys=True), file=out, flush=True)

    try:
        final, best, _ = train(tracks, cfg, val_tracks=val, on_epoch=emit)
    except NonFinite as exc:
        ckpt = f"{args.out}.checkpoint"
        if exc.checkpoint is not None:
            save_model(exc.checkpoint, echo, ckpt)
        print(f"error: {exc}; last good checkpoint at {ckpt}", file=sys.stderr)
        return EXIT_NUMERIC
    save_model(best, echo, args.out)
    save_model(final, echo, _final_path(args.out))
    return EXIT_OK


def cmd_eval(args, out):
    params, header = load_model(args.model, with_header=True)
    conf = header.get("config", {}).get("conf_threshold", 0.3)
    tracks = _load_labeled(args.data, conf)
    pairs = predict_dataset(params, tracks, conf)
    cm = confusion_from_predictions(pairs)
    if cm.total == 0:
        raise DataError(f"{args.data}: no walking/standing labeled frames")
    rep = metrics(cm)
    print(format_table([("model", rep)]), file=out)
    print(f"confusion tp={cm.tp} fp={cm.fp} fn={cm.fn} tn={cm.tn}", file=out)
    print(report_record(rep, tp=cm.tp, fp=cm.fp, fn=cm.fn, tn=cm.tn, model=str(args.model)), file=out)
    if args.dump_probs:
        with open(args.dump_probs, "w", encoding="utf-8") as fh:
            fh.write(_header("probs", model=str(args.model)) + "\n")
            for t, p in pairs:
                labels = t.labels if t.labels is not None else np.full(len(t), -1)
                for f, pw, lab in zip(t.frame_indices, p, labels):
                    fh.write(f"{t.track_id},{int(f)},{float(pw)!r},{LABEL_NAMES[int(lab)]}\n")
    return EXIT_OK


def cmd_infer(args, out):
    params, header = load_model(args.model, with_header=True)
    conf = header.get("config", {}).get("conf_threshold", 0.3)
    print(_header("probs", model=str(args.model), mode="stream" if args.stream else "batch"), file=out)
    if args.stream:
        states = {}
        with open(args.data, encoding="utf-8") as fh:
            for _, tid, frame, _, kp in iter_track_lines(fh):
                st = states.get(tid) or StreamState.fresh(params.arch.hidden_dim)
                st, probs = stream_step(st, kp, params, conf)
                states[tid] = st
                print(f"{tid},{frame},{probs.p_walking!r}", file=out, flush=False)
        out.flush()
        return EXIT_OK
    tracks = load_tracks(args.data, conf)
    for t in tracks:
        p, _ = predict_track(t, params, conf)
        for f, pw in zip(t.frame_indices, p):
            print(f"{t.track_id},{int(f)},{float(pw)!r}", file=out)
    return EXIT_OK


def cmd_gradcheck(args, out):
    params, batch, keep = tiny_problem(args.seed)
    err, path = grad_check(params, batch, eps=args.eps, keep=keep)
    n = sum(params[k].size for k in params.learnable_keys())
    ok = err < GRADCHECK_TOL
    print(
        f"gradcheck seed={args.seed} params={n} eps={args.eps:g} "
        f"max_rel_error={err:.3e} worst={path} {'PASS' if ok else 'FAIL'}",
        file=out,
    )
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_ablate(args, out):
    cfg = _train_config(args)
    tracks = _load_labeled(args.data, cfg.conf_threshold)
    test = _load_labeled(args.test_data, cfg.conf_threshold) if args.test_data else None
    print(_header("ablation", config=cfg.to_dict(), data=str(args.data)), file=out, flush=True)
    rows = ablate(tracks, cfg, test_tracks=test)
    print(format_table(rows, REFERENCE_TABLE), file=out)
    for name, rep in rows:
        print(report_record(rep, row=name), file=out)
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="pedmotion", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pedmotion {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic track file")
    s.add_argument("--out", required=True)
    s.add_argument("--tracks", type=str, default=None)
    s.add_argument("--seed", type=str, default=None)
    s.add_argument("--config")
    for k in ("mix", "fps") + GAIT_KEYS:
        s.add_argument("--" + k.replace("_", "-"), dest=k, type=str, default=None)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--val-data")
    t.add_argument("--config")
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="frame-level metrics of a model on labeled tracks")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--dump-probs")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="per-frame walking probabilities")
    i.add_argument("--data", required=True)
    i.add_argument("--model", required=True)
    i.add_argument("--stream", action="store_true")
    i.set_defaults(func=cmd_infer)

    g = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--eps", type=float, default=1e-5)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="retrain without each feature group")
    a.add_argument("--data", required=True)
    a.add_argument("--test-data")
    a.add_argument("--config")
    _add_train_flags(a)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VersionUnsupported, ChecksumMismatch, NonFinite) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, InsufficientData, DataError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
