"""Acceptance suite: one test per headline criterion.

Each test records PASS/FAIL with its measured numbers; the summary hook in
conftest prints one line per criterion at the end of the run.
"""
import json
import math
import time

import numpy as np
import pytest

from conftest import random_pose, random_track, record, run_cli
from oracle_features import track_features
from pedmotion.data_io import load_model, load_tracks, save_model, write_tracks
from pedmotion.features import extract_track_features
from pedmotion.network import Arch, ModelParams, gru_step, init_params
from pedmotion.skeleton import Pose, mirror_pose
from pedmotion.synthgait import generate_dataset, transition_frames
from test_features import circular_gap, mirrored_expectation, static_vector

pytestmark = pytest.mark.acceptance

BENCH_TRAIN_SEED = 1
BENCH_TEST_SEED = 1001


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    """200 training tracks, 50 held-out, 10 epochs, other settings default."""
    d = tmp_path_factory.mktemp("bench")
    t0 = time.perf_counter()
    assert run_cli("synth", "--out", d / "train.txt", "--tracks", 200, "--seed", BENCH_TRAIN_SEED)[0] == 0
    assert run_cli("synth", "--out", d / "test.txt", "--tracks", 50, "--seed", BENCH_TEST_SEED)[0] == 0
    code, history = run_cli("train", "--data", d / "train.txt", "--out", d / "model.bin", "--epochs", 10)
    assert code == 0
    code, report = run_cli("eval", "--data", d / "test.txt", "--model", d / "model.bin",
                           "--dump-probs", d / "probs.txt")
    assert code == 0
    elapsed = time.perf_counter() - t0
    return {"dir": d, "history": history, "report": report, "elapsed": elapsed}


def test_gradient_correctness():
    t0 = time.perf_counter()
    errors = []
    for seed in range(10):
        code, out = run_cli("gradcheck", "--seed", seed, "--eps", 1e-5)
        errors.append(float(out.split("max_rel_error=")[1].split()[0]))
        assert code == (0 if errors[-1] < 1e-4 else 5)
    elapsed = time.perf_counter() - t0
    ok = max(errors) < 1e-4 and elapsed < 60
    record("gradient correctness", ok, f"max_rel_error={max(errors):.2e} over 10 seeds, {elapsed:.1f}s")
    assert max(errors) < 1e-4
    assert elapsed < 60


def test_feature_oracle_equivalence():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(1000):
        t = random_track(rng, track_id=f"o{i}")
        tf = extract_track_features(t)
        rows, kept = track_features(t.keypoints.tolist())
        assert tf.kept.tolist() == kept
        if rows:
            worst = max(worst, float(np.abs(tf.matrix - np.array(rows)).max()))
    record("feature oracle equivalence", worst <= 1e-9, f"max |diff|={worst:.1e} on 1000 tracks")
    assert worst <= 1e-9


def _scalar_params():
    one = np.array([[1.0]])
    return ModelParams(Arch(), {k: one for k in ("W_rx", "W_zx", "W_xh", "W_rh", "W_zh", "W_hh")})


STATED_H = 0.81656


def test_gru_unit_oracle():
    h = float(gru_step(np.array([1.0]), np.array([0.5]), _scalar_params())[0])
    r = 1.0 / (1.0 + math.exp(-1.5))
    exact = (1 - r) * 0.5 + r * math.tanh(1.0 + r * 0.5)
    zero = gru_step(np.zeros(64), np.zeros(64), init_params(0))
    literal_ok = abs(h - STATED_H) <= 1e-5
    record(
        "GRU unit oracle",
        literal_ok and np.all(zero == 0),
        f"h_t={h:.7f} vs stated {STATED_H} (|diff|={abs(h - STATED_H):.1e}, tol 1e-5); "
        f"direct evaluation {exact:.7f} (|diff|={abs(h - exact):.1e}); zero fixed point exact",
    )
    assert abs(h - exact) <= 1e-12
    assert np.all(zero == 0.0)


@pytest.mark.xfail(strict=True, reason="stated value carries a rounding slip; see decisions ledger")
def test_gru_stated_value():
    h = float(gru_step(np.array([1.0]), np.array([0.5]), _scalar_params())[0])
    assert abs(h - STATED_H) <= 1e-5


def _corrupted_tracks(n, seed):
    """Synthetic tracks with dropped keypoints and a few unusable frames."""
    rng = np.random.default_rng(seed)
    out = []
    for t in generate_dataset(n, 0.5, seed=seed):
        kp = np.array(t.keypoints)
        drop = rng.random(kp.shape[:2]) < 0.05
        kp[drop, 2] = rng.uniform(0, 0.29, drop.sum())
        bad = rng.random(len(kp)) < 0.02
        kp[bad, :, 2] = 0.0
        out.append(t.replace(keypoints=kp))
    return out


def _read_probs(text):
    out = {}
    for line in text.splitlines():
        if line.startswith("#"):
            continue
        tid, frame, p = line.split(",")[:3]
        out[(tid, int(frame))] = float(p)
    return out


def test_streaming_equals_batch(bench, tmp_path):
    tracks = _corrupted_tracks(100, 77)
    path = tmp_path / "tracks.txt"
    write_tracks(tracks, path)
    # arrival order: frames of all tracks interleaved by frame index
    lines = path.read_text().splitlines()
    header, body = lines[0], lines[1:]
    body.sort(key=lambda s: (int(s.split(",")[1]), s.split(",")[0]))
    interleaved = tmp_path / "interleaved.txt"
    interleaved.write_text("\n".join([header] + body) + "\n")
    model = bench["dir"] / "model.bin"
    code_b, batch = run_cli("infer", "--data", path, "--model", model)
    code_s, stream = run_cli("infer", "--data", interleaved, "--model", model, "--stream")
    assert code_b == 0 and code_s == 0
    pb, ps = _read_probs(batch), _read_probs(stream)
    assert pb.keys() == ps.keys()
    worst = max(abs(pb[k] - ps[k]) for k in pb)
    record("streaming equals batch", worst <= 1e-6, f"max |diff|={worst:.1e} over {len(pb)} frames, 100 tracks")
    assert worst <= 1e-6


def test_flip_translation_scale():
    rng = np.random.default_rng(99)
    worst = {"flip": 0.0, "translation": 0.0, "scale": 0.0}
    for _ in range(1000):
        kp = random_pose(rng, min_hip=10.0)
        pos, dist, ang = static_vector(kp)

        axis = rng.uniform(-500, 1500)
        mpos, mdist, mang = static_vector(mirror_pose(Pose(kp), axis).keypoints)
        epos, edist, eang = mirrored_expectation(pos, dist, ang)
        worst["flip"] = max(worst["flip"], np.abs(mpos - epos).max(), np.abs(mdist - edist).max(),
                            circular_gap(mang, eang).max() / np.pi)

        moved = kp.copy()
        moved[:, :2] += rng.uniform(-1000, 1000, size=2)
        tpos, tdist, tang = static_vector(moved)
        worst["translation"] = max(worst["translation"], np.abs(tpos - pos).max(), np.abs(tdist - dist).max(),
                                   circular_gap(tang, ang).max() / np.pi)

        scaled = kp.copy()
        scaled[:, :2] *= rng.uniform(0.25, 4.0)
        spos, sdist, sang = static_vector(scaled)
        worst["scale"] = max(worst["scale"], np.abs(spos - pos).max(), np.abs(sdist - dist).max(),
                             circular_gap(sang, ang).max() / np.pi)
    ok = max(worst.values()) <= 1e-9
    record("flip/translation/scale", ok, " ".join(f"{k}={v:.1e}" for k, v in worst.items()) + " on 1000 poses")
    assert ok, worst


def test_synthetic_benchmark(bench):
    rec = json.loads(bench["report"].splitlines()[-1])
    tracks = load_tracks(bench["dir"] / "test.txt")
    probs = _read_probs((bench["dir"] / "probs.txt").read_text())
    correct = total = 0
    for t in tracks:
        mask = transition_frames(t.labels)
        for f, lab, m in zip(t.frame_indices, t.labels, mask):
            if m:
                total += 1
                correct += int((probs[(t.track_id, int(f))] >= 0.5) == (lab == 1))
    trans_acc = correct / total
    ok = rec["accuracy"] >= 0.95 and rec["f1"] >= 0.95 and trans_acc >= 0.80 and bench["elapsed"] < 600
    record(
        "synthetic benchmark", ok,
        f"accuracy={rec['accuracy']:.4f} f1={rec['f1']:.4f} transition_accuracy={trans_acc:.4f} "
        f"({total} frames) runtime={bench['elapsed']:.0f}s",
    )
    assert rec["accuracy"] >= 0.95
    assert rec["f1"] >= 0.95
    assert trans_acc >= 0.80
    assert bench["elapsed"] < 600


def test_ablation_ordering(bench):
    d = bench["dir"]
    code, out = run_cli("ablate", "--data", d / "train.txt", "--test-data", d / "test.txt", "--epochs", 10)
    assert code == 0
    rows = {r["row"]: r for r in (json.loads(x) for x in out.splitlines() if x.startswith("{"))}
    no_dyn = rows["without dynamic features"]["accuracy"]
    full = rows["with all features"]["accuracy"]
    bench_acc = json.loads(bench["report"].splitlines()[-1])["accuracy"]
    record("ablation ordering", no_dyn <= full,
           f"without dynamic={no_dyn:.4f} <= with all={full:.4f}; "
           + " ".join(f"[{k}: {v['accuracy']:.4f}]" for k, v in rows.items()))
    assert no_dyn <= full
    assert full == bench_acc  # the all-features row is the plain train+eval run


def test_determinism(bench, tmp_path):
    tracks = load_tracks(bench["dir"] / "train.txt")[:40]
    data = tmp_path / "subset.txt"
    write_tracks(tracks, data)
    args = ["--data", data, "--epochs", 3, "--seed", 11]
    assert run_cli("train", *args, "--out", tmp_path / "a.bin")[0] == 0
    assert run_cli("train", *args, "--out", tmp_path / "b.bin")[0] == 0
    same = (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    same_final = (tmp_path / "a.bin.final").read_bytes() == (tmp_path / "b.bin.final").read_bytes()
    record("determinism", same and same_final, "two train runs: model and final files bitwise identical"
           if same and same_final else "model files differ")
    assert same and same_final


def test_serialization(bench, tmp_path):
    src = bench["dir"] / "model.bin"
    params, header = load_model(src, with_header=True)
    copy = tmp_path / "copy.bin"
    save_model(params, header["config"], copy)
    bytes_same = copy.read_bytes() == src.read_bytes()
    params_same = load_model(copy).equals(params)
    data = bench["dir"] / "test.txt"
    out_a = run_cli("infer", "--data", data, "--model", src)[1].splitlines()[1:]
    out_b = run_cli("infer", "--data", data, "--model", copy)[1].splitlines()[1:]
    ok = bytes_same and params_same and out_a == out_b
    record("serialization", ok, f"file bytes equal={bytes_same}, params equal={params_same}, "
           f"inference identical over {len(out_a)} frames={out_a == out_b}")
    assert ok
