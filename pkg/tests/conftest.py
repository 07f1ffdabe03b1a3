import io
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pedmotion import cli  # noqa: E402
from pedmotion.skeleton import N_KEYPOINTS, Track  # noqa: E402
from pedmotion.synthgait import REST_POSE  # noqa: E402

# criterion name -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def record(name, passed, detail=""):
    ACCEPTANCE[name] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def run_cli(*argv):
    """Run the CLI in-process; returns (exit code, stdout text)."""
    buf = io.StringIO()
    code = cli.main([str(a) for a in argv], out=buf)
    return code, buf.getvalue()


def random_pose(rng, min_hip=10.0, p_invalid=0.0):
    """Jittered rest pose at a random scale and place; (18, 3)."""
    while True:
        scale = rng.uniform(30.0, 200.0)
        xy = REST_POSE * scale + rng.normal(0.0, 0.12 * scale, size=(N_KEYPOINTS, 2))
        xy += rng.uniform(-500.0, 1500.0, size=2)
        if np.hypot(*(xy[11] - xy[8])) >= min_hip:
            break
    conf = rng.uniform(0.3, 1.0, size=N_KEYPOINTS)
    if p_invalid:
        drop = rng.random(N_KEYPOINTS) < p_invalid
        conf[drop] = rng.uniform(0.0, 0.29, size=drop.sum())
    return np.concatenate([xy, conf[:, None]], axis=1)


def random_track(rng, T=None, p_invalid=0.1, p_degenerate=0.05, track_id="r"):
    """Random walk of a pose with missing points and some unusable frames."""
    T = T if T is not None else int(rng.integers(1, 40))
    base = random_pose(rng, min_hip=0.0)
    kps = []
    cur = base.copy()
    for _ in range(T):
        cur = cur.copy()
        cur[:, :2] += rng.normal(0.0, 3.0, size=(N_KEYPOINTS, 2))
        kp = cur.copy()
        kp[:, 2] = rng.uniform(0.3, 1.0, size=N_KEYPOINTS)
        drop = rng.random(N_KEYPOINTS) < p_invalid
        kp[drop, 2] = rng.uniform(0.0, 0.29, size=drop.sum())
        if rng.random() < p_degenerate:
            kp[:, 2] = 0.0  # nothing valid
        kps.append(kp)
    frames = np.cumsum(rng.integers(1, 3, size=T))
    labels = rng.integers(0, 2, size=T)
    return Track(track_id, np.array(kps), frames, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
