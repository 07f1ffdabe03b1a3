import hashlib
import io
import json

import numpy as np
import pytest

from conftest import random_track
from pedmotion.data_io import (
    format_track_line,
    load_model,
    load_tracks,
    model_from_bytes,
    model_to_bytes,
    parse_track_line,
    read_tracks,
    save_model,
    split_dataset,
    write_tracks,
)
from pedmotion.errors import (
    ChecksumMismatch,
    DuplicateFrame,
    InsufficientData,
    ParseError,
    VersionUnsupported,
)
from pedmotion.network import forward_sequence, init_params
from pedmotion.skeleton import STANDING, UNKNOWN, WALKING, Track
from pedmotion.training import TrainConfig


def line(tid, frame, label, n=18, value=1.0):
    return ",".join([tid, str(frame), label] + [str(value)] * (3 * n))


def test_two_tracks_sorted(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("\n".join([
        "# pedmotion-tracks v1 fps=25",
        line("b", 3, "walking"),
        line("a", 1, "standing"),
        line("b", 1, "standing"),
        "",
        line("a", 0, "walking"),
    ]) + "\n")
    tracks = load_tracks(p)
    assert [t.track_id for t in tracks] == ["b", "a"]
    assert tracks[0].frame_indices.tolist() == [1, 3]
    assert tracks[0].labels.tolist() == [STANDING, WALKING]
    assert tracks[1].frame_indices.tolist() == [0, 1]
    assert tracks[0].fps == 25.0


def test_seventeen_triples_reports_line(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text(line("a", 0, "walking") + "\n" + line("a", 1, "walking", n=17) + "\n")
    with pytest.raises(ParseError) as info:
        load_tracks(p)
    assert info.value.line == 2
    assert "line 2" in str(info.value)


@pytest.mark.parametrize("bad, what", [
    ("a,x,walking", "frame"),
    ("a,-1,walking", "negative"),
    (",0,walking", "track_id"),
])
def test_bad_fields(bad, what):
    text = bad + "," + ",".join(["1.0"] * 54)
    with pytest.raises(ParseError, match=what):
        parse_track_line(text, 5)


def test_bad_numbers():
    vals = ["1.0"] * 54
    for bad in ("nan", "inf", "abc"):
        v = list(vals)
        v[4] = bad
        with pytest.raises(ParseError):
            parse_track_line("a,0,walking," + ",".join(v))
    v = list(vals)
    v[2] = "1.5"  # confidence
    with pytest.raises(ParseError, match="confidence"):
        parse_track_line("a,0,walking," + ",".join(v))


def test_duplicate_frame():
    text = line("a", 0, "walking") + "\n" + line("a", 0, "standing") + "\n"
    with pytest.raises(DuplicateFrame):
        read_tracks(io.StringIO(text))


def test_other_labels_are_unknown():
    tid, frame, code, _ = parse_track_line(line("a", 0, "crossing"))
    assert code == UNKNOWN
    assert parse_track_line(line("a", 0, "Walking"))[2] == WALKING


def test_newer_track_format_rejected():
    with pytest.raises(VersionUnsupported):
        read_tracks(io.StringIO("# pedmotion-tracks v9 fps=30\n"))


def test_write_read_round_trip(rng):
    tracks = [random_track(rng, track_id=f"t{i}") for i in range(5)]
    tracks[2] = tracks[2].replace(labels=np.full(len(tracks[2]), UNKNOWN))
    buf = io.StringIO()
    write_tracks(tracks, buf)
    back = read_tracks(io.StringIO(buf.getvalue()), impute=False)
    assert back == tracks


def test_format_line_exact():
    kp = np.full((18, 3), 0.1)
    kp[0, 0] = 1 / 3
    text = format_track_line("x", 4, WALKING, kp)
    assert parse_track_line(text)[3][0, 0] == 1 / 3


def test_loader_imputes():
    kp = np.full((2, 18, 3), 0.9)
    kp[0, 4, :2] = (7.0, 8.0)
    kp[1, 4] = (0.0, 0.0, 0.0)
    buf = io.StringIO()
    write_tracks([Track("a", kp, [0, 1], [WALKING, WALKING])], buf)
    t = read_tracks(io.StringIO(buf.getvalue()))[0]
    assert tuple(t.keypoints[1, 4]) == (7.0, 8.0, 0.3)


def test_split_examples():
    tracks = [Track(f"t{i}", np.zeros((1, 18, 3)), [0]) for i in range(10)]
    tr, va = split_dataset(tracks, 0.2, 1)
    assert len(tr) == 8 and len(va) == 2
    assert not {t.track_id for t in tr} & {t.track_id for t in va}
    tr2, va2 = split_dataset(tracks, 0.2, 1)
    assert [t.track_id for t in va2] == [t.track_id for t in va]
    a, b = split_dataset(tracks[:2], 0.5, 0)
    assert len(a) == 1 and len(b) == 1
    with pytest.raises(InsufficientData):
        split_dataset(tracks[:1], 0.5, 0)


def _trained_like(seed=0):
    p = init_params(seed)
    rng = np.random.default_rng(seed)
    for k in p.keys():
        p[k] = p[k] + rng.normal(0, 0.01, p[k].shape)
    return p


def test_model_round_trip_bitwise(tmp_path):
    p = _trained_like()
    path = tmp_path / "m.bin"
    save_model(p, TrainConfig().to_dict(), path)
    q, header = load_model(path, with_header=True)
    assert q.equals(p)
    assert header["config"]["lr0"] == 0.0002
    save_model(q, TrainConfig().to_dict(), tmp_path / "m2.bin")
    assert (tmp_path / "m2.bin").read_bytes() == path.read_bytes()
    X = np.random.default_rng(3).normal(size=(20, 72))
    assert np.array_equal(forward_sequence(X, p), forward_sequence(X, q))


def test_corrupt_byte_detected():
    data = bytearray(model_to_bytes(init_params(0)))
    data[len(data) // 2] ^= 0x01
    with pytest.raises(ChecksumMismatch):
        model_from_bytes(bytes(data))


def test_truncated_or_foreign_file():
    with pytest.raises(ChecksumMismatch):
        model_from_bytes(b"hello")


def test_version_gate():
    with pytest.raises(VersionUnsupported):
        model_from_bytes(model_to_bytes(init_params(0), format_version=999))


def test_shape_mismatch_rejected():
    data = model_to_bytes(init_params(0))
    body = data[:-32]
    nl = body.index(b"\n", 8)
    header = json.loads(body[8:nl])
    header["arch"]["hidden_dim"] = 32
    new_body = body[:8] + json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + body[nl:]
    with pytest.raises(VersionUnsupported):
        model_from_bytes(new_body + hashlib.sha256(new_body).digest())
