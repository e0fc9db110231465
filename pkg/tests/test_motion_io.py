import numpy as np
import pytest

from loopmotion.errors import DataError
from loopmotion.motion import GlobalMotion, RelativeMotion, hold_pose, identity_anchor
from loopmotion.motion_io import load_motion, save_motion


def test_relative_round_trip(tmp_path, sk13):
    rng = np.random.default_rng(0)
    feats = rng.normal(0, 1, (9, sk13.feature_width)).astype(np.float32)
    path = tmp_path / "m.lmo"
    save_motion(path, RelativeMotion(feats), 13, 20.0)
    motion, joints, fps = load_motion(path)
    assert isinstance(motion, RelativeMotion)
    assert joints == 13 and fps == 20.0
    assert np.array_equal(motion.features.astype(np.float32), feats)


def test_global_round_trip(tmp_path, sk13):
    held = hold_pose(sk13, identity_anchor(sk13), 4)
    path = tmp_path / "g.lmo"
    save_motion(path, held, 13, 20.0)
    motion, joints, _ = load_motion(path)
    assert isinstance(motion, GlobalMotion)
    assert np.allclose(motion.positions, held.positions, atol=1e-6)


def test_width_mismatch_rejected(tmp_path):
    with pytest.raises(DataError):
        save_motion(tmp_path / "x.lmo", RelativeMotion(np.zeros((2, 10))), 13, 20.0)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_motion("/nonexistent/nothing.lmo")


def test_truncated_file_names_offset(tmp_path, sk13):
    held = hold_pose(sk13, identity_anchor(sk13), 4)
    path = tmp_path / "t.lmo"
    save_motion(path, held, 13, 20.0)
    raw = path.read_bytes()
    cut = len(raw) - 17
    path.write_bytes(raw[:cut])
    with pytest.raises(DataError) as err:
        load_motion(path)
    assert f"byte {cut}" in str(err.value)


def test_bad_magic(tmp_path):
    path = tmp_path / "b.lmo"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(DataError):
        load_motion(path)
