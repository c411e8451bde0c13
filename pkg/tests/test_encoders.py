import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_take, rigid
from motionid import quat
from motionid.encoders import (EncodingKind, br_to_brv, encode, encode_br, encode_brv, encode_sr,
                               integrate_brv, read_features, write_features)
from motionid.take import Take


def _static(n=5, head=(0, 1.6, 0), head_rot=quat.IDENTITY):
    pos = np.tile(np.array([head, [-0.2, 1.1, 0.3], [0.25, 1.2, 0.3]], dtype=float), (n, 1, 1))
    wr = quat.from_axis_angle([1, 0, 0], 0.3)
    rot = np.tile(np.stack([np.asarray(head_rot, float), wr, wr]), (n, 1, 1))
    return Take.from_arrays("S", "t", 90.0, pos, rot)


def test_widths():
    take = random_take(0)
    assert encode_sr(take).rows.shape[1] == 21
    assert encode_br(take).rows.shape[1] == 18
    assert encode_brv(take).rows.shape == (len(take) - 1, 18)
    assert [k.width for k in EncodingKind] == [21, 18, 18]


def test_sr_is_verbatim():
    take = _static()
    assert np.array_equal(encode_sr(take).rows[0], take.data[0])


def test_sr_translation():
    take = random_take(1)
    moved = rigid(take, 5, 3, 0.0)
    diff = encode_sr(moved).rows - encode_sr(take).rows
    for dev in range(3):
        assert np.allclose(diff[:, 7 * dev:7 * dev + 3], [5, 0, 3])


def test_br_at_origin_matches_sr_wrists():
    take = _static(head=(0, 0, 0))
    br = encode_br(take).rows[0]
    sr = encode_sr(take).rows[0]
    assert np.allclose(br[:7], sr[7:14]) and np.allclose(br[7:14], sr[14:21])
    assert np.allclose(br[14:], quat.IDENTITY)


def test_head_residual_has_no_up_component():
    take = random_take(2)
    br = encode_br(take).rows
    assert np.all(br[:, 15] == 0.0)


def test_brv_static_and_constant_motion():
    brv = encode_brv(_static(6)).rows
    assert np.allclose(brv[:, [0, 1, 2, 7, 8, 9]], 0)
    for sl in (slice(3, 7), slice(10, 14), slice(14, 18)):
        assert np.allclose(brv[:, sl], quat.IDENTITY)
    take = _static(6)
    data = take.data.reshape(-1, 3, 7).copy()
    data[:, 1, 0] += 0.01 * np.arange(6)
    brv = encode_brv(take.with_data(data.reshape(-1, 21))).rows
    assert np.allclose(brv[:, 0], 0.01)


def test_brv_double_cover():
    br = np.zeros((2, 18))
    q = quat.from_axis_angle([0, 0, 1], 0.7)
    for sl in (slice(3, 7), slice(10, 14), slice(14, 18)):
        br[0, sl], br[1, sl] = q, -q
    out = br_to_brv(br)
    assert np.allclose(out[0, 3:7], quat.IDENTITY)


def test_brv_needs_two_frames():
    with pytest.raises(ValueError):
        encode_brv(_static(1))


@pytest.mark.parametrize("seed", range(10))
def test_integration_round_trip(seed):
    take = random_take(seed)
    br = encode_br(take).rows
    rebuilt = integrate_brv(br[0], encode_brv(take).rows)
    pos = [0, 1, 2, 7, 8, 9]
    assert np.allclose(rebuilt[:, pos], br[:, pos], atol=1e-6)
    for sl in (slice(3, 7), slice(10, 14), slice(14, 18)):
        assert np.allclose(quat.canonicalize(rebuilt[:, sl]), br[:, sl], atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(-10, 10), st.floats(-10, 10), st.floats(-np.pi, np.pi))
def test_rigid_invariance(seed, dx, dz, yaw):
    take = random_take(seed, n=20)
    moved = rigid(take, dx, dz, yaw)
    for kind in ("br", "brv"):
        assert np.allclose(encode(moved, kind).rows, encode(take, kind).rows, atol=1e-6)
    if abs(dx) + abs(dz) + abs(yaw) > 1e-3:
        assert not np.allclose(encode_sr(moved).rows, encode_sr(take).rows, atol=1e-6)


def test_full_head_frame_variant_is_invariant_too():
    take = random_take(3)
    moved = rigid(take, 2, -1, 1.2)
    a = encode_br(take, frame="head").rows
    b = encode_br(moved, frame="head").rows
    assert np.allclose(a, b, atol=1e-6)
    assert not np.allclose(a, encode_br(take).rows)


def test_feature_file_round_trip(tmp_path):
    seq = encode_br(random_take(4))
    write_features(seq, tmp_path / "f.csv")
    back = read_features(tmp_path / "f.csv", seq.subject_id, seq.take_id, "br", seq.fps)
    assert np.array_equal(back.rows, seq.rows)
