import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlscalib.geom import OutOfSpanError, Rotation3, Trajectory, rotation_from_euler
from mlscalib.georef import (
    MountConfig,
    RawReturn,
    ReturnStream,
    georeference_return,
    georeference_stream,
    scan_index,
    split_scans,
)
from mlscalib.simscene import default_scanner, enclosing_box_scene, simulate, straight_line


def static_traj(position=(0, 0, 0), yaw=0.0, span=(0.0, 1.0)):
    q = rotation_from_euler(yaw, 0, 0).as_quat()
    return Trajectory(list(span), [position, position], [q, q])


def ret(point, t=0.5):
    point = np.asarray(point, dtype=float)
    r = np.linalg.norm(point)
    return RawReturn(t, 0, point / r, r)


def test_identity_chain():
    p = georeference_return(ret([5, 0, 0]), static_traj(), MountConfig())
    np.testing.assert_allclose(p.position, [5, 0, 0], atol=1e-15)


def test_pure_lever_arm():
    p = georeference_return(ret([5, 0, 0]), static_traj(), MountConfig(lever_arm=[0.5, 0, 1.0]))
    np.testing.assert_allclose(p.position, [5.5, 0, 1.0], atol=1e-15)


def test_yawed_pose_with_lever_arm():
    traj = static_traj(position=(10, 0, 0), yaw=90)
    p = georeference_return(ret([2, 0, 0]), traj, MountConfig(lever_arm=[1, 0, 0]))
    rz = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    expected = np.array([10, 0, 0]) + rz @ (np.eye(3) @ np.eye(3) @ np.array([2, 0, 0]) + np.array([1, 0, 0]))
    np.testing.assert_allclose(expected, [10, 3, 0], atol=1e-15)
    np.testing.assert_allclose(p.position, expected, atol=1e-12)


def test_small_correction_displacement():
    traj = static_traj()
    a = georeference_return(ret([100, 0, 0]), traj, MountConfig())
    b = georeference_return(ret([100, 0, 0]), traj, MountConfig(correction=rotation_from_euler(0.6, 0, 0)))
    assert np.linalg.norm(a.position - b.position) == pytest.approx(2 * 100 * np.sin(np.radians(0.3)), rel=1e-12)


def test_out_of_span_return_raises():
    with pytest.raises(OutOfSpanError):
        georeference_return(ret([1, 0, 0], t=2.0), static_traj(), MountConfig())


def test_empty_stream():
    cloud, stats = georeference_stream(ReturnStream.empty(), static_traj(), MountConfig())
    assert len(cloud) == 0 and stats.dropped == 0


def test_all_returns_before_span_dropped():
    rs = ReturnStream.from_returns([ret([1, 0, 0], t=t) for t in (0.1, 0.2, 0.3)])
    cloud, stats = georeference_stream(rs, static_traj(span=(1.0, 2.0)), MountConfig())
    assert len(cloud) == 0 and stats.dropped == 3 and stats.kept == 0


def test_partial_drop_preserves_order():
    rs = ReturnStream.from_returns([ret([k + 1.0, 0, 0], t=t) for k, t in enumerate((0.5, 1.5, 2.5, 3.5))])
    cloud, stats = georeference_stream(rs, static_traj(span=(1.0, 3.0)), MountConfig())
    assert stats.dropped == 2
    np.testing.assert_allclose(cloud.positions[:, 0], [2, 3])
    np.testing.assert_allclose(cloud.t, [1.5, 2.5])


def test_one_revolution_in_enclosing_scene():
    scanner = default_scanner()
    traj = straight_line(1.0, speed=0.0, height=0.0).trajectory()
    res = simulate(enclosing_box_scene(), scanner, traj, MountConfig(), duration=0.1)
    assert len(res.returns) == 128_000
    cloud, stats = georeference_stream(res.returns, res.trajectory, res.mount)
    assert len(cloud) == 128_000 and stats.dropped == 0


def test_mount_rejects_long_lever_arm():
    with pytest.raises(ValueError):
        MountConfig(lever_arm=[20, 0, 0])


def test_invalid_return_rejected():
    with pytest.raises(ValueError):
        RawReturn(0, 0, [1, 1, 0], 3.0)
    with pytest.raises(ValueError):
        RawReturn(0, 0, [1, 0, 0], -1.0)


# ---------------------------------------------------------------- scans


def stream_at(ts):
    n = len(ts)
    return ReturnStream(ts, np.zeros(n), np.tile([1.0, 0, 0], (n, 1)), np.ones(n))


def test_scan_one_interval():
    scans = split_scans(stream_at([0.0, 0.05, 0.09]), t0=0.0)
    assert [s.index for s in scans] == [0] and len(scans[0].returns) == 3


def test_scan_boundary_half_open():
    scans = split_scans(stream_at([0.09, 0.10]), t0=0.0)
    assert [s.index for s in scans] == [0, 1]


def test_uniform_stream_gives_100_scans():
    rate = 20_000.0
    ts = np.arange(int(10.0 * rate)) / rate
    scans = split_scans(stream_at(ts))
    assert len(scans) == 100
    assert [s.index for s in scans] == list(range(100))
    assert sum(len(s.returns) for s in scans) == len(ts)


def test_empty_scans_omitted():
    scans = split_scans(stream_at([0.01, 0.55]))
    assert [s.index for s in scans] == [0, 5]


def test_unordered_stream_rejected():
    with pytest.raises(ValueError):
        split_scans(stream_at([0.2, 0.1]))


@settings(max_examples=100)
@given(
    st.lists(st.floats(0, 30, allow_nan=False), min_size=1, max_size=200),
    st.floats(-5, 5, allow_nan=False),
)
def test_split_partition(ts, t0):
    ts = np.sort(np.array(ts))
    scans = split_scans(stream_at(ts), t0=t0)
    got = np.concatenate([s.returns.t for s in scans])
    assert np.array_equal(got, ts)
    idx = [s.index for s in scans]
    assert idx == sorted(set(idx))
    for s in scans:
        assert np.all(scan_index(s.returns.t, t0) == s.index)


# ---------------------------------------------------------------- properties


def random_case(rng):
    n = 8
    t = np.sort(rng.uniform(0, 10, n))
    t[0], t[-1] = 0.0, 10.0
    quats = rng.normal(size=(n, 4))
    traj = Trajectory(t, rng.uniform(-1e3, 1e3, (n, 3)), quats)
    mount = MountConfig(
        rng.uniform(-2, 2, 3),
        rotation_from_euler(*rng.uniform(-180, 180, 3)),
        rotation_from_euler(*rng.uniform(-2, 2, 3)),
    )
    m = 50
    d = rng.normal(size=(m, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    rs = ReturnStream(np.sort(rng.uniform(0, 10, m)), np.zeros(m), d, rng.uniform(0.5, 120, m))
    return traj, mount, rs


def invert_chain(p, traj, mount, t):
    pos, mats = traj.poses(t)
    body = np.einsum("nji,nj->ni", mats, p - pos) - mount.lever_arm
    return body @ mount.sensor_to_ins  # row-vector form of (R_LiDAR R_C)^T body


def test_round_trip_recovers_sensor_points():
    rng = np.random.default_rng(0)
    for _ in range(20):
        traj, mount, rs = random_case(rng)
        cloud, _ = georeference_stream(rs, traj, mount)
        back = invert_chain(cloud.positions, traj, mount, rs.t)
        assert np.max(np.abs(back - rs.points)) < 1e-9


def test_translation_equivariance():
    rng = np.random.default_rng(1)
    for _ in range(20):
        traj, mount, rs = random_case(rng)
        off = rng.uniform(-100, 100, 3)
        a, _ = georeference_stream(rs, traj, mount)
        b, _ = georeference_stream(rs, traj.translated(off), mount)
        assert np.max(np.abs(b.positions - (a.positions + off))) < 1e-12 * max(1.0, np.abs(a.positions).max())


def test_identity_correction_equals_plain_direct_georeferencing():
    rng = np.random.default_rng(2)
    traj, mount, rs = random_case(rng)
    mount = MountConfig(mount.lever_arm, mount.boresight, Rotation3.identity())
    cloud, _ = georeference_stream(rs, traj, mount)
    # direct georeferencing without any correction term, one return at a time
    for i in range(len(rs)):
        s = traj.interpolate(rs.t[i])
        body = mount.boresight.matrix @ (rs.range[i] * rs.direction[i]) + mount.lever_arm
        expected = s.position + s.orientation.matrix @ body
        # independent evaluation order; agreement to a few ulp
        np.testing.assert_allclose(cloud.positions[i], expected, rtol=4e-16 * 4, atol=0)
    # the shared chain sees exactly the uncorrected boresight
    assert np.array_equal(mount.sensor_to_ins, mount.boresight.matrix)
    plain = MountConfig(mount.lever_arm, mount.boresight)
    again, _ = georeference_stream(rs, traj, plain)
    assert np.array_equal(again.positions, cloud.positions)


def test_single_and_stream_paths_agree():
    rng = np.random.default_rng(4)
    traj, mount, rs = random_case(rng)
    cloud, _ = georeference_stream(rs, traj, mount, t0=0.0, chunk=7)
    for i in range(len(rs)):
        g = georeference_return(rs[i], traj, mount)
        np.testing.assert_allclose(cloud.positions[i], g.position, rtol=0, atol=1e-12)
        assert cloud.scan_index[i] == g.scan_index
