"""On-disk formats.

Returns CSV
    header ``t,beam_id,dir_x,dir_y,dir_z,range``; floats written with 17
    significant digits so values round-trip exactly.
Returns binary
    8-byte magic ``MLSR0001`` followed by fixed 48-byte little-endian
    records: t (f8), beam_id (i8), dir_x, dir_y, dir_z (f8), range (f8).
Trajectory CSV
    header ``t,x,y,z,qw,qx,qy,qz``; body-to-world unit quaternion.
Point clouds
    PLY (``ascii`` or ``binary_little_endian``) with vertex properties
    ``double x, y, z, t`` and ``int beam_id``; or CSV ``x,y,z,t,beam_id``.
Ground truth
    JSON object, see :class:`mlscalib.simscene.GroundTruth`.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geom import Trajectory
from .georef import ReturnStream
from .scatter import GeoPointCloud
from .simscene import GroundTruth

RETURNS_HEADER = "t,beam_id,dir_x,dir_y,dir_z,range"
TRAJECTORY_HEADER = "t,x,y,z,qw,qx,qy,qz"
POINTS_HEADER = "x,y,z,t,beam_id"
RETURNS_MAGIC = b"MLSR0001"
RETURN_RECORD = np.dtype(
    [("t", "<f8"), ("beam_id", "<i8"), ("dx", "<f8"), ("dy", "<f8"), ("dz", "<f8"), ("range", "<f8")]
)
assert RETURN_RECORD.itemsize == 48

_F = "%.17g"


class FormatError(ValueError):
    pass


def _read_csv(path, header: str, ncols: int) -> np.ndarray:
    path = Path(path)
    with path.open("r") as fh:
        first = fh.readline().strip()
        if first != header:
            raise FormatError(f"{path}: expected header {header!r}, got {first!r}")
        body = fh.read()
    if not body.strip():
        return np.empty((0, ncols))
    data = np.loadtxt(body.splitlines(), delimiter=",", dtype=float, ndmin=2)
    if data.shape[1] != ncols:
        raise FormatError(f"{path}: expected {ncols} columns, got {data.shape[1]}")
    return data


def _write_rows(fh, cols, fmts):
    if len(cols[0]) == 0:
        return
    np.savetxt(fh, np.column_stack(cols), fmt=fmts, delimiter=",")


def write_returns_csv(path, returns: ReturnStream, mode: str = "w"):
    with open(path, mode) as fh:
        if mode == "w":
            fh.write(RETURNS_HEADER + "\n")
        cols = [returns.t, returns.beam_id, *returns.direction.T, returns.range]
        _write_rows(fh, cols, [_F, "%d", _F, _F, _F, _F])


def read_returns_csv(path) -> ReturnStream:
    d = _read_csv(path, RETURNS_HEADER, 6)
    return ReturnStream(d[:, 0], d[:, 1].astype(np.int64), d[:, 2:5], d[:, 5])


def write_returns_bin(path, returns: ReturnStream, mode: str = "wb"):
    rec = np.empty(len(returns), dtype=RETURN_RECORD)
    rec["t"], rec["beam_id"], rec["range"] = returns.t, returns.beam_id, returns.range
    rec["dx"], rec["dy"], rec["dz"] = returns.direction.T
    with open(path, mode) as fh:
        if mode == "wb":
            fh.write(RETURNS_MAGIC)
        fh.write(rec.tobytes())


def read_returns_bin(path) -> ReturnStream:
    raw = Path(path).read_bytes()
    if raw[:8] != RETURNS_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}")
    body = raw[8:]
    if len(body) % RETURN_RECORD.itemsize:
        raise FormatError(f"{path}: truncated record")
    rec = np.frombuffer(body, dtype=RETURN_RECORD)
    return ReturnStream(rec["t"], rec["beam_id"], np.column_stack([rec["dx"], rec["dy"], rec["dz"]]), rec["range"])


def read_returns(path) -> ReturnStream:
    with open(path, "rb") as fh:
        head = fh.read(8)
    return read_returns_bin(path) if head == RETURNS_MAGIC else read_returns_csv(path)


def write_trajectory_csv(path, traj: Trajectory):
    with open(path, "w") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        _write_rows(fh, [traj.t, *traj.positions.T, *traj.quats.T], _F)


def read_trajectory_csv(path) -> Trajectory:
    d = _read_csv(path, TRAJECTORY_HEADER, 8)
    return Trajectory(d[:, 0], d[:, 1:4], d[:, 4:8])


def write_points_csv(path, cloud: GeoPointCloud):
    with open(path, "w") as fh:
        fh.write(POINTS_HEADER + "\n")
        _write_rows(fh, [*cloud.positions.T, cloud.t, cloud.beam_id], [_F, _F, _F, _F, "%d"])


def read_points_csv(path) -> GeoPointCloud:
    d = _read_csv(path, POINTS_HEADER, 5)
    return GeoPointCloud(d[:, :3], t=d[:, 3], beam_id=d[:, 4].astype(np.int64))


_PLY_VERTEX = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("t", "<f8"), ("beam_id", "<i4")])


def write_ply(path, cloud: GeoPointCloud, binary: bool = True):
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(cloud)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property double t\nproperty int beam_id\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            v = np.empty(len(cloud), dtype=_PLY_VERTEX)
            v["x"], v["y"], v["z"] = cloud.positions.T
            v["t"], v["beam_id"] = cloud.t, cloud.beam_id
            fh.write(v.tobytes())
        elif len(cloud):
            np.savetxt(
                fh, np.column_stack([cloud.positions, cloud.t, cloud.beam_id]), fmt=[_F, _F, _F, _F, "%d"], delimiter=" "
            )


def read_ply(path) -> GeoPointCloud:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n") :]
    fmt = next(line.split()[1] for line in header if line.startswith("format"))
    count = next(int(line.split()[2]) for line in header if line.startswith("element vertex"))
    props = [line.split()[2] for line in header if line.startswith("property")]
    if props != ["x", "y", "z", "t", "beam_id"]:
        raise FormatError(f"{path}: unsupported vertex layout {props}")
    if fmt == "binary_little_endian":
        v = np.frombuffer(body, dtype=_PLY_VERTEX, count=count)
        return GeoPointCloud(np.column_stack([v["x"], v["y"], v["z"]]), t=v["t"], beam_id=v["beam_id"])
    if fmt == "ascii":
        if count == 0:
            return GeoPointCloud(np.empty((0, 3)))
        d = np.loadtxt(body.decode("ascii").splitlines(), ndmin=2)
        return GeoPointCloud(d[:, :3], t=d[:, 3], beam_id=d[:, 4].astype(np.int64))
    raise FormatError(f"{path}: unsupported PLY format {fmt}")


def write_cloud(path, cloud: GeoPointCloud, fmt: str | None = None):
    fmt = fmt or _cloud_fmt(path)
    if fmt == "csv":
        write_points_csv(path, cloud)
    elif fmt in ("ply", "ply-binary"):
        write_ply(path, cloud, binary=True)
    elif fmt == "ply-ascii":
        write_ply(path, cloud, binary=False)
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")


def read_cloud(path) -> GeoPointCloud:
    return read_points_csv(path) if _cloud_fmt(path) == "csv" else read_ply(path)


def _cloud_fmt(path) -> str:
    return "csv" if str(path).lower().endswith(".csv") else "ply"


def write_truth(path, truth: GroundTruth):
    Path(path).write_text(json.dumps(truth.to_dict(), indent=2, sort_keys=True) + "\n")


def read_truth(path) -> GroundTruth:
    return GroundTruth.from_dict(json.loads(Path(path).read_text()))
