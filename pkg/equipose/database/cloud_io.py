"""
Point Cloud Files
PLY through Open3D and the EPC1 little-endian binary container
"""

import os
import tempfile
from pathlib import Path
from typing import Union

import numpy as np
import open3d as o3d

from ..geometry.pointcloud import PointCloud
from .file_store import atomic_write_bytes

EPC_MAGIC = b"EPC1"
NORMALS_BIT = 1 << 0
COLORS_BIT = 1 << 1
FEATURE_SHIFT = 16
MAX_FEATURE_WIDTH = 0xFFFF
HEADER_BYTES = 12


# EPC1: magic, u32 N, u32 channel mask, then f32 coords, normals, colors, features
def encode_epc(cloud: PointCloud) -> bytes:
    width = cloud.feature_width
    if width > MAX_FEATURE_WIDTH:
        raise ValueError(f"feature width {width} does not fit the EPC1 channel mask")
    mask = width << FEATURE_SHIFT
    blocks = [cloud.coords]
    if cloud.normals is not None:
        mask |= NORMALS_BIT
        blocks.append(cloud.normals)
    if cloud.colors is not None:
        mask |= COLORS_BIT
        blocks.append(cloud.colors)
    if cloud.features is not None:
        blocks.append(cloud.features)
    header = EPC_MAGIC + np.array([cloud.n_points, mask], dtype="<u4").tobytes()
    payload = b"".join(np.ascontiguousarray(block, dtype="<f4").tobytes() for block in blocks)
    return header + payload


def decode_epc(data: bytes) -> PointCloud:
    if len(data) < HEADER_BYTES or data[:4] != EPC_MAGIC:
        raise ValueError("not an EPC1 point cloud (bad magic)")
    n, mask = (int(v) for v in np.frombuffer(data, dtype="<u4", count=2, offset=4))
    width = mask >> FEATURE_SHIFT
    layout = [("coords", 3)]
    if mask & NORMALS_BIT:
        layout.append(("normals", 3))
    if mask & COLORS_BIT:
        layout.append(("colors", 3))
    if width:
        layout.append(("features", width))
    expected = HEADER_BYTES + 4 * n * sum(w for _, w in layout)
    if len(data) != expected:
        raise ValueError(f"EPC1 payload is {len(data)} bytes, expected {expected}")
    channels = {}
    offset = HEADER_BYTES
    for name, w in layout:
        block = np.frombuffer(data, dtype="<f4", count=n * w, offset=offset).reshape(n, w)
        channels[name] = block.astype(np.float64)
        offset += 4 * n * w
    if "normals" in channels:
        # f32 storage moves unit normals off the sphere by ~1e-7
        norms = np.linalg.norm(channels["normals"], axis=1, keepdims=True)
        channels["normals"] = channels["normals"] / np.where(norms > 0, norms, 1.0)
    return PointCloud(**channels)


def write_epc(path: Union[str, Path], cloud: PointCloud) -> Path:
    return atomic_write_bytes(path, encode_epc(cloud))


def read_epc(path: Union[str, Path]) -> PointCloud:
    return decode_epc(Path(path).read_bytes())


def write_ply(path: Union[str, Path], cloud: PointCloud, ascii: bool = False) -> Path:
    """
    Write a PLY file through Open3D.

    Binary PLY keeps x,y,z and nx,ny,nz as doubles; ASCII output is rounded by Open3D's
    printf formatting. Colors are stored as uchar and features are dropped.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcd = o3d.geometry.PointCloud()
    pcd.points = o3d.utility.Vector3dVector(np.ascontiguousarray(cloud.coords, dtype=np.float64))
    if cloud.normals is not None:
        pcd.normals = o3d.utility.Vector3dVector(np.ascontiguousarray(cloud.normals, dtype=np.float64))
    if cloud.colors is not None:
        pcd.colors = o3d.utility.Vector3dVector(np.ascontiguousarray(cloud.colors, dtype=np.float64))
    # Open3D picks the writer from the suffix, so the temp file keeps ".ply"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.stem}.", suffix=".ply", dir=path.parent)
    os.close(fd)
    try:
        if not o3d.io.write_point_cloud(tmp, pcd, write_ascii=ascii):
            raise OSError(f"Open3D could not write {path}")
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_ply(path: Union[str, Path]) -> PointCloud:
    """Read an ASCII or binary PLY through Open3D; normals are renormalized."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    pcd = o3d.io.read_point_cloud(str(path), format="ply")
    if not pcd.has_points():
        raise ValueError(f"{path} holds no readable PLY vertices")
    coords = np.asarray(pcd.points, dtype=np.float64).copy()
    normals = None
    if pcd.has_normals():
        normals = np.asarray(pcd.normals, dtype=np.float64).copy()
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / np.where(norms > 0, norms, 1.0)
    colors = None
    if pcd.has_colors():
        colors = np.clip(np.asarray(pcd.colors, dtype=np.float64), 0.0, 1.0)
    return PointCloud(coords=coords, normals=normals, colors=colors)
