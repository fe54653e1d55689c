"""Readers and writers for .flo, .sf3 and binary PGM files."""

import os
import re

import numpy as np

from .exceptions import FlowFormatError, TruncatedFileError
from .flow import DepthFrame, FlowField2D, FrameGray, SceneFlowField
from .utils import atomic_write

FLO_MAGIC = 202021.25
SF3_MAGIC = b"SF3\0"


def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _require(data: bytes, size: int, path: str):
    if len(data) < size:
        raise TruncatedFileError(f"{path}: expected {size} bytes, found {len(data)}")


def write_flo(path: str, flow: FlowField2D):
    header = np.array([FLO_MAGIC], dtype="<f4").tobytes()
    header += np.array([flow.width, flow.height], dtype="<i4").tobytes()
    data = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    with atomic_write(path) as f:
        f.write(header)
        f.write(data.tobytes())


def read_flo(path: str) -> FlowField2D:
    """Middlebury .flo: float magic, int32 width, int32 height, interleaved (u, v) float32."""
    data = _read_bytes(path)
    _require(data, 12, path)
    magic = np.frombuffer(data, dtype="<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"{path}: bad .flo magic {magic}")
    width, height = (int(n) for n in np.frombuffer(data, dtype="<i4", count=2, offset=4))
    if width < 0 or height < 0:
        raise FlowFormatError(f"{path}: bad .flo size {width}x{height}")
    _require(data, 12 + 8 * width * height, path)
    uv = np.frombuffer(data, dtype="<f4", count=2 * width * height, offset=12)
    uv = uv.reshape(height, width, 2).astype(np.float64)
    return FlowField2D(uv[..., 0].copy(), uv[..., 1].copy())


def write_sf3(path: str, scene_flow: SceneFlowField):
    header = SF3_MAGIC + np.array([scene_flow.width, scene_flow.height], dtype="<u4").tobytes()
    data = scene_flow.stacked().astype("<f4")
    with atomic_write(path) as f:
        f.write(header)
        f.write(data.tobytes())


def read_sf3(path: str) -> SceneFlowField:
    """Magic SF3\\0, uint32 width, uint32 height, (dX, dY, dZ) float32 triples; NaN is invalid."""
    data = _read_bytes(path)
    _require(data, 12, path)
    if data[:4] != SF3_MAGIC:
        raise FlowFormatError(f"{path}: bad .sf3 magic {data[:4]!r}")
    width, height = (int(n) for n in np.frombuffer(data, dtype="<u4", count=2, offset=4))
    _require(data, 12 + 12 * width * height, path)
    xyz = np.frombuffer(data, dtype="<f4", count=3 * width * height, offset=12)
    xyz = xyz.reshape(height, width, 3).astype(np.float64)
    return SceneFlowField(xyz[..., 0].copy(), xyz[..., 1].copy(), xyz[..., 2].copy())


_PGM_HEADER = re.compile(rb"P5(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def read_pgm(path: str) -> np.ndarray:
    """Binary PGM; maxval < 256 gives uint8, otherwise big-endian uint16."""
    data = _read_bytes(path)
    m = _PGM_HEADER.match(data)
    if not m:
        raise FlowFormatError(f"{path}: not a binary PGM")
    width, height, maxval = (int(g) for g in m.groups())
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    _require(data, m.end() + width * height * dtype.itemsize, path)
    pixels = np.frombuffer(data, dtype=dtype, count=width * height, offset=m.end())
    return pixels.reshape(height, width)


def write_pgm(path: str, pixels: np.ndarray):
    if pixels.dtype == np.uint8:
        maxval, raw = 255, pixels.tobytes()
    elif pixels.dtype == np.uint16:
        maxval, raw = 65535, pixels.astype(">u2").tobytes()
    else:
        raise FlowFormatError(f"PGM pixels must be uint8 or uint16, got {pixels.dtype}")
    height, width = pixels.shape
    with atomic_write(path) as f:
        f.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        f.write(raw)


def read_frame(path: str) -> FrameGray:
    return FrameGray(read_pgm(path).astype(np.float64) / 255.0)


def write_frame(path: str, frame: FrameGray):
    write_pgm(path, np.round(np.clip(frame.intensity, 0, 1) * 255).astype(np.uint8))


def read_depth(path: str) -> DepthFrame:
    """16-bit millimeters on disk, meters in memory; 0 on disk is invalid."""
    mm = read_pgm(path).astype(np.float64)
    return DepthFrame(np.where(mm > 0, mm / 1000.0, np.nan))


def write_depth(path: str, depth: DepthFrame):
    mm = np.where(np.isfinite(depth.meters), np.round(depth.meters * 1000.0), 0)
    write_pgm(path, np.clip(mm, 0, 65535).astype(np.uint16))


def list_frames(directory: str, suffix: str = ".pgm"):
    if not os.path.isdir(directory):
        return []
    return sorted(
        os.path.join(directory, name)
        for name in os.listdir(directory)
        if name.endswith(suffix) and not name.startswith(".")
    )
