"""Binary cache for built ESDF maps.

Layout (little endian): magic b"ESDFMAP\\0", version byte, origin (3 x f8),
voxel_size (f8), dims (3 x u4), distances (f8, C order).
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from app.errors import MapCacheError
from app.sdf_map import EsdfMap

logger = logging.getLogger(__name__)

MAGIC = b"ESDFMAP\0"
VERSION = 1
_HEADER = struct.Struct("<8sB3dd3I")


def save_map(esdf: EsdfMap, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(MAGIC, VERSION, *esdf.origin, esdf.voxel_size, *esdf.dims)
    with path.open("wb") as f:
        f.write(header)
        f.write(esdf.distances.astype("<f8", copy=False).tobytes(order="C"))
    logger.info("Saved map %s (dims=%s)", path, esdf.dims)
    return path


def load_map(path: str | Path) -> EsdfMap:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise MapCacheError(f"Cannot read map cache {path}: {e}") from e
    if len(raw) < _HEADER.size:
        raise MapCacheError(f"{path}: truncated header")
    magic, version, ox, oy, oz, voxel_size, nx, ny, nz = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MapCacheError(f"{path}: not an ESDF map cache")
    if version != VERSION:
        raise MapCacheError(f"{path}: unsupported cache version {version}")
    count = nx * ny * nz
    body = raw[_HEADER.size :]
    if len(body) != count * 8:
        raise MapCacheError(f"{path}: expected {count} distances, found {len(body) // 8}")
    distances = np.frombuffer(body, dtype="<f8").reshape(nx, ny, nz).astype(float)
    try:
        return EsdfMap(origin=(ox, oy, oz), voxel_size=voxel_size, distances=distances)
    except ValueError as e:
        raise MapCacheError(f"{path}: {e}") from e
