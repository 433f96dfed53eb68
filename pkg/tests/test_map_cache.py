import numpy as np
import pytest

from app.errors import MapCacheError
from app.map_cache import load_map, save_map
from app.sdf_map import EsdfMap


def _map():
    d = np.random.default_rng(0).normal(size=(4, 5, 6))
    return EsdfMap(origin=(-1.0, 0.5, -0.25), voxel_size=0.05, distances=d)


def test_save_and_load(tmp_path):
    esdf = _map()
    path = save_map(esdf, tmp_path / "maps" / "m.esdf")

    loaded = load_map(path)

    np.testing.assert_array_equal(loaded.origin, esdf.origin)
    assert loaded.voxel_size == esdf.voxel_size
    np.testing.assert_array_equal(loaded.distances, esdf.distances)


def test_bad_magic(tmp_path):
    path = save_map(_map(), tmp_path / "m.esdf")
    raw = bytearray(path.read_bytes())
    raw[:8] = b"NOTAMAP!"
    path.write_bytes(bytes(raw))

    with pytest.raises(MapCacheError, match="not an ESDF"):
        load_map(path)


def test_unknown_version(tmp_path):
    path = save_map(_map(), tmp_path / "m.esdf")
    raw = bytearray(path.read_bytes())
    raw[8] = 99
    path.write_bytes(bytes(raw))

    with pytest.raises(MapCacheError, match="version"):
        load_map(path)


def test_truncated_body(tmp_path):
    path = save_map(_map(), tmp_path / "m.esdf")
    path.write_bytes(path.read_bytes()[:-8])

    with pytest.raises(MapCacheError):
        load_map(path)


def test_missing_file(tmp_path):
    with pytest.raises(MapCacheError):
        load_map(tmp_path / "nope.esdf")
