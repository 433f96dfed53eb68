"""Map loading and the in-memory map cache of the prediction service."""

import pytest

from app.errors import ScenarioError
from app.services.prediction_service import PredictionService
from app.settings import settings


def test_cached_map_is_reused():
    service = PredictionService()

    first = service.load_terrain_map("flat", voxel_size=0.2)

    assert service.load_terrain_map("flat", voxel_size=0.2) is first
    assert service.load_terrain_map("flat", voxel_size=0.25) is not first


def test_cache_drops_the_least_recently_used_map(monkeypatch):
    monkeypatch.setattr(settings, "max_cached_maps", 2)
    service = PredictionService()

    flat = service.load_terrain_map("flat", voxel_size=0.2)
    service.load_terrain_map("curb", voxel_size=0.2)
    service.load_terrain_map("flat", voxel_size=0.2)
    service.load_terrain_map("hurdles", voxel_size=0.2)

    assert [key[0] for key in service.maps] == ["flat", "hurdles"]
    assert service.load_terrain_map("flat", voxel_size=0.2) is flat


def test_unknown_terrain_is_rejected():
    with pytest.raises(ScenarioError):
        PredictionService().load_terrain_map("nowhere")
