"""
API Tests
Health, metrics and inference endpoints through the FastAPI test client
"""

import math

import pytest
from fastapi.testclient import TestClient

from conftest import tiny_run_config
from equipose.ai.network import build_model
from equipose.database.checkpoint_store import save_checkpoint
from equipose.main import app
from equipose.services import inference_service


@pytest.fixture
def client(monkeypatch):
    monkeypatch.setattr(inference_service, "EQUIPOSE_CHECKPOINT", None)
    monkeypatch.setattr(inference_service, "_inference_service", None)
    return TestClient(app)


@pytest.fixture
def loaded_client(monkeypatch, tmp_path):
    config = tiny_run_config()
    directory = save_checkpoint(tmp_path / "ckpt", build_model(config.model, 0), config, step=0)
    monkeypatch.setattr(inference_service, "EQUIPOSE_CHECKPOINT", str(directory))
    monkeypatch.setattr(inference_service, "_inference_service", None)
    return TestClient(app)


def test_root_and_health(client):
    assert client.get("/").json()["status"] == "running"
    health = client.get("/health").json()
    assert health["status"] == "healthy"
    assert health["group_size"] == 60
    assert health["checkpoint_available"] is False
    assert health["routes_available"] == {"metrics": True, "inference": True}


def test_iou_endpoint(client):
    cube = {"extents": [1.0, 1.0, 1.0]}
    shifted = {"pose": {"translation": [0.5, 0.0, 0.0]}, "extents": [1.0, 1.0, 1.0]}
    assert client.post("/api/v1/metrics/iou", json={"a": cube, "b": cube}).json() == {"iou": 1.0}
    response = client.post("/api/v1/metrics/iou", json={"a": cube, "b": shifted})
    assert response.json()["iou"] == pytest.approx(1.0 / 3.0)
    flat = {"extents": [1.0, 0.0, 1.0]}
    assert client.post("/api/v1/metrics/iou", json={"a": cube, "b": flat}).status_code == 422


def test_pose_error_endpoint(client):
    quarter = [math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)]
    body = {"pred": {"rotation": quarter, "translation": [0.03, 0.04, 0.0]}, "gt": {}}
    result = client.post("/api/v1/metrics/pose-error", json=body).json()
    assert result["rotation_error_deg"] == pytest.approx(90.0)
    assert result["translation_error_cm"] == pytest.approx(5.0)
    body["symmetry_axis"] = [0.0, 0.0, 1.0]
    assert client.post("/api/v1/metrics/pose-error", json=body).json()["rotation_error_deg"] == \
        pytest.approx(0.0, abs=1e-5)
    body["symmetry_axis"] = [0.0, 0.0, 0.0]
    assert client.post("/api/v1/metrics/pose-error", json=body).status_code == 400


def test_chamfer_endpoint(client):
    body = {"a": [[0.0, 0.0, 0.0]], "b": [[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]}
    result = client.post("/api/v1/metrics/chamfer", json=body).json()
    assert result["chamfer"] == pytest.approx(11.0)
    assert result["cd"] == pytest.approx(1.5)
    assert client.post("/api/v1/metrics/chamfer", json={"a": [], "b": body["b"]}).status_code == 400


def test_infer_without_checkpoint(client):
    body = {"objects": [{"observed": [[0.0, 0.0, 1.0]], "prior": [[0.0, 0.0, 0.0]]}]}
    response = client.post("/api/v1/infer", json=body)
    assert response.status_code == 503


def test_infer_with_checkpoint(loaded_client, rng):
    observed = (0.1 * rng.standard_normal((40, 3)) + [0.0, 0.0, 1.0]).tolist()
    prior = (0.2 * rng.standard_normal((32, 3))).tolist()
    body = {"objects": [{"instance_id": "mug", "observed": observed, "prior": prior}], "include_shape": True}
    response = loaded_client.post("/api/v1/infer", json=body)
    assert response.status_code == 200
    result = response.json()
    assert result["phase"] == "pretrain"
    (item,) = result["objects"]
    assert item["instance_id"] == "mug"
    assert sum(v * v for v in item["quaternion"]) == pytest.approx(1.0)
    assert item["scale"] > 0
    assert len(item["shape"]) == 32
    again = loaded_client.post("/api/v1/infer", json=body).json()["objects"][0]
    assert again["quaternion"] == item["quaternion"] and again["shape"] == item["shape"]
    health = loaded_client.get("/health").json()
    assert health["checkpoint_available"] is True and health["group_size"] == 12


def test_infer_rejects_empty_request(loaded_client):
    assert loaded_client.post("/api/v1/infer", json={"objects": []}).status_code == 400
    bad = {"objects": [{"observed": [[0.0, 0.0]], "prior": [[0.0, 0.0, 0.0]]}]}
    assert loaded_client.post("/api/v1/infer", json=bad).status_code == 422
