import pytest
from fastapi.testclient import TestClient

from disprod.service import app

client = TestClient(app)


def test_health():
    resp = client.get("/health")
    assert resp.status_code == 200 and resp.json()["status"] == "ok"


def test_envs_lists_catalog():
    body = client.get("/envs").json()
    assert "mountain_car_sparse" in body and body["mountain_car_sparse"]["beta"] == 10.0


def test_plan_disprod():
    resp = client.post(
        "/plan",
        json={"env": "pendulum", "state": [0.3, 0.0], "settings": {"depth": 4, "restarts": 6}, "seed": 1},
    )
    assert resp.status_code == 200
    body = resp.json()
    assert -2.0 <= body["action"][0] <= 2.0
    assert len(body["saved_mean"]) == 3
    assert body["diagnostics"]["iterations"] >= 1

    again = client.post(
        "/plan",
        json={
            "env": "pendulum",
            "state": [0.3, 0.0],
            "settings": {"depth": 4, "restarts": 6},
            "saved_mean": body["saved_mean"],
            "saved_var": body["saved_var"],
        },
    )
    assert again.status_code == 200


@pytest.mark.parametrize("planner", ["cem", "mppi"])
def test_plan_shooting(planner):
    resp = client.post(
        "/plan",
        json={"env": "cartpole", "state": [0, 0, 0.01, 0], "planner": planner, "settings": {"depth": 3, "population": 8, "iterations": 1}},
    )
    assert resp.status_code == 200
    assert "best_return" in resp.json()["diagnostics"]


@pytest.mark.parametrize(
    "payload",
    [
        {"env": "acrobot", "state": [0.0]},
        {"env": "pendulum", "state": [0.0]},
        {"env": "pendulum", "state": [0.0, 0.0], "settings": {"restarts": 0}},
        {"env": "pendulum", "state": [0.0, 0.0], "settings": {"bogus": 1}},
    ],
)
def test_plan_rejects_bad_requests(payload):
    assert client.post("/plan", json=payload).status_code == 422


def test_plan_rejects_extra_fields():
    assert client.post("/plan", json={"env": "pendulum", "state": [0, 0], "colour": "red"}).status_code == 422


def test_experiment_endpoint():
    spec = {
        "env": {"name": "pendulum", "params": {"alpha": 0.2}},
        "planner": {"kind": "cem", "settings": {"depth": 2, "population": 4, "iterations": 1}},
        "episode_cap": 2,
        "sweep": {"axis": "alpha", "values": [0.0, 0.5]},
    }
    resp = client.post("/experiments", json=spec)
    assert resp.status_code == 200
    body = resp.json()
    assert len(body["rows"]) == 2 and not body["partial"]


def test_experiment_validation():
    resp = client.post("/experiments", json={"env": {"name": "pendulum"}})
    assert resp.status_code == 422


def test_study_endpoint():
    resp = client.post("/study", json={"alphas": [0.1], "depth": 3, "samples": 200})
    assert resp.status_code == 200
    assert len(resp.json()["rows"]) == 4 * 2
