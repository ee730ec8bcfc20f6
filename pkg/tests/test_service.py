import pytest
from fastapi.testclient import TestClient

from proxobs.service.app import create_app


@pytest.fixture()
def client():
    return TestClient(create_app())


def small_config():
    return {"system": "linear", "horizon": 30, "realizations": 2, "seed": 7,
            "losses": [{"kind": "absolute", "lam": 0.1},
                       {"kind": "quadratic", "lam": 1.0}],
            "noise": {"impulsive": {"std": 10.0, "dwell": 5}}}


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok"}


def test_prox_route_matches_library_values(client):
    resp = client.post("/prox", json={"loss": {"kind": "absolute", "lam": 1.0},
                                      "x": [5.0], "a": [1.0], "b": 0.0})
    assert resp.status_code == 200
    body = resp.json()
    assert body["z"] == [4.0]
    assert body["phi"] is None
    assert body["oracle_gap"] < 1e-6
    resp = client.post("/prox", json={"loss": {"kind": "lasso", "lam": 1.0,
                                               "gamma": 1.0},
                                      "x": [6.0], "a": [1.0]})
    assert resp.json()["z"] == [5.0]
    assert resp.json()["phi"] == 4.0


def test_prox_route_rejects_bad_requests(client):
    resp = client.post("/prox", json={"loss": {"kind": "lasso", "lam": 1.0},
                                      "x": [5.0], "a": [1.0]})
    assert resp.status_code == 400
    assert "gamma" in resp.json()["detail"]
    resp = client.post("/prox", json={"loss": {"kind": "absolute", "lam": 1.0},
                                      "x": [5.0, 1.0], "a": [1.0]})
    assert resp.status_code == 400
    resp = client.post("/prox", json={"loss": {"kind": "cubic", "lam": 1.0},
                                      "x": [5.0], "a": [1.0]})
    assert resp.status_code == 422  # schema-level rejection


def test_experiment_route_returns_csv_and_summary(client):
    resp = client.post("/experiment", json={"config": small_config()})
    assert resp.status_code == 200
    body = resp.json()
    assert body["labels"] == ["absolute", "quadratic"]
    assert set(body["steady_state_error"]) == {"absolute", "quadratic"}
    assert body["csv"].splitlines()[0] == "t,absolute,quadratic"
    assert len(body["csv"].splitlines()) == 31
    assert body["summary"].startswith("steady-state error:")
    assert body["config_echo"]["horizon"] == 30
    again = client.post("/experiment", json={"config": small_config()})
    assert again.json()["csv"] == body["csv"]


def test_experiment_route_rejects_unknown_fields(client):
    resp = client.post("/experiment", json={"config": {"surprise": 1}})
    assert resp.status_code == 400
    assert "surprise" in resp.json()["detail"]


def test_check_route(client):
    config = {"system": "linear",
              "losses": [{"kind": "absolute", "lam": 0.1}],
              "check": {"window": 2}}
    resp = client.post("/check", json={"config": config})
    assert resp.status_code == 200
    body = resp.json()
    assert "[uco_grammian[T=2]]" in body["report"]
    assert body["satisfied"]["uco_grammian[T=2]"] is True
    assert client.post("/check", json={"config": {}}).status_code == 400


def test_session_lifecycle(client):
    resp = client.post("/sessions", json={"loss": {"kind": "absolute",
                                                   "lam": 0.1}})
    assert resp.status_code == 200
    body = resp.json()
    sid = body["session_id"]
    assert body["t"] == 0
    assert body["x_hat"] == [0.0, 0.0, 0.0]
    assert body["n_y"] == 2

    resp = client.post(f"/sessions/{sid}/step", json={"y": [10.0, 5.0]})
    assert resp.status_code == 200
    stepped = resp.json()
    assert stepped["t"] == 1
    assert stepped["x_hat"] == [0.1, 0.0, 0.1]  # saturated corrections

    assert client.get(f"/sessions/{sid}").json()["t"] == 1
    assert client.delete(f"/sessions/{sid}").json()["deleted"] is True
    assert client.get(f"/sessions/{sid}").status_code == 404


def test_session_error_paths(client):
    assert client.get("/sessions/missing").status_code == 404
    assert client.delete("/sessions/missing").status_code == 404
    assert client.post("/sessions/missing/step",
                       json={"y": [0.0, 0.0]}).status_code == 404

    resp = client.post("/sessions", json={"loss": {"kind": "absolute",
                                                   "lam": 0.1},
                                          "system": "chaotic"})
    assert resp.status_code == 400
    resp = client.post("/sessions", json={"loss": {"kind": "absolute",
                                                   "lam": 0.1},
                                          "mode": "sideways"})
    assert resp.status_code == 400
    resp = client.post("/sessions", json={"loss": {"kind": "absolute",
                                                   "lam": 0.1},
                                          "x0_hat": [1.0]})
    assert resp.status_code == 400

    sid = client.post("/sessions", json={"loss": {"kind": "absolute",
                                                  "lam": 0.1}}).json()["session_id"]
    resp = client.post(f"/sessions/{sid}/step", json={"y": [1.0]})
    assert resp.status_code == 400
    assert "shape" in resp.json()["detail"]


def test_session_lasso_reports_sparse_components(client):
    sid = client.post("/sessions", json={"loss": {"kind": "lasso", "lam": 2.0,
                                                  "gamma": 0.1}}).json()["session_id"]
    resp = client.post(f"/sessions/{sid}/step", json={"y": [10.0, 5.0]})
    body = resp.json()
    assert body["phi"] is not None
    assert len(body["phi"]) == 2
