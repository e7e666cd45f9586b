import threading
import time

import jsonschema
import pytest
from fastapi.testclient import TestClient

import api_schemas
from ips.api import ApiConfig, create_app
from ips.domain import COMPLICATION_ORDER, ComplicationCode, RiskClass, RiskProfile
from ips.metrics import MetricsRegistry
from ips.models import PUBLISHED_CUTOFFS, ThresholdTable
from ips.store import ProfileStore

from conftest import make_key

TOKEN = "tok-abc"
AUTH = {"Authorization": f"Bearer {TOKEN}"}


def profile_for(key, aki=0.5, scored_at=1_700_000_000_000):
    scores = {c: aki if c is ComplicationCode.AKI else 0.01 for c in COMPLICATION_ORDER}
    table = ThresholdTable(cutoffs=dict(PUBLISHED_CUTOFFS))
    return RiskProfile(
        key=key, scores=scores,
        classes={c: table.classify(c, scores[c]) for c in COMPLICATION_ORDER},
        contributors={c: (("age_years", 0.4), ("sex", -0.1))
                      for c in COMPLICATION_ORDER},
        scored_at=scored_at, model_version="t",
    )


@pytest.fixture()
def stack():
    store = ProfileStore()
    metrics = MetricsRegistry()
    health_state = {"bus": "up", "engine": "up", "store": "up"}
    app = create_app(
        store=store, metrics=metrics, health=lambda: dict(health_state),
        config=ApiConfig(tokens={TOKEN: "dr-7"}, poll_page_size=10),
        thresholds=ThresholdTable(cutoffs=dict(PUBLISHED_CUTOFFS)),
    )
    return store, metrics, health_state, TestClient(app)


def test_patients_empty(stack):
    _, _, _, client = stack
    response = client.get("/v1/patients", headers=AUTH)
    assert response.status_code == 200
    assert response.json() == []
    jsonschema.validate(response.json(), api_schemas.PATIENT_LIST)


def test_patients_limit_newest_first(stack):
    store, _, _, client = stack
    for i in range(3):
        store.put_profile(profile_for(make_key(f"P{i}", f"A{i}"),
                                      scored_at=1_700_000_000_000 + i * 1000))
    body = client.get("/v1/patients?limit=2", headers=AUTH).json()
    jsonschema.validate(body, api_schemas.PATIENT_LIST)
    assert [e["patient_id"] for e in body] == ["P2", "P1"]


def test_patients_since_pagination(stack):
    store, _, _, client = stack
    for i in range(4):
        store.put_profile(profile_for(make_key(f"P{i}", f"A{i}"),
                                      scored_at=1_700_000_000_000 + i * 1000))
    page1 = client.get("/v1/patients?limit=2", headers=AUTH).json()
    page2 = client.get(f"/v1/patients?limit=2&since={page1[-1]['scored_at']}",
                       headers=AUTH).json()
    assert [e["patient_id"] for e in page1 + page2] == ["P3", "P2", "P1", "P0"]


def test_patients_bad_since(stack):
    _, _, _, client = stack
    assert client.get("/v1/patients?since=garbage", headers=AUTH).status_code == 400


def test_bad_token_no_leak(stack):
    store, _, _, client = stack
    store.put_profile(profile_for(make_key()))
    response = client.get("/v1/patients", headers={"Authorization": "Bearer wrong"})
    assert response.status_code == 401
    assert "P1" not in response.text


def test_missing_token(stack):
    _, _, _, client = stack
    assert client.get("/v1/patients").status_code == 401


def test_risk_has_all_eight(stack):
    store, _, _, client = stack
    store.put_profile(profile_for(make_key()))
    response = client.get("/v1/patients/P1/A1/risk", headers=AUTH)
    assert response.status_code == 200
    body = response.json()
    jsonschema.validate(body, api_schemas.RISK)
    assert [c["code"] for c in body["complications"]] == \
        [c.value for c in COMPLICATION_ORDER]
    aki = body["complications"][0]
    assert aki["risk_class"] == "High"  # 0.5 >= 0.35
    assert aki["cutoff"] == 0.35
    assert all(c["risk_class"] in ("Low", "High") for c in body["complications"])


def test_risk_unknown_admission_404(stack):
    _, _, _, client = stack
    assert client.get("/v1/patients/NOPE/X/risk", headers=AUTH).status_code == 404


def test_risk_embeds_latest_feedback(stack):
    store, _, _, client = stack
    store.put_profile(profile_for(make_key()))
    client.post("/v1/patients/P1/A1/feedback", headers=AUTH,
                json={"adjusted": {"AKI": 0.5}})
    body = client.get("/v1/patients/P1/A1/risk", headers=AUTH).json()
    jsonschema.validate(body, api_schemas.RISK)
    assert body["feedback"]["adjusted"] == {"AKI": 0.5}
    assert body["feedback"]["author"] == "dr-7"


def test_feedback_roundtrip(stack):
    store, _, _, client = stack
    store.put_profile(profile_for(make_key()))
    response = client.post("/v1/patients/P1/A1/feedback", headers=AUTH,
                           json={"adjusted": {"AKI": 0.5}, "note": "looks worse"})
    assert response.status_code == 201
    jsonschema.validate(response.json(), api_schemas.FEEDBACK_POST)
    assert response.json()["version"] == 1


def test_feedback_out_of_range_names_complication(stack):
    store, _, _, client = stack
    store.put_profile(profile_for(make_key()))
    response = client.post("/v1/patients/P1/A1/feedback", headers=AUTH,
                           json={"adjusted": {"AKI": 1.5}})
    assert response.status_code == 400
    assert "AKI out of [0,1]" in response.json()["detail"]


def test_feedback_empty_adjustments(stack):
    _, _, _, client = stack
    response = client.post("/v1/patients/P1/A1/feedback", headers=AUTH,
                           json={"adjusted": {}})
    assert response.status_code == 400
    assert "no adjustments" in response.json()["detail"]


def test_feedback_append_only_history(stack):
    store, _, _, client = stack
    store.put_profile(profile_for(make_key()))
    client.post("/v1/patients/P1/A1/feedback", headers=AUTH,
                json={"adjusted": {"AKI": 0.4}})
    client.post("/v1/patients/P1/A1/feedback", headers=AUTH,
                json={"adjusted": {"AKI": 0.6}})
    history = store.get_feedback(make_key())
    assert [fb.adjusted[ComplicationCode.AKI] for fb in history] == [0.4, 0.6]
    body = client.get("/v1/patients/P1/A1/risk", headers=AUTH).json()
    assert body["feedback"]["adjusted"]["AKI"] == 0.6  # latest shown


def test_updates_empty_timeout(stack):
    _, _, _, client = stack
    body = client.get("/v1/updates?cursor=0&timeout_ms=50", headers=AUTH).json()
    jsonschema.validate(body, api_schemas.UPDATES)
    assert body == {"events": [], "next_cursor": 0}


def test_updates_sees_new_score(stack):
    store, _, _, client = stack
    store.put_profile(profile_for(make_key()))
    body = client.get("/v1/updates?cursor=0&timeout_ms=50", headers=AUTH).json()
    jsonschema.validate(body, api_schemas.UPDATES)
    assert len(body["events"]) == 1
    assert body["next_cursor"] == body["events"][0]["seq"]


def test_updates_long_poll_wakes_on_write(stack):
    store, _, _, client = stack

    def write_later():
        time.sleep(0.15)
        store.put_profile(profile_for(make_key()))

    t = threading.Thread(target=write_later)
    t.start()
    started = time.monotonic()
    body = client.get("/v1/updates?cursor=0&timeout_ms=5000", headers=AUTH).json()
    elapsed = time.monotonic() - started
    t.join()
    assert len(body["events"]) == 1
    assert elapsed < 4.0  # woke well before the timeout


def test_updates_cursor_chain_replay(stack):
    store, _, _, client = stack
    for i in range(23):
        store.put_profile(profile_for(make_key(f"P{i}", f"A{i}")))
    cursor = 0
    seen = []
    while True:
        body = client.get(f"/v1/updates?cursor={cursor}&timeout_ms=0",
                          headers=AUTH).json()
        if not body["events"]:
            break
        seen.extend(e["patient_id"] for e in body["events"])
        cursor = body["next_cursor"]
    assert seen == [f"P{i}" for i in range(23)]  # exactly once, in order


def test_updates_invalid_cursor(stack):
    _, _, _, client = stack
    assert client.get("/v1/updates?cursor=999", headers=AUTH).status_code == 400
    assert client.get("/v1/updates?cursor=-1", headers=AUTH).status_code == 422


def test_health_unauthenticated_ok(stack):
    _, _, health_state, client = stack
    body = client.get("/v1/health").json()
    jsonschema.validate(body, api_schemas.HEALTH)
    assert body["components"] == {"bus": "up", "engine": "up", "store": "up"}
    health_state["bus"] = "down"
    assert client.get("/v1/health").json()["components"]["bus"] == "down"


def test_metrics_counts(stack):
    _, metrics, _, client = stack
    metrics.incr("engine.records_scored", 100)
    body = client.get("/v1/metrics", headers=AUTH).json()
    jsonschema.validate(body, api_schemas.METRICS)
    assert body["counters"]["engine.records_scored"] == 100


def test_no_raw_envelope_exposure(stack):
    """Responses never include envelope payload fields, only derived data."""
    store, _, _, client = stack
    store.put_profile(profile_for(make_key()))
    risk = client.get("/v1/patients/P1/A1/risk", headers=AUTH)
    for fragment in ("comorbidity_flags", "lab_value", "surgery_code", "zip"):
        assert fragment not in risk.text


def test_auth_requires_tokens_configured():
    with pytest.raises(ValueError, match="no tokens"):
        ApiConfig(tokens={})
