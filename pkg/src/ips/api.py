"""REST intermediary between clients and the engine/store.

Clients never reach the bus or store directly, and responses expose only
derived data (scores, classes, cutoffs, contributors, feedback),
never raw envelope payloads. Auth is static bearer tokens (mapped to
clinician ids for feedback attribution); terminate TLS in front of this
service in real deployments.

Endpoints (all JSON):
  GET  /v1/patients?since=<iso>&limit=<n>     newest-first profile list
  GET  /v1/patients/{pid}/{aid}/risk           full eight-slice profile
  POST /v1/patients/{pid}/{aid}/feedback       append adjusted values
  GET  /v1/updates?cursor=<n>                  long-poll update feed
  GET  /v1/health, GET /v1/metrics
"""

from __future__ import annotations

from dataclasses import dataclass, field

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .domain import (
    COMPLICATION_ORDER,
    DISPLAY_NAMES,
    AdmissionKey,
    ComplicationCode,
    Feedback,
    RiskProfile,
)
from .jsonutil import iso_to_millis, millis_to_iso, now_millis
from .metrics import MetricsRegistry
from .store import ProfileStore, StoreError

LONG_POLL_DEFAULT_SECS = 25.0
LONG_POLL_MAX_SECS = 55.0


@dataclass
class ApiConfig:
    tokens: dict = field(default_factory=dict)  # token -> clinician id
    cors_origins: list = field(default_factory=list)
    poll_page_size: int = 100
    static_dir: str | None = None

    def __post_init__(self):
        # bearer auth is always on, so an empty token set would lock
        # every data endpoint
        if not self.tokens:
            raise ValueError("auth enabled with no tokens")


def create_app(
    store: ProfileStore,
    metrics: MetricsRegistry,
    health,
    config: ApiConfig,
    thresholds=None,
) -> FastAPI:
    """Build the API app over a store. ``health`` is a callable returning
    component statuses; ``thresholds`` (optional) annotates responses
    with the cutoffs in use."""
    app = FastAPI(title="surgical risk pipeline API", version="1.0")
    if config.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(config.cors_origins),
            allow_methods=["GET", "POST"],
            allow_headers=["Authorization", "Content-Type"],
        )

    def authenticate(request: Request) -> str:
        header = request.headers.get("Authorization", "")
        if not header.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        clinician = config.tokens.get(header[len("Bearer "):].strip())
        if clinician is None:
            raise HTTPException(status_code=401, detail="invalid token")
        return clinician

    cutoffs = {
        code: (thresholds.cutoffs[code] if thresholds else None)
        for code in COMPLICATION_ORDER
    }

    def risk_payload(profile: RiskProfile, feedback_list: list) -> dict:
        latest = feedback_list[-1] if feedback_list else None
        return {
            "patient_id": profile.key.patient_id,
            "admission_id": profile.key.admission_id,
            "admitted_at": millis_to_iso(profile.key.admitted_at),
            "scored_at": millis_to_iso(profile.scored_at),
            "model_version": profile.model_version,
            "complications": [
                {
                    "code": code.value,
                    "display_name": DISPLAY_NAMES[code],
                    "probability": profile.scores[code],
                    "cutoff": cutoffs[code],
                    "risk_class": profile.classes[code].value,
                    "contributors": [
                        {"variable": name, "contribution": value}
                        for name, value in profile.contributors[code]
                    ],
                }
                for code in COMPLICATION_ORDER
            ],
            "feedback": None
            if latest is None
            else {
                "author": latest.author,
                "adjusted": {
                    code.value: latest.adjusted[code]
                    for code in COMPLICATION_ORDER
                    if code in latest.adjusted
                },
                "note": latest.note,
                "submitted_at": millis_to_iso(latest.submitted_at),
            },
        }

    @app.get("/v1/patients")
    def list_patients(
        since: str | None = Query(default=None),
        limit: int = Query(default=50, ge=1, le=500),
        clinician: str = Depends(authenticate),
    ):
        since_ms = None
        if since is not None:
            try:
                since_ms = iso_to_millis(since)
            except ValueError:
                raise HTTPException(status_code=400, detail="malformed since timestamp")
        entries = store.list_recent(limit=limit, since_ms=since_ms)
        return [
            {
                "patient_id": profile.key.patient_id,
                "admission_id": profile.key.admission_id,
                "scored_at": millis_to_iso(profile.scored_at),
                "high_risk_count": profile.high_risk_count(),
            }
            for profile, _seq in entries
        ]

    @app.get("/v1/patients/{pid}/{aid}/risk")
    def get_risk(pid: str, aid: str, clinician: str = Depends(authenticate)):
        profile = store.get_profile(AdmissionKey(pid, aid, 0))
        if profile is None:
            raise HTTPException(status_code=404, detail="unknown admission")
        feedback_list = store.get_feedback(profile.key)
        return risk_payload(profile, feedback_list)

    @app.post("/v1/patients/{pid}/{aid}/feedback", status_code=201)
    def post_feedback(
        pid: str, aid: str, body: dict, clinician: str = Depends(authenticate)
    ):
        adjusted_raw = body.get("adjusted")
        if not isinstance(adjusted_raw, dict) or not adjusted_raw:
            raise HTTPException(status_code=400, detail="no adjustments")
        adjusted = {}
        for code_str, value in adjusted_raw.items():
            try:
                code = ComplicationCode(code_str)
            except ValueError:
                raise HTTPException(status_code=400,
                                    detail=f"unknown complication {code_str!r}")
            if not isinstance(value, (int, float)) or isinstance(value, bool) \
                    or not (0.0 <= value <= 1.0):
                raise HTTPException(status_code=400,
                                    detail=f"{code.value} out of [0,1]")
            adjusted[code] = float(value)
        profile = store.get_profile(AdmissionKey(pid, aid, 0))
        key = profile.key if profile is not None else AdmissionKey(pid, aid, 0)
        fb = Feedback(
            key=key,
            author=clinician,
            adjusted=adjusted,
            note=str(body.get("note", "")),
            submitted_at=now_millis(),
        )
        version = store.put_feedback(fb)
        metrics.incr("api.feedback_posts")
        return {"version": version, "submitted_at": millis_to_iso(fb.submitted_at)}

    @app.get("/v1/updates")
    def updates(
        cursor: int = Query(default=0, ge=0),
        timeout_ms: int = Query(default=int(LONG_POLL_DEFAULT_SECS * 1000), ge=0),
        clinician: str = Depends(authenticate),
    ):
        if cursor > store.current_seq():
            raise HTTPException(status_code=400, detail="invalid cursor")
        timeout = min(timeout_ms / 1000.0, LONG_POLL_MAX_SECS)
        events = store.wait_for_events(cursor, config.poll_page_size, timeout)
        next_cursor = events[-1].seq if events else cursor
        return {
            "events": [
                {
                    "patient_id": e.patient_id,
                    "admission_id": e.admission_id,
                    "scored_at": millis_to_iso(e.scored_at),
                    "seq": e.seq,
                }
                for e in events
            ],
            "next_cursor": next_cursor,
        }

    @app.get("/v1/health")
    def get_health():
        return {"components": health()}

    @app.get("/v1/metrics")
    def get_metrics(clinician: str = Depends(authenticate)):
        return metrics.snapshot()

    @app.exception_handler(StoreError)
    def store_error_handler(request: Request, exc: StoreError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    if config.static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app
