import json

from hypothesis import given, settings
from hypothesis import strategies as st

from ips.domain import (
    COMPLICATION_ORDER,
    DISPLAY_NAMES,
    AdmissionEnvelope,
    AdmissionKey,
    ComplicationCode,
    Feedback,
    RiskClass,
    RiskProfile,
    validate_envelope,
)
from ips.jsonutil import canonical_json_bytes, iso_to_millis, millis_to_iso

from conftest import make_envelope, make_key


def test_complication_order_stable():
    assert [c.value for c in COMPLICATION_ORDER] == \
        ["AKI", "ICU", "MV", "WND", "CV", "NEU", "SEP", "VTE"]
    assert len(COMPLICATION_ORDER) == 8
    assert set(DISPLAY_NAMES) == set(COMPLICATION_ORDER)


def test_validate_minimal_envelope_ok():
    env = make_envelope(providers=1, labs=0, medications=0)
    assert validate_envelope(env) == []


def test_validate_no_providers():
    env = make_envelope(providers=0)
    assert "providers empty" in validate_envelope(env)


def test_validate_empty_admission_id():
    env = make_envelope(aid="")
    assert "admission_id empty" in validate_envelope(env)


def test_validate_reports_every_violation():
    env = make_envelope(pid="", aid="", providers=0)
    assert set(validate_envelope(env)) == \
        {"patient_id empty", "admission_id empty", "providers empty"}


def test_iso_round_trip_millisecond_exact():
    ms = 1_700_000_123_456
    assert iso_to_millis(millis_to_iso(ms)) == ms
    assert millis_to_iso(ms).endswith("Z")


def test_envelope_round_trip():
    env = make_envelope(providers=2, labs=3, medications=1)
    again = AdmissionEnvelope.from_obj(json.loads(canonical_json_bytes(env.to_obj())))
    assert again == env


def test_envelope_null_field_preserved():
    env = make_envelope()
    env = AdmissionEnvelope(
        key=env.key, admission=dict(env.admission, race=None),
        providers=env.providers, labs=env.labs, medications=env.medications,
        produced_at=env.produced_at,
    )
    encoded = canonical_json_bytes(env.to_obj())
    assert b'"race":null' in encoded
    assert AdmissionEnvelope.from_obj(json.loads(encoded)).admission["race"] is None


def _profile(key):
    scores = {c: 0.1 * (i + 1) for i, c in enumerate(COMPLICATION_ORDER)}
    return RiskProfile(
        key=key,
        scores=scores,
        classes={c: RiskClass.HIGH if scores[c] >= 0.35 else RiskClass.LOW
                 for c in COMPLICATION_ORDER},
        contributors={c: (("age_years", 0.4), ("sex", -0.1)) for c in COMPLICATION_ORDER},
        scored_at=1_700_000_200_000,
        model_version="demo-1",
    )


def test_risk_profile_round_trip():
    profile = _profile(make_key())
    again = RiskProfile.from_obj(json.loads(canonical_json_bytes(profile.to_obj())))
    assert again == profile
    assert again.high_risk_count() == profile.high_risk_count()


def test_feedback_round_trip():
    fb = Feedback(
        key=make_key(), author="dr-7",
        adjusted={ComplicationCode.AKI: 0.5, ComplicationCode.VTE: 0.02},
        note="post-op trend looks worse", submitted_at=1_700_000_300_000,
    )
    again = Feedback.from_obj(json.loads(canonical_json_bytes(fb.to_obj())))
    assert again == fb


scalar = st.one_of(
    st.none(),
    st.integers(min_value=-10**9, max_value=10**9),
    st.floats(allow_nan=False, allow_infinity=False, width=32),
    st.text(max_size=12),
)
payloads = st.dictionaries(st.text(min_size=1, max_size=8), scalar, max_size=5)


@given(
    pid=st.text(min_size=1, max_size=10),
    aid=st.text(min_size=1, max_size=10),
    admitted=st.integers(min_value=0, max_value=4_000_000_000_000),
    produced=st.integers(min_value=0, max_value=4_000_000_000_000),
    admission=payloads,
    providers=st.lists(payloads, min_size=1, max_size=3),
    labs=st.lists(payloads, max_size=3),
    meds=st.lists(payloads, max_size=3),
)
@settings(max_examples=60, deadline=None)
def test_envelope_round_trip_property(pid, aid, admitted, produced, admission,
                                      providers, labs, meds):
    env = AdmissionEnvelope(
        key=AdmissionKey(pid, aid, admitted),
        admission=admission,
        providers=tuple(providers),
        labs=tuple(labs),
        medications=tuple(meds),
        produced_at=produced,
    )
    encoded = canonical_json_bytes(env.to_obj())
    again = AdmissionEnvelope.from_obj(json.loads(encoded))
    assert again == env
    # canonical form: value-equal implies byte-equal
    assert canonical_json_bytes(again.to_obj()) == encoded
