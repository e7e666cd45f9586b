import json
from pathlib import Path

import pytest

from ips.domain import AdmissionEnvelope, AdmissionKey
from ips.features import VariableSchema

ASSETS = Path(__file__).resolve().parents[1] / "src" / "ips" / "assets"


@pytest.fixture(scope="session")
def demo_schema() -> VariableSchema:
    return VariableSchema.load(ASSETS / "schema.json")


@pytest.fixture(scope="session")
def assets_dir() -> Path:
    return ASSETS


def make_key(pid="P1", aid="A1", admitted_at=1_700_000_000_000) -> AdmissionKey:
    return AdmissionKey(patient_id=pid, admission_id=aid, admitted_at=admitted_at)


def make_envelope(pid="P1", aid="A1", providers=1, labs=0, medications=0,
                  admission=None, produced_at=1_700_000_100_000) -> AdmissionEnvelope:
    key = make_key(pid, aid)
    admission = admission if admission is not None else {
        "patient_id": pid, "admission_id": aid,
        "admitted_at": "2023-11-14T22:13:20.000Z",
        "age_years": 54.0, "sex": "F", "race": "WHITE", "zip": "32610",
        "admission_type": "ELECTIVE", "surgery_code": "GEN01",
        "comorbidity_flags": "diabetes;hypertension",
    }
    return AdmissionEnvelope(
        key=key,
        admission=admission,
        providers=tuple(
            {"patient_id": pid, "admission_id": aid,
             "provider_id": f"DR{i:03d}", "provider_role": "surgeon"}
            for i in range(providers)
        ),
        labs=tuple(
            {"patient_id": pid, "admission_id": aid, "lab_name": "creatinine",
             "lab_value": 0.9 + 0.1 * i, "lab_units": "mg/dL",
             "taken_at": f"2023-11-14T2{2 + i % 2}:30:00.000Z"}
            for i in range(labs)
        ),
        medications=tuple(
            {"patient_id": pid, "admission_id": aid, "drug_name": "heparin",
             "dose": "5 mg", "route": "IV", "given_at": "2023-11-15T01:00:00.000Z"}
            for _ in range(medications)
        ),
        produced_at=produced_at,
    )
