"""Shared vocabulary types for every pipeline stage.

All types are immutable after construction and safe to share across
threads. Construction does not validate envelope-level invariants;
:func:`validate_envelope` reports them as data so ingest can count
rejects instead of crashing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .jsonutil import canonical_json_bytes, iso_to_millis, millis_to_iso

# Payload maps carry scalars only: str | int | float | None.
Payload = dict


class ComplicationCode(enum.Enum):
    """The eight modeled postoperative complications, in canonical order.

    The enumeration order is load-bearing: scores, classes, stored
    profiles, and dashboard slices all iterate it identically.
    """

    AKI = "AKI"
    ICU = "ICU"
    MV = "MV"
    WND = "WND"
    CV = "CV"
    NEU = "NEU"
    SEP = "SEP"
    VTE = "VTE"


COMPLICATION_ORDER: tuple[ComplicationCode, ...] = tuple(ComplicationCode)

DISPLAY_NAMES: dict[ComplicationCode, str] = {
    ComplicationCode.AKI: "Acute kidney injury",
    ComplicationCode.ICU: "Intensive care unit stay > 48 h",
    ComplicationCode.MV: "Mechanical ventilation > 48 h",
    ComplicationCode.WND: "Wound complications",
    ComplicationCode.CV: "Cardiovascular complications",
    ComplicationCode.NEU: "Neurologic complications",
    ComplicationCode.SEP: "Sepsis",
    ComplicationCode.VTE: "Venous thromboembolism",
}


class RiskClass(enum.Enum):
    LOW = "Low"
    HIGH = "High"


@dataclass(frozen=True)
class AdmissionKey:
    """Identity of one hospital admission; the pipeline's unit of work.

    Equality is byte-exact on both id strings; no normalization.
    """

    patient_id: str
    admission_id: str
    admitted_at: int  # epoch ms

    def to_obj(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "admission_id": self.admission_id,
            "admitted_at": millis_to_iso(self.admitted_at),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "AdmissionKey":
        return cls(
            patient_id=obj["patient_id"],
            admission_id=obj["admission_id"],
            admitted_at=iso_to_millis(obj["admitted_at"]),
        )

    def ident(self) -> tuple[str, str]:
        """(patient_id, admission_id), the globally unique pair."""
        return (self.patient_id, self.admission_id)


class SourceKind(enum.Enum):
    ADMISSION = "Admission"
    PROVIDER = "Provider"
    LAB = "Lab"
    MEDICATION = "Medication"


@dataclass(frozen=True)
class SourceRecord:
    """One parsed row from a source file, tagged by kind."""

    kind: SourceKind
    key: AdmissionKey
    payload: Payload
    observed_at: int  # epoch ms


@dataclass(frozen=True)
class AdmissionEnvelope:
    """One admission joined with its provider/lab/medication records."""

    key: AdmissionKey
    admission: Payload
    providers: tuple[Payload, ...]
    labs: tuple[Payload, ...]
    medications: tuple[Payload, ...]
    produced_at: int  # epoch ms

    def to_obj(self) -> dict:
        return {
            "key": self.key.to_obj(),
            "admission": dict(self.admission),
            "providers": [dict(p) for p in self.providers],
            "labs": [dict(p) for p in self.labs],
            "medications": [dict(p) for p in self.medications],
            "produced_at": millis_to_iso(self.produced_at),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "AdmissionEnvelope":
        return cls(
            key=AdmissionKey.from_obj(obj["key"]),
            admission=dict(obj["admission"]),
            providers=tuple(dict(p) for p in obj["providers"]),
            labs=tuple(dict(p) for p in obj["labs"]),
            medications=tuple(dict(p) for p in obj["medications"]),
            produced_at=iso_to_millis(obj["produced_at"]),
        )


@dataclass(frozen=True)
class RiskProfile:
    """Eight probabilities, risk classes, and top contributors for one admission."""

    key: AdmissionKey
    scores: dict  # ComplicationCode -> float in [0, 1]
    classes: dict  # ComplicationCode -> RiskClass
    contributors: dict  # ComplicationCode -> tuple[(variable, contribution), ...]
    scored_at: int  # epoch ms
    model_version: str

    def to_obj(self) -> dict:
        return {
            "key": self.key.to_obj(),
            "scores": {c.value: self.scores[c] for c in COMPLICATION_ORDER},
            "classes": {c.value: self.classes[c].value for c in COMPLICATION_ORDER},
            "contributors": {
                c.value: [[name, contrib] for name, contrib in self.contributors[c]]
                for c in COMPLICATION_ORDER
            },
            "scored_at": millis_to_iso(self.scored_at),
            "model_version": self.model_version,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "RiskProfile":
        return cls(
            key=AdmissionKey.from_obj(obj["key"]),
            scores={ComplicationCode(c): v for c, v in obj["scores"].items()},
            classes={ComplicationCode(c): RiskClass(v) for c, v in obj["classes"].items()},
            contributors={
                ComplicationCode(c): tuple((n, v) for n, v in items)
                for c, items in obj["contributors"].items()
            },
            scored_at=iso_to_millis(obj["scored_at"]),
            model_version=obj["model_version"],
        )

    def high_risk_count(self) -> int:
        return sum(1 for c in COMPLICATION_ORDER if self.classes[c] is RiskClass.HIGH)


@dataclass(frozen=True)
class Feedback:
    """A clinician's adjusted risk values for one admission."""

    key: AdmissionKey
    author: str
    adjusted: dict  # ComplicationCode -> float in [0, 1]; at least one entry
    note: str
    submitted_at: int  # epoch ms

    def to_obj(self) -> dict:
        return {
            "key": self.key.to_obj(),
            "author": self.author,
            "adjusted": {
                c.value: self.adjusted[c] for c in COMPLICATION_ORDER if c in self.adjusted
            },
            "note": self.note,
            "submitted_at": millis_to_iso(self.submitted_at),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "Feedback":
        return cls(
            key=AdmissionKey.from_obj(obj["key"]),
            author=obj["author"],
            adjusted={ComplicationCode(c): v for c, v in obj["adjusted"].items()},
            note=obj["note"],
            submitted_at=iso_to_millis(obj["submitted_at"]),
        )


def validate_envelope(env: AdmissionEnvelope) -> list[str]:
    """Check AdmissionEnvelope invariants; violations are data, not failures.

    Returns an empty list iff the envelope is valid, otherwise one
    message per broken invariant.
    """
    violations = []
    if not env.key.patient_id:
        violations.append("patient_id empty")
    if not env.key.admission_id:
        violations.append("admission_id empty")
    if len(env.providers) < 1:
        violations.append("providers empty")
    return violations


def envelope_bytes(env: AdmissionEnvelope) -> bytes:
    """Canonical JSON encoding; byte-equality implies value-equality."""
    return canonical_json_bytes(env.to_obj())


def profile_bytes(profile: RiskProfile) -> bytes:
    return canonical_json_bytes(profile.to_obj())


def feedback_bytes(fb: Feedback) -> bytes:
    return canonical_json_bytes(fb.to_obj())
