"""Synthetic surgical cohort generator with planted additive outcome risk.

Writes the four ingest CSV kinds plus a labels file whose eight binary
outcomes are drawn from a known additive-logit ground truth over the
same aggregates the demo feature schema extracts, so calibration has
real signal to recover. Generation is fully deterministic per seed:
same spec, same bytes.

Not a clinical simulator: distributions are simple parametric
stand-ins, and the cohort filters (adults only, stays over 24 h, no
end-stage renal disease on admission) are applied at generation time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import COMPLICATION_ORDER, ComplicationCode
from .jsonutil import millis_to_iso

BASE_ADMIT_MS = 1_704_067_200_000  # 2024-01-01T00:00:00Z
ADMIT_SPACING_MS = 317_000

SEXES = ("F", "M")
RACES = ("WHITE", "BLACK", "HISPANIC", "ASIAN", "OTHER")
RACE_P = (0.58, 0.17, 0.13, 0.06, 0.06)
ADMISSION_TYPES = ("ELECTIVE", "URGENT", "EMERGENT")
TYPE_P = (0.55, 0.27, 0.18)
SURGERY_CODES = ("CARD01", "CARD02", "VASC01", "ORTH01", "ORTH02", "NEUR01",
                 "GEN01", "GEN02", "THOR01")
SURGERY_P = (0.10, 0.07, 0.09, 0.14, 0.10, 0.08, 0.22, 0.12, 0.08)
COMORBIDITIES = ("diabetes", "hypertension", "chf", "copd", "ckd", "cancer")
PROVIDER_ROLES = ("surgeon", "anesthesiologist", "nurse")
DRUGS = ("heparin", "cefazolin", "metoprolol", "insulin", "furosemide",
         "morphine", "vancomycin", "warfarin")
ROUTES = ("IV", "PO")

DEFAULT_PREVALENCE = {
    ComplicationCode.AKI: 0.25,
    ComplicationCode.ICU: 0.25,
    ComplicationCode.MV: 0.12,
    ComplicationCode.WND: 0.09,
    ComplicationCode.CV: 0.07,
    ComplicationCode.NEU: 0.06,
    ComplicationCode.SEP: 0.06,
    ComplicationCode.VTE: 0.04,
}

# source-level missingness: probability that a patient's rows for the
# source are withheld from the files (labels are drawn before this)
DEFAULT_MISSINGNESS = {
    "creatinine": 0.04,
    "hemoglobin": 0.05,
    "wbc": 0.05,
    "sodium": 0.08,
    "glucose": 0.08,
    "race": 0.06,
    "medications": 0.05,
}

# every complication's planted linear predictor is normalized to this
# std, so discriminability is uniform and recoverable regardless of how
# many features its weight vector spreads over
TARGET_LP_STD = 3.0


class CohortError(Exception):
    pass


@dataclass(frozen=True)
class CohortSpec:
    n_patients: int
    seed: int
    prevalence: dict = field(default_factory=lambda: dict(DEFAULT_PREVALENCE))
    missingness: dict = field(default_factory=lambda: dict(DEFAULT_MISSINGNESS))
    exclusion_rules: bool = True

    def __post_init__(self):
        for code, p in self.prevalence.items():
            if not (0.0 < p < 1.0):
                raise CohortError(f"prevalence for {code.value} must be in (0,1), got {p}")


# planted effect weights per complication over derived aggregates;
# keys match _effect_columns below
TRUTH_WEIGHTS = {
    ComplicationCode.AKI: {"cr": 1.5, "ckd": 1.2, "age": 0.5, "wbc": 0.3, "glu": 0.3,
                           "type": 0.5, "surg_cardiac": 0.5, "chf": 0.3, "hypertension": 0.2},
    ComplicationCode.ICU: {"age": 0.5, "wbc": 0.8, "hb": 0.9, "type": 0.8,
                           "surg_cardiac": 0.5, "surg_thoracic": 0.4, "med": 0.4, "chf": 0.4},
    ComplicationCode.MV: {"copd": 1.3, "surg_thoracic": 0.9, "wbc": 0.4, "age": 0.4,
                          "type": 0.5, "hb": 0.3},
    ComplicationCode.WND: {"diabetes": 1.1, "glu": 0.8, "cancer": 0.4, "hb": 0.4,
                           "type": 0.3, "med": 0.3},
    ComplicationCode.CV: {"age": 0.9, "surg_cardiac": 1.0, "hypertension": 0.9, "chf": 0.8,
                          "cr": 0.3, "type": 0.3},
    ComplicationCode.NEU: {"age": 1.0, "surg_neuro": 1.2, "na": 0.9, "hypertension": 0.3,
                           "type": 0.3},
    ComplicationCode.SEP: {"wbc": 1.3, "med": 0.5, "cancer": 0.5, "type": 0.6, "hb": 0.3},
    ComplicationCode.VTE: {"cancer": 1.0, "surg_ortho": 0.9, "age": 0.5, "med": 0.4,
                           "hb": 0.2},
}


def _solve_intercept(lp: np.ndarray, target: float) -> float:
    """Bisection for b with mean(sigmoid(lp + b)) == target."""
    lo, hi = -25.0, 25.0
    for _ in range(80):
        mid = (lo + hi) / 2.0
        mean = float(np.mean(1.0 / (1.0 + np.exp(-np.clip(lp + mid, -35, 35)))))
        if mean < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


@dataclass
class _Cohort:
    """Columnar cohort arrays; one row per kept patient."""

    n: int
    age: np.ndarray
    sex_idx: np.ndarray
    race_idx: np.ndarray
    zip_code: np.ndarray
    type_idx: np.ndarray
    surg_idx: np.ndarray
    comorbid: dict  # name -> bool array
    provider_count: np.ndarray
    med_count: np.ndarray
    lab_rows: dict  # lab name -> (n, max_rows) float array, NaN padded
    lab_counts: dict  # lab name -> int array
    drop_source: dict  # missingness masks
    outcomes: dict  # ComplicationCode -> int array


def _draw_candidates(rng: np.random.Generator, count: int):
    age = rng.uniform(16.0, 92.0, count)
    stay_hours = np.exp(rng.normal(3.9, 0.9, count))
    esrd = rng.random(count) < 0.03
    severity = rng.normal(0.0, 1.0, count)
    sex_idx = (rng.random(count) < 0.48).astype(int)  # 1 = M
    race_idx = rng.choice(len(RACES), size=count, p=RACE_P)
    zip_code = rng.integers(10000, 99999, count)
    type_idx = rng.choice(len(ADMISSION_TYPES), size=count, p=TYPE_P)
    surg_idx = rng.choice(len(SURGERY_CODES), size=count, p=SURGERY_P)

    def bernoulli(p):
        return rng.random(count) < p

    sig = lambda x: 1.0 / (1.0 + np.exp(-x))
    comorbid = {
        "diabetes": bernoulli(sig(-1.9 + 0.3 * severity + 0.012 * (age - 57))),
        "hypertension": bernoulli(sig(-0.8 + 0.25 * severity + 0.02 * (age - 57))),
        "chf": bernoulli(sig(-2.6 + 0.4 * severity + 0.02 * (age - 57))),
        "copd": bernoulli(sig(-2.4 + 0.3 * severity)),
        "ckd": bernoulli(sig(-2.3 + 0.45 * severity + 0.015 * (age - 57))),
        "cancer": bernoulli(sig(-2.5 + 0.2 * severity + 0.015 * (age - 57))),
    }
    return {
        "age": age, "stay_hours": stay_hours, "esrd": esrd, "severity": severity,
        "sex_idx": sex_idx, "race_idx": race_idx, "zip_code": zip_code,
        "type_idx": type_idx, "surg_idx": surg_idx, "comorbid": comorbid,
    }


def _lab_value_matrix(rng, n, counts, latent, per_row_sd, lo, hi, decimals=2):
    max_rows = int(counts.max())
    values = latent[:, None] + rng.normal(0.0, per_row_sd, (n, max_rows))
    values = np.clip(values, lo, hi).round(decimals)
    mask = np.arange(max_rows)[None, :] >= counts[:, None]
    values[mask] = np.nan
    return values


def build_cohort(spec: CohortSpec) -> _Cohort:
    rng = np.random.default_rng(spec.seed)
    kept: list = []
    total = 0
    while total < spec.n_patients:
        block = max(4096, int((spec.n_patients - total) * 1.6))
        cand = _draw_candidates(rng, block)
        if spec.exclusion_rules:
            keep = (cand["age"] >= 18.0) & (cand["stay_hours"] > 24.0) & (~cand["esrd"])
        else:
            keep = np.ones(block, dtype=bool)
        idx = np.flatnonzero(keep)[: spec.n_patients - total]
        kept.append({
            k: (v[idx] if not isinstance(v, dict) else {ck: cv[idx] for ck, cv in v.items()})
            for k, v in cand.items()
        })
        total += len(idx)

    def cat(key):
        if isinstance(kept[0][key], dict):
            return {ck: np.concatenate([blk[key][ck] for blk in kept]) for ck in kept[0][key]}
        return np.concatenate([blk[key] for blk in kept])

    n = spec.n_patients
    age = cat("age")
    severity = cat("severity")
    comorbid = cat("comorbid")

    lab_counts = {
        "creatinine": 1 + rng.binomial(2, 0.5, n),
        "hemoglobin": 1 + rng.binomial(1, 0.5, n),
        "wbc": 1 + rng.binomial(1, 0.5, n),
        "sodium": 1 + rng.binomial(1, 0.3, n),
        "glucose": 1 + rng.binomial(1, 0.4, n),
    }
    latents = {
        "creatinine": 0.9 + 0.25 * severity + 0.9 * comorbid["ckd"] + rng.normal(0, 0.15, n),
        "hemoglobin": 13.5 - 0.8 * severity - 0.5 * comorbid["cancer"] + rng.normal(0, 0.6, n),
        "wbc": 8.0 + 2.5 * np.maximum(severity, 0) + rng.normal(0, 1.2, n),
        "sodium": 140.0 + 1.0 * severity + rng.normal(0, 3.2, n),
        "glucose": 100.0 + 45.0 * comorbid["diabetes"] + 10.0 * severity + rng.normal(0, 15.0, n),
    }
    lab_rows = {
        "creatinine": _lab_value_matrix(rng, n, lab_counts["creatinine"],
                                        latents["creatinine"], 0.08, 0.3, 15.0),
        "hemoglobin": _lab_value_matrix(rng, n, lab_counts["hemoglobin"],
                                        latents["hemoglobin"], 0.3, 5.0, 18.0, 1),
        "wbc": _lab_value_matrix(rng, n, lab_counts["wbc"], latents["wbc"], 0.5, 2.0, 40.0, 1),
        "sodium": _lab_value_matrix(rng, n, lab_counts["sodium"], latents["sodium"],
                                    0.8, 120.0, 165.0, 0),
        "glucose": _lab_value_matrix(rng, n, lab_counts["glucose"], latents["glucose"],
                                     6.0, 55.0, 500.0, 0),
    }

    provider_count = 1 + rng.binomial(2, 0.4, n)
    med_count = np.minimum(rng.poisson(2.2, n), 6)

    cohort = _Cohort(
        n=n, age=age, sex_idx=cat("sex_idx"), race_idx=cat("race_idx"),
        zip_code=cat("zip_code"), type_idx=cat("type_idx"), surg_idx=cat("surg_idx"),
        comorbid=comorbid, provider_count=provider_count, med_count=med_count,
        lab_rows=lab_rows, lab_counts=lab_counts, drop_source={}, outcomes={},
    )

    effects = _effect_columns(cohort)
    cohort.outcomes = {}
    for code in COMPLICATION_ORDER:
        lp = np.zeros(n)
        for name, weight in TRUTH_WEIGHTS[code].items():
            lp += weight * effects[name]
        lp *= TARGET_LP_STD / max(float(lp.std()), 1e-9)
        b0 = _solve_intercept(lp, spec.prevalence[code])
        p = 1.0 / (1.0 + np.exp(-np.clip(lp + b0, -35, 35)))
        cohort.outcomes[code] = (rng.random(n) < p).astype(int)

    # missingness draws come last so label draws stay comparable across rates
    cohort.drop_source = {
        name: rng.random(n) < rate for name, rate in spec.missingness.items()
    }
    return cohort


def _effect_columns(c: _Cohort) -> dict:
    """Standardized effect inputs derived from the rows (the true aggregates)."""
    cr_max = np.nanmax(c.lab_rows["creatinine"], axis=1)
    hb_min = np.nanmin(c.lab_rows["hemoglobin"], axis=1)
    wbc_max = np.nanmax(c.lab_rows["wbc"], axis=1)
    glu_max = np.nanmax(c.lab_rows["glucose"], axis=1)
    na_last = _last_values(c.lab_rows["sodium"], c.lab_counts["sodium"])
    surgery = np.asarray(SURGERY_CODES)[c.surg_idx]
    type_effect = np.select(
        [c.type_idx == 0, c.type_idx == 1, c.type_idx == 2], [-0.3, 0.2, 0.6]
    )
    return {
        "age": (c.age - 57.0) / 15.0,
        "cr": np.clip((cr_max - 1.1) / 0.8, -1.0, 4.0),
        "hb": np.clip((12.5 - hb_min) / 1.8, -1.5, 3.0),
        "wbc": np.clip((wbc_max - 9.0) / 4.0, -1.5, 4.0),
        "na": np.clip(np.abs(na_last - 140.0) / 4.0, 0.0, 3.0),
        "glu": np.clip((glu_max - 120.0) / 60.0, -1.0, 3.0),
        "med": (c.med_count - 2.0) / 1.5,
        "type": type_effect,
        "sex": np.where(c.sex_idx == 1, 0.1, -0.1),
        "surg_cardiac": np.isin(surgery, ("CARD01", "CARD02")).astype(float),
        "surg_thoracic": (surgery == "THOR01").astype(float),
        "surg_neuro": (surgery == "NEUR01").astype(float),
        "surg_ortho": np.isin(surgery, ("ORTH01", "ORTH02")).astype(float),
        **{name: c.comorbid[name].astype(float) for name in COMORBIDITIES},
    }


def _last_values(rows: np.ndarray, counts: np.ndarray) -> np.ndarray:
    idx = np.maximum(counts - 1, 0)
    return np.take_along_axis(rows, idx[:, None], axis=1)[:, 0]


def generate_cohort(spec: CohortSpec, out_dir: str | Path, chunks: int = 1) -> dict:
    """Write the cohort CSVs and labels; returns the file manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    c = build_cohort(spec)
    n = c.n

    def fmt(v, decimals):
        return f"{v:.{decimals}f}".rstrip("0").rstrip(".") if decimals else f"{v:.0f}"

    bounds = [round(n * k / chunks) for k in range(chunks + 1)]
    manifest = {"files": [], "config": {
        "n_patients": spec.n_patients, "seed": spec.seed,
        "prevalence": {code.value: spec.prevalence[code] for code in COMPLICATION_ORDER},
        "missingness": dict(sorted(spec.missingness.items())),
        "exclusion_rules": spec.exclusion_rules,
    }}

    def open_chunk(kind: str, k: int, header: str):
        path = out_dir / f"{kind}_{k:03d}.csv"
        fh = open(path, "w", encoding="utf-8", newline="")
        fh.write(header + "\n")
        return path, fh

    lab_decimals = {"creatinine": 2, "hemoglobin": 1, "wbc": 1, "sodium": 0, "glucose": 0}

    for k in range(chunks):
        lo, hi = bounds[k], bounds[k + 1]
        adm_path, adm = open_chunk(
            "admissions", k,
            "patient_id,admission_id,admitted_at,age_years,sex,race,zip,"
            "admission_type,surgery_code,comorbidity_flags",
        )
        prov_path, prov = open_chunk(
            "providers", k, "patient_id,admission_id,provider_id,provider_role"
        )
        lab_path, lab = open_chunk(
            "labs", k, "patient_id,admission_id,lab_name,lab_value,lab_units,taken_at"
        )
        med_path, med = open_chunk(
            "medications", k, "patient_id,admission_id,drug_name,dose,route,given_at"
        )
        for i in range(lo, hi):
            pid = f"P{i + 1:06d}"
            aid = f"A{i + 1:06d}"
            admitted_ms = BASE_ADMIT_MS + i * ADMIT_SPACING_MS
            admitted = millis_to_iso(admitted_ms)
            flags = ";".join(
                name for name in COMORBIDITIES if c.comorbid[name][i]
            )
            race = "" if c.drop_source.get("race", np.zeros(n, bool))[i] else RACES[c.race_idx[i]]
            adm.write(
                f"{pid},{aid},{admitted},{fmt(c.age[i], 1)},{SEXES[c.sex_idx[i]]},"
                f"{race},{c.zip_code[i]},{ADMISSION_TYPES[c.type_idx[i]]},"
                f"{SURGERY_CODES[c.surg_idx[i]]},{flags}\n"
            )
            for j in range(c.provider_count[i]):
                prov.write(
                    f"{pid},{aid},DR{(i * 7 + j * 131) % 9000 + 1000:04d},"
                    f"{PROVIDER_ROLES[j % len(PROVIDER_ROLES)]}\n"
                )
            for lab_name, rows in c.lab_rows.items():
                if c.drop_source.get(lab_name, np.zeros(n, bool))[i]:
                    continue
                units = {"creatinine": "mg/dL", "hemoglobin": "g/dL", "wbc": "10^3/uL",
                         "sodium": "mmol/L", "glucose": "mg/dL"}[lab_name]
                for j in range(c.lab_counts[lab_name][i]):
                    value = rows[i, j]
                    taken = millis_to_iso(admitted_ms + (j + 1) * 4 * 3600 * 1000)
                    lab.write(
                        f"{pid},{aid},{lab_name},{fmt(value, lab_decimals[lab_name])},"
                        f"{units},{taken}\n"
                    )
            if not c.drop_source.get("medications", np.zeros(n, bool))[i]:
                for j in range(c.med_count[i]):
                    drug = DRUGS[(i * 3 + j) % len(DRUGS)]
                    given = millis_to_iso(admitted_ms + (j + 1) * 6 * 3600 * 1000)
                    med.write(f"{pid},{aid},{drug},{(j % 4 + 1) * 5} mg,"
                              f"{ROUTES[j % 2]},{given}\n")
        for path, fh in ((adm_path, adm), (prov_path, prov), (lab_path, lab), (med_path, med)):
            fh.close()
            manifest["files"].append({"path": path.name, "bytes": path.stat().st_size})

    labels_path = out_dir / "labels.csv"
    with open(labels_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("patient_id,admission_id," +
                 ",".join(code.value for code in COMPLICATION_ORDER) + "\n")
        for i in range(n):
            outcomes = ",".join(str(c.outcomes[code][i]) for code in COMPLICATION_ORDER)
            fh.write(f"P{i + 1:06d},A{i + 1:06d},{outcomes}\n")
    manifest["files"].append({"path": labels_path.name, "bytes": labels_path.stat().st_size})

    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def synthetic_envelope_payloads(rng: np.random.Generator, count: int, start_index: int = 0):
    """Admission/provider/lab/medication payload maps for benchmark envelopes.

    Cheaper than the full cohort path: one draw batch, no outcome
    planting, unique keys from ``start_index``.
    """
    cand = _draw_candidates(rng, count)
    out = []
    for i in range(count):
        pid = f"BP{start_index + i:08d}"
        aid = f"BA{start_index + i:08d}"
        admitted_ms = BASE_ADMIT_MS + (start_index + i) * 1000
        admission = {
            "patient_id": pid, "admission_id": aid,
            "admitted_at": millis_to_iso(admitted_ms),
            "age_years": round(float(np.clip(cand["age"][i], 18, 92)), 1),
            "sex": SEXES[cand["sex_idx"][i]],
            "race": RACES[cand["race_idx"][i]],
            "zip": str(int(cand["zip_code"][i])),
            "admission_type": ADMISSION_TYPES[cand["type_idx"][i]],
            "surgery_code": SURGERY_CODES[cand["surg_idx"][i]],
            "comorbidity_flags": ";".join(
                name for name in COMORBIDITIES if cand["comorbid"][name][i]
            ),
        }
        providers = [{"patient_id": pid, "admission_id": aid,
                      "provider_id": f"DR{i % 9000 + 1000:04d}", "provider_role": "surgeon"}]
        cr = round(float(0.9 + 0.3 * abs(cand["severity"][i])), 2)
        labs = [{
            "patient_id": pid, "admission_id": aid, "lab_name": "creatinine",
            "lab_value": cr, "lab_units": "mg/dL",
            "taken_at": millis_to_iso(admitted_ms + 3_600_000),
        }]
        medications = []
        out.append((pid, aid, admitted_ms, admission, providers, labs, medications))
    return out
