"""Build the shipped demo assets: variable schema, eight model files, and
the published threshold table.

Run from the repo root:  python scripts/build_demo_assets.py

The schema statistics and models are fitted on a synthetic cohort
(fixed seed), so the whole asset set is reproducible.
"""

from __future__ import annotations

import json
import shutil
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ips.calibrate import calibrate_all
from ips.domain import COMPLICATION_ORDER
from ips.features import ExtractRule, VariableSchema, VariableSpec
from ips.models import PUBLISHED_CUTOFFS
from ips.synth import CohortSpec, generate_cohort

ASSET_COHORT_N = 20_000
ASSET_COHORT_SEED = 1729
ASSET_DIR = Path(__file__).resolve().parents[1] / "src" / "ips" / "assets"


def lab_rule(lab_name: str, agg: str) -> ExtractRule:
    return ExtractRule(
        source="labs", agg=agg, field="lab_value",
        where=(("lab_name", lab_name),), order_by="taken_at",
    )


def flag_rule(token: str) -> ExtractRule:
    return ExtractRule(source="admission", agg="has_token",
                       field="comorbidity_flags", token=token)


def build_schema() -> VariableSchema:
    cont = lambda name, rule, bounds: VariableSpec(
        name=name, kind="continuous", extract=rule, bounds=bounds
    )
    nom = lambda name, rule, cats: VariableSpec(
        name=name, kind="nominal", extract=rule, categories=tuple(cats) + ("MISSING",)
    )
    variables = (
        cont("age_years", ExtractRule(source="admission", agg="value", field="age_years"),
             (18.0, 110.0)),
        cont("creatinine_last", lab_rule("creatinine", "last"), (0.1, 20.0)),
        cont("creatinine_max", lab_rule("creatinine", "max"), (0.1, 20.0)),
        cont("hemoglobin_min", lab_rule("hemoglobin", "min"), (3.0, 22.0)),
        cont("wbc_max", lab_rule("wbc", "max"), (0.5, 80.0)),
        cont("sodium_last", lab_rule("sodium", "last"), (110.0, 175.0)),
        cont("glucose_max", lab_rule("glucose", "max"), (30.0, 900.0)),
        cont("lab_count", ExtractRule(source="labs", agg="count"), (0.0, 500.0)),
        cont("medication_count", ExtractRule(source="medications", agg="count"),
             (0.0, 200.0)),
        cont("provider_count", ExtractRule(source="providers", agg="count"),
             (0.0, 50.0)),
        nom("sex", ExtractRule(source="admission", agg="value", field="sex"),
            ("F", "M")),
        nom("race", ExtractRule(source="admission", agg="value", field="race"),
            ("WHITE", "BLACK", "HISPANIC", "ASIAN", "OTHER")),
        nom("admission_type",
            ExtractRule(source="admission", agg="value", field="admission_type"),
            ("ELECTIVE", "URGENT", "EMERGENT")),
        nom("surgery_code",
            ExtractRule(source="admission", agg="value", field="surgery_code"),
            ("CARD01", "CARD02", "VASC01", "ORTH01", "ORTH02", "NEUR01",
             "GEN01", "GEN02", "THOR01")),
        nom("comorbid_diabetes", flag_rule("diabetes"), ("NO", "YES")),
        nom("comorbid_hypertension", flag_rule("hypertension"), ("NO", "YES")),
        nom("comorbid_chf", flag_rule("chf"), ("NO", "YES")),
        nom("comorbid_copd", flag_rule("copd"), ("NO", "YES")),
        nom("comorbid_ckd", flag_rule("ckd"), ("NO", "YES")),
        nom("comorbid_cancer", flag_rule("cancer"), ("NO", "YES")),
    )
    return VariableSchema(schema_version="demo-20v-1", variables=variables)


def main():
    ASSET_DIR.mkdir(parents=True, exist_ok=True)
    schema = build_schema()

    cutoffs = {code.value: PUBLISHED_CUTOFFS[code] for code in COMPLICATION_ORDER}
    (ASSET_DIR / "thresholds_paper.json").write_text(
        json.dumps(cutoffs, indent=2) + "\n", encoding="utf-8"
    )

    with tempfile.TemporaryDirectory() as tmp:
        cohort_dir = Path(tmp) / "cohort"
        print(f"generating {ASSET_COHORT_N}-patient cohort (seed {ASSET_COHORT_SEED})...")
        generate_cohort(CohortSpec(n_patients=ASSET_COHORT_N, seed=ASSET_COHORT_SEED),
                        cohort_dir)
        out = Path(tmp) / "calib"
        print("calibrating 8 models (5-fold)...")
        results = calibrate_all(cohort_dir, schema, out, folds=5, seed=11,
                                model_version="demo-1")
        for code, calib in results.items():
            print(f"  {code.value}: mean AUROC {calib.cv.mean_auroc:.4f} "
                  f"pooled cutoff {calib.cv.pooled_cutoff:.4f}")
        shutil.copy(out / "schema.json", ASSET_DIR / "schema.json")
        models_dir = ASSET_DIR / "models"
        models_dir.mkdir(exist_ok=True)
        for code in COMPLICATION_ORDER:
            shutil.copy(out / "models" / f"{code.value}.json",
                        models_dir / f"{code.value}.json")
        shutil.copy(out / "thresholds.json", ASSET_DIR / "thresholds_demo.json")
        shutil.copy(out / "calibration_report.json",
                    ASSET_DIR / "calibration_report_demo.json")
    print(f"assets written to {ASSET_DIR}")


if __name__ == "__main__":
    main()
