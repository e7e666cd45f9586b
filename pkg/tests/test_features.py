import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ips.features import (
    MISSING_CATEGORY,
    ExtractRule,
    ModelInput,
    SchemaError,
    VariableSchema,
    VariableSpec,
    encode,
    envelope_to_input,
    fit_schema_statistics,
    generate_variables,
    impute,
    remove_outliers,
)
from ips.metrics import MetricsRegistry

from conftest import make_envelope


def small_schema(creatinine_bounds=(0.1, 20.0)) -> VariableSchema:
    return VariableSchema(
        schema_version="test-1",
        variables=(
            VariableSpec(
                name="age_years", kind="continuous",
                extract=ExtractRule(source="admission", agg="value", field="age_years"),
                bounds=(18.0, 110.0), mean=57.2,
            ),
            VariableSpec(
                name="creatinine_max", kind="continuous",
                extract=ExtractRule(source="labs", agg="max", field="lab_value",
                                    where=(("lab_name", "creatinine"),)),
                bounds=creatinine_bounds, mean=1.2,
            ),
            VariableSpec(
                name="creatinine_last", kind="continuous",
                extract=ExtractRule(source="labs", agg="last", field="lab_value",
                                    where=(("lab_name", "creatinine"),),
                                    order_by="taken_at"),
                bounds=creatinine_bounds, mean=1.1,
            ),
            VariableSpec(
                name="sex", kind="nominal",
                extract=ExtractRule(source="admission", agg="value", field="sex"),
                categories=("F", "M", MISSING_CATEGORY),
            ),
            VariableSpec(
                name="comorbid_diabetes", kind="nominal",
                extract=ExtractRule(source="admission", agg="has_token",
                                    field="comorbidity_flags", token="diabetes"),
                categories=("NO", "YES", MISSING_CATEGORY),
            ),
        ),
    )


def test_generate_observed_age():
    raw = generate_variables(make_envelope(), small_schema())
    assert raw.values[0] == 54.0
    assert raw.flags[0].observed


def test_generate_last_with_no_labs_is_missing():
    raw = generate_variables(make_envelope(labs=0), small_schema())
    assert raw.values[2] is None
    assert not raw.flags[2].observed


def test_generate_max_aggregation():
    env = make_envelope(labs=0)
    labs = tuple(
        {"patient_id": "P1", "admission_id": "A1", "lab_name": "creatinine",
         "lab_value": v, "lab_units": "mg/dL", "taken_at": t}
        for v, t in ((1.1, "2023-11-14T20:00:00.000Z"),
                     (2.3, "2023-11-14T21:00:00.000Z"),
                     (1.9, "2023-11-14T22:00:00.000Z"))
    )
    env = type(env)(key=env.key, admission=env.admission, providers=env.providers,
                    labs=labs, medications=env.medications, produced_at=env.produced_at)
    raw = generate_variables(env, small_schema())
    assert raw.values[1] == 2.3  # max
    assert raw.values[2] == 1.9  # last by taken_at


def test_generate_unknown_field_counts_warning():
    schema = VariableSchema(
        schema_version="t", variables=(
            VariableSpec(name="bogus", kind="continuous",
                         extract=ExtractRule(source="admission", agg="value",
                                             field="not_a_field"),
                         bounds=(0.0, 1.0), mean=0.5),
        ),
    )
    metrics = MetricsRegistry()
    raw = generate_variables(make_envelope(), schema, metrics)
    assert raw.values[0] is None
    assert metrics.get("features.unknown_field") == 1


def test_has_token():
    raw = generate_variables(make_envelope(), small_schema())
    assert raw.values[4] == "YES"  # diabetes in flags


def test_remove_outliers_in_bounds_unchanged():
    schema = small_schema()
    raw = generate_variables(make_envelope(labs=1), schema)
    assert remove_outliers(raw, schema) == raw


def test_remove_outliers_replaces_with_marker():
    schema = small_schema(creatinine_bounds=(0.1, 20.0))
    env = make_envelope(labs=0)
    labs = ({"patient_id": "P1", "admission_id": "A1", "lab_name": "creatinine",
             "lab_value": 250.0, "lab_units": "mg/dL",
             "taken_at": "2023-11-14T20:00:00.000Z"},)
    env = type(env)(key=env.key, admission=env.admission, providers=env.providers,
                    labs=labs, medications=env.medications, produced_at=env.produced_at)
    raw = generate_variables(env, schema)
    cleaned = remove_outliers(raw, schema)
    assert cleaned.values[1] is None
    assert cleaned.flags[1].outlier_removed


def test_outlier_boundary_closed_interval():
    schema = small_schema()
    env = make_envelope(labs=0)
    labs = ({"patient_id": "P1", "admission_id": "A1", "lab_name": "creatinine",
             "lab_value": 20.0, "lab_units": "mg/dL",
             "taken_at": "2023-11-14T20:00:00.000Z"},)
    env = type(env)(key=env.key, admission=env.admission, providers=env.providers,
                    labs=labs, medications=env.medications, produced_at=env.produced_at)
    cleaned = remove_outliers(generate_variables(env, schema), schema)
    assert cleaned.values[1] == 20.0  # exactly at hi: retained


def test_impute_continuous_mean_and_nominal_missing():
    schema = small_schema()
    raw = generate_variables(make_envelope(labs=0), schema)
    filled = impute(raw, schema)
    assert filled.values[1] == 1.2  # training mean
    assert filled.flags[1].imputed
    assert not filled.has_missing()


def test_impute_missing_sex_becomes_missing_category():
    schema = small_schema()
    env = make_envelope()
    admission = dict(env.admission)
    del admission["sex"]
    env = type(env)(key=env.key, admission=admission, providers=env.providers,
                    labs=env.labs, medications=env.medications,
                    produced_at=env.produced_at)
    filled = impute(generate_variables(env, schema), schema)
    assert filled.values[3] == MISSING_CATEGORY


def test_impute_identity_on_complete_vector():
    schema = small_schema()
    raw = generate_variables(make_envelope(labs=2), schema)
    filled = impute(raw, schema)
    assert filled == raw
    assert not any(f.imputed for f in filled.flags)


def test_impute_idempotent():
    schema = small_schema()
    raw = generate_variables(make_envelope(labs=0), schema)
    once = impute(raw, schema)
    assert impute(once, schema) == once


def test_remove_outliers_idempotent():
    schema = small_schema()
    raw = generate_variables(make_envelope(labs=1), schema)
    once = remove_outliers(raw, schema)
    assert remove_outliers(once, schema) == once


def test_encode_dictionary_lookup():
    schema = small_schema()
    mi = envelope_to_input(make_envelope(labs=1), schema)
    assert mi.values[3] == 0.0  # sex F -> index 0


def test_encode_unknown_label_falls_back_to_missing():
    schema = small_schema()
    env = make_envelope()
    admission = dict(env.admission, sex="OTHER")
    env = type(env)(key=env.key, admission=admission, providers=env.providers,
                    labs=env.labs, medications=env.medications,
                    produced_at=env.produced_at)
    metrics = MetricsRegistry()
    mi = envelope_to_input(env, schema, metrics)
    assert mi.values[3] == 2.0  # MISSING index
    assert metrics.get("features.unknown_category") == 1


def test_encode_requires_imputed():
    schema = small_schema()
    raw = generate_variables(make_envelope(labs=0), schema)
    with pytest.raises(SchemaError, match="unimputed input"):
        encode(raw, schema)


def test_encode_deterministic():
    schema = small_schema()
    a = envelope_to_input(make_envelope(labs=2), schema)
    b = envelope_to_input(make_envelope(labs=2), schema)
    assert a == b


def test_fit_statistics_mean():
    schema = small_schema()
    rows = [generate_variables(make_envelope(labs=n), schema) for n in (1, 2, 0)]
    fitted = fit_schema_statistics(schema, rows)
    ages = [54.0, 54.0, 54.0]
    assert fitted.variables[0].mean == pytest.approx(sum(ages) / 3)


def test_fit_statistics_excludes_missing():
    import numpy as np

    schema = small_schema()
    from ips.features import RawFeatureVector, FeatureFlags

    def row(age):
        values = (age, 1.0, 1.0, "F", "NO")
        flags = tuple(FeatureFlags(observed=v is not None) for v in values)
        return RawFeatureVector(values=values, flags=flags)

    rows = [row(1.0 * 20), row(2.0 * 20), row(None), row(3.0 * 20)]
    fitted = fit_schema_statistics(schema, rows)
    assert fitted.variables[0].mean == pytest.approx(40.0)


def test_fit_statistics_all_missing_column_errors():
    schema = small_schema()
    rows = [generate_variables(make_envelope(labs=0), schema)]
    with pytest.raises(SchemaError, match="creatinine"):
        fit_schema_statistics(schema, rows)


def test_fit_statistics_percentile_autofit():
    from ips.features import FeatureFlags, RawFeatureVector

    schema = small_schema()

    def row(age):
        values = (age, 1.0, 1.0, "F", "NO")
        flags = tuple(FeatureFlags(observed=True) for _ in values)
        return RawFeatureVector(values=values, flags=flags)

    ages = [float(a) for a in range(1, 202)]  # 1..201
    fitted = fit_schema_statistics(schema, [row(a) for a in ages],
                                   percentile_clip=(0.5, 99.5))
    lo, hi = fitted.variables[0].bounds
    assert 1.0 < lo < 3.0 and 199.0 < hi < 201.0  # tails clipped
    # mean computed over in-bounds values only
    in_bounds = [a for a in ages if lo <= a <= hi]
    assert fitted.variables[0].mean == pytest.approx(sum(in_bounds) / len(in_bounds))


@given(labs=st.integers(min_value=0, max_value=4),
       meds=st.integers(min_value=0, max_value=3),
       age=st.one_of(st.none(), st.floats(min_value=0, max_value=130)))
@settings(max_examples=50, deadline=None)
def test_pipeline_totality(labs, meds, age):
    """generate -> remove_outliers -> impute -> encode never fails on a
    valid envelope and always yields a full-length vector."""
    schema = small_schema()
    env = make_envelope(labs=labs, medications=meds)
    admission = dict(env.admission)
    if age is None:
        del admission["age_years"]
    else:
        admission["age_years"] = age
    env = type(env)(key=env.key, admission=admission, providers=env.providers,
                    labs=env.labs, medications=env.medications,
                    produced_at=env.produced_at)
    mi = envelope_to_input(env, schema)
    assert isinstance(mi, ModelInput)
    assert len(mi.values) == len(schema)
    assert all(isinstance(v, float) and math.isfinite(v) for v in mi.values)


def test_mean_imputation_preserves_column_mean():
    """Imputing with the observed mean leaves the column mean unchanged."""
    schema = small_schema()
    observed = [30.0, 45.0, 60.0, 71.0]
    rows = []
    for age in observed + [None, None]:
        env = make_envelope(labs=1)
        admission = dict(env.admission)
        if age is None:
            del admission["age_years"]
        else:
            admission["age_years"] = age
        rows.append(type(env)(key=env.key, admission=admission,
                              providers=env.providers, labs=env.labs,
                              medications=env.medications,
                              produced_at=env.produced_at))
    raws = [generate_variables(e, schema) for e in rows]
    fitted = fit_schema_statistics(schema, raws)
    filled = [impute(remove_outliers(r, fitted), fitted) for r in raws]
    col = [f.values[0] for f in filled]
    observed_mean = math.fsum(observed) / len(observed)
    assert abs(math.fsum(col) / len(col) - observed_mean) < 1e-12
