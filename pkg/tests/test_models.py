import json
import math
import random

import pytest

from ips.domain import COMPLICATION_ORDER, ComplicationCode, RiskClass
from ips.features import MISSING_CATEGORY, ModelInput
from ips.models import (
    PUBLISHED_CUTOFFS,
    FoldMetrics,
    GamModel,
    ModelError,
    SmoothTerm,
    ThresholdTable,
    auroc,
    crossvalidate,
    evaluate_term,
    load_model,
    logistic,
    score,
    score_all,
    stratified_folds,
    youden_cutoff,
)

from conftest import make_key
from oracles import (
    oracle_auroc,
    oracle_score,
    oracle_youden,
    random_model_and_input,
)


# -- evaluate_term ------------------------------------------------------------


def test_term_midpoint_interpolation():
    term = SmoothTerm(variable="v", kind="continuous", knots_x=(0.0, 10.0),
                      knots_y=(0.0, 1.0))
    assert evaluate_term(term, 5.0) == 0.5


def test_term_flat_extrapolation():
    term = SmoothTerm(variable="v", kind="continuous", knots_x=(0.0, 10.0),
                      knots_y=(0.0, 1.0))
    assert evaluate_term(term, -3.0) == 0.0
    assert evaluate_term(term, 25.0) == 1.0


def test_term_nominal_lookup():
    term = SmoothTerm(variable="v", kind="nominal", table=(0.2, -0.1, 0.0))
    assert evaluate_term(term, 1.0) == -0.1


def test_term_nominal_index_out_of_table():
    term = SmoothTerm(variable="v", kind="nominal", table=(0.2, -0.1))
    with pytest.raises(ModelError):
        evaluate_term(term, 5.0)


# -- score --------------------------------------------------------------------


def test_score_all_zero_gives_half():
    model = GamModel(
        complication=ComplicationCode.AKI, model_version="t", schema_version="t",
        intercept=0.0,
        terms=(SmoothTerm(variable="v0", kind="continuous",
                          knots_x=(0.0, 1.0), knots_y=(0.0, 0.0)),),
    )
    result = score(model, ModelInput(values=(0.5,)))
    assert result.probability == 0.5


def test_score_logit_inverse_at_published_cutoff():
    model = GamModel(
        complication=ComplicationCode.AKI, model_version="t", schema_version="t",
        intercept=math.log(0.35 / 0.65),
        terms=(SmoothTerm(variable="v0", kind="continuous",
                          knots_x=(0.0, 1.0), knots_y=(0.0, 0.0)),),
    )
    result = score(model, ModelInput(values=(0.5,)))
    assert result.probability == pytest.approx(0.35, abs=1e-15)


def test_score_matches_direct_summation_oracle():
    rng = random.Random(42)
    for _ in range(300):
        model, mi = random_model_and_input(rng)
        result = score(model, mi)
        expected_p, expected_lp = oracle_score(model, mi.values)
        assert abs(result.probability - expected_p) < 1e-12
        assert abs(result.linear_predictor - expected_lp) < 1e-12
        # attribution completeness
        total = model.intercept + math.fsum(c for _, c in result.contributions)
        assert abs(total - result.linear_predictor) < 1e-12


def test_score_length_mismatch():
    model, mi = random_model_and_input(random.Random(1))
    with pytest.raises(ModelError, match="length"):
        score(model, ModelInput(values=mi.values + (1.0,)))


def test_monotone_link():
    assert logistic(2.0) > logistic(1.0) > logistic(0.0) > logistic(-1.0)


# -- model loading -------------------------------------------------------------


def _schema_and_model_obj():
    from ips.features import ExtractRule, VariableSchema, VariableSpec

    schema = VariableSchema(
        schema_version="s1",
        variables=(
            VariableSpec(name="age", kind="continuous",
                         extract=ExtractRule(source="admission", agg="value",
                                             field="age_years"),
                         bounds=(0.0, 120.0), mean=50.0),
            VariableSpec(name="sex", kind="nominal",
                         extract=ExtractRule(source="admission", agg="value",
                                             field="sex"),
                         categories=("F", "M", MISSING_CATEGORY)),
        ),
    )
    model_obj = {
        "complication": "AKI", "model_version": "m1", "schema_version": "s1",
        "intercept": -1.0,
        "terms": [
            {"variable": "age", "kind": "continuous",
             "knots": [[20.0, -0.5], [80.0, 0.5]]},
            {"variable": "sex", "kind": "nominal", "table": [0.1, -0.1, 0.0]},
        ],
        "shared_term_ids": [],
    }
    return schema, model_obj


def test_load_model_ok(tmp_path):
    schema, obj = _schema_and_model_obj()
    path = tmp_path / "AKI.json"
    path.write_text(json.dumps(obj))
    model = load_model(path, schema)
    assert model.complication is ComplicationCode.AKI
    assert len(model.terms) == 2


def test_load_model_knots_not_increasing(tmp_path):
    schema, obj = _schema_and_model_obj()
    obj["terms"][0]["knots"] = [[1.0, 0.0], [0.5, 0.1]]
    path = tmp_path / "AKI.json"
    path.write_text(json.dumps(obj))
    with pytest.raises(ModelError, match="knots not increasing"):
        load_model(path, schema)


def test_load_model_missing_variable_term(tmp_path):
    schema, obj = _schema_and_model_obj()
    obj["terms"] = obj["terms"][1:]
    path = tmp_path / "AKI.json"
    path.write_text(json.dumps(obj))
    with pytest.raises(ModelError, match="age"):
        load_model(path, schema)


def test_load_model_schema_version_mismatch(tmp_path):
    schema, obj = _schema_and_model_obj()
    obj["schema_version"] = "other"
    path = tmp_path / "AKI.json"
    path.write_text(json.dumps(obj))
    with pytest.raises(ModelError, match="schema_version"):
        load_model(path, schema)


# -- thresholds / score_all -----------------------------------------------------


def constant_models(lp_by_code: dict) -> dict:
    models = {}
    for code in COMPLICATION_ORDER:
        models[code] = GamModel(
            complication=code, model_version="const", schema_version="t",
            intercept=lp_by_code.get(code, 0.0),
            terms=(SmoothTerm(variable="v0", kind="continuous",
                              knots_x=(0.0, 1.0), knots_y=(0.0, 0.0)),),
        )
    return models


def paper_table() -> ThresholdTable:
    return ThresholdTable(cutoffs=dict(PUBLISHED_CUTOFFS))


def test_boundary_probability_equal_cutoff_is_high():
    table = paper_table()
    lp = {ComplicationCode.AKI: math.log(0.35 / 0.65)}
    profile = score_all(constant_models(lp), ModelInput(values=(0.5,)), table,
                        None, make_key(), scored_at=0)
    assert profile.scores[ComplicationCode.AKI] == pytest.approx(0.35, abs=1e-12)
    assert profile.classes[ComplicationCode.AKI] is RiskClass.HIGH


def test_below_cutoff_is_low():
    table = paper_table()
    lp = {ComplicationCode.VTE: math.log(0.029 / 0.971)}
    profile = score_all(constant_models(lp), ModelInput(values=(0.5,)), table,
                        None, make_key(), scored_at=0)
    assert profile.classes[ComplicationCode.VTE] is RiskClass.LOW


def test_all_zero_models_all_high():
    table = paper_table()
    profile = score_all(constant_models({}), ModelInput(values=(0.5,)), table,
                        None, make_key(), scored_at=0)
    assert all(profile.scores[c] == 0.5 for c in COMPLICATION_ORDER)
    assert all(profile.classes[c] is RiskClass.HIGH for c in COMPLICATION_ORDER)


def test_score_all_missing_model_errors():
    table = paper_table()
    models = constant_models({})
    del models[ComplicationCode.SEP]
    with pytest.raises(ModelError, match="SEP"):
        score_all(models, ModelInput(values=(0.5,)), table, None, make_key(),
                  scored_at=0)


def test_contributors_ranked_by_magnitude_ties_by_order():
    terms = (
        SmoothTerm(variable="a", kind="continuous", knots_x=(0.0, 1.0),
                   knots_y=(0.3, 0.3)),
        SmoothTerm(variable="b", kind="continuous", knots_x=(0.0, 1.0),
                   knots_y=(-0.7, -0.7)),
        SmoothTerm(variable="c", kind="continuous", knots_x=(0.0, 1.0),
                   knots_y=(0.3, 0.3)),
    )
    models = {
        code: GamModel(complication=code, model_version="t", schema_version="t",
                       intercept=0.0, terms=terms)
        for code in COMPLICATION_ORDER
    }
    profile = score_all(models, ModelInput(values=(0.5, 0.5, 0.5)), paper_table(),
                        None, make_key(), scored_at=0, top_n=2)
    ranked = profile.contributors[ComplicationCode.AKI]
    assert ranked[0][0] == "b"
    assert ranked[1][0] == "a"  # tie with c broken by schema order


def test_threshold_table_requires_all_eight():
    cutoffs = dict(PUBLISHED_CUTOFFS)
    del cutoffs[ComplicationCode.MV]
    with pytest.raises(ModelError, match="MV"):
        ThresholdTable(cutoffs=cutoffs)


def test_threshold_file_flat_map(tmp_path, assets_dir):
    table = ThresholdTable.load(assets_dir / "thresholds_paper.json")
    assert table.cutoffs == PUBLISHED_CUTOFFS


# -- youden ---------------------------------------------------------------------


def test_youden_perfect_separation():
    cutoff, j = youden_cutoff([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert (cutoff, j) == (0.8, 1.0)


def test_youden_uninformative_ties():
    cutoff, j = youden_cutoff([0.5, 0.5], [0, 1])
    assert cutoff == 0.5
    assert j == 0.0


def test_youden_degenerate_labels():
    with pytest.raises(ModelError, match="degenerate labels"):
        youden_cutoff([0.1, 0.9], [1, 1])


def test_youden_matches_bruteforce_oracle():
    rng = random.Random(123)
    for trial in range(30):
        n = rng.randint(5, 120)
        scores = [round(rng.random(), rng.choice((1, 2, 6))) for _ in range(n)]
        labels = [rng.randint(0, 1) for _ in range(n)]
        if len(set(labels)) < 2:
            labels[0] = 1 - labels[0]
        assert youden_cutoff(scores, labels) == oracle_youden(scores, labels)


def test_youden_optimality_property():
    rng = random.Random(5)
    scores = [rng.random() for _ in range(200)]
    labels = [1 if rng.random() < s else 0 for s in scores]
    cutoff, best_j = youden_cutoff(scores, labels)
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    for t in sorted(set(scores)) + [math.nextafter(max(scores), math.inf)]:
        tp = sum(1 for s, y in zip(scores, labels) if y == 1 and s >= t)
        tn = sum(1 for s, y in zip(scores, labels) if y == 0 and s < t)
        assert tp / n_pos + tn / n_neg - 1.0 <= best_j


# -- auroc ------------------------------------------------------------------------


def test_auroc_perfect_and_reversed():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0


def test_auroc_matches_pairwise_oracle():
    rng = random.Random(9)
    for _ in range(20):
        n = rng.randint(10, 300)
        scores = [round(rng.random(), rng.choice((1, 3))) for _ in range(n)]
        labels = [rng.randint(0, 1) for _ in range(n)]
        if len(set(labels)) < 2:
            labels[0] = 1 - labels[0]
        assert auroc(scores, labels) == pytest.approx(
            oracle_auroc(scores, labels), abs=1e-12)


# -- crossvalidate ----------------------------------------------------------------


def test_stratified_folds_balanced():
    labels = [1] * 5 + [0] * 5
    folds = stratified_folds(labels, 5, seed=3)
    for fold in folds:
        assert sum(labels[i] for i in fold) == 1
        assert len(fold) == 2


def test_crossvalidate_perfectly_separable():
    scores = [i / 100 for i in range(100)]
    labels = [1 if s >= 0.5 else 0 for s in scores]
    report = crossvalidate(scores, labels, folds=5, seed=1)
    assert report.mean_auroc == 1.0


def test_crossvalidate_null_scores_near_half():
    rng = random.Random(77)
    n = 5000
    scores = [rng.random() for _ in range(n)]
    labels = [rng.randint(0, 1) for _ in range(n)]
    report = crossvalidate(scores, labels, folds=5, seed=1)
    assert abs(report.mean_auroc - 0.5) < 0.03


def test_crossvalidate_too_few_examples():
    with pytest.raises(ModelError, match="per class"):
        crossvalidate([0.1, 0.9, 0.5], [0, 1, 0], folds=5)


def test_crossvalidate_deterministic():
    rng = random.Random(4)
    scores = [rng.random() for _ in range(60)]
    labels = [rng.randint(0, 1) for _ in range(60)]
    a = crossvalidate(scores, labels, folds=5, seed=9)
    b = crossvalidate(scores, labels, folds=5, seed=9)
    assert a == b
