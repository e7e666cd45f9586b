"""Offline model calibration: fit additive knot-table models from a
cohort directory, cross-validate, and pick Youden cutoffs.

Fitting is deliberately simple: per-variable binned empirical logits
relative to the base rate, followed by a two-parameter logistic
recalibration (intercept + common slope) that preserves additivity.
That is enough to recover planted additive signal; squeezing out the
last AUROC point is not the goal of this pipeline.

Cutoffs are reported two ways, since either convention is defensible:
pooled (fit on all scored rows) and per-fold (fit on each training
split, averaged).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import COMPLICATION_ORDER, ComplicationCode, SourceKind
from .features import (
    CONTINUOUS,
    ModelInput,
    VariableSchema,
    envelope_to_input,
    fit_schema_statistics,
    generate_variables,
    impute,
    remove_outliers,
    encode,
)
from .ingest import SourceBatch, SourceScanner, AdmissionJoiner, SeenLedger
from .models import (
    CrossValidationReport,
    FoldMetrics,
    GamModel,
    SmoothTerm,
    ThresholdTable,
    auroc,
    sensitivity_specificity,
    stratified_folds,
    youden_cutoff,
)

MAX_CONTINUOUS_BINS = 8
RATE_SMOOTHING = 0.5  # Laplace-style; keeps empty-ish bins finite


class CalibrationError(Exception):
    pass


def load_cohort(cohort_dir: str | Path, schema: VariableSchema):
    """Join a cohort directory into per-admission feature rows + labels.

    Returns (inputs, labels_by_code, fitted_schema, idents). The schema
    statistics (means, and bounds when absent) are fitted on this cohort.
    """
    cohort_dir = Path(cohort_dir)
    labels_path = cohort_dir / "labels.csv"
    if not labels_path.exists():
        raise CalibrationError(f"labels file not found: {labels_path}")

    scanner = SourceScanner([cohort_dir])
    joiner = AdmissionJoiner(grace_intervals=0)
    batch = scanner.scan()
    envelopes, _ = joiner.join(batch)
    if not envelopes:
        raise CalibrationError(f"no admissions joined from {cohort_dir}")

    raw_rows = [generate_variables(env, schema) for env in envelopes]
    fitted = fit_schema_statistics(
        schema, [remove_outliers(r, schema) for r in raw_rows]
    )
    inputs = []
    for raw in raw_rows:
        complete = impute(remove_outliers(raw, fitted), fitted)
        inputs.append(encode(complete, fitted))

    labels_by_ident = {}
    with open(labels_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ident = (row["patient_id"], row["admission_id"])
            labels_by_ident[ident] = {
                code: int(row[code.value]) for code in COMPLICATION_ORDER
            }

    idents = [env.key.ident() for env in envelopes]
    missing = [i for i in idents if i not in labels_by_ident]
    if missing:
        raise CalibrationError(f"{len(missing)} admissions have no label row")
    labels_by_code = {
        code: [labels_by_ident[i][code] for i in idents] for code in COMPLICATION_ORDER
    }
    return inputs, labels_by_code, fitted, idents


def _binned_logit_term(spec, column: np.ndarray, y: np.ndarray, base_logit: float) -> SmoothTerm:
    """Empirical log-odds (minus base rate) per value bin, as a knot table."""
    distinct = np.unique(column)
    if distinct.size == 1:
        v = float(distinct[0])
        return SmoothTerm(
            variable=spec.name, kind=CONTINUOUS,
            knots_x=(v - 0.5, v + 0.5), knots_y=(0.0, 0.0),
        )
    if distinct.size <= MAX_CONTINUOUS_BINS:
        edges = distinct
        assign = np.searchsorted(edges, column)
        centers = distinct.astype(float)
    else:
        qs = np.linspace(0.0, 100.0, MAX_CONTINUOUS_BINS + 1)
        edges = np.unique(np.percentile(column, qs[1:-1]))
        assign = np.searchsorted(edges, column)
        centers = None

    knots_x = []
    knots_y = []
    n_bins = int(assign.max()) + 1
    for b in range(n_bins):
        mask = assign == b
        n = int(mask.sum())
        if n == 0:
            continue
        pos = float(y[mask].sum())
        rate = (pos + RATE_SMOOTHING) / (n + 2 * RATE_SMOOTHING)
        x = float(centers[b]) if centers is not None else float(column[mask].mean())
        knots_x.append(x)
        knots_y.append(math.log(rate / (1 - rate)) - base_logit)
    # merge knots that landed on identical x (possible with heavy ties)
    merged_x = []
    merged_y = []
    for x, yv in zip(knots_x, knots_y):
        if merged_x and x <= merged_x[-1]:
            merged_y[-1] = (merged_y[-1] + yv) / 2.0
            continue
        merged_x.append(x)
        merged_y.append(yv)
    if len(merged_x) == 1:
        merged_x.append(merged_x[0] + 1.0)
        merged_y.append(merged_y[0])
    return SmoothTerm(
        variable=spec.name, kind=CONTINUOUS,
        knots_x=tuple(merged_x), knots_y=tuple(merged_y),
    )


def _category_term(spec, column: np.ndarray, y: np.ndarray, base_logit: float) -> SmoothTerm:
    values = []
    for idx in range(len(spec.categories)):
        mask = column == idx
        n = int(mask.sum())
        if n == 0:
            values.append(0.0)  # unseen category contributes nothing
            continue
        pos = float(y[mask].sum())
        rate = (pos + RATE_SMOOTHING) / (n + 2 * RATE_SMOOTHING)
        values.append(math.log(rate / (1 - rate)) - base_logit)
    return SmoothTerm(variable=spec.name, kind=spec.kind, table=tuple(values))


def _term_matrix(terms: list, X: np.ndarray) -> np.ndarray:
    """Column j = term_j evaluated on X[:, j] (vectorized)."""
    out = np.empty_like(X, dtype=float)
    for j, term in enumerate(terms):
        if term.kind == CONTINUOUS:
            out[:, j] = np.interp(X[:, j], term.knots_x, term.knots_y)
        else:
            table = np.asarray(term.table, dtype=float)
            out[:, j] = table[X[:, j].astype(int)]
    return out


def _logistic_nll(design: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    lp = design @ beta
    # log(1 + e^lp) - y*lp, computed without overflow
    softplus = np.where(lp > 0, lp + np.log1p(np.exp(-np.abs(lp))),
                        np.log1p(np.exp(np.minimum(lp, 35))))
    return float(np.sum(softplus - y * lp))


def _fit_term_weights(F: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Logistic regression of y on the term-transformed features.

    The binned logits fix each term's shape; this pass fixes the scale
    per term, which matters when several variables carry overlapping
    signal. Damped Newton with a tiny ridge keeps it stable under
    collinearity. Returns (intercept, per-term weights).
    """
    n, d = F.shape
    design = np.hstack([np.ones((n, 1)), F])
    beta = np.zeros(d + 1)
    nll = _logistic_nll(design, y, beta)
    ridge = 1e-6
    for _ in range(60):
        lp = design @ beta
        p = 1.0 / (1.0 + np.exp(-np.clip(lp, -35, 35)))
        w = p * (1.0 - p) + 1e-12
        grad = design.T @ (p - y)
        hess = (design * w[:, None]).T @ design
        hess[np.diag_indices_from(hess)] += ridge
        delta = np.linalg.solve(hess, grad)
        step = 1.0
        while step > 1e-8:
            trial = _logistic_nll(design, y, beta - step * delta)
            if trial <= nll + 1e-12:
                break
            step /= 2.0
        beta = beta - step * delta
        nll = _logistic_nll(design, y, beta)
        if float(np.max(np.abs(step * delta))) < 1e-9:
            break
    return float(beta[0]), beta[1:]


def fit_gam(
    schema: VariableSchema,
    inputs: list,
    labels: list,
    complication: ComplicationCode,
    model_version: str,
) -> GamModel:
    """Fit one additive model on encoded inputs."""
    X = np.asarray([mi.values for mi in inputs], dtype=float)
    y = np.asarray(labels, dtype=float)
    if y.min() == y.max():
        raise CalibrationError(f"{complication.value}: single-class labels")
    base_rate = float(y.mean())
    base_logit = math.log(base_rate / (1 - base_rate))

    terms = []
    for j, spec in enumerate(schema.variables):
        if spec.kind == CONTINUOUS:
            terms.append(_binned_logit_term(spec, X[:, j], y, base_logit))
        else:
            terms.append(_category_term(spec, X[:, j], y, base_logit))

    intercept, weights = _fit_term_weights(_term_matrix(terms, X), y)
    scaled = []
    for term, s in zip(terms, weights):
        if term.kind == CONTINUOUS:
            scaled.append(
                SmoothTerm(
                    variable=term.variable, kind=term.kind,
                    knots_x=term.knots_x,
                    knots_y=tuple(s * v for v in term.knots_y),
                )
            )
        else:
            scaled.append(
                SmoothTerm(
                    variable=term.variable, kind=term.kind,
                    table=tuple(s * v for v in term.table),
                )
            )
    return GamModel(
        complication=complication,
        model_version=model_version,
        schema_version=schema.schema_version,
        intercept=intercept,
        terms=tuple(scaled),
    )


def predict_proba(model: GamModel, inputs: list) -> np.ndarray:
    X = np.asarray([mi.values for mi in inputs], dtype=float)
    z = _term_matrix(list(model.terms), X).sum(axis=1) + model.intercept
    return 1.0 / (1.0 + np.exp(-np.clip(z, -35, 35)))


@dataclass(frozen=True)
class ComplicationCalibration:
    model: GamModel
    cv: CrossValidationReport
    fold_scores: tuple  # (scores, labels) per fold, held-out


def calibrate_complication(
    schema: VariableSchema,
    inputs: list,
    labels: list,
    complication: ComplicationCode,
    folds: int = 5,
    seed: int = 0,
    model_version: str = "calibrated-1",
) -> ComplicationCalibration:
    """Cross-validated fit: per-fold model on train, metrics on held-out,
    final model fit on all rows."""
    assignments = stratified_folds(labels, folds, seed)
    per_fold = []
    fold_scores = []
    pooled_scores = [0.0] * len(labels)
    for k, test_idx in enumerate(assignments):
        test_set = set(test_idx)
        train_idx = [i for i in range(len(labels)) if i not in test_set]
        train_inputs = [inputs[i] for i in train_idx]
        train_labels = [labels[i] for i in train_idx]
        model_k = fit_gam(schema, train_inputs, train_labels, complication,
                          f"{model_version}-fold{k}")
        test_inputs = [inputs[i] for i in test_idx]
        test_labels = [labels[i] for i in test_idx]
        scores_k = predict_proba(model_k, test_inputs).tolist()
        for i, s in zip(test_idx, scores_k):
            pooled_scores[i] = s
        train_scores = predict_proba(model_k, train_inputs).tolist()
        cutoff_k, _ = youden_cutoff(train_scores, train_labels)
        sens, spec = sensitivity_specificity(scores_k, test_labels, cutoff_k)
        per_fold.append(
            FoldMetrics(
                fold=k,
                auroc=auroc(scores_k, test_labels),
                youden_j=sens + spec - 1.0,
                cutoff=cutoff_k,
            )
        )
        fold_scores.append((scores_k, test_labels))

    pooled_cutoff, pooled_j = youden_cutoff(pooled_scores, labels)
    n = len(per_fold)
    cv = CrossValidationReport(
        folds=tuple(per_fold),
        mean_auroc=math.fsum(f.auroc for f in per_fold) / n,
        mean_youden_j=math.fsum(f.youden_j for f in per_fold) / n,
        mean_cutoff=math.fsum(f.cutoff for f in per_fold) / n,
        pooled_cutoff=pooled_cutoff,
        pooled_youden_j=pooled_j,
    )
    final_model = fit_gam(schema, inputs, labels, complication, model_version)
    return ComplicationCalibration(model=final_model, cv=cv, fold_scores=tuple(fold_scores))


def calibrate_all(
    cohort_dir: str | Path,
    schema: VariableSchema,
    out_dir: str | Path,
    folds: int = 5,
    seed: int = 0,
    model_version: str = "calibrated-1",
    codes: tuple = COMPLICATION_ORDER,
) -> dict:
    """Calibrate every requested complication; write models, thresholds
    (pooled cutoffs), the fitted schema, and a metrics report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs, labels_by_code, fitted_schema, _ = load_cohort(cohort_dir, schema)
    fitted_schema.save(out_dir / "schema.json")

    results = {}
    cutoffs = {}
    report = {"folds": folds, "seed": seed, "rows": len(inputs), "complications": {}}
    models_dir = out_dir / "models"
    models_dir.mkdir(exist_ok=True)
    for code in codes:
        calib = calibrate_complication(
            fitted_schema, inputs, labels_by_code[code], code,
            folds=folds, seed=seed, model_version=model_version,
        )
        calib.model.save(models_dir / f"{code.value}.json")
        cutoffs[code] = calib.cv.pooled_cutoff
        results[code] = calib
        report["complications"][code.value] = {
            "mean_auroc": calib.cv.mean_auroc,
            "per_fold_auroc": [f.auroc for f in calib.cv.folds],
            "pooled_cutoff": calib.cv.pooled_cutoff,
            "mean_fold_cutoff": calib.cv.mean_cutoff,
            "pooled_youden_j": calib.cv.pooled_youden_j,
        }
    if set(codes) == set(COMPLICATION_ORDER):
        table = ThresholdTable(
            cutoffs=cutoffs, dataset_id=str(cohort_dir), calibrated_on="calibration-run"
        )
        table.save(out_dir / "thresholds.json")
    else:
        # partial runs still report their cutoffs; a full ThresholdTable
        # requires all eight complications
        (out_dir / "cutoffs_partial.json").write_text(
            json.dumps({c.value: cutoffs[c] for c in codes}, indent=2) + "\n",
            encoding="utf-8",
        )
    (out_dir / "calibration_report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8"
    )
    return results
