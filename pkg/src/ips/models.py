"""Additive risk models: loading, scoring with per-variable attribution,
Youden-cutoff calibration, and Low/High classification.

A model is an intercept on the logit scale plus one smooth term per
schema variable: piecewise-linear knot tables for continuous variables
(linear interpolation inside the knot range, flat extrapolation
outside) and per-category value tables for nominal ones. The score is
``logistic(intercept + sum of term contributions)``, so attribution is
exact by construction.

Classification boundary: probability >= cutoff is High, everywhere.
"""

from __future__ import annotations

import json
import math
import random
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

from .domain import (
    COMPLICATION_ORDER,
    AdmissionKey,
    ComplicationCode,
    RiskClass,
    RiskProfile,
)
from .features import CONTINUOUS, NOMINAL, ModelInput, VariableSchema

DEFAULT_TOP_CONTRIBUTORS = 5

# Published cutoff defaults for the eight complications.
PUBLISHED_CUTOFFS = {
    ComplicationCode.AKI: 0.35,
    ComplicationCode.ICU: 0.35,
    ComplicationCode.MV: 0.13,
    ComplicationCode.WND: 0.10,
    ComplicationCode.CV: 0.07,
    ComplicationCode.NEU: 0.07,
    ComplicationCode.SEP: 0.06,
    ComplicationCode.VTE: 0.03,
}


class ModelError(Exception):
    pass


def logistic(x: float) -> float:
    # split form avoids overflow for large |x|
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class SmoothTerm:
    """One additive term: knot table (continuous) or category table (nominal)."""

    variable: str
    kind: str
    knots_x: tuple = ()  # strictly increasing, k >= 2
    knots_y: tuple = ()
    table: tuple = ()  # nominal: value per dictionary index

    def evaluate(self, x: float) -> float:
        if self.kind == NOMINAL:
            idx = int(x)
            if not (0 <= idx < len(self.table)):
                raise ModelError(f"{self.variable}: index {idx} outside category table")
            return self.table[idx]
        xs, ys = self.knots_x, self.knots_y
        if x <= xs[0]:
            return ys[0]
        if x >= xs[-1]:
            return ys[-1]
        j = bisect_right(xs, x)
        x0, x1 = xs[j - 1], xs[j]
        y0, y1 = ys[j - 1], ys[j]
        return y0 + (y1 - y0) * (x - x0) / (x1 - x0)

    def to_obj(self) -> dict:
        if self.kind == NOMINAL:
            return {"variable": self.variable, "kind": self.kind, "table": list(self.table)}
        return {
            "variable": self.variable,
            "kind": self.kind,
            "knots": [[x, y] for x, y in zip(self.knots_x, self.knots_y)],
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "SmoothTerm":
        if obj["kind"] == NOMINAL:
            return cls(variable=obj["variable"], kind=NOMINAL, table=tuple(obj["table"]))
        knots = obj["knots"]
        return cls(
            variable=obj["variable"],
            kind=CONTINUOUS,
            knots_x=tuple(float(k[0]) for k in knots),
            knots_y=tuple(float(k[1]) for k in knots),
        )


@dataclass(frozen=True)
class GamModel:
    complication: ComplicationCode
    model_version: str
    schema_version: str
    intercept: float
    terms: tuple  # one SmoothTerm per schema variable, in schema order
    shared_term_ids: tuple = ()  # reserved for future multitask models

    def to_obj(self) -> dict:
        return {
            "complication": self.complication.value,
            "model_version": self.model_version,
            "schema_version": self.schema_version,
            "intercept": self.intercept,
            "terms": [t.to_obj() for t in self.terms],
            "shared_term_ids": list(self.shared_term_ids),
        }

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_obj(), indent=2) + "\n", encoding="utf-8")


def _check_model(model: GamModel, schema: VariableSchema) -> GamModel:
    if model.schema_version != schema.schema_version:
        raise ModelError(
            f"model schema_version {model.schema_version!r} does not match "
            f"active schema {schema.schema_version!r}"
        )
    by_name = {t.variable: t for t in model.terms}
    if len(by_name) != len(model.terms):
        raise ModelError(f"{model.complication.value}: duplicate variable terms")
    for spec in schema.variables:
        term = by_name.pop(spec.name, None)
        if term is None:
            raise ModelError(f"missing term for variable {spec.name!r}")
        if term.kind != spec.kind:
            raise ModelError(f"{spec.name}: term kind {term.kind!r} != schema {spec.kind!r}")
        if spec.kind == CONTINUOUS:
            if len(term.knots_x) < 2:
                raise ModelError(f"{spec.name}: needs at least 2 knots")
            if any(a >= b for a, b in zip(term.knots_x, term.knots_x[1:])):
                raise ModelError(f"{spec.name}: knots not increasing")
        else:
            if len(term.table) != len(spec.categories):
                raise ModelError(
                    f"{spec.name}: table covers {len(term.table)} categories, "
                    f"dictionary has {len(spec.categories)}"
                )
    if by_name:
        extra = ", ".join(sorted(by_name))
        raise ModelError(f"terms for unknown variables: {extra}")
    # reorder terms to schema order so scoring can zip positionally
    ordered = tuple(
        next(t for t in model.terms if t.variable == spec.name) for spec in schema.variables
    )
    return GamModel(
        complication=model.complication,
        model_version=model.model_version,
        schema_version=model.schema_version,
        intercept=model.intercept,
        terms=ordered,
        shared_term_ids=model.shared_term_ids,
    )


def load_model(path: str | Path, schema: VariableSchema) -> GamModel:
    """Load and validate one model file against the active schema."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    model = GamModel(
        complication=ComplicationCode(obj["complication"]),
        model_version=str(obj["model_version"]),
        schema_version=str(obj["schema_version"]),
        intercept=float(obj["intercept"]),
        terms=tuple(SmoothTerm.from_obj(t) for t in obj["terms"]),
        shared_term_ids=tuple(obj.get("shared_term_ids", ())),
    )
    return _check_model(model, schema)


def load_model_set(model_dir: str | Path, schema: VariableSchema) -> dict:
    """Load all eight complication models from ``<dir>/<code>.json``."""
    models = {}
    for code in COMPLICATION_ORDER:
        path = Path(model_dir) / f"{code.value}.json"
        if not path.exists():
            raise ModelError(f"missing model file for {code.value}: {path}")
        models[code] = load_model(path, schema)
    return models


@dataclass(frozen=True)
class ScoredResult:
    probability: float
    linear_predictor: float
    contributions: tuple  # (variable, contribution) in schema order


def evaluate_term(term: SmoothTerm, x: float) -> float:
    return term.evaluate(x)


def score(model: GamModel, model_input: ModelInput) -> ScoredResult:
    """Score one input: contributions per variable, logit sum, logistic link."""
    if len(model_input.values) != len(model.terms):
        raise ModelError(
            f"input length {len(model_input.values)} != model terms {len(model.terms)}"
        )
    contributions = tuple(
        (term.variable, term.evaluate(x)) for term, x in zip(model.terms, model_input.values)
    )
    lp = model.intercept
    for _, c in contributions:
        lp += c
    return ScoredResult(
        probability=logistic(lp), linear_predictor=lp, contributions=contributions
    )


@dataclass(frozen=True)
class ThresholdTable:
    """Cutoff per complication plus calibration provenance."""

    cutoffs: dict  # ComplicationCode -> float in (0, 1)
    dataset_id: str = "unspecified"
    calibrated_on: str = "unspecified"

    def __post_init__(self):
        missing = [c.value for c in COMPLICATION_ORDER if c not in self.cutoffs]
        if missing:
            raise ModelError(f"threshold table missing cutoffs for: {', '.join(missing)}")
        for code, cut in self.cutoffs.items():
            if not (0.0 < cut < 1.0):
                raise ModelError(f"{code.value}: cutoff {cut} outside (0, 1)")

    def classify(self, code: ComplicationCode, probability: float) -> RiskClass:
        return RiskClass.HIGH if probability >= self.cutoffs[code] else RiskClass.LOW

    def to_obj(self) -> dict:
        return {
            "cutoffs": {c.value: self.cutoffs[c] for c in COMPLICATION_ORDER},
            "dataset_id": self.dataset_id,
            "calibrated_on": self.calibrated_on,
        }

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_obj(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ThresholdTable":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if "cutoffs" in obj:
            cutoffs = obj["cutoffs"]
            meta = {
                "dataset_id": obj.get("dataset_id", "unspecified"),
                "calibrated_on": obj.get("calibrated_on", "unspecified"),
            }
        else:  # flat {code: cutoff} map
            cutoffs = obj
            meta = {}
        return cls(
            cutoffs={ComplicationCode(c): float(v) for c, v in cutoffs.items()}, **meta
        )


def score_all(
    models: dict,
    model_input: ModelInput,
    thresholds: ThresholdTable,
    schema: VariableSchema,
    key: AdmissionKey,
    scored_at: int,
    top_n: int = DEFAULT_TOP_CONTRIBUTORS,
) -> RiskProfile:
    """Score all eight complications into a RiskProfile.

    Contributor lists keep the top-N by |contribution|, ties broken by
    schema order.
    """
    missing = [c.value for c in COMPLICATION_ORDER if c not in models]
    if missing:
        raise ModelError(f"missing models for: {', '.join(missing)}")
    scores = {}
    classes = {}
    contributors = {}
    versions = []
    for code in COMPLICATION_ORDER:
        result = score(models[code], model_input)
        scores[code] = result.probability
        classes[code] = thresholds.classify(code, result.probability)
        ranked = sorted(
            enumerate(result.contributions), key=lambda ic: (-abs(ic[1][1]), ic[0])
        )
        contributors[code] = tuple(ranked_item[1] for ranked_item in ranked[:top_n])
        versions.append(models[code].model_version)
    version = versions[0] if len(set(versions)) == 1 else "mixed:" + ",".join(sorted(set(versions)))
    return RiskProfile(
        key=key,
        scores=scores,
        classes=classes,
        contributors=contributors,
        scored_at=scored_at,
        model_version=version,
    )


# -- calibration metrics -----------------------------------------------------


def youden_cutoff(scores: list, labels: list) -> tuple[float, float]:
    """Cutoff maximizing J = sensitivity + specificity - 1.

    Classification rule is ``score >= t -> positive``. Candidates are
    every distinct score plus one value just beyond the maximum (the
    all-negative classifier); ties go to the smallest threshold.
    """
    if len(scores) != len(labels):
        raise ModelError("scores and labels length mismatch")
    n_pos = sum(1 for y in labels if y == 1)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ModelError("degenerate labels")

    order = sorted(range(len(scores)), key=lambda i: scores[i])
    sorted_scores = [scores[i] for i in order]
    sorted_labels = [labels[i] for i in order]

    # suffix counts: pos_at_or_after[i] = positives with score >= sorted_scores[i]
    pos_suffix = [0] * (len(scores) + 1)
    for i in range(len(scores) - 1, -1, -1):
        pos_suffix[i] = pos_suffix[i + 1] + (1 if sorted_labels[i] == 1 else 0)

    best_t = None
    best_j = -math.inf
    i = 0
    while i < len(sorted_scores):
        t = sorted_scores[i]
        tp = pos_suffix[i]
        predicted_pos = len(scores) - i
        fp = predicted_pos - tp
        tn = n_neg - fp
        j = tp / n_pos + tn / n_neg - 1.0
        if j > best_j:
            best_j = j
            best_t = t
        i += 1
        while i < len(sorted_scores) and sorted_scores[i] == t:
            i += 1
    # all-negative candidate: threshold just beyond the max score
    t_beyond = math.nextafter(sorted_scores[-1], math.inf)
    j_beyond = 0.0 / n_pos + n_neg / n_neg - 1.0
    if j_beyond > best_j:
        best_j = j_beyond
        best_t = t_beyond
    return (best_t, best_j)


def auroc(scores: list, labels: list) -> float:
    """AUROC via tie-averaged ranks; equals pairwise concordance exactly."""
    n_pos = sum(1 for y in labels if y == 1)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ModelError("degenerate labels")
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        avg_rank = (i + j) / 2.0 + 1.0  # 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = avg_rank
        i = j + 1
    rank_sum_pos = math.fsum(ranks[i] for i in range(len(labels)) if labels[i] == 1)
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def sensitivity_specificity(scores: list, labels: list, cutoff: float) -> tuple[float, float]:
    tp = fn = tn = fp = 0
    for s, y in zip(scores, labels):
        if y == 1:
            if s >= cutoff:
                tp += 1
            else:
                fn += 1
        else:
            if s >= cutoff:
                fp += 1
            else:
                tn += 1
    sens = tp / (tp + fn) if (tp + fn) else 0.0
    spec = tn / (tn + fp) if (tn + fp) else 0.0
    return sens, spec


def stratified_folds(labels: list, folds: int, seed: int) -> list:
    """Deterministic stratified fold assignment; returns index lists."""
    pos = [i for i, y in enumerate(labels) if y == 1]
    neg = [i for i, y in enumerate(labels) if y != 1]
    if len(pos) < folds or len(neg) < folds:
        raise ModelError(
            f"need at least {folds} examples per class, have {len(pos)} pos / {len(neg)} neg"
        )
    rng = random.Random(seed)
    rng.shuffle(pos)
    rng.shuffle(neg)
    return [sorted(pos[k::folds] + neg[k::folds]) for k in range(folds)]


@dataclass(frozen=True)
class FoldMetrics:
    fold: int
    auroc: float
    youden_j: float
    cutoff: float


@dataclass(frozen=True)
class CrossValidationReport:
    folds: tuple  # FoldMetrics per fold
    mean_auroc: float
    mean_youden_j: float
    mean_cutoff: float
    pooled_cutoff: float
    pooled_youden_j: float


def crossvalidate(scores: list, labels: list, folds: int = 5, seed: int = 0) -> CrossValidationReport:
    """K-fold evaluation of scored data: cutoff fit on train folds,
    AUROC and J measured on the held-out fold at that cutoff."""
    assignments = stratified_folds(labels, folds, seed)
    per_fold = []
    for k, test_idx in enumerate(assignments):
        test_set = set(test_idx)
        train_scores = [scores[i] for i in range(len(scores)) if i not in test_set]
        train_labels = [labels[i] for i in range(len(labels)) if i not in test_set]
        test_scores = [scores[i] for i in test_idx]
        test_labels = [labels[i] for i in test_idx]
        cutoff, _ = youden_cutoff(train_scores, train_labels)
        sens, spec = sensitivity_specificity(test_scores, test_labels, cutoff)
        per_fold.append(
            FoldMetrics(
                fold=k,
                auroc=auroc(test_scores, test_labels),
                youden_j=sens + spec - 1.0,
                cutoff=cutoff,
            )
        )
    pooled_cutoff, pooled_j = youden_cutoff(scores, labels)
    n = len(per_fold)
    return CrossValidationReport(
        folds=tuple(per_fold),
        mean_auroc=math.fsum(f.auroc for f in per_fold) / n,
        mean_youden_j=math.fsum(f.youden_j for f in per_fold) / n,
        mean_cutoff=math.fsum(f.cutoff for f in per_fold) / n,
        pooled_cutoff=pooled_cutoff,
        pooled_youden_j=pooled_j,
    )
