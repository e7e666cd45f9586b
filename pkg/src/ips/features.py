"""Streaming feature engineering: variable generation, outlier removal,
mean/MISSING imputation, and dictionary encoding into a fixed-order
numeric vector.

A :class:`VariableSchema` is loaded once from a versioned JSON file and
is immutable afterwards; every operation here is a pure function of
(input, schema) and safe to run per-envelope in parallel. Training
means and outlier bounds are frozen into the schema at calibration time
so the streaming path never drifts from the fit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .domain import AdmissionEnvelope
from .metrics import MetricsRegistry, NULL_METRICS

MISSING_CATEGORY = "MISSING"

CONTINUOUS = "continuous"
NOMINAL = "nominal"

# extraction aggregations over list sources
_LIST_AGGS = ("min", "max", "mean", "last", "first", "count")


class SchemaError(Exception):
    pass


@dataclass(frozen=True)
class ExtractRule:
    """Where a variable's raw value comes from inside an envelope.

    ``source`` is ``admission`` or one of the record lists; ``where``
    holds equality filters on list rows (e.g. ``{"lab_name": "creatinine"}``);
    ``order_by`` names the timestamp field used by last/first.
    """

    source: str  # admission | providers | labs | medications
    agg: str  # value | min | max | mean | last | first | count | has_token
    field: str | None = None
    where: tuple = ()  # tuple of (field, value) pairs
    token: str | None = None
    order_by: str | None = None

    def to_obj(self) -> dict:
        obj = {"source": self.source, "agg": self.agg}
        if self.field is not None:
            obj["field"] = self.field
        if self.where:
            obj["where"] = dict(self.where)
        if self.token is not None:
            obj["token"] = self.token
        if self.order_by is not None:
            obj["order_by"] = self.order_by
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "ExtractRule":
        return cls(
            source=obj["source"],
            agg=obj["agg"],
            field=obj.get("field"),
            where=tuple(sorted(obj.get("where", {}).items())),
            token=obj.get("token"),
            order_by=obj.get("order_by"),
        )


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str  # continuous | nominal
    extract: ExtractRule
    bounds: tuple | None = None  # (lo, hi) closed interval, continuous only
    mean: float | None = None  # training mean, continuous only
    categories: tuple = ()  # nominal only; index = dictionary code

    def category_index(self, label: str) -> int | None:
        try:
            return self.categories.index(label)
        except ValueError:
            return None

    def to_obj(self) -> dict:
        obj = {"name": self.name, "kind": self.kind, "extract": self.extract.to_obj()}
        if self.kind == CONTINUOUS:
            obj["bounds"] = list(self.bounds) if self.bounds else None
            obj["mean"] = self.mean
        else:
            obj["categories"] = list(self.categories)
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "VariableSpec":
        kind = obj["kind"]
        return cls(
            name=obj["name"],
            kind=kind,
            extract=ExtractRule.from_obj(obj["extract"]),
            bounds=tuple(obj["bounds"]) if obj.get("bounds") else None,
            mean=obj.get("mean"),
            categories=tuple(obj.get("categories", ())) if kind == NOMINAL else (),
        )


@dataclass(frozen=True)
class VariableSchema:
    """Ordered variable list; the single source of feature order."""

    schema_version: str
    variables: tuple

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise SchemaError("variable names must be unique")
        for v in self.variables:
            if v.kind not in (CONTINUOUS, NOMINAL):
                raise SchemaError(f"{v.name}: unknown kind {v.kind!r}")
            if v.kind == NOMINAL and MISSING_CATEGORY not in v.categories:
                raise SchemaError(f"{v.name}: dictionary lacks {MISSING_CATEGORY!r}")

    def __len__(self):
        return len(self.variables)

    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def require_fitted(self):
        """Raise unless every continuous variable has finite bounds and mean."""
        for v in self.variables:
            if v.kind == CONTINUOUS:
                if v.bounds is None or not all(math.isfinite(b) for b in v.bounds):
                    raise SchemaError(f"{v.name}: bounds not fitted")
                if v.mean is None or not math.isfinite(v.mean):
                    raise SchemaError(f"{v.name}: training mean not fitted")

    def to_obj(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "variables": [v.to_obj() for v in self.variables],
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "VariableSchema":
        return cls(
            schema_version=str(obj["schema_version"]),
            variables=tuple(VariableSpec.from_obj(v) for v in obj["variables"]),
        )

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_obj(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "VariableSchema":
        return cls.from_obj(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class FeatureFlags:
    observed: bool = False
    outlier_removed: bool = False
    imputed: bool = False


@dataclass(frozen=True)
class RawFeatureVector:
    """Per-variable raw values plus provenance flags.

    ``None`` is the missing-marker. Continuous values are floats,
    nominal values are category label strings.
    """

    values: tuple
    flags: tuple

    def __len__(self):
        return len(self.values)

    def has_missing(self) -> bool:
        return any(v is None for v in self.values)


@dataclass(frozen=True)
class ModelInput:
    """Fixed-order numeric vector: continuous values and dictionary indices."""

    values: tuple  # floats; nominal entries are float(index)


def _as_number(value) -> float | None:
    if value is None or isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value) if math.isfinite(float(value)) else None
    try:
        f = float(str(value))
        return f if math.isfinite(f) else None
    except ValueError:
        return None


def _rows_for(env: AdmissionEnvelope, source: str) -> list | None:
    if source == "providers":
        return list(env.providers)
    if source == "labs":
        return list(env.labs)
    if source == "medications":
        return list(env.medications)
    return None


def _extract_one(env: AdmissionEnvelope, rule: ExtractRule, metrics: MetricsRegistry):
    """Apply one extraction rule; returns value or None (missing)."""
    if rule.source == "admission":
        if rule.agg == "has_token":
            raw = env.admission.get(rule.field)
            if raw is None:
                return None
            tokens = {t.strip() for t in str(raw).split(";") if t.strip()}
            return "YES" if rule.token in tokens else "NO"
        if rule.agg != "value":
            metrics.incr("features.bad_rule")
            return None
        if rule.field not in env.admission:
            metrics.incr("features.unknown_field")
            return None
        return env.admission.get(rule.field)

    rows = _rows_for(env, rule.source)
    if rows is None:
        metrics.incr("features.bad_rule")
        return None
    if rule.where:
        rows = [r for r in rows if all(r.get(f) == v for f, v in rule.where)]
    if rule.agg == "count":
        return float(len(rows))
    if rule.agg not in _LIST_AGGS:
        metrics.incr("features.bad_rule")
        return None
    if rule.agg in ("last", "first"):
        order_field = rule.order_by or "observed_at"
        keyed = [r for r in rows if r.get(rule.field) is not None]
        if not keyed:
            return None
        keyed.sort(key=lambda r: str(r.get(order_field, "")))
        row = keyed[-1] if rule.agg == "last" else keyed[0]
        return row.get(rule.field)
    numbers = [n for r in rows if (n := _as_number(r.get(rule.field))) is not None]
    if not numbers:
        return None
    if rule.agg == "min":
        return min(numbers)
    if rule.agg == "max":
        return max(numbers)
    return math.fsum(numbers) / len(numbers)


def generate_variables(
    env: AdmissionEnvelope, schema: VariableSchema, metrics: MetricsRegistry = NULL_METRICS
) -> RawFeatureVector:
    """Extract every schema variable from an envelope.

    Absent sources and unknown fields yield the missing-marker with a
    counted warning; extraction never raises on envelope content.
    """
    values = []
    flags = []
    for spec in schema.variables:
        raw = _extract_one(env, spec.extract, metrics)
        if spec.kind == CONTINUOUS:
            value = _as_number(raw)
        else:
            value = None if raw is None else str(raw)
        values.append(value)
        flags.append(FeatureFlags(observed=value is not None))
    return RawFeatureVector(values=tuple(values), flags=tuple(flags))


def remove_outliers(raw: RawFeatureVector, schema: VariableSchema) -> RawFeatureVector:
    """Replace out-of-bounds continuous values with the missing-marker.

    Bounds are closed intervals: a value exactly at either bound is kept.
    Nominal values pass through untouched. Idempotent.
    """
    values = list(raw.values)
    flags = list(raw.flags)
    for i, spec in enumerate(schema.variables):
        if spec.kind != CONTINUOUS or spec.bounds is None or values[i] is None:
            continue
        lo, hi = spec.bounds
        if not (lo <= values[i] <= hi):
            values[i] = None
            flags[i] = replace(flags[i], outlier_removed=True)
    return RawFeatureVector(values=tuple(values), flags=tuple(flags))


def impute(raw: RawFeatureVector, schema: VariableSchema) -> RawFeatureVector:
    """Fill every missing-marker: training mean for continuous variables,
    the reserved MISSING category for nominal ones. Idempotent; output
    has no missing-markers."""
    values = list(raw.values)
    flags = list(raw.flags)
    for i, spec in enumerate(schema.variables):
        if values[i] is not None:
            continue
        if spec.kind == CONTINUOUS:
            if spec.mean is None:
                raise SchemaError(f"{spec.name}: training mean not fitted")
            values[i] = spec.mean
        else:
            values[i] = MISSING_CATEGORY
        flags[i] = replace(flags[i], imputed=True)
    return RawFeatureVector(values=tuple(values), flags=tuple(flags))


def encode(
    raw: RawFeatureVector, schema: VariableSchema, metrics: MetricsRegistry = NULL_METRICS
) -> ModelInput:
    """Map a complete raw vector to the fixed-order numeric model input.

    Nominal labels go through the schema dictionary; labels absent from
    the dictionary fall back to the MISSING index with a counted warning.
    """
    if raw.has_missing():
        raise SchemaError("unimputed input")
    out = []
    for i, spec in enumerate(schema.variables):
        if spec.kind == CONTINUOUS:
            out.append(float(raw.values[i]))
            continue
        idx = spec.category_index(raw.values[i])
        if idx is None:
            idx = spec.category_index(MISSING_CATEGORY)
            metrics.incr("features.unknown_category")
        out.append(float(idx))
    return ModelInput(values=tuple(out))


def envelope_to_input(
    env: AdmissionEnvelope, schema: VariableSchema, metrics: MetricsRegistry = NULL_METRICS
) -> ModelInput:
    """The full streaming stage: generate -> remove outliers -> impute -> encode."""
    raw = generate_variables(env, schema, metrics)
    raw = remove_outliers(raw, schema)
    raw = impute(raw, schema)
    return encode(raw, schema, metrics)


def fit_schema_statistics(
    schema: VariableSchema,
    rows: list,
    percentile_clip: tuple | None = None,
) -> VariableSchema:
    """Freeze training means (and optionally percentile bounds) into a schema.

    ``rows`` are raw feature vectors straight from :func:`generate_variables`.
    When ``percentile_clip`` (lo_pct, hi_pct) is given, bounds are fitted
    from the observed values first; explicit bounds already in the schema
    are kept otherwise. Means are computed over observed, in-bounds values.
    """
    import numpy as np

    columns: dict[int, list] = {i: [] for i in range(len(schema.variables))}
    for row in rows:
        for i, value in enumerate(row.values):
            if value is not None and schema.variables[i].kind == CONTINUOUS:
                columns[i].append(value)

    fitted = []
    for i, spec in enumerate(schema.variables):
        if spec.kind != CONTINUOUS:
            fitted.append(spec)
            continue
        observed = columns[i]
        if not observed:
            raise SchemaError(f"{spec.name}: no observed values to fit")
        arr = np.asarray(observed, dtype=float)
        if percentile_clip is not None:
            lo, hi = np.percentile(arr, list(percentile_clip))
            bounds = (float(lo), float(hi))
        elif spec.bounds is not None:
            bounds = spec.bounds
        else:
            bounds = (float(arr.min()), float(arr.max()))
        in_bounds = arr[(arr >= bounds[0]) & (arr <= bounds[1])]
        if in_bounds.size == 0:
            raise SchemaError(f"{spec.name}: all observed values fall outside bounds")
        fitted.append(replace(spec, bounds=bounds, mean=float(in_bounds.mean())))
    return VariableSchema(schema_version=schema.schema_version, variables=tuple(fitted))
