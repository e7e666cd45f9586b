"""Independent brute-force oracles.

These deliberately re-derive results by the most direct method
available (exhaustive scans, direct summation, pairwise counting) and
never share code with the implementation paths they check.
"""

import math
import random

from ips.domain import ComplicationCode
from ips.features import ModelInput
from ips.models import GamModel, SmoothTerm


def oracle_term_eval(term: SmoothTerm, x: float) -> float:
    """Segment-scan interpolation; no bisect."""
    if term.kind == "nominal":
        return term.table[int(x)]
    xs, ys = term.knots_x, term.knots_y
    if x <= xs[0]:
        return ys[0]
    if x >= xs[-1]:
        return ys[-1]
    for i in range(len(xs) - 1):
        if xs[i] <= x <= xs[i + 1]:
            frac = (x - xs[i]) / (xs[i + 1] - xs[i])
            return ys[i] + frac * (ys[i + 1] - ys[i])
    raise AssertionError("unreachable")


def oracle_score(model: GamModel, values) -> tuple:
    """Independent direct summation + logistic; returns (probability, lp)."""
    total = math.fsum([model.intercept] + [
        oracle_term_eval(term, x) for term, x in zip(model.terms, values)
    ])
    return 1.0 / (1.0 + math.exp(-total)), total


def oracle_youden(scores, labels) -> tuple:
    """Exhaustive O(n^2): every distinct score (plus one beyond max) as
    threshold, full recount at each."""
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    candidates = sorted(set(scores)) + [math.nextafter(max(scores), math.inf)]
    best_t, best_j = None, -math.inf
    for t in candidates:
        tp = sum(1 for s, y in zip(scores, labels) if y == 1 and s >= t)
        tn = sum(1 for s, y in zip(scores, labels) if y == 0 and s < t)
        j = tp / n_pos + tn / n_neg - 1.0
        if j > best_j:
            best_t, best_j = t, j
    return best_t, best_j


def oracle_auroc(scores, labels) -> float:
    """Exhaustive pairwise concordance count."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1 for p in pos for q in neg if p > q)
    ties = sum(1 for p in pos for q in neg if p == q)
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def oracle_auroc_numpy(scores, labels) -> float:
    """Pairwise concordance via outer comparison; for subsamples <= ~2000."""
    import numpy as np

    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    pos = s[y == 1][:, None]
    neg = s[y == 0][None, :]
    wins = np.count_nonzero(pos > neg)
    ties = np.count_nonzero(pos == neg)
    return (wins + 0.5 * ties) / (pos.size * neg.shape[1])


def random_model_and_input(rng: random.Random, n_vars: int = 6) -> tuple:
    """A random valid model plus a conforming input vector."""
    terms = []
    values = []
    for j in range(n_vars):
        if rng.random() < 0.6:
            k = rng.randint(2, 6)
            xs = sorted(rng.uniform(-10, 10) for _ in range(k))
            while len(set(xs)) != k:
                xs = sorted(rng.uniform(-10, 10) for _ in range(k))
            ys = [rng.uniform(-2, 2) for _ in range(k)]
            terms.append(SmoothTerm(variable=f"v{j}", kind="continuous",
                                    knots_x=tuple(xs), knots_y=tuple(ys)))
            values.append(rng.uniform(-15, 15))
        else:
            size = rng.randint(2, 5)
            terms.append(SmoothTerm(
                variable=f"v{j}", kind="nominal",
                table=tuple(rng.uniform(-1, 1) for _ in range(size)),
            ))
            values.append(float(rng.randrange(size)))
    model = GamModel(
        complication=ComplicationCode.AKI, model_version="rnd",
        schema_version="rnd", intercept=rng.uniform(-3, 3), terms=tuple(terms),
    )
    return model, ModelInput(values=tuple(values))
