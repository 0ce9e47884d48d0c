"""Rank-correlation harness with significance testing and ROUGE baselines.

Scorer outputs are compared against per-summary human ratings along four
dimensions. Correlations are Spearman (average ranks, then Pearson) and
Kendall tau-b; averaged human ratings are heavily tied, so both handle
ties explicitly. Significance between two scorers uses a two-tailed
paired t-test whose p-value comes from the regularized incomplete beta
function, implemented here from scratch.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DIMENSIONS = ("coherence", "consistency", "fluency", "relevance")


def _rank_average(values: np.ndarray) -> np.ndarray:
    """1-based ranks; a run of equal values gets the mean of its span."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _check_vectors(xs, ys, min_n: int):
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-d and of equal length")
    if len(x) < min_n:
        raise ValueError(f"need at least {min_n} observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValueError("undefined correlation for constant input")
    return x, y


def spearman(xs, ys) -> float:
    x, y = _check_vectors(xs, ys, min_n=3)
    rx = _rank_average(x)
    ry = _rank_average(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))


def kendall_tau(xs, ys) -> float:
    """tau-b over all pairs: (C - D) / sqrt((C+D+Tx)(C+D+Ty)), where Tx
    counts pairs tied in x but not y and Ty the reverse."""
    x, y = _check_vectors(xs, ys, min_n=3)
    iu = np.triu_indices(len(x), k=1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    prod = sx * sy
    concordant = int((prod > 0).sum())
    discordant = int((prod < 0).sum())
    tied_x_only = int(((sx == 0) & (sy != 0)).sum())
    tied_y_only = int(((sy == 0) & (sx != 0)).sum())
    denom = math.sqrt(
        (concordant + discordant + tied_x_only)
        * (concordant + discordant + tied_y_only)
    )
    if denom == 0.0:
        raise ValueError("undefined correlation for constant input")
    return (concordant - discordant) / denom


_BETA_EPS = 1.0e-15
_BETA_FPMIN = 1.0e-300
_BETA_MAX_ITER = 300


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Lentz evaluation of the continued fraction for I_x(a, b)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_FPMIN:
        d = _BETA_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise ValueError("incomplete beta did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b). The continued fraction converges fast only for
    x < (a+1)/(a+b+2); above that the symmetry I_x(a,b) = 1 - I_{1-x}(b,a)
    moves the evaluation into the fast region."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("shape parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def paired_t_test(a, b) -> tuple[float, float]:
    """(t, two-tailed p) for paired samples; p via the t CDF expressed
    through the regularized incomplete beta."""
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-d and of equal length")
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 pairs")
    d = x - y
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise ValueError("zero-variance differences")
    t = float(d.mean() * math.sqrt(n) / sd)
    dof = n - 1
    p = regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))
    return t, min(max(p, 0.0), 1.0)


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def rouge_n(candidate, reference, n: int) -> tuple[float, float, float]:
    """Clipped n-gram multiset overlap; returns (precision, recall, f1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = [tuple(candidate[i : i + n]) for i in range(len(candidate) - n + 1)]
    ref = [tuple(reference[i : i + n]) for i in range(len(reference) - n + 1)]
    if not cand or not ref:
        return 0.0, 0.0, 0.0
    ref_counts = Counter(ref)
    overlap = sum(min(c, ref_counts[g]) for g, c in Counter(cand).items())
    precision = overlap / len(cand)
    recall = overlap / len(ref)
    return precision, recall, _f1(precision, recall)


def _lcs_length(a, b) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(candidate, reference) -> tuple[float, float, float]:
    if not candidate or not reference:
        return 0.0, 0.0, 0.0
    lcs = _lcs_length(list(candidate), list(reference))
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return precision, recall, _f1(precision, recall)


@dataclass(frozen=True)
class HumanAnnotation:
    doc_id: str
    system_id: str
    summary: str
    ratings: dict[str, float]

    def __post_init__(self) -> None:
        missing = [d for d in DIMENSIONS if d not in self.ratings]
        if missing:
            raise ValueError(f"annotation missing dimensions: {', '.join(missing)}")


@dataclass(frozen=True)
class DimensionResult:
    dimension: str
    spearman_rho: float
    kendall_tau: float
    n: int

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "spearman_rho": self.spearman_rho,
            "kendall_tau": self.kendall_tau,
            "n": self.n,
        }


@dataclass(frozen=True)
class SignificanceEntry:
    dimension: str
    baseline: str
    t: float
    p: float

    def to_dict(self) -> dict:
        return {"dimension": self.dimension, "baseline": self.baseline, "t": self.t, "p": self.p}


@dataclass
class CorrelationReport:
    aggregation: str
    results: list[DimensionResult] = field(default_factory=list)
    significance: list[SignificanceEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "aggregation": self.aggregation,
            "results": [r.to_dict() for r in self.results],
            "significance": [s.to_dict() for s in self.significance],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def evaluate(
    scores: list[tuple[str, str, float]],
    annotations: list[HumanAnnotation],
    dimension: str,
    system_level: bool = False,
) -> DimensionResult:
    """Correlate scorer outputs with one rating dimension. Default pools
    every (doc, system) summary into one pair list; system_level averages
    per system first and correlates the per-system means."""
    if dimension not in DIMENSIONS:
        raise ValueError(f"unknown dimension: {dimension}")
    lookup = {(ann.doc_id, ann.system_id): ann for ann in annotations}
    xs: list[float] = []
    ys: list[float] = []
    for doc_id, system_id, value in scores:
        ann = lookup.get((doc_id, system_id))
        if ann is None:
            raise ValueError(f"no annotation for doc_id={doc_id!r} system_id={system_id!r}")
        xs.append(float(value))
        ys.append(float(ann.ratings[dimension]))
    if system_level:
        by_system: dict[str, list[tuple[float, float]]] = {}
        for (doc_id, system_id, value), rating in zip(scores, ys):
            by_system.setdefault(system_id, []).append((float(value), rating))
        systems = sorted(by_system)
        xs = [float(np.mean([v for v, _ in by_system[s]])) for s in systems]
        ys = [float(np.mean([r for _, r in by_system[s]])) for s in systems]
    return DimensionResult(
        dimension=dimension,
        spearman_rho=spearman(xs, ys),
        kendall_tau=kendall_tau(xs, ys),
        n=len(xs),
    )


def _per_document_spearman(
    scores: list[tuple[str, str, float]],
    annotations: list[HumanAnnotation],
    dimension: str,
) -> dict[str, float]:
    lookup = {(ann.doc_id, ann.system_id): ann for ann in annotations}
    by_doc: dict[str, list[tuple[float, float]]] = {}
    for doc_id, system_id, value in scores:
        ann = lookup.get((doc_id, system_id))
        if ann is None:
            raise ValueError(f"no annotation for doc_id={doc_id!r} system_id={system_id!r}")
        by_doc.setdefault(doc_id, []).append((float(value), float(ann.ratings[dimension])))
    out: dict[str, float] = {}
    for doc_id, pairs in by_doc.items():
        try:
            out[doc_id] = spearman([v for v, _ in pairs], [r for _, r in pairs])
        except ValueError:
            continue
    return out


def significance_against_baseline(
    scores: list[tuple[str, str, float]],
    baseline_scores: list[tuple[str, str, float]],
    annotations: list[HumanAnnotation],
    dimension: str,
) -> tuple[float, float, int]:
    """Paired t-test between two scorers on one dimension. The paired
    samples are per-document Spearman correlations against the ratings,
    computed across systems within each document; documents where either
    correlation is undefined drop out of the pairing. Returns (t, p, n)
    with n the number of paired documents."""
    if dimension not in DIMENSIONS:
        raise ValueError(f"unknown dimension: {dimension}")
    main = _per_document_spearman(scores, annotations, dimension)
    base = _per_document_spearman(baseline_scores, annotations, dimension)
    docs = sorted(set(main) & set(base))
    if len(docs) < 2:
        raise ValueError("need at least 2 documents with defined correlations")
    t, p = paired_t_test([main[d] for d in docs], [base[d] for d in docs])
    return t, p, len(docs)


def write_annotations_jsonl(
    annotations: list[HumanAnnotation],
    path: str | Path,
    scale: tuple[float, float] = (1.0, 5.0),
) -> None:
    """First line is a header object declaring the rating scale."""
    low, high = scale
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"rating_scale": [low, high]}) + "\n")
        for ann in annotations:
            fh.write(
                json.dumps(
                    {
                        "doc_id": ann.doc_id,
                        "system_id": ann.system_id,
                        "summary": ann.summary,
                        "ratings": {d: ann.ratings[d] for d in DIMENSIONS},
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_annotations_jsonl(
    path: str | Path,
) -> tuple[list[HumanAnnotation], tuple[float, float]]:
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
            low, high = (float(v) for v in header["rating_scale"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed annotation header: {exc}") from exc
        out: list[HumanAnnotation] = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                ann = HumanAnnotation(
                    doc_id=row["doc_id"],
                    system_id=row["system_id"],
                    summary=row["summary"],
                    ratings={k: float(v) for k, v in row["ratings"].items()},
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"malformed annotation line {lineno}: {exc}") from exc
            for dim, value in ann.ratings.items():
                if not low <= value <= high:
                    raise ValueError(
                        f"annotation line {lineno}: {dim} rating {value} outside scale [{low}, {high}]"
                    )
            out.append(ann)
    return out, (low, high)
