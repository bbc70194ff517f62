"""Evaluation statistics: accuracy, macro F1, the oracle upper bound, and
the significance/agreement tests used to analyze verification runs.

Conventions, fixed here so reported numbers are comparable:

* macro F1 is the unweighted mean of per-class F1 over the three verdict
  classes; a class with a zero denominator contributes F1 = 0 and is still
  averaged.
* the Mann-Whitney test is exact (full enumeration over rank assignments,
  midranks for ties) for combined n <= 20 and a tie-corrected normal
  approximation with continuity correction above that.
* p-values are reported to four decimals; no multiple-comparison correction.

All operations are pure functions over in-memory data.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import AnnotationRecord, ClaimRecord, VerdictLabel
from .errors import (
    ClaimSetMismatch,
    DegenerateTable,
    EmptySample,
    InsufficientData,
    MissingGold,
)

LABELS = (VerdictLabel.SUPPORTED, VerdictLabel.REFUTED, VerdictLabel.NEI)
_LABEL_POS = {label: i for i, label in enumerate(LABELS)}

EXACT_MANN_WHITNEY_MAX_N = 20


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


class ConfusionMatrix:
    """3x3 integer counts indexed (gold, predicted) over the verdict labels."""

    def __init__(self):
        self.counts = [[0, 0, 0] for _ in range(3)]

    def add(self, gold: VerdictLabel, predicted: VerdictLabel) -> None:
        self.counts[_LABEL_POS[gold]][_LABEL_POS[predicted]] += 1

    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def correct(self) -> int:
        return sum(self.counts[i][i] for i in range(3))

    def rows(self):
        """Yield (gold, predicted, count) over all nine cells."""
        for i, gold in enumerate(LABELS):
            for j, pred in enumerate(LABELS):
                yield gold, pred, self.counts[i][j]

    @classmethod
    def from_counts(cls, counts) -> "ConfusionMatrix":
        cm = cls()
        for i in range(3):
            for j in range(3):
                cm.counts[i][j] = int(counts[i][j])
        return cm


@dataclass
class MetricReport:
    accuracy: float
    macro_f1: float
    per_class: dict
    n_scored: int
    n_fallback: int


def _metrics_from_matrix(cm: ConfusionMatrix, n_fallback: int) -> MetricReport:
    total = cm.total()
    accuracy = cm.correct() / total if total else 0.0
    per_class = {}
    f1_sum = 0.0
    for idx, label in enumerate(LABELS):
        tp = cm.counts[idx][idx]
        predicted = sum(cm.counts[i][idx] for i in range(3))
        gold = sum(cm.counts[idx])
        precision = tp / predicted if predicted else 0.0
        recall = tp / gold if gold else 0.0
        f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
        per_class[label.value] = ClassMetrics(precision, recall, f1, gold)
        f1_sum += f1
    return MetricReport(
        accuracy=accuracy,
        macro_f1=f1_sum / len(LABELS),
        per_class=per_class,
        n_scored=total,
        n_fallback=n_fallback,
    )


def _predicted_verdict(pred) -> VerdictLabel:
    # Fallback predictions are scored as their recorded NEI; error records
    # without any verdict count as abstentions too.
    verdict = getattr(pred, "verdict", None)
    if verdict is None and isinstance(pred, Mapping):
        raw = pred.get("verdict")
        verdict = VerdictLabel(raw) if raw else None
    return verdict if verdict is not None else VerdictLabel.NEI


def _claim_id_of(pred) -> str:
    if isinstance(pred, Mapping):
        return str(pred["claim_id"])
    return pred.claim_id


def _parse_status_of(pred) -> str:
    if isinstance(pred, Mapping):
        return str(pred.get("parse_status", "ok"))
    return getattr(pred, "parse_status", "ok")


def gold_map(claims: Iterable[ClaimRecord]) -> dict[str, VerdictLabel]:
    return {c.claim_id: c.gold_verdict for c in claims}


def score(predictions: Sequence, gold: Mapping[str, VerdictLabel]) -> tuple[ConfusionMatrix, MetricReport]:
    """Score predictions against gold verdicts with exact integer counts."""
    cm = ConfusionMatrix()
    n_fallback = 0
    for pred in predictions:
        claim_id = _claim_id_of(pred)
        if claim_id not in gold:
            raise MissingGold(claim_id)
        if _parse_status_of(pred) in ("fallback", "error"):
            n_fallback += 1
        cm.add(gold[claim_id], _predicted_verdict(pred))
    return cm, _metrics_from_matrix(cm, n_fallback)


def oracle_compose(
    runs: Sequence[Sequence], gold: Mapping[str, VerdictLabel]
) -> tuple[list[dict], MetricReport]:
    """Per-claim best-case composition across evidence configurations.

    For each claim the oracle verdict is the gold verdict if any run
    predicted it; otherwise the first run's prediction stands in (a
    recorded fallback that cannot affect accuracy).  All runs must cover
    the same claim set.
    """
    if not runs:
        raise ClaimSetMismatch("oracle composition needs at least one run")
    by_claim: list[dict[str, object]] = []
    base_ids = sorted(_claim_id_of(p) for p in runs[0])
    for i, run in enumerate(runs):
        ids = sorted(_claim_id_of(p) for p in run)
        if ids != base_ids:
            raise ClaimSetMismatch(f"run {i} covers a different claim set than run 0")
        if len(set(ids)) != len(ids):
            raise ClaimSetMismatch(f"run {i} contains duplicate claim ids")
    maps = [{_claim_id_of(p): _predicted_verdict(p) for p in run} for run in runs]
    composed: list[dict] = []
    for claim_id in base_ids:
        if claim_id not in gold:
            raise MissingGold(claim_id)
        target = gold[claim_id]
        if any(m[claim_id] == target for m in maps):
            verdict = target
        else:
            verdict = maps[0][claim_id]
        composed.append({"claim_id": claim_id, "verdict": verdict.value, "parse_status": "ok"})
    _, report = score(composed, gold)
    return composed, report


# -- Mann-Whitney U ------------------------------------------------------------


def _midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2 + 1  # mean of 1-based positions i..j
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(
    sample_a: Sequence[float], sample_b: Sequence[float], method: str = "auto"
) -> tuple[float, float]:
    """Rank-sum U for sample_a with a two-sided p-value.

    Ties receive midranks.  For combined n <= 20 the p-value is exact:
    every C(n, n_a) assignment of the pooled ranks is enumerated and the
    symmetric tail mass |U - n_a*n_b/2| >= |U_obs - n_a*n_b/2| is counted.
    Larger samples use the normal approximation with tie correction and a
    continuity correction.  ``method`` forces one path ("exact"/"approx").
    """
    if method not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown method {method!r}")
    a = list(sample_a)
    b = list(sample_b)
    if not a or not b:
        raise EmptySample("both samples must be non-empty")
    n1, n2 = len(a), len(b)
    n = n1 + n2
    pooled = a + b
    ranks = _midranks(pooled)
    rank_a = sum(ranks[:n1])
    u_a = rank_a - n1 * (n1 + 1) / 2.0

    if method == "exact" or (method == "auto" and n <= EXACT_MANN_WHITNEY_MAX_N):
        # Work in doubled integer ranks so midrank arithmetic stays exact.
        ranks2 = [int(round(2 * r)) for r in ranks]
        mu2 = n1 * n2  # 2 * (n1*n2/2)
        base2 = n1 * (n1 + 1)  # 2 * n1(n1+1)/2
        obs_dev = abs(int(round(2 * u_a)) - mu2)
        hits = 0
        total = 0
        for combo in combinations(range(n), n1):
            u2 = sum(ranks2[i] for i in combo) - base2
            if abs(u2 - mu2) >= obs_dev:
                hits += 1
            total += 1
        return u_a, hits / total

    mu = n1 * n2 / 2.0
    tie_counts: dict[float, int] = {}
    for value in pooled:
        tie_counts[value] = tie_counts.get(value, 0) + 1
    tie_term = sum(t**3 - t for t in tie_counts.values())
    sigma_sq = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma_sq <= 0:
        return u_a, 1.0  # all observations tied
    deviation = abs(u_a - mu) - 0.5  # continuity correction
    if deviation < 0:
        deviation = 0.0
    z = deviation / math.sqrt(sigma_sq)
    return u_a, min(1.0, 2.0 * _normal_sf(z))


# -- chi-square independence -----------------------------------------------------


def chi_square_independence(table: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Pearson chi-square for a 2x2 table, df = 1."""
    if len(table) != 2 or any(len(row) != 2 for row in table):
        raise DegenerateTable("expected a 2x2 table")
    cells = [[float(table[i][j]) for j in range(2)] for i in range(2)]
    if any(c < 0 for row in cells for c in row):
        raise DegenerateTable("negative cell count")
    row_sums = [sum(row) for row in cells]
    col_sums = [cells[0][j] + cells[1][j] for j in range(2)]
    total = sum(row_sums)
    if total <= 0 or 0 in row_sums or 0 in col_sums:
        raise DegenerateTable("zero marginal")
    stat = 0.0
    for i in range(2):
        for j in range(2):
            expected = row_sums[i] * col_sums[j] / total
            stat += (cells[i][j] - expected) ** 2 / expected
    # chi-square survival function at df=1: erfc(sqrt(x/2))
    p = math.erfc(math.sqrt(stat / 2.0))
    return stat, p


# -- Krippendorff's alpha ----------------------------------------------------------


def krippendorff_alpha_nominal(annotations: Iterable[AnnotationRecord]) -> float:
    """Chance-corrected agreement over necessity ratings (nominal metric).

    alpha = 1 - D_observed / D_expected over the coincidence matrix;
    items rated by a single annotator are excluded.
    """
    units: dict[str, list[str]] = {}
    annotators: set[str] = set()
    for rec in annotations:
        units.setdefault(rec.claim_id, []).append(rec.necessity_label.value)
        annotators.add(rec.annotator_id)
    if len(annotators) < 2:
        raise InsufficientData("agreement needs >= 2 annotators")
    units = {u: vals for u, vals in units.items() if len(vals) > 1}
    if not units:
        raise InsufficientData("no item carries >= 2 ratings")

    coincidence: dict[tuple[str, str], float] = {}
    totals: dict[str, float] = {}
    n = 0.0
    for values in units.values():
        m = len(values)
        for i, v in enumerate(values):
            for j, w in enumerate(values):
                if i == j:
                    continue
                coincidence[(v, w)] = coincidence.get((v, w), 0.0) + 1.0 / (m - 1)
        n += m
    for (v, _w), count in coincidence.items():
        totals[v] = totals.get(v, 0.0) + count

    d_observed = sum(count for (v, w), count in coincidence.items() if v != w) / n
    d_expected = sum(
        totals[v] * totals[w] for v in totals for w in totals if v != w
    ) / (n * (n - 1))
    if d_expected == 0.0:
        return 1.0  # a single label everywhere: perfect agreement by convention
    return 1.0 - d_observed / d_expected


# -- report emission -----------------------------------------------------------


@dataclass
class RunResult:
    strategy: str
    config: str
    report: MetricReport
    confusion: ConfusionMatrix | None = None


def _report_to_obj(result: RunResult) -> dict:
    report = result.report
    return {
        "strategy": result.strategy,
        "config": result.config,
        "accuracy": round(report.accuracy, 6),
        "macro_f1": round(report.macro_f1, 6),
        "per_class": {
            label: {
                "precision": round(metrics.precision, 6),
                "recall": round(metrics.recall, 6),
                "f1": round(metrics.f1, 6),
                "support": metrics.support,
            }
            for label, metrics in report.per_class.items()
        },
        "n": report.n_scored,
        "n_fallback": report.n_fallback,
    }


def emit_report(results: Sequence[RunResult], out_dir, comparisons: Sequence[dict] = ()) -> list[str]:
    """Write metrics.json per run, a cross-run comparison.csv, and confusion
    tables; output is byte-stable across reruns.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    ordered = sorted(results, key=lambda r: (r.strategy, r.config))

    if len(ordered) == 1:
        metric_paths = [out_dir / "metrics.json"]
    else:
        metric_paths = [out_dir / f"metrics_{r.config}__{r.strategy}.json" for r in ordered]
    for result, path in zip(ordered, metric_paths):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_report_to_obj(result), fh, ensure_ascii=False, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path.name)

    comparison = out_dir / "comparison.csv"
    with open(comparison, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "config", "accuracy", "macro_f1", "n", "n_fallback"])
        for result in ordered:
            writer.writerow(
                [
                    result.strategy,
                    result.config,
                    f"{result.report.accuracy:.3f}",
                    f"{result.report.macro_f1:.3f}",
                    result.report.n_scored,
                    result.report.n_fallback,
                ]
            )
    written.append(comparison.name)

    for result in ordered:
        if result.confusion is None:
            continue
        path = out_dir / f"confusion_{result.config}__{result.strategy}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["gold", "predicted", "count"])
            for gold, pred, count in result.confusion.rows():
                writer.writerow([gold.value, pred.value, count])
        written.append(path.name)

    if comparisons:
        path = out_dir / "comparisons.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(list(comparisons), fh, ensure_ascii=False, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path.name)
    return written
