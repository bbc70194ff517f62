"""Metric, oracle-composition, and statistical-test correctness.

Expected values are frozen from independent calculations: per-class
precision/recall worked by hand from the confusion matrix, the exact
Mann-Whitney tail enumerated over rank assignments, the chi-square cross
checked against the closed-form 2x2 formula, and alpha against a hand-built
coincidence matrix.
"""

from __future__ import annotations

import itertools
import math
import random

import pytest

from factgate.corpus import AnnotationRecord, NecessityLabel, VerdictLabel
from factgate.errors import (
    ClaimSetMismatch,
    DegenerateTable,
    EmptySample,
    InsufficientData,
    MissingGold,
)
from factgate.evalkit import (
    LABELS,
    ConfusionMatrix,
    RunResult,
    chi_square_independence,
    emit_report,
    krippendorff_alpha_nominal,
    mann_whitney_u,
    oracle_compose,
    score,
)

S, R, N = VerdictLabel.SUPPORTED, VerdictLabel.REFUTED, VerdictLabel.NEI


def preds_from_matrix(matrix):
    """Expand a (gold, predicted) count matrix into prediction/gold pairs."""
    preds, gold = [], {}
    k = 0
    for i, gold_label in enumerate(LABELS):
        for j, pred_label in enumerate(LABELS):
            for _ in range(matrix[i][j]):
                cid = f"c{k:03d}"
                preds.append({"claim_id": cid, "verdict": pred_label.value, "parse_status": "ok"})
                gold[cid] = gold_label
                k += 1
    return preds, gold


def test_score_all_correct():
    preds, gold = preds_from_matrix([[4, 0, 0], [0, 3, 0], [0, 0, 2]])
    cm, report = score(preds, gold)
    assert report.accuracy == 1.0
    assert report.macro_f1 == 1.0
    assert cm.correct() == cm.total() == 9


def test_score_hand_computed_matrix():
    # gold x predicted counts:
    #   S: [2,1,0]  R: [0,3,0]  N: [1,0,3]   total 10, trace 8
    # per-class F1 (worked by hand from precision/recall):
    #   S: P=2/3, R=2/3 -> 2/3;  R: P=3/4, R=1 -> 6/7;  N: P=1, R=3/4 -> 6/7
    # macro F1 = (2/3 + 6/7 + 6/7) / 3 = 0.793650...
    preds, gold = preds_from_matrix([[2, 1, 0], [0, 3, 0], [1, 0, 3]])
    cm, report = score(preds, gold)
    assert report.accuracy == pytest.approx(0.800, abs=1e-12)
    assert report.macro_f1 == pytest.approx(0.794, abs=1e-3)
    assert report.macro_f1 == pytest.approx((2 / 3 + 6 / 7 + 6 / 7) / 3, abs=1e-12)
    assert cm.counts == [[2, 1, 0], [0, 3, 0], [1, 0, 3]]
    assert report.n_scored == 10


def test_score_counts_fallbacks_as_nei():
    gold = {"a": S, "b": R}
    preds = [
        {"claim_id": "a", "verdict": "NEI", "parse_status": "fallback"},
        {"claim_id": "b", "verdict": None, "parse_status": "error"},
    ]
    cm, report = score(preds, gold)
    assert report.n_fallback == 2
    assert cm.counts[0][2] == 1 and cm.counts[1][2] == 1


def test_score_missing_gold():
    with pytest.raises(MissingGold):
        score([{"claim_id": "ghost", "verdict": "NEI"}], {})


def test_score_permutation_invariance():
    preds, gold = preds_from_matrix([[5, 2, 1], [3, 6, 0], [2, 2, 4]])
    _, base = score(preds, gold)
    rng = random.Random(3)
    for _ in range(5):
        rng.shuffle(preds)
        _, shuffled = score(preds, gold)
        assert shuffled.accuracy == base.accuracy
        assert shuffled.macro_f1 == base.macro_f1


def test_zero_denominator_class_contributes_zero():
    # nothing predicted or gold as NEI except one gold NEI never predicted
    preds, gold = preds_from_matrix([[3, 0, 0], [0, 3, 0], [1, 0, 0]])
    _, report = score(preds, gold)
    assert report.per_class["NEI"].f1 == 0.0
    assert report.macro_f1 == pytest.approx((report.per_class["Supported"].f1 + report.per_class["Refuted"].f1) / 3)


# -- oracle composition -----------------------------------------------------------


def run_of(verdicts):
    return [
        {"claim_id": f"c{i}", "verdict": v.value, "parse_status": "ok"}
        for i, v in enumerate(verdicts)
    ]


def test_oracle_picks_any_correct_configuration():
    gold = {"c0": S, "c1": R}
    run_a = run_of([S, N])  # correct on c0
    run_b = run_of([N, R])  # correct on c1
    composed, report = oracle_compose([run_a, run_b], gold)
    assert report.accuracy == 1.0
    assert {c["claim_id"]: c["verdict"] for c in composed} == {"c0": "Supported", "c1": "Refuted"}


def test_oracle_falls_back_to_first_run():
    gold = {"c0": S, "c1": S}
    run_a = run_of([R, N])
    run_b = run_of([N, R])
    composed, report = oracle_compose([run_a, run_b], gold)
    _, base = score(run_a, gold)
    assert report.accuracy == base.accuracy == 0.0
    assert [c["verdict"] for c in composed] == ["Refuted", "NEI"]


def test_oracle_claim_set_mismatch():
    gold = {"c0": S}
    with pytest.raises(ClaimSetMismatch):
        oracle_compose([run_of([S]), run_of([S, R])], gold)


def test_oracle_accuracy_equals_exists_correct_rate():
    rng = random.Random(17)
    labels = list(LABELS)
    for _ in range(20):
        n = 40
        gold = {f"c{i}": rng.choice(labels) for i in range(n)}
        runs = [run_of([rng.choice(labels) for _ in range(n)]) for _ in range(3)]
        _, report = oracle_compose(runs, gold)
        # brute-force oracle: a claim scores iff some run matched gold
        maps = [{p["claim_id"]: p["verdict"] for p in run} for run in runs]
        exists_correct = sum(
            1 for cid, g in gold.items() if any(m[cid] == g.value for m in maps)
        )
        assert report.accuracy == pytest.approx(exists_correct / n, abs=1e-12)
        for run in runs:
            _, component = score(run, gold)
            assert report.accuracy >= component.accuracy - 1e-12


# -- Mann-Whitney U -----------------------------------------------------------------


def exact_mw_p_by_enumeration(a, b):
    """Independent oracle: full enumeration over C(n, n1) rank assignments."""
    pooled = list(a) + list(b)
    n1 = len(a)
    order = sorted(range(len(pooled)), key=lambda i: pooled[i])
    ranks = [0.0] * len(pooled)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    u_obs = sum(ranks[:n1]) - n1 * (n1 + 1) / 2
    mu = n1 * (len(pooled) - n1) / 2
    hits = total = 0
    for combo in itertools.combinations(range(len(pooled)), n1):
        u = sum(ranks[i] for i in combo) - n1 * (n1 + 1) / 2
        if abs(u - mu) >= abs(u_obs - mu) - 1e-12:
            hits += 1
        total += 1
    return hits / total


def test_mann_whitney_separated_samples_exact():
    # 20 assignments of {1..6} into two triples; only {1,2,3} and {4,5,6}
    # reach |U - 4.5| = 4.5, so the two-sided exact p is 2/20 = 0.1.
    u, p = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert u == 0.0
    assert p == pytest.approx(0.1, abs=1e-9)
    assert p == pytest.approx(exact_mw_p_by_enumeration([1, 2, 3], [4, 5, 6]), abs=1e-12)


def test_mann_whitney_identical_samples():
    u, p = mann_whitney_u([2.0, 2.0, 2.0], [2.0, 2.0])
    assert p == pytest.approx(1.0, abs=1e-9)


def test_mann_whitney_reflection_symmetry():
    a = [0.1, 0.9, 0.4, 0.7]
    b = [0.2, 0.3, 0.8]
    u_ab, p_ab = mann_whitney_u(a, b)
    u_ba, p_ba = mann_whitney_u(b, a)
    assert u_ab + u_ba == len(a) * len(b)
    assert p_ab == pytest.approx(p_ba, abs=1e-12)


def test_mann_whitney_shuffle_invariance():
    rng = random.Random(5)
    a = [rng.random() for _ in range(6)]
    b = [rng.random() for _ in range(5)]
    u, p = mann_whitney_u(a, b)
    for _ in range(3):
        rng.shuffle(a)
        rng.shuffle(b)
        u2, p2 = mann_whitney_u(a, b)
        assert (u2, p2) == (u, p)


def test_mann_whitney_exact_matches_enumeration_with_ties():
    rng = random.Random(9)
    for _ in range(10):
        n1 = rng.randrange(2, 6)
        n2 = rng.randrange(2, 6)
        a = [rng.randrange(0, 4) for _ in range(n1)]  # small range forces ties
        b = [rng.randrange(0, 4) for _ in range(n2)]
        _, p = mann_whitney_u(a, b)
        assert p == pytest.approx(exact_mw_p_by_enumeration(a, b), abs=1e-12)


def test_mann_whitney_exact_vs_normal_approximation():
    rng = random.Random(23)
    for _ in range(25):
        n1 = rng.randrange(7, 11)
        n2 = rng.randrange(7, 11)
        if not 15 <= n1 + n2 <= 20:
            continue
        a = [rng.gauss(0, 1) for _ in range(n1)]
        b = [rng.gauss(0.4, 1) for _ in range(n2)]
        _, p_exact = mann_whitney_u(a, b, method="exact")
        _, p_approx = mann_whitney_u(a, b, method="approx")
        assert abs(p_exact - p_approx) < 0.02


def test_mann_whitney_approx_matches_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = random.Random(31)
    a = [rng.gauss(0, 1) for _ in range(30)]
    b = [rng.gauss(0.3, 1) for _ in range(28)]
    u, p = mann_whitney_u(a, b)
    ref = scipy_stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic")
    assert u == pytest.approx(ref.statistic, abs=1e-9)
    assert p == pytest.approx(ref.pvalue, abs=1e-9)


def test_mann_whitney_empty_sample():
    with pytest.raises(EmptySample):
        mann_whitney_u([], [1.0])


# -- chi-square ------------------------------------------------------------------------


def test_chi_square_uniform_table():
    stat, p = chi_square_independence([[25, 25], [25, 25]])
    assert stat == 0.0
    assert p == pytest.approx(1.0, abs=1e-12)


def test_chi_square_association_fixture():
    # closed-form cross-check: chi2 = N (ad - bc)^2 / ((a+b)(c+d)(a+c)(b+d))
    a, b, c, d = 40, 11, 12, 49
    n = a + b + c + d
    expected_stat = n * (a * d - b * c) ** 2 / ((a + b) * (c + d) * (a + c) * (b + d))
    stat, p = chi_square_independence([[a, b], [c, d]])
    assert stat == pytest.approx(expected_stat, abs=1e-9)
    assert p < 0.001  # strongly associated split over a 112-sample table
    assert p == pytest.approx(math.erfc(math.sqrt(expected_stat / 2)), abs=1e-12)


def test_chi_square_matches_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    table = [[13, 37], [29, 8]]
    stat, p = chi_square_independence(table)
    ref = scipy_stats.chi2_contingency(table, correction=False)
    assert stat == pytest.approx(ref.statistic, abs=1e-9)
    assert p == pytest.approx(ref.pvalue, abs=1e-9)


def test_chi_square_degenerate_table():
    with pytest.raises(DegenerateTable):
        chi_square_independence([[0, 0], [5, 5]])
    with pytest.raises(DegenerateTable):
        chi_square_independence([[5, 0], [5, 0]])


# -- Krippendorff's alpha -----------------------------------------------------------------


def annotations(pairs):
    """pairs: per-item tuples of ratings by annotators a1, a2, ..."""
    records = []
    for item, ratings in enumerate(pairs):
        for ann, value in enumerate(ratings):
            records.append(
                AnnotationRecord(
                    claim_id=f"c{item}",
                    annotator_id=f"a{ann}",
                    necessity_label=value,
                )
            )
    return records


NEC, UNN = NecessityLabel.NECESSARY, NecessityLabel.UNNECESSARY


def test_alpha_perfect_agreement():
    records = annotations([(NEC, NEC)] * 5 + [(UNN, UNN)] * 5)
    assert krippendorff_alpha_nominal(records) == pytest.approx(1.0, abs=1e-12)


def test_alpha_four_item_fixture_hand_computed():
    # Items (A,A), (A,A), (B,B), (A,B) with two annotators.
    # Coincidence matrix: o_AA=4, o_BB=2, o_AB=o_BA=1; n_A=5, n_B=3, n=8.
    # D_o = 2/8;  D_e = (5*3 + 3*5) / (8*7) = 30/56;  alpha = 1 - 14/30 = 8/15.
    records = annotations([(NEC, NEC), (NEC, NEC), (UNN, UNN), (NEC, UNN)])
    assert krippendorff_alpha_nominal(records) == pytest.approx(8 / 15, abs=1e-6)


def test_alpha_single_annotator_insufficient():
    records = [
        AnnotationRecord(claim_id=f"c{i}", annotator_id="a0", necessity_label=NEC)
        for i in range(4)
    ]
    with pytest.raises(InsufficientData):
        krippendorff_alpha_nominal(records)


def test_alpha_singleton_items_excluded():
    records = annotations([(NEC, NEC), (UNN, UNN)])
    # an extra item rated once must not change the result
    records_plus = records + [
        AnnotationRecord(claim_id="solo", annotator_id="a0", necessity_label=UNN)
    ]
    assert krippendorff_alpha_nominal(records_plus) == pytest.approx(
        krippendorff_alpha_nominal(records), abs=1e-12
    )


def test_alpha_annotator_relabeling_invariance():
    records = annotations([(NEC, UNN), (NEC, NEC), (UNN, UNN), (UNN, NEC), (NEC, NEC)])
    relabeled = [
        AnnotationRecord(
            claim_id=r.claim_id,
            annotator_id={"a0": "x", "a1": "y"}[r.annotator_id],
            necessity_label=r.necessity_label,
        )
        for r in records
    ]
    assert krippendorff_alpha_nominal(relabeled) == krippendorff_alpha_nominal(records)


def test_alpha_one_iff_all_corated_agree():
    rng = random.Random(41)
    for _ in range(10):
        agree = rng.random() < 0.5
        pairs = []
        for _ in range(8):
            v = rng.choice([NEC, UNN])
            pairs.append((v, v))
        if not agree:
            pairs[3] = (NEC, UNN)
        alpha = krippendorff_alpha_nominal(annotations(pairs))
        if agree:
            assert alpha == pytest.approx(1.0, abs=1e-12)
        else:
            assert alpha < 1.0


# -- report emission ------------------------------------------------------------------------


def test_emit_report_formats_and_determinism(tmp_path):
    preds, gold = preds_from_matrix([[2, 1, 0], [0, 3, 0], [1, 0, 3]])
    cm, report = score(preds, gold)
    results = [
        RunResult(strategy="adaptive", config="gold", report=report, confusion=cm),
        RunResult(strategy="no_analyzer", config="gold", report=report, confusion=cm),
    ]
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    written = emit_report(results, out_a)
    emit_report(results, out_b)
    comparison = (out_a / "comparison.csv").read_text().splitlines()
    assert len(comparison) == 3  # header + one row per strategy
    assert "0.800" in comparison[1]  # three-decimal display format
    for name in written:
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    confusion_rows = (out_a / "confusion_gold__adaptive.csv").read_text().splitlines()
    assert len(confusion_rows) == 10  # header + 9 (gold, predicted) cells
