import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teleauth.auth import REJECT, build_profiles, window_count
from teleauth.config import RunConfig
from teleauth.data import Trial, synth_dataset
from teleauth.decoder import GrammarGraph, builtin_grammar
from teleauth.errors import ConfigurationError, SegmentationError, UsageError
from teleauth.evaluation import (AttackRun, ConfusionMatrix, attack_eval, evaluate, loto_folds,
                                 metrics_to_csv, run_attacks, summarize_attacks, sweep,
                                 train_operator, write_report)

FAST = RunConfig(n_states=3, n_mixtures=1, max_iter=8)


@pytest.fixture(scope="module")
def small():
    grammar = builtin_grammar()
    ops, trials = synth_dataset(2, 2, 2, 2.0, 3, grammar)
    return grammar, ops, trials


# ---------------------------------------------------------------------------
# folds

def test_fold_counts():
    trials = [Trial(f"U{i}", f"T{k}", 60.0, np.zeros((3, 1))) for i in range(10) for k in range(5)]
    folds = loto_folds(trials)
    assert len(folds) == 50
    for f in folds:
        assert f.test.key == f.held_out
        assert f.held_out not in {t.key for t in f.training}
        assert len(f.training) == 49


def test_two_by_two_folds():
    trials = [Trial(f"U{i}", f"T{k}", 60.0, np.zeros((3, 1))) for i in range(2) for k in range(2)]
    folds = loto_folds(trials)
    assert len(folds) == 4 and all(len(f.training) == 3 for f in folds)


def test_single_trial_operator_is_a_configuration_error():
    trials = [Trial("U1", "T1", 60.0, np.zeros((3, 1))), Trial("U1", "T2", 60.0, np.zeros((3, 1))),
              Trial("U2", "T1", 60.0, np.zeros((3, 1)))]
    with pytest.raises(ConfigurationError, match="U2"):
        loto_folds(trials)


# ---------------------------------------------------------------------------
# confusion matrix and metrics

def test_perfect_predictor():
    cm = ConfusionMatrix.from_pairs(["A", "B", "C"], [(x, x) for x in "AABBBC"])
    assert cm.accuracy() == 1.0 and cm.macro_precision() == 1.0 and cm.macro_recall() == 1.0
    assert np.count_nonzero(cm.counts - np.diag(np.diag(cm.counts))) == 0


def test_constant_predictor_on_balanced_classes():
    cm = ConfusionMatrix.from_pairs(["A", "B"], [("A", "A")] * 5 + [("B", "A")] * 5)
    assert cm.accuracy() == 0.5
    assert cm.macro_recall() == 0.5
    # B is never predicted: its precision term is 0, A's is 0.5
    assert cm.macro_precision() == 0.25


def test_accuracy_on_a_thousand_windows():
    cm = ConfusionMatrix(("A", "B"), np.array([[400, 100], [102, 398]]))
    assert cm.accuracy() == 798 / 1000


def test_rejections_count_against_recall_only():
    cm = ConfusionMatrix.from_pairs(["A", "B"], [("A", "A"), ("A", REJECT), ("B", "B")])
    assert cm.total == 3 and cm.hits == 2
    np.testing.assert_array_equal(cm.rejected, [1, 0])
    assert cm.macro_precision() == 1.0 and cm.macro_recall() == 0.75
    assert cm.to_csv().splitlines()[1] == "A,1,0,1"


@given(st.lists(st.tuples(st.sampled_from("ABC"), st.sampled_from("ABC")), min_size=1))
def test_metric_invariants(pairs):
    cm = ConfusionMatrix.from_pairs("ABC", pairs)
    assert cm.accuracy() == np.trace(cm.counts) / cm.counts.sum()
    assert 0 <= cm.macro_precision() <= 1 and 0 <= cm.macro_recall() <= 1
    diagonal = np.count_nonzero(cm.counts - np.diag(np.diag(cm.counts))) == 0
    full_rows = np.all(cm.counts.sum(1) > 0)
    assert (cm.macro_recall() == 1.0) == (diagonal and full_rows)
    assert (cm.macro_precision() == 1.0) == (diagonal and full_rows)


def test_confusion_rejects_bad_shapes():
    with pytest.raises(UsageError):
        ConfusionMatrix(("A",), np.zeros((2, 2)))
    with pytest.raises(UsageError):
        ConfusionMatrix(("A",), np.array([[-1]]))


# ---------------------------------------------------------------------------
# training and evaluation

def test_train_operator_yields_one_model_per_gesture(small):
    grammar, _, trials = small
    models = train_operator(trials, grammar, FAST, "U01")
    assert sorted(models) == ["G1", "G2", "G3"]
    assert all(tm.model.operator_id == "U01" and tm.model.n_emitting == 3 for tm in models.values())


def test_missing_gesture_data_is_reported(small):
    grammar, _, trials = small
    bigger = GrammarGraph(edges=grammar.edges, start=grammar.start,
                          gestures=grammar.gestures + ("G4",))
    with pytest.raises(ConfigurationError, match="G4"):
        train_operator(trials, bigger, FAST, "U01")


def test_evaluate_totals_and_identity(small):
    grammar, _, trials = small
    res = evaluate(loto_folds(trials), grammar, 0.5, FAST)
    cm = res.confusion
    expected = sum(window_count(len(t), 30) for t in trials)
    assert cm.total == expected == res.metrics["n_windows"]
    assert res.metrics["accuracy"] == np.trace(cm.counts) / cm.counts.sum()
    for op in cm.labels:
        i = cm.labels.index(op)
        assert cm.row_totals[i] == sum(window_count(len(t), 30) for t in trials
                                       if t.operator_id == op)
    assert res.metrics["accuracy"] > 0.9
    assert set(res.traces) == {t.key for t in trials}


def test_evaluate_adds_fold_context(small):
    grammar, _, trials = small
    broken = [Trial(t.operator_id, t.trial_id, 60.0, t.frames,
                    ("",) + t.labels[1:] if t.trial_id == "T2" else t.labels) for t in trials]
    with pytest.raises(SegmentationError, match="fold holding out"):
        evaluate(loto_folds(broken), grammar, 0.5, FAST)


def test_normalised_evaluation_runs(small):
    grammar, _, trials = small
    res = evaluate(loto_folds(trials), grammar, 0.5, FAST.replace(normalization=True))
    assert res.metrics["accuracy"] > 0.9


def test_sweep_grid_shape(small):
    grammar, _, trials = small
    rows = sweep(trials, grammar, 0.5, FAST.replace(max_iter=2), states=(2, 3), mixtures=(1,))
    assert [(r["n_states"], r["n_mixtures"]) for r in rows] == [(2, 1), (3, 1)]


# ---------------------------------------------------------------------------
# attacks and reports

def test_attack_eval_rows_per_width(small):
    grammar, ops, trials = small
    profiles = build_profiles([m for op in ops for m in op.models.values()], grammar)
    report = attack_eval(profiles, [(trials[0], trials[2])], [1.0, 0.5])
    assert len(report.runs) == 4
    assert [r["window_seconds"] for r in report.rows] == [1.0, 0.5]
    assert all(r["n_runs"] == 2 for r in report.rows)


def test_summary_handles_never_crossed_runs():
    runs = [AttackRun("A", "1", "B", "1", 1.0, 10, None), AttackRun("A", "1", "B", "1", 1.0, 10, 0.5)]
    (row,) = summarize_attacks(runs, [1.0])
    assert row["mean_response_s"] == 0.5 and row["none_rate"] == 0.5 and row["n_crossed"] == 1


def test_run_attacks_needs_two_operators(small):
    grammar, _, trials = small
    with pytest.raises(ConfigurationError):
        run_attacks([t for t in trials if t.operator_id == "U01"], grammar, FAST, [1.0])


def test_report_files_are_deterministic(small, tmp_path):
    grammar, _, trials = small
    outputs = []
    for k in range(2):
        res = evaluate(loto_folds(trials), grammar, 0.5, FAST)
        written = write_report(res, tmp_path / str(k))
        outputs.append({p.relative_to(tmp_path / str(k)): p.read_bytes() for p in written})
    assert outputs[0] == outputs[1]
    names = {str(p) for p in outputs[0]}
    assert {"confusion.csv", "metrics.csv"} <= names
    assert any(n.startswith("traces/") for n in names)
    header = outputs[0][next(p for p in outputs[0] if str(p) == "metrics.csv")].decode()
    assert header.startswith("window_seconds,n_windows,accuracy,macro_precision,macro_recall\n")


def test_metrics_use_six_significant_digits():
    text = metrics_to_csv({"window_seconds": 1.0, "n_windows": 3, "accuracy": 2 / 3,
                           "macro_precision": 1.0, "macro_recall": 0.123456789})
    assert text.splitlines()[1] == "1,3,0.666667,1,0.123457"


def test_write_report_rejects_unknown_results(tmp_path):
    with pytest.raises(UsageError):
        write_report(object(), tmp_path)
