import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teleauth.auth import (REJECT, LikelihoodTrace, OperatorProfile, authenticate_window, build_profiles,
                           decisions_to_csv, response_time, stream_authenticate, traces_to_csv,
                           window_count, window_length)
from teleauth.data import Trial, splice_attack, synth_dataset
from teleauth.decoder import builtin_grammar
from teleauth.errors import ConfigurationError, UsageError


@pytest.fixture(scope="module")
def world():
    grammar = builtin_grammar()
    ops, trials = synth_dataset(3, 2, 3, 2.0, 5, grammar)
    models = [m for op in ops for m in op.models.values()]
    return grammar, ops, trials, build_profiles(models, grammar)


def test_window_arithmetic():
    assert window_length(1.0, 60.0) == 60
    assert window_length(5.0, 60.0) == 300
    assert window_length(0.5, 30.0) == 15
    assert window_count(500, 60) == 441
    with pytest.raises(UsageError):
        window_length(0.001, 60.0)
    with pytest.raises(UsageError):
        window_count(10, 11)


@given(st.integers(1, 2000), st.integers(1, 2000))
def test_window_count_law(a, b):
    lt, lw = max(a, b), min(a, b)
    assert window_count(lt, lw) == lt - lw + 1


def test_profiles_are_sorted_and_complete(world):
    grammar, ops, _, profiles = world
    assert [p.operator_id for p in profiles] == ["U01", "U02", "U03"]
    assert all(p.gesture_labels == frozenset(grammar.gestures) for p in profiles)


def test_stream_emits_one_decision_per_window(world):
    _, _, trials, profiles = world
    tr = trials[0]
    decisions, traces = stream_authenticate(profiles, tr, 1.0)
    assert len(decisions) == len(tr) - 60 + 1
    assert [d.window_end for d in decisions] == list(range(60, len(tr) + 1))
    assert all(len(t) == len(decisions) for t in traces)


def test_ground_truth_models_identify_their_operator(world):
    _, _, trials, profiles = world
    for tr in trials:
        decisions, _ = stream_authenticate(profiles, tr, 1.0)
        hits = sum(d.operator_id == tr.operator_id for d in decisions)
        assert hits / len(decisions) > 0.95


def test_decision_matches_single_window_authentication(world):
    _, _, trials, profiles = world
    tr = trials[3]
    decisions, _ = stream_authenticate(profiles, tr, 0.5)
    for w in (0, 17, len(decisions) - 1):
        d = decisions[w]
        single = authenticate_window(profiles, tr.frames[w:w + 30], d.window_end)
        assert single.operator_id == d.operator_id
        assert single.labels == d.labels
        for op, ll in d.log_likelihoods.items():
            assert single.log_likelihoods[op] == ll


def test_winner_labels_come_from_the_winners_grammar(world):
    grammar, _, trials, profiles = world
    decisions, _ = stream_authenticate(profiles, trials[1], 1.0)
    for d in decisions[::25]:
        assert d.labels and set(d.labels) <= set(grammar.gestures)


def test_equal_scores_pick_the_first_operator_id(world):
    grammar, ops, trials, _ = world
    twins = [m.replace(operator_id=oid) for oid in ("B", "A") for m in ops[0].models.values()]
    d = authenticate_window(build_profiles(twins, grammar), trials[0].frames[:40])
    assert d.operator_id == "A"


def test_reject_when_every_score_is_minus_infinity(world):
    grammar, ops, trials, _ = world
    # zero mixture weight everywhere: no frame has any emission probability
    models = [m.replace(log_weights=np.full_like(m.log_weights, -np.inf))
              for m in ops[0].models.values()]
    d = authenticate_window(build_profiles(models, grammar), trials[1].frames[:20])
    assert d.operator_id == REJECT and d.labels == ()


def test_authentication_input_checks(world):
    _, _, trials, profiles = world
    with pytest.raises(UsageError):
        authenticate_window(profiles, np.zeros((5, 3)))
    with pytest.raises(UsageError):
        authenticate_window([], np.zeros((5, 10)))
    with pytest.raises(UsageError):
        stream_authenticate(profiles, Trial("U", "T", 60.0, np.zeros((30, 10))), 1.0)


def test_profile_must_wrap_its_own_network(world):
    _, _, _, profiles = world
    with pytest.raises(ConfigurationError):
        OperatorProfile("U09", profiles[0].network)


# ---------------------------------------------------------------------------
# response time

def _trace(op, ends, vals):
    return LikelihoodTrace(op, np.array(ends), np.array(vals, dtype=float))


def test_response_time_closed_form():
    ends = [10, 11, 12, 13, 14]
    true = _trace("A", ends, [0, 0, 0, 0, 0])
    imp = _trace("B", ends, [1, -1, -1, 0.5, 2])
    # the crossing at frame 10 precedes the attack and is ignored
    assert response_time(true, imp, 11, 60.0) == pytest.approx(2 / 60)
    assert response_time(true, imp, 10, 60.0) == 0.0
    assert response_time(true, _trace("B", ends, [-1] * 5), 10, 60.0) is None


def test_response_time_checks():
    true = _trace("A", [5, 6], [0, 0])
    with pytest.raises(UsageError):
        response_time(true, _trace("B", [6, 7], [0, 0]), 6, 60.0)
    with pytest.raises(UsageError):
        response_time(true, _trace("B", [5, 6], [0, 0]), 9, 60.0)
    with pytest.raises(UsageError):
        _trace("A", [1, 3], [0, 0])


def test_splice_attack_is_detected(world):
    _, _, trials, profiles = world
    a, b = trials[0], trials[2]
    spliced, attack = splice_attack(a, b)
    _, traces = stream_authenticate(profiles, spliced, 0.5)
    by_op = {t.operator_id: t for t in traces}
    rt = response_time(by_op[a.operator_id], by_op[b.operator_id], attack, 60.0)
    assert rt is not None and 0 <= rt <= 0.5 + 1e-12


def test_self_splice_never_crosses(world):
    _, _, trials, profiles = world
    spliced, attack = splice_attack(trials[0], trials[1])
    _, traces = stream_authenticate(profiles[:1], spliced, 0.5)
    assert response_time(traces[0], traces[0], attack, 60.0) is None


def test_csv_exports(world):
    _, _, trials, profiles = world
    decisions, traces = stream_authenticate(profiles, trials[0], 1.0)
    text = traces_to_csv(traces)
    lines = text.splitlines()
    assert lines[0] == "window_end,operator_id,log_likelihood"
    assert len(lines) == 1 + len(traces) * len(decisions)
    end, op, ll = lines[1].split(",")
    assert float(ll) == traces[0].log_likelihoods[0]
    dec = decisions_to_csv(decisions).splitlines()
    assert dec[0] == "window_end,winner,labels" and len(dec) == 1 + len(decisions)
