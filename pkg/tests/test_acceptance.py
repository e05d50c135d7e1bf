"""Exit criteria A1-A9, each run at its stated tolerance and time budget.

Every criterion records one PASS/FAIL line; the lines are printed in the
terminal summary (see conftest.py) and also echoed with ``-s``.
"""

import time

import numpy as np
import pytest
from oracles import brute_forward, brute_network, brute_viterbi, random_model

from teleauth import kernels
from teleauth.auth import build_profiles, stream_authenticate
from teleauth.cli import main as cli_main
from teleauth.config import RunConfig
from teleauth.data import Trial, synth_dataset
from teleauth.decoder import GrammarGraph, builtin_grammar, compile_network, decode_network, decode_single
from teleauth.evaluation import evaluate, loto_folds, run_attacks
from teleauth.hmm import (Segment, baum_welch_step, forward_log_likelihood, init_from_segments,
                          new_left_right, sample)

pytestmark = pytest.mark.acceptance

RESULTS = {}


def _record(name, ok, detail):
    line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[name] = line
    print(line)
    assert ok, line


def _backends():
    return kernels.available_backends()


def _close(a, b, tol):
    return a == b or abs(a - b) <= tol


# ---------------------------------------------------------------------------

def test_a1_em_monotonicity():
    t0 = time.perf_counter()
    worst, steps = np.inf, 0
    for k in range(50):
        rng = np.random.default_rng(10_000 + k)
        S, M, d = int(rng.integers(2, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        skip = int(rng.integers(0, 2))
        truth = random_model(rng, S, M, d, skip_width=skip)
        segs = []
        n = int(rng.integers(3, 9))
        while len(segs) < n:
            x, _ = sample(truth, rng)
            if len(x) >= S:
                segs.append(Segment(x, "G", trial_id=f"T{len(segs)}"))
        model = init_from_segments(new_left_right(S, M, d, skip_width=skip), segs, k)
        history = []
        for it in range(15):
            model, ll = baum_welch_step(model, segs, seed=it)
            history.append(ll)
        history.append(sum(forward_log_likelihood(model, s.observations) for s in segs))
        worst = min(worst, float(np.diff(history).min()))
        steps += len(history) - 1
    elapsed = time.perf_counter() - t0
    _record("A1", worst >= -1e-8 and elapsed < 30,
            f"{steps} EM steps over 50 pairs, min delta {worst:.3g} (>= -1e-8), {elapsed:.1f}s (< 30s)")


def test_a2_viterbi_oracle():
    t0 = time.perf_counter()
    worst, mismatched, checks = 0.0, 0, 0
    for backend in _backends():
        prev = kernels.use_backend(backend)
        try:
            for k in range(100):
                rng = np.random.default_rng(20_000 + k)
                quantized = k % 4 == 0
                m = random_model(rng, int(rng.integers(1, 5)), int(rng.integers(1, 3)), 2,
                                 skip_width=int(rng.integers(0, 2)),
                                 entry_spread=bool(rng.integers(2)),
                                 exit_from_all=bool(rng.integers(2)), quantized=quantized)
                T = int(rng.integers(1, 9))
                obs = (rng.integers(-1, 2, size=(T, 2)).astype(float) if quantized
                       else rng.normal(size=(T, 2)))
                got = decode_single(m, obs)
                want = brute_viterbi(m, obs)
                checks += 1
                if np.isfinite(want[0]):
                    worst = max(worst, abs(got[0] - want[0]))
                if got[1] != want[1] or not _close(got[0], want[0], 1e-9):
                    mismatched += 1
        finally:
            kernels.use_backend(prev)
    elapsed = time.perf_counter() - t0
    _record("A2", mismatched == 0 and elapsed < 10,
            f"{checks} decodes ({'+'.join(_backends())}), {mismatched} mismatches, "
            f"max |dscore| {worst:.2g} (<= 1e-9), {elapsed:.1f}s (< 10s)")


def test_a3_network_oracle():
    grammars = [GrammarGraph(edges=(("A", "B"),), start=("A",)),
                GrammarGraph(edges=(("A", "B"), ("B", "A")), start=("A",)),
                GrammarGraph(edges=(("A", "A"), ("A", "B"), ("B", "B")), start=("A", "B")),
                GrammarGraph(edges=(("A", "B"), ("B", "A"), ("B", "B")), start=("B",))]
    t0 = time.perf_counter()
    worst, mismatched, checks = 0.0, 0, 0
    for k in range(50):
        rng = np.random.default_rng(30_000 + k)
        grammar = grammars[k % len(grammars)]
        models = [random_model(rng, int(rng.integers(1, 4)), 2, 2,
                               entry_spread=bool(rng.integers(2)),
                               exit_from_all=bool(rng.integers(2)), gesture_id=g, operator_id="U")
                  for g in ("A", "B")]
        obs = rng.normal(size=(int(rng.integers(1, 11)), 2))
        want_score, want_spans = brute_network(grammar, models, obs)
        net = compile_network(grammar, models)
        for backend in _backends():
            prev = kernels.use_backend(backend)
            try:
                got = decode_network(net, obs)
            finally:
                kernels.use_backend(prev)
            checks += 1
            if np.isfinite(want_score):
                worst = max(worst, abs(got.score - want_score))
            ok = _close(got.score, want_score, 1e-9)
            if np.isfinite(want_score):
                ok = ok and got.spans() == want_spans
            mismatched += not ok
    elapsed = time.perf_counter() - t0
    _record("A3", mismatched == 0 and elapsed < 60,
            f"{checks} network decodes, {mismatched} score/label mismatches, "
            f"max |dscore| {worst:.2g}, {elapsed:.1f}s (< 60s)")


@pytest.fixture(scope="module")
def a4_result():
    grammar = builtin_grammar()
    t0 = time.perf_counter()
    _, trials = synth_dataset(5, 5, 3, 2.0, 2024, grammar)
    config = RunConfig(n_states=4, n_mixtures=2, window_seconds=1.0, sample_rate=60.0)
    result = evaluate(loto_folds(trials), grammar, 1.0, config)
    return result, trials, time.perf_counter() - t0


def test_a4_synthetic_authentication(a4_result):
    result, trials, elapsed = a4_result
    acc = result.metrics["accuracy"]
    _record("A4", acc >= 0.90 and elapsed < 300,
            f"5 operators x 5 trials, 25 folds, {result.metrics['n_windows']} windows, "
            f"pooled accuracy {acc:.4f} (>= 0.90), {elapsed:.1f}s (< 300s)")


def test_a5_attack_response_ordering():
    grammar = builtin_grammar()
    t0 = time.perf_counter()
    # trials long enough that each half covers a full 5 s window
    _, trials = synth_dataset(5, 3, 8, 2.0, 515, grammar)
    report = run_attacks(trials, grammar, RunConfig(), [5.0, 3.0, 1.0], max_pairs=10)
    elapsed = time.perf_counter() - t0
    means = [r["mean_response_s"] for r in report.rows]
    runs = [r["n_runs"] for r in report.rows]
    finite = all(r.response is not None for r in report.runs)
    ordered = means[0] > means[1] > means[2]
    _record("A5", ordered and finite and runs == [20, 20, 20] and elapsed < 300,
            f"runs per width {runs}, mean response 5s/3s/1s = "
            f"{means[0]:.3f} > {means[1]:.3f} > {means[2]:.3f}, all finite={finite}, "
            f"{elapsed:.1f}s (< 300s)")


def test_a6_window_count_law():
    grammar = GrammarGraph(edges=(("G1", "G1"),), start=("G1",))
    model = new_left_right(2, 1, 1, gesture_id="G1", operator_id="U").replace(initialized=True)
    profiles = build_profiles([model], grammar)
    rng = np.random.default_rng(60_000)
    bad = 0
    for _ in range(200):
        lt = int(rng.integers(1, 400))
        lw = int(rng.integers(1, lt + 1))
        trial = Trial("U", "T", 1.0, rng.normal(size=(lt, 1)))
        decisions, traces = stream_authenticate(profiles, trial, float(lw), 1.0, with_labels=False)
        bad += len(decisions) != lt - lw + 1 or len(traces[0]) != lt - lw + 1
    _record("A6", bad == 0, f"200 random (L_trial, L_window) pairs, {bad} count violations")


def test_a7_accuracy_identity(a4_result):
    result, _, _ = a4_result
    cm = result.confusion
    identity = result.metrics["accuracy"] == int(np.trace(cm.counts)) / int(cm.counts.sum())
    _record("A7", identity and cm.total == cm.counts.sum(),
            f"accuracy {result.metrics['accuracy']!r} == trace/total "
            f"{int(np.trace(cm.counts))}/{int(cm.counts.sum())}")


def test_a8_eval_determinism(tmp_path):
    t0 = time.perf_counter()
    data = tmp_path / "ds"
    assert cli_main(["synth", "--out", str(data), "--operators", "3", "--trials", "3",
                     "--cycles", "3", "--seed", "8"]) == 0
    snapshots = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert cli_main(["eval", "--data", str(data), "--out", str(out), "--seed", "8"]) == 0
        snapshots.append({p.relative_to(out).as_posix(): p.read_bytes()
                          for p in sorted(out.rglob("*")) if p.is_file()})
    same = snapshots[0] == snapshots[1]
    elapsed = time.perf_counter() - t0
    _record("A8", same and len(snapshots[0]) > 2,
            f"cmd_eval twice: {len(snapshots[0])} files, byte-identical={same}, {elapsed:.1f}s "
            f"(suite wall time is reported in the summary)")


def test_a9_forward_oracle():
    t0 = time.perf_counter()
    worst, checks = 0.0, 0
    for backend in _backends():
        prev = kernels.use_backend(backend)
        try:
            for k in range(100):
                rng = np.random.default_rng(90_000 + k)
                m = random_model(rng, int(rng.integers(1, 4)), int(rng.integers(1, 3)),
                                 int(rng.integers(1, 4)), skip_width=int(rng.integers(0, 2)),
                                 entry_spread=bool(rng.integers(2)),
                                 exit_from_all=bool(rng.integers(2)))
                obs = rng.normal(size=(int(rng.integers(1, 7)), m.dim))
                got, want = forward_log_likelihood(m, obs), brute_forward(m, obs)
                worst = max(worst, 0.0 if got == want else abs(got - want))
                checks += 1
        finally:
            kernels.use_backend(prev)
    elapsed = time.perf_counter() - t0
    _record("A9", worst <= 1e-9 and elapsed < 10,
            f"{checks} forward likelihoods, max |dlogp| {worst:.2g} (<= 1e-9), "
            f"{elapsed:.1f}s (< 10s)")
