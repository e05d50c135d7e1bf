"""Sliding-window continuous authentication and attack response times."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .data import Trial
from .decoder import (DecodingNetwork, GrammarGraph, compile_network, decode_network_logb,
                      window_scores_logb)
from .errors import ConfigurationError, UsageError

NEG_INF = -np.inf
REJECT = "reject"


@dataclass(frozen=True, eq=False)
class OperatorProfile:
    operator_id: str
    network: DecodingNetwork

    def __post_init__(self):
        if self.network.operator_id != self.operator_id:
            raise ConfigurationError(
                f"profile {self.operator_id!r} wraps a network for {self.network.operator_id!r}")

    @property
    def gesture_labels(self) -> frozenset:
        return frozenset(self.network.gesture_ids)


@dataclass(frozen=True)
class AuthDecision:
    window_end: int                 # 1-based index of the window's last frame
    operator_id: str                # winner, or "reject"
    log_likelihoods: dict
    labels: tuple                   # decoded gesture sequence under the winner


@dataclass(frozen=True, eq=False)
class LikelihoodTrace:
    operator_id: str
    window_ends: np.ndarray
    log_likelihoods: np.ndarray

    def __post_init__(self):
        ends = np.asarray(self.window_ends, dtype=np.int64)
        vals = np.asarray(self.log_likelihoods, dtype=float)
        if ends.shape != vals.shape:
            raise UsageError("trace ends and values differ in length")
        if len(ends) > 1 and not np.all(np.diff(ends) == 1):
            raise UsageError("trace window ends must advance by exactly one frame")
        object.__setattr__(self, "window_ends", ends)
        object.__setattr__(self, "log_likelihoods", vals)

    @property
    def series(self):
        return list(zip(self.window_ends.tolist(), self.log_likelihoods.tolist()))

    def __len__(self):
        return len(self.window_ends)


def build_profiles(models, grammar: GrammarGraph):
    """Group gesture models by operator and compile one network each."""
    by_op = defaultdict(list)
    for m in models:
        by_op[m.operator_id].append(m)
    return [OperatorProfile(op, compile_network(grammar, by_op[op])) for op in sorted(by_op)]


def window_length(window_seconds: float, sample_rate: float) -> int:
    n = int(round(window_seconds * sample_rate))
    if n < 1:
        raise UsageError(f"a {window_seconds} s window at {sample_rate} Hz holds no frames")
    return n


def window_count(trial_len: int, window_len: int) -> int:
    if not (isinstance(trial_len, (int, np.integer)) and isinstance(window_len, (int, np.integer))):
        raise UsageError("lengths must be integers")
    if window_len < 1 or trial_len < window_len:
        raise UsageError(f"need trial_len >= window_len >= 1, got ({trial_len}, {window_len})")
    return int(trial_len - window_len + 1)


def _sorted_profiles(profiles):
    profiles = sorted(profiles, key=lambda p: p.operator_id)
    if not profiles:
        raise UsageError("at least one operator profile is required")
    dims = {p.network.dim for p in profiles}
    if len(dims) != 1:
        raise UsageError(f"profiles disagree on dimension: {sorted(dims)}")
    return profiles


def _pick(profiles, scores):
    best, winner = NEG_INF, REJECT
    for p in profiles:
        if scores[p.operator_id] > best:
            best, winner = scores[p.operator_id], p.operator_id
    return winner


def authenticate_window(profiles, window, window_end: int | None = None) -> AuthDecision:
    """Decide which operator produced ``window``.

    Each operator's network only contains that operator's gestures, so the
    decoded labels of the winner always lie in the winner's label set.
    """
    profiles = _sorted_profiles(profiles)
    window = np.asarray(window, dtype=float)
    if window.ndim != 2 or len(window) < 1:
        raise UsageError("window must be a non-empty (T, d) array")
    if window.shape[1] != profiles[0].network.dim:
        raise UsageError(f"window dimension {window.shape[1]} != model dimension "
                         f"{profiles[0].network.dim}")
    results = {p.operator_id: decode_network_logb(p.network, p.network.emission_log_probs(window),
                                                  open_start=True) for p in profiles}
    scores = {op: r.score for op, r in results.items()}
    winner = _pick(profiles, scores)
    labels = results[winner].labels() if winner != REJECT else ()
    return AuthDecision(len(window) if window_end is None else window_end, winner, scores, labels)


def stream_authenticate(profiles, trial: Trial, window_seconds: float,
                        sample_rate: float | None = None, *, with_labels: bool = True):
    """Authenticate every stride-1 window of ``trial``.

    Returns ``(decisions, traces)``; one decision per window and one trace
    per operator, both indexed by the window's last frame.
    """
    profiles = _sorted_profiles(profiles)
    rate = trial.sample_rate if sample_rate is None else sample_rate
    L = window_length(window_seconds, rate)
    if len(trial) < L:
        raise UsageError(f"trial {trial.trial_id!r} has {len(trial)} frames, shorter than the "
                         f"{L}-frame window")
    W = window_count(len(trial), L)
    ends = np.arange(L, L + W)
    logbs, series = {}, {}
    for p in profiles:
        logbs[p.operator_id] = p.network.emission_log_probs(trial.frames)
        series[p.operator_id] = window_scores_logb(p.network, logbs[p.operator_id], L)

    decisions = []
    for w in range(W):
        scores = {p.operator_id: float(series[p.operator_id][w]) for p in profiles}
        winner = _pick(profiles, scores)
        labels = ()
        if with_labels and winner != REJECT:
            net = next(p.network for p in profiles if p.operator_id == winner)
            labels = decode_network_logb(net, logbs[winner][w:w + L], open_start=True).labels()
        decisions.append(AuthDecision(int(ends[w]), winner, scores, labels))
    traces = [LikelihoodTrace(p.operator_id, ends, series[p.operator_id]) for p in profiles]
    return decisions, traces


def response_time(trace_true: LikelihoodTrace, trace_imposter: LikelihoodTrace,
                  attack_frame: int, sample_rate: float):
    """Seconds from the attack to the first window where the imposter's
    likelihood exceeds the genuine operator's; None when it never does."""
    if not np.array_equal(trace_true.window_ends, trace_imposter.window_ends):
        raise UsageError("traces are not aligned on the same window ends")
    ends = trace_true.window_ends
    if len(ends) == 0 or not ends[0] <= attack_frame <= ends[-1]:
        raise UsageError(f"attack frame {attack_frame} lies outside the window grid "
                         f"[{ends[0] if len(ends) else '-'}, {ends[-1] if len(ends) else '-'}]")
    after = ends >= attack_frame
    crossed = after & (trace_imposter.log_likelihoods > trace_true.log_likelihoods)
    idx = np.flatnonzero(crossed)
    if not idx.size:
        return None
    return float(ends[idx[0]] - attack_frame) / float(sample_rate)


# ---------------------------------------------------------------------------
# CSV export

def traces_to_csv(traces) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window_end", "operator_id", "log_likelihood"])
    for tr in sorted(traces, key=lambda t: t.operator_id):
        for end, ll in zip(tr.window_ends.tolist(), tr.log_likelihoods.tolist()):
            w.writerow([end, tr.operator_id, repr(ll)])
    return buf.getvalue()


def decisions_to_csv(decisions) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window_end", "winner", "labels"])
    for d in decisions:
        w.writerow([d.window_end, d.operator_id, ";".join(d.labels)])
    return buf.getvalue()
