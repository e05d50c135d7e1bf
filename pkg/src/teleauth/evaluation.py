"""Leave-one-trial-out evaluation, impersonation-attack runs and reports."""

from __future__ import annotations

import csv
import io
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hmm
from .auth import REJECT, build_profiles, response_time, stream_authenticate, traces_to_csv
from .config import RunConfig
from .data import Normalizer, Trial, _child_seed, segment_by_labels, splice_attack
from .decoder import GrammarGraph
from .errors import ConfigurationError, TeleauthError, UsageError
from .io_utils import atomic_write_text

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Fold:
    held_out: tuple              # (operator_id, trial_id)
    test: Trial
    training: tuple              # every other trial


def loto_folds(trials) -> list:
    """One fold per trial, training on all the others."""
    trials = sorted(trials, key=lambda t: t.key)
    keys = [t.key for t in trials]
    if len(set(keys)) != len(keys):
        raise ConfigurationError("duplicate (operator, trial) ids in the dataset")
    per_op = defaultdict(int)
    for t in trials:
        per_op[t.operator_id] += 1
    lonely = sorted(op for op, n in per_op.items() if n < 2)
    if lonely:
        raise ConfigurationError(
            f"leave-one-trial-out needs >= 2 trials per operator; {', '.join(lonely)} has one")
    return [Fold(t.key, t, tuple(o for o in trials if o.key != t.key)) for t in trials]


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are true operators, columns predicted; rejected windows kept aside."""

    labels: tuple
    counts: np.ndarray
    rejected: np.ndarray = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if counts.shape != (n, n) or np.any(counts < 0):
            raise UsageError(f"confusion counts must be a non-negative {n}x{n} matrix")
        rejected = (np.zeros(n, dtype=np.int64) if self.rejected is None
                    else np.asarray(self.rejected, dtype=np.int64))
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "rejected", rejected)

    @classmethod
    def from_pairs(cls, labels, pairs):
        labels = tuple(labels)
        index = {l: i for i, l in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        rejected = np.zeros(len(labels), dtype=np.int64)
        for true, pred in pairs:
            if pred == REJECT:
                rejected[index[true]] += 1
            else:
                counts[index[true], index[pred]] += 1
        return cls(labels, counts, rejected)

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(1) + self.rejected

    @property
    def total(self) -> int:
        return int(self.row_totals.sum())

    @property
    def hits(self) -> int:
        return int(np.trace(self.counts))

    def accuracy(self) -> float:
        return self.hits / self.total if self.total else 0.0

    def precision(self) -> np.ndarray:
        col = self.counts.sum(0)
        diag = np.diag(self.counts).astype(float)
        return np.divide(diag, col, out=np.zeros(len(col)), where=col > 0)

    def recall(self) -> np.ndarray:
        row = self.row_totals
        diag = np.diag(self.counts).astype(float)
        return np.divide(diag, row, out=np.zeros(len(row)), where=row > 0)

    def macro_precision(self) -> float:
        return float(self.precision().mean()) if len(self.labels) else 0.0

    def macro_recall(self) -> float:
        return float(self.recall().mean()) if len(self.labels) else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\predicted", *self.labels, REJECT])
        for i, lab in enumerate(self.labels):
            w.writerow([lab, *self.counts[i].tolist(), int(self.rejected[i])])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainedModel:
    model: hmm.GestureHmm
    report: hmm.TrainReport
    n_segments: int


def train_operator(trials, grammar: GrammarGraph, config: RunConfig, operator_id: str) -> dict:
    """Train one model per grammar gesture from an operator's labelled trials."""
    by_gesture = defaultdict(list)
    for t in trials:
        if t.operator_id != operator_id:
            continue
        for seg in segment_by_labels(t):
            by_gesture[seg.gesture_id].append(seg)
    out = {}
    for g in sorted(grammar.gestures):
        segs = by_gesture.get(g)
        if not segs:
            raise ConfigurationError(f"operator {operator_id!r} has no training data for gesture {g!r}")
        seed = _child_seed(config.seed, operator_id, g)
        model = hmm.new_left_right(config.n_states, config.n_mixtures, segs[0].dim,
                                   skip_width=config.skip_width, operator_id=operator_id,
                                   gesture_id=g)
        model = hmm.init_from_segments(model, segs, seed)
        model, report = hmm.train(model, segs, config.max_iter, config.rel_tol, seed)
        out[g] = TrainedModel(model, report, len(segs))
    unknown = sorted(set(by_gesture) - set(grammar.gestures))
    if unknown:
        log.warning("operator %s: ignoring gestures outside the grammar: %s", operator_id, unknown)
    return out


def train_all(trials, grammar: GrammarGraph, config: RunConfig) -> dict:
    """{operator_id: {gesture_id: TrainedModel}} for every operator in ``trials``."""
    ops = sorted({t.operator_id for t in trials})
    return {op: train_operator(trials, grammar, config, op) for op in ops}


# ---------------------------------------------------------------------------
# leave-one-trial-out evaluation

@dataclass(frozen=True, eq=False)
class EvalResult:
    confusion: ConfusionMatrix
    metrics: dict
    traces: dict = field(default_factory=dict)       # (operator, trial) -> [LikelihoodTrace]
    decisions: dict = field(default_factory=dict)    # (operator, trial) -> [AuthDecision]


class _ModelCache:
    """Per-operator models keyed by the exact training trials used."""

    def __init__(self, grammar, config):
        self.grammar, self.config = grammar, config
        self._store = {}

    def models(self, trials, operator_id, norm_key=None):
        own = tuple(t.trial_id for t in trials if t.operator_id == operator_id)
        key = (operator_id, own, norm_key)
        if key not in self._store:
            self._store[key] = train_operator(trials, self.grammar, self.config, operator_id)
        return [tm.model for tm in self._store[key].values()]


def _fold_context(fold, exc):
    msg = f"fold holding out {fold.held_out[0]}/{fold.held_out[1]}: {exc}"
    return type(exc)(msg) if isinstance(exc, TeleauthError) else exc


def evaluate(folds, grammar: GrammarGraph, window_seconds: float, config: RunConfig,
             *, with_labels: bool = False) -> EvalResult:
    """Train per fold, stream-authenticate the held-out trial, pool every window."""
    folds = list(folds)
    labels = tuple(sorted({t.operator_id for f in folds for t in (f.test, *f.training)}))
    cache = _ModelCache(grammar, config)
    pairs, traces, decisions = [], {}, {}
    for fold in folds:
        try:
            training, test = list(fold.training), fold.test
            norm_key = None
            if config.normalization:
                norm = Normalizer.fit(training)
                training = [norm.apply(t) for t in training]
                test = norm.apply(test)
                norm_key = fold.held_out
            models = []
            for op in labels:
                models += cache.models(training, op, norm_key)
            profiles = build_profiles(models, grammar)
            dec, tr = stream_authenticate(profiles, test, window_seconds, config.sample_rate,
                                          with_labels=with_labels)
        except TeleauthError as exc:
            raise _fold_context(fold, exc) from exc
        pairs += [(fold.test.operator_id, d.operator_id) for d in dec]
        traces[fold.held_out] = tr
        decisions[fold.held_out] = dec
        log.info("fold %s/%s: %d windows", *fold.held_out, len(dec))
    cm = ConfusionMatrix.from_pairs(labels, pairs)
    metrics = {
        "window_seconds": float(window_seconds),
        "n_windows": cm.total,
        "accuracy": cm.accuracy(),
        "macro_precision": cm.macro_precision(),
        "macro_recall": cm.macro_recall(),
    }
    return EvalResult(cm, metrics, traces, decisions)


def sweep(trials, grammar: GrammarGraph, window_seconds: float, config: RunConfig,
          states=range(3, 7), mixtures=range(1, 4)) -> list:
    """Accuracy over a grid of (emitting states, mixtures); one dict per point."""
    folds = loto_folds(trials)
    rows = []
    for n in states:
        for m in mixtures:
            res = evaluate(folds, grammar, window_seconds, config.replace(n_states=n, n_mixtures=m))
            rows.append({"n_states": n, "n_mixtures": m, **res.metrics})
    return rows


# ---------------------------------------------------------------------------
# impersonation attacks

@dataclass(frozen=True)
class AttackRun:
    genuine: str
    genuine_trial: str
    imposter: str
    imposter_trial: str
    window_seconds: float
    attack_frame: int
    response: float | None


@dataclass(frozen=True, eq=False)
class AttackReport:
    runs: tuple
    rows: tuple                  # per-width aggregates
    traces: dict = field(default_factory=dict)


def summarize_attacks(runs, widths) -> tuple:
    rows = []
    for w in widths:
        sel = [r for r in runs if r.window_seconds == w]
        finite = [r.response for r in sel if r.response is not None]
        rows.append({
            "window_seconds": float(w),
            "mean_response_s": float(np.mean(finite)) if finite else float("nan"),
            "n_runs": len(sel),
            "n_crossed": len(finite),
            "none_rate": (len(sel) - len(finite)) / len(sel) if sel else float("nan"),
        })
    return tuple(rows)


def attack_eval(profiles, pairs, widths, sample_rate: float | None = None) -> AttackReport:
    """Splice each pair both ways and time the likelihood cross per window width."""
    by_op = {p.operator_id: p for p in profiles}
    widths = [float(w) for w in widths]
    runs, traces = [], {}
    for a, b in pairs:
        for genuine, imposter in ((a, b), (b, a)):
            spliced, attack = splice_attack(genuine, imposter)
            rate = spliced.sample_rate if sample_rate is None else sample_rate
            profs = [by_op[genuine.operator_id]]
            if imposter.operator_id != genuine.operator_id:
                profs.append(by_op[imposter.operator_id])
            for w in widths:
                _, tr = stream_authenticate(profs, spliced, w, rate, with_labels=False)
                tmap = {t.operator_id: t for t in tr}
                rt = response_time(tmap[genuine.operator_id], tmap[imposter.operator_id],
                                   attack, rate)
                run = AttackRun(genuine.operator_id, genuine.trial_id, imposter.operator_id,
                                imposter.trial_id, w, attack, rt)
                runs.append(run)
                traces[(run.genuine, run.genuine_trial, run.imposter, run.imposter_trial, w)] = tr
    return AttackReport(tuple(runs), summarize_attacks(runs, widths), traces)


def merge_attack_reports(reports, widths) -> AttackReport:
    runs, traces = [], {}
    for r in reports:
        runs += r.runs
        traces.update(r.traces)
    return AttackReport(tuple(runs), summarize_attacks(runs, [float(w) for w in widths]), traces)


def run_attacks(trials, grammar: GrammarGraph, config: RunConfig, widths,
                max_pairs: int | None = None) -> AttackReport:
    """Pair operators, hold out the same trial index for both, train on the rest, attack.

    Pairs are every operator pair (sorted) crossed with every shared trial
    index, truncated to ``max_pairs``.
    """
    by_op = defaultdict(list)
    for t in sorted(trials, key=lambda t: t.key):
        by_op[t.operator_id].append(t)
    ops = sorted(by_op)
    if len(ops) < 2:
        raise ConfigurationError("attack simulation needs at least two operators")
    plan = []
    for i in range(len(ops)):
        for j in range(i + 1, len(ops)):
            n = min(len(by_op[ops[i]]), len(by_op[ops[j]]))
            plan += [(ops[i], ops[j], k) for k in range(n)]
    if max_pairs is not None:
        plan = plan[:max_pairs]
    cache = _ModelCache(grammar, config)
    reports = []
    for a, b, k in plan:
        ta, tb = by_op[a][k], by_op[b][k]
        train_a = [t for t in by_op[a] if t is not ta]
        train_b = [t for t in by_op[b] if t is not tb]
        if not train_a or not train_b:
            raise ConfigurationError("attack simulation needs >= 2 trials per operator")
        models = cache.models(train_a, a) + cache.models(train_b, b)
        reports.append(attack_eval(build_profiles(models, grammar), [(ta, tb)], widths,
                                   config.sample_rate))
    return merge_attack_reports(reports, widths)


# ---------------------------------------------------------------------------
# reports

def _g6(x) -> str:
    return format(float(x), ".6g")


def metrics_to_csv(metrics: dict) -> str:
    cols = ["window_seconds", "n_windows", "accuracy", "macro_precision", "macro_recall"]
    vals = [_g6(metrics["window_seconds"]), str(int(metrics["n_windows"]))]
    vals += [_g6(metrics[c]) for c in cols[2:]]
    return ",".join(cols) + "\n" + ",".join(vals) + "\n"


def responses_to_csv(rows) -> str:
    cols = ["window_seconds", "mean_response_s", "n_runs", "n_crossed", "none_rate"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join([_g6(r["window_seconds"]), _g6(r["mean_response_s"]),
                               str(r["n_runs"]), str(r["n_crossed"]), _g6(r["none_rate"])]))
    return "\n".join(lines) + "\n"


def attack_runs_to_csv(runs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["genuine", "genuine_trial", "imposter", "imposter_trial", "window_seconds",
                "attack_frame", "response_s"])
    for r in runs:
        w.writerow([r.genuine, r.genuine_trial, r.imposter, r.imposter_trial,
                    _g6(r.window_seconds), r.attack_frame,
                    "" if r.response is None else repr(r.response)])
    return buf.getvalue()


def sweep_to_csv(rows) -> str:
    cols = ["n_states", "n_mixtures", "window_seconds", "n_windows", "accuracy",
            "macro_precision", "macro_recall"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join([str(r["n_states"]), str(r["n_mixtures"]), _g6(r["window_seconds"]),
                               str(r["n_windows"]), _g6(r["accuracy"]),
                               _g6(r["macro_precision"]), _g6(r["macro_recall"])]))
    return "\n".join(lines) + "\n"


def write_report(results, out_dir) -> list:
    """Write CSV reports for an EvalResult, an AttackReport, or a sequence of them.

    Returns the written paths in write order. Output depends only on the
    results, so identical runs produce identical bytes.
    """
    out = Path(out_dir)
    items = results if isinstance(results, (list, tuple)) else [results]
    files = {}
    for res in items:
        if isinstance(res, EvalResult):
            files["confusion.csv"] = res.confusion.to_csv()
            files["metrics.csv"] = metrics_to_csv(res.metrics)
            for (op, trial), tr in sorted(res.traces.items()):
                files[f"traces/{op}_{trial}.csv"] = traces_to_csv(tr)
        elif isinstance(res, AttackReport):
            files["responses.csv"] = responses_to_csv(res.rows)
            files["attack_runs.csv"] = attack_runs_to_csv(res.runs)
            for (g, gt, i, it, w), tr in sorted(res.traces.items()):
                files[f"traces/attack_{g}-{gt}_{i}-{it}_{_g6(w)}s.csv"] = traces_to_csv(tr)
        else:
            raise UsageError(f"cannot write a report for {type(res).__name__}")
    written = []
    for name, text in files.items():
        path = out / name
        atomic_write_text(path, text)
        written.append(path)
    return written
