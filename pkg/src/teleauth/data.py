"""Trials: CSV ingestion, velocity derivation, gesture segmentation,
synthetic operators and splice attacks."""

from __future__ import annotations

import csv
import io
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hmm
from .decoder import GrammarGraph
from .errors import ParseError, SchemaError, SegmentationError, UsageError
from .hmm import GestureHmm, Segment
from .io_utils import atomic_write_text

VELOCITY_COLUMNS = ("t", "vx", "vy", "vz", "qx", "qy", "qz", "qw", "fx", "fy", "fz", "gesture")
POSITION_COLUMNS = ("t", "x", "y", "z", "qx", "qy", "qz", "qw", "fx", "fy", "fz", "gesture")
SCHEMAS = {"velocity": VELOCITY_COLUMNS, "position": POSITION_COLUMNS}
STATE_DIM = 10
QUAT = slice(3, 7)
QUAT_TOL = 1e-3


@dataclass(frozen=True)
class ObservationFrame:
    s: np.ndarray
    gesture: str = ""


@dataclass(frozen=True, eq=False)
class Trial:
    """One recorded (or synthesised) operation: frames plus per-frame gesture labels.

    Under the ``position`` schema the first three channels hold positions
    until :meth:`with_velocity` converts them.
    """

    operator_id: str
    trial_id: str
    sample_rate: float
    frames: np.ndarray
    labels: tuple = ()
    times: np.ndarray = None
    schema: str = "velocity"

    def __post_init__(self):
        frames = np.array(self.frames, dtype=float)
        if frames.ndim == 1:
            frames = frames[:, None]
        if frames.ndim != 2 or len(frames) == 0:
            raise UsageError(f"trial {self.trial_id!r} has no frames")
        if not self.sample_rate > 0:
            raise UsageError(f"sample rate must be positive, got {self.sample_rate!r}")
        labels = tuple(self.labels) if self.labels else ("",) * len(frames)
        if len(labels) != len(frames):
            raise UsageError(f"{len(labels)} labels for {len(frames)} frames")
        times = (np.arange(len(frames)) / float(self.sample_rate) if self.times is None
                 else np.array(self.times, dtype=float))
        if times.shape != (len(frames),):
            raise UsageError(f"{times.shape} timestamps for {len(frames)} frames")
        if self.schema not in SCHEMAS:
            raise UsageError(f"unknown schema {self.schema!r}")
        frames.flags.writeable = False
        times.flags.writeable = False
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self):
        return len(self.frames)

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def key(self):
        return (self.operator_id, self.trial_id)

    def frame(self, i: int) -> ObservationFrame:
        return ObservationFrame(self.frames[i], self.labels[i])

    def with_velocity(self) -> "Trial":
        if self.schema == "velocity":
            return self
        frames = np.array(self.frames)
        frames[:, :3] = derive_velocity(frames[:, :3], self.sample_rate)
        return Trial(self.operator_id, self.trial_id, self.sample_rate, frames, self.labels,
                     self.times, "velocity")

    def with_frames(self, frames) -> "Trial":
        return Trial(self.operator_id, self.trial_id, self.sample_rate, frames, self.labels,
                     self.times, self.schema)


def derive_velocity(positions, sample_rate: float) -> np.ndarray:
    """Forward differences scaled by the sample rate; the last value is repeated."""
    p = np.asarray(positions, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if len(p) < 2:
        raise UsageError(f"velocity needs at least 2 positions, got {len(p)}")
    v = np.empty_like(p)
    v[:-1] = (p[1:] - p[:-1]) * sample_rate
    v[-1] = v[-2]
    return v


# ---------------------------------------------------------------------------
# CSV

def parse_trial_filename(path):
    """``{operator}_{trial}.csv`` -> (operator, trial)."""
    stem = Path(path).stem
    op, sep, trial = stem.partition("_")
    if not sep or not op or not trial:
        raise ParseError(f"{Path(path).name}: expected a name of the form operator_trial.csv")
    return op, trial


def _check_quaternions(frames, where, mode):
    if mode == "off" or frames.shape[1] != STATE_DIM:
        return
    norms = np.linalg.norm(frames[:, QUAT], axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > QUAT_TOL)
    if not bad.size:
        return
    msg = (f"{where}: {bad.size} frame(s) have quaternion norm off unit by more than {QUAT_TOL} "
           f"(first at frame {bad[0] + 1}, norm {norms[bad[0]]:.6g})")
    if mode == "strict":
        raise ParseError(msg)
    warnings.warn(msg, stacklevel=3)


def load_trial(path, schema: str = "velocity", sample_rate: float = 60.0, *,
               operator_id=None, trial_id=None, quaternion_check: str = "warn") -> Trial:
    """Read one trial CSV. Position files keep positions; call ``with_velocity``."""
    if schema not in SCHEMAS:
        raise UsageError(f"unknown schema {schema!r}; use one of {sorted(SCHEMAS)}")
    if quaternion_check not in ("off", "warn", "strict"):
        raise UsageError(f"quaternion_check must be off, warn or strict, got {quaternion_check!r}")
    path = Path(path)
    if operator_id is None or trial_id is None:
        op, tr = parse_trial_filename(path)
        operator_id = op if operator_id is None else operator_id
        trial_id = tr if trial_id is None else trial_id
    with open(path, newline="", encoding="utf-8") as fh:
        return _read_trial(fh, path.name, schema, sample_rate, operator_id, trial_id,
                           quaternion_check)


def _read_trial(fh, name, schema, sample_rate, operator_id, trial_id, quaternion_check):
    expected = SCHEMAS[schema]
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        raise SchemaError(f"{name}: empty file")
    header = [h.strip() for h in header]
    if tuple(header) != expected:
        missing = [c for c in expected if c not in header]
        detail = f"missing {', '.join(missing)}" if missing else f"got {','.join(header)}"
        raise SchemaError(f"{name}: header does not match {schema} schema ({detail})")
    times, rows, labels = [], [], []
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != len(expected):
            raise ParseError(f"{name} line {lineno}: expected {len(expected)} fields, got {len(row)}")
        try:
            values = [float(x) for x in row[:-1]]
        except ValueError as exc:
            raise ParseError(f"{name} line {lineno}: {exc}") from None
        if not all(np.isfinite(values)):
            raise ParseError(f"{name} line {lineno}: non-finite value")
        times.append(values[0])
        rows.append(values[1:])
        labels.append(row[-1].strip())
    if not rows:
        raise ParseError(f"{name}: no data rows")
    frames = np.array(rows)
    _check_quaternions(frames, name, quaternion_check)
    return Trial(operator_id, trial_id, sample_rate, frames, tuple(labels), np.array(times), schema)


def trial_to_csv(trial: Trial) -> str:
    if trial.dim != STATE_DIM:
        raise UsageError(f"trial CSV holds {STATE_DIM} channels; trial has {trial.dim}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCHEMAS[trial.schema])
    for t, row, label in zip(trial.times, trial.frames, trial.labels):
        writer.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [label])
    return buf.getvalue()


def save_trial(trial: Trial, path) -> None:
    atomic_write_text(path, trial_to_csv(trial))


def trial_filename(trial: Trial) -> str:
    return f"{trial.operator_id}_{trial.trial_id}.csv"


# ---------------------------------------------------------------------------
# segmentation

def segment_by_labels(trial: Trial) -> list:
    """Split a fully labelled trial into maximal runs of one gesture."""
    missing = [i for i, g in enumerate(trial.labels) if not g]
    if missing:
        raise SegmentationError(
            f"trial {trial.trial_id!r}: frame {missing[0] + 1} has no gesture label")
    segments, start = [], 0
    labels = trial.labels
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            segments.append(Segment(trial.frames[start:i], labels[start], trial.operator_id,
                                    trial.trial_id, start))
            start = i
    return segments


def concatenate_segments(segments, operator_id: str, trial_id: str, sample_rate: float) -> Trial:
    frames = np.concatenate([s.observations for s in segments])
    labels = tuple(s.gesture_id for s in segments for _ in range(len(s)))
    return Trial(operator_id, trial_id, sample_rate, frames, labels)


@dataclass(frozen=True)
class Normalizer:
    """Per-channel z-scoring fitted on training trials."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, trials):
        frames = np.concatenate([t.frames for t in trials])
        std = frames.std(axis=0)
        return cls(frames.mean(axis=0), np.where(std > 0, std, 1.0))

    def apply(self, trial: Trial) -> Trial:
        return trial.with_frames((trial.frames - self.mean) / self.std)


# ---------------------------------------------------------------------------
# synthetic operators

@dataclass(frozen=True, eq=False)
class SyntheticOperator:
    operator_id: str
    grammar: GrammarGraph
    models: dict                 # gesture_id -> ground-truth GestureHmm
    separation: float
    offsets: np.ndarray          # (G, S, d) operator mean offsets, in units of noise
    noise: float = 1.0
    gesture_ids: tuple = field(default=())


def _task_models(grammar, dim, n_states, n_mixtures, noise, self_loop, task_seed):
    rng = np.random.default_rng(task_seed)
    gestures = tuple(sorted(grammar.gestures))
    means = np.empty((len(gestures), n_states, n_mixtures, dim))
    weights = np.empty((len(gestures), n_states, n_mixtures))
    for g in range(len(gestures)):
        center = rng.normal(0.0, 4.0 * noise, dim)
        step = rng.normal(0.0, 1.5 * noise, dim)
        for s in range(n_states):
            state_mean = center + (s - (n_states - 1) / 2.0) * step
            means[g, s] = state_mean + rng.normal(0.0, 0.5 * noise, (n_mixtures, dim))
            w = rng.uniform(0.3, 0.7, n_mixtures)
            weights[g, s] = w / w.sum()
    trans = np.zeros((n_states + 2, n_states + 2))
    trans[0, 1] = 1.0
    for i in range(1, n_states + 1):
        trans[i, i], trans[i, i + 1] = self_loop, 1.0 - self_loop
    with np.errstate(divide="ignore"):
        log_trans = np.log(trans)
    return gestures, means, weights, log_trans


def synth_operator(operator_id: str, grammar: GrammarGraph, dim: int = STATE_DIM,
                   separation: float = 2.0, seed: int = 0, *, n_states: int = 4,
                   n_mixtures: int = 2, task_seed: int = 0, noise: float = 1.0,
                   self_loop: float = 0.9) -> SyntheticOperator:
    """Ground-truth gesture models for one synthetic operator.

    All operators built from the same ``task_seed`` share gesture shapes and
    timing; each operator then shifts every state mean by ``separation *
    noise`` per channel with a sign pattern drawn from ``seed``.
    """
    if separation < 0:
        raise UsageError(f"separation must be >= 0, got {separation}")
    if dim < 1 or n_states < 1 or n_mixtures < 1:
        raise UsageError("dim, n_states and n_mixtures must be positive")
    if not 0 < self_loop < 1:
        raise UsageError(f"self_loop must lie in (0, 1), got {self_loop}")
    gestures, means, weights, log_trans = _task_models(grammar, dim, n_states, n_mixtures,
                                                       noise, self_loop, task_seed)
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=(len(gestures), n_states, dim))
    offsets = separation * signs
    models = {}
    for g, gid in enumerate(gestures):
        models[gid] = GestureHmm(
            log_transitions=log_trans,
            means=means[g] + noise * offsets[g][:, None, :],
            variances=np.full((n_states, n_mixtures, dim), noise ** 2),
            log_weights=np.log(weights[g]),
            operator_id=operator_id, gesture_id=gid, initialized=True)
    return SyntheticOperator(operator_id, grammar, models, float(separation), offsets, noise,
                             gestures)


def min_pairwise_offset_gap(ops) -> float:
    """Smallest, over operator pairs, of the largest per-channel offset difference."""
    gaps = []
    for i in range(len(ops)):
        for j in range(i + 1, len(ops)):
            gaps.append(np.abs(ops[i].offsets - ops[j].offsets).max())
    return min(gaps) if gaps else np.inf


def _walk(grammar: GrammarGraph, n_cycles: int, rng, max_per_cycle: int = 64):
    start = sorted(grammar.start)
    g = start[int(rng.integers(len(start)))]
    walk = []
    for _ in range(n_cycles):
        for _ in range(max_per_cycle):
            walk.append(g)
            succ = grammar.successors(g)
            if not succ:
                g = start[int(rng.integers(len(start)))]
                break
            g = succ[int(rng.integers(len(succ)))]
            if g in grammar.start:
                break
    return walk


def synth_trial(op: SyntheticOperator, n_cycles: int, seed: int, *, sample_rate: float = 60.0,
                trial_id: str | None = None) -> Trial:
    """Sample a fully labelled trial: a grammar walk of ``n_cycles`` cycles."""
    if n_cycles < 1:
        raise UsageError(f"n_cycles must be >= 1, got {n_cycles}")
    rng = np.random.default_rng(seed)
    frames, labels = [], []
    for g in _walk(op.grammar, n_cycles, rng):
        x, _ = hmm.sample(op.models[g], rng)
        frames.append(x)
        labels += [g] * len(x)
    tid = trial_id if trial_id is not None else f"S{seed}"
    return Trial(op.operator_id, tid, sample_rate, np.concatenate(frames), tuple(labels))


def _child_seed(seed: int, *keys) -> int:
    entropy = [seed] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def synth_dataset(n_operators: int, n_trials: int, n_cycles: int, separation: float, seed: int,
                  grammar: GrammarGraph, *, dim: int = STATE_DIM, sample_rate: float = 60.0,
                  n_states: int = 4, n_mixtures: int = 2):
    """Operators ``U01..`` with trials ``T1..``; returns (operators, trials)."""
    if n_operators < 1 or n_trials < 1:
        raise UsageError("need at least one operator and one trial")
    ops = []
    for i in range(n_operators):
        oid = f"U{i + 1:02d}"
        attempt = 0
        while True:
            op = synth_operator(oid, grammar, dim, separation, _child_seed(seed, oid, attempt),
                                n_states=n_states, n_mixtures=n_mixtures, task_seed=seed)
            # reroll the rare sign pattern that collides with an earlier operator
            if separation == 0 or all(np.abs(op.offsets - o.offsets).max() >= separation
                                      for o in ops):
                break
            attempt += 1
        ops.append(op)
    trials = [synth_trial(op, n_cycles, _child_seed(seed, op.operator_id, f"T{k + 1}"),
                          sample_rate=sample_rate, trial_id=f"T{k + 1}")
              for op in ops for k in range(n_trials)]
    return ops, trials


# ---------------------------------------------------------------------------
# attacks

def splice_attack(trial_a: Trial, trial_b: Trial):
    """First half of ``trial_a`` followed by the second half of ``trial_b``.

    Returns the spliced trial and the attack frame (number of frames taken
    from ``trial_a``).
    """
    if trial_a.sample_rate != trial_b.sample_rate:
        raise UsageError(f"sample rates differ: {trial_a.sample_rate} vs {trial_b.sample_rate}")
    if trial_a.dim != trial_b.dim:
        raise UsageError(f"dimensions differ: {trial_a.dim} vs {trial_b.dim}")
    ha, hb = len(trial_a) // 2, len(trial_b) // 2
    frames = np.concatenate([trial_a.frames[:ha], trial_b.frames[hb:]])
    labels = trial_a.labels[:ha] + trial_b.labels[hb:]
    spliced = Trial(f"{trial_a.operator_id}~{trial_b.operator_id}",
                    f"{trial_a.trial_id}~{trial_b.trial_id}", trial_a.sample_rate, frames, labels,
                    schema=trial_a.schema)
    return spliced, ha
