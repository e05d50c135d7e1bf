"""Left-right gesture HMMs with non-emitting entry/exit states.

State 0 is the entry, state N-1 the exit; states 1..N-2 emit through a
diagonal Gaussian mixture. Emitting-state parameters are stored as stacked
arrays indexed by ``state - 1``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import InvalidModelError, ParseError, TrainingDataError, TrainingError, UsageError
from .numerics import (COLLAPSE_MASS, WEIGHT_FLOOR, GaussianComponent, Mixture,
                       component_log_probs, floor_weights, kmeans_seed, variance_floor)

log = logging.getLogger(__name__)

NEG_INF = -np.inf
ROW_TOL = 1e-9
SELF_LOOP = 0.6
ADVANCE = 0.4
SKIP_SPLIT = (0.6, 0.3, 0.1)


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Segment:
    observations: np.ndarray
    gesture_id: str
    operator_id: str = ""
    trial_id: str = ""
    start: int = 0

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2 or len(obs) < 1:
            raise UsageError("a segment needs at least one observation vector")
        obs.flags.writeable = False
        object.__setattr__(self, "observations", obs)

    def __len__(self):
        return len(self.observations)

    @property
    def dim(self):
        return self.observations.shape[1]


@dataclass(frozen=True)
class TrainReport:
    log_likelihood_history: tuple
    iterations: int
    converged: bool


@dataclass(frozen=True)
class GestureHmm:
    log_transitions: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_weights: np.ndarray
    operator_id: str = ""
    gesture_id: str = ""
    skip_width: int = 0
    initialized: bool = False

    def __post_init__(self):
        for name in ("log_transitions", "means", "variances", "log_weights"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n_states(self) -> int:
        return self.log_transitions.shape[0]

    @property
    def n_emitting(self) -> int:
        return self.n_states - 2

    @property
    def n_mixtures(self) -> int:
        return self.means.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    @property
    def key(self):
        return (self.operator_id, self.gesture_id)

    def mixture(self, state: int) -> Mixture:
        """Emission mixture of emitting state ``state`` (1..N-2)."""
        if not 1 <= state <= self.n_emitting:
            raise UsageError(f"state {state} is not emitting (valid: 1..{self.n_emitting})")
        s = state - 1
        comps = [GaussianComponent(m, v) for m, v in zip(self.means[s], self.variances[s])]
        return Mixture(comps, self.log_weights[s])

    def component_log_probs(self, obs) -> np.ndarray:
        """(T, S, M) array of log c_sm + log N(o_t; mu_sm, var_sm)."""
        obs = _as_obs(obs, self.dim)
        return component_log_probs(obs, self.means, self.variances, self.log_weights)

    def emission_log_probs(self, obs) -> np.ndarray:
        """(T, S) array of log b_s(o_t) for the emitting states."""
        return logsumexp(self.component_log_probs(obs), axis=2)

    def replace(self, **changes) -> "GestureHmm":
        return dataclasses.replace(self, **changes)


def _as_obs(obs, dim):
    arr = np.asarray(obs, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None] if dim == 1 else arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise UsageError(f"observations of shape {np.shape(obs)} do not match model dimension {dim}")
    if len(arr) == 0:
        raise UsageError("observation sequence is empty")
    return arr


def default_transitions(n_emitting: int, skip_width: int = 0) -> np.ndarray:
    N = n_emitting + 2
    a = np.zeros((N, N))
    a[0, 1] = 1.0
    for i in range(1, N - 1):
        if skip_width and i + 2 <= N - 1:
            a[i, i], a[i, i + 1], a[i, i + 2] = SKIP_SPLIT
        else:
            a[i, i], a[i, i + 1] = SELF_LOOP, ADVANCE
    with np.errstate(divide="ignore"):
        return np.log(a)


def new_left_right(n_emitting: int, n_mixtures: int, dim: int, *, skip_width: int = 0,
                   operator_id: str = "", gesture_id: str = "") -> GestureHmm:
    """Build the left-right topology with default transitions and blank emissions."""
    for name, v in (("n_emitting", n_emitting), ("n_mixtures", n_mixtures), ("dim", dim)):
        if int(v) != v or v < 1:
            raise UsageError(f"{name} must be a positive integer, got {v!r}")
    if skip_width not in (0, 1):
        raise UsageError(f"skip_width must be 0 or 1, got {skip_width!r}")
    S, M, d = int(n_emitting), int(n_mixtures), int(dim)
    return GestureHmm(
        log_transitions=default_transitions(S, skip_width),
        means=np.zeros((S, M, d)),
        variances=np.ones((S, M, d)),
        log_weights=np.full((S, M), -math.log(M)),
        operator_id=operator_id,
        gesture_id=gesture_id,
        skip_width=skip_width,
    )


def _check_segments(model: GestureHmm, segments, min_len: int):
    segments = list(segments)
    if not segments:
        raise TrainingDataError("no training segments supplied")
    gestures = {s.gesture_id for s in segments}
    if len(gestures) != 1:
        raise TrainingDataError(f"segments mix gestures {sorted(gestures)}")
    for s in segments:
        if s.dim != model.dim:
            raise TrainingDataError(
                f"trial {s.trial_id!r}: segment dimension {s.dim} != model dimension {model.dim}")
        if len(s) < min_len:
            raise TrainingDataError(
                f"trial {s.trial_id!r}: {s.gesture_id} segment at frame {s.start} has "
                f"{len(s)} frames, fewer than the {min_len} emitting states")
    return segments


def init_from_segments(model: GestureHmm, segments, seed: int = 0) -> GestureHmm:
    """Uniform-segmentation initialisation of the emitting-state mixtures.

    Each segment is cut into ``n_emitting`` equal spans; frames of span s are
    pooled across segments and clustered with k-means into the state's
    mixture components. Transitions keep their constructor defaults.
    """
    S, M = model.n_emitting, model.n_mixtures
    segments = _check_segments(model, segments, S)
    pooled = np.concatenate([s.observations for s in segments])
    floor = variance_floor(pooled)

    per_state = [[] for _ in range(S)]
    for seg in segments:
        L = len(seg)
        bounds = [(k * L) // S for k in range(S + 1)]
        for k in range(S):
            per_state[k].append(seg.observations[bounds[k]:bounds[k + 1]])

    child_seeds = np.random.SeedSequence(seed).generate_state(S)
    means = np.empty((S, M, model.dim))
    variances = np.empty((S, M, model.dim))
    for k in range(S):
        pts = np.concatenate(per_state[k])
        state_var = np.maximum(pts.var(axis=0), floor)
        if len(pts) >= M:
            centers = kmeans_seed(pts, M, int(child_seeds[k]))
        else:
            centers = pts[np.arange(M) % len(pts)]
        assign = ((pts[:, None, :] - centers[None]) ** 2).sum(-1).argmin(1)
        for m in range(M):
            members = pts[assign == m]
            means[k, m] = centers[m]
            if len(members) >= 2:
                variances[k, m] = np.maximum(((members - centers[m]) ** 2).mean(0), floor)
            else:
                variances[k, m] = state_var

    op = model.operator_id or segments[0].operator_id
    return model.replace(means=means, variances=variances,
                         log_weights=np.full((S, M), -math.log(M)),
                         operator_id=op, gesture_id=model.gesture_id or segments[0].gesture_id,
                         initialized=True)


def _require_initialized(model):
    if not model.initialized:
        raise InvalidModelError(
            f"model {model.key} has no emission parameters; run init_from_segments first")


def forward_log_likelihood(model: GestureHmm, obs) -> float:
    """log P(obs | model) over all entry-to-exit paths emitting every frame."""
    _require_initialized(model)
    logb = model.emission_log_probs(obs)
    return float(kernels.forward_loglik(np.ascontiguousarray(logb), model.log_transitions))


def baum_welch_step(model: GestureHmm, segments, seed: int = 0):
    """One EM re-estimation over all segments.

    Returns the updated model and the total log-likelihood of the segments
    under the model *before* the update.
    """
    _require_initialized(model)
    segments = _check_segments(model, segments, 1)
    frames = np.concatenate([s.observations for s in segments])
    offsets = np.cumsum([0] + [len(s) for s in segments]).astype(np.int64)
    floor = variance_floor(frames)

    comp = model.component_log_probs(frames)
    logb = logsumexp(comp, axis=2)
    gamma, counts, seg_logp = kernels.bw_accumulate(np.ascontiguousarray(logb), offsets,
                                                    model.log_transitions)
    bad = np.flatnonzero(~np.isfinite(seg_logp))
    if bad.size:
        s = segments[bad[0]]
        raise TrainingError(
            f"trial {s.trial_id!r}: {s.gesture_id} segment at frame {s.start} ({len(s)} frames) "
            f"has zero likelihood under model {model.key}")
    total = float(seg_logp.sum())

    # transitions: row-normalised expected counts; unvisited rows keep their values
    trans = np.array(model.log_transitions)
    N = model.n_states
    for r in range(N - 1):
        tot = counts[r].sum()
        if tot > 0:
            with np.errstate(divide="ignore"):
                trans[r] = np.log(counts[r] / tot)

    # mixture responsibilities
    with np.errstate(invalid="ignore"):
        post = np.exp(comp - logb[:, :, None])
    resp = gamma[:, :, None] * np.nan_to_num(post)
    occ = resp.sum(0)                                           # (S, M)
    rng = np.random.default_rng(seed)
    means = np.array(model.means)
    variances = np.array(model.variances)
    log_weights = np.array(model.log_weights)
    global_var = np.maximum(frames.var(axis=0), floor)
    for s in range(model.n_emitting):
        if occ[s].sum() <= 0:
            continue
        weights = occ[s] / occ[s].sum()
        for m in range(model.n_mixtures):
            if occ[s, m] < COLLAPSE_MASS:
                means[s, m] = frames[rng.integers(len(frames))]
                variances[s, m] = global_var
                weights[m] = 0.0
                continue
            r = resp[:, s, m]
            mu = r @ frames / occ[s, m]
            diff = frames - mu
            means[s, m] = mu
            variances[s, m] = np.maximum(r @ (diff * diff) / occ[s, m], floor)
        log_weights[s] = np.log(floor_weights(weights, WEIGHT_FLOOR))

    new = model.replace(log_transitions=trans, means=means, variances=variances,
                        log_weights=log_weights)
    return new, total


def train(model: GestureHmm, segments, max_iter: int = 100, rel_tol: float = 1e-5,
          seed: int = 0):
    """Iterate Baum-Welch until the relative improvement drops below ``rel_tol``."""
    if max_iter < 1:
        raise UsageError(f"max_iter must be >= 1, got {max_iter}")
    if not rel_tol > 0:
        raise UsageError(f"rel_tol must be > 0, got {rel_tol}")
    segments = list(segments)
    history = []
    converged = False
    for it in range(max_iter):
        model, ll = baum_welch_step(model, segments, seed=seed + it)
        history.append(ll)
        if it > 0:
            prev = history[-2]
            if ll - prev < rel_tol * abs(prev):
                converged = True
                break
    log.debug("trained %s in %d iterations (converged=%s)", model.key, len(history), converged)
    return model, TrainReport(tuple(history), len(history), converged)


def validate(model: GestureHmm) -> list:
    """List every violated model invariant; an empty list means the model is valid."""
    out = []
    a = np.asarray(model.log_transitions)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 3:
        return [f"transition matrix has shape {a.shape}; need square N x N with N >= 3"]
    N = a.shape[0]
    for r in range(N - 1):
        s = float(np.exp(a[r]).sum())
        if not abs(s - 1.0) <= ROW_TOL:
            out.append(f"row {r}: transition probabilities sum to {s!r}, not 1 (row-stochastic)")
    if np.any(a[N - 1] > NEG_INF):
        out.append(f"row {N - 1}: exit state has outgoing transitions (exit row must be empty)")
    for i in range(N):
        if a[i, 0] > NEG_INF:
            out.append(f"state {i}: transition into entry state 0 (entry has no incoming)")
        for j in range(1, i):
            if a[i, j] > NEG_INF:
                out.append(f"a[{i}][{j}] > -inf: backward transition (left-right)")
        for j in range(i + 2 + model.skip_width, N):
            if i > 0 and a[i, j] > NEG_INF:
                out.append(f"a[{i}][{j}] > -inf: skip beyond width {model.skip_width}")
    if np.any(a > 0) or np.any(np.isnan(a)):
        out.append("transition log-probabilities must be <= 0 and not NaN")

    S = N - 2
    if model.means.shape[0] != S or model.variances.shape != model.means.shape \
            or model.log_weights.shape != model.means.shape[:2]:
        out.append(f"emission arrays {model.means.shape}/{model.variances.shape}/"
                   f"{model.log_weights.shape} do not match {S} emitting states")
        return out
    for s in range(S):
        if not np.all(model.variances[s] > 0) or not np.all(np.isfinite(model.variances[s])):
            out.append(f"state {s + 1}: variances must be finite and > 0")
        if not np.all(np.isfinite(model.means[s])):
            out.append(f"state {s + 1}: means must be finite")
        w = np.exp(model.log_weights[s])
        if not abs(w.sum() - 1.0) <= ROW_TOL:
            out.append(f"state {s + 1}: mixture weights sum to {w.sum()!r}, not 1")
        if model.initialized and np.any(w < WEIGHT_FLOOR * (1 - 1e-9)):
            out.append(f"state {s + 1}: mixture weight below floor {WEIGHT_FLOOR}")
    return out


def sample(model: GestureHmm, rng: np.random.Generator, max_len: int = 100_000):
    """Draw one entry-to-exit pass; returns (frames (T, d), emitting states)."""
    _require_initialized(model)
    probs = np.exp(model.log_transitions)
    N = model.n_states
    weights = np.exp(model.log_weights)
    state = int(rng.choice(N, p=probs[0]))
    states, frames = [], []
    while state != N - 1:
        if len(states) >= max_len:
            raise TrainingError(f"sampled pass exceeded {max_len} frames")
        s = state - 1
        m = int(rng.choice(model.n_mixtures, p=weights[s] / weights[s].sum()))
        frames.append(model.means[s, m] + np.sqrt(model.variances[s, m]) * rng.standard_normal(model.dim))
        states.append(state)
        row = probs[state]
        state = int(rng.choice(N, p=row / row.sum()))
    return np.array(frames).reshape(-1, model.dim), np.array(states, dtype=int)


# ---------------------------------------------------------------------------
# persistence

_MAGIC = "# teleauth gesture-hmm v1"


def _fmt(x: float) -> str:
    if x == NEG_INF:
        return "-inf"
    return format(float(x), ".17g")


def dumps(model: GestureHmm) -> str:
    lines = [_MAGIC,
             f"operator_id {model.operator_id}",
             f"gesture_id {model.gesture_id}",
             f"n_states {model.n_states}",
             f"n_mixtures {model.n_mixtures}",
             f"dim {model.dim}",
             f"skip_width {model.skip_width}",
             f"initialized {int(model.initialized)}",
             "log_transitions"]
    lines += [" ".join(_fmt(v) for v in row) for row in model.log_transitions]
    for s in range(model.n_emitting):
        lines.append(f"state {s + 1}")
        lines.append("log_weights " + " ".join(_fmt(v) for v in model.log_weights[s]))
        for m in range(model.n_mixtures):
            lines.append(f"mean {m} " + " ".join(_fmt(v) for v in model.means[s, m]))
            lines.append(f"variance {m} " + " ".join(_fmt(v) for v in model.variances[s, m]))
    return "\n".join(lines) + "\n"


def loads(text: str) -> GestureHmm:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise ParseError("not a gesture-hmm file (missing header line)")
    pos = 1

    def take(key):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"line {pos + 1}: unexpected end of file, wanted {key!r}")
        parts = lines[pos].split(" ")
        if parts[0] != key:
            raise ParseError(f"line {pos + 1}: expected {key!r}, found {parts[0]!r}")
        pos += 1
        return parts[1:]

    def floats(items, n):
        if len(items) != n:
            raise ParseError(f"line {pos}: expected {n} numbers, found {len(items)}")
        try:
            return [float(v) for v in items]
        except ValueError as exc:
            raise ParseError(f"line {pos}: {exc}") from None

    try:
        operator_id = " ".join(take("operator_id"))
        gesture_id = " ".join(take("gesture_id"))
        N = int(take("n_states")[0])
        M = int(take("n_mixtures")[0])
        d = int(take("dim")[0])
        skip = int(take("skip_width")[0])
        initialized = bool(int(take("initialized")[0]))
    except (IndexError, ValueError) as exc:
        raise ParseError(f"line {pos}: bad header value ({exc})") from None
    take("log_transitions")
    trans = []
    for _ in range(N):
        if pos >= len(lines):
            raise ParseError("unexpected end of file inside log_transitions")
        pos += 1
        trans.append(floats(lines[pos - 1].split(" "), N))
    S = N - 2
    means = np.empty((S, M, d))
    variances = np.empty((S, M, d))
    log_weights = np.empty((S, M))
    for s in range(S):
        if take("state") != [str(s + 1)]:
            raise ParseError(f"line {pos}: expected state {s + 1}")
        log_weights[s] = floats(take("log_weights"), M)
        for m in range(M):
            items = take("mean")
            means[s, m] = floats(items[1:], d)
            items = take("variance")
            variances[s, m] = floats(items[1:], d)
    return GestureHmm(np.array(trans), means, variances, log_weights, operator_id=operator_id,
                      gesture_id=gesture_id, skip_width=skip, initialized=initialized)


def save_model(model: GestureHmm, path) -> None:
    from .io_utils import atomic_write_text
    atomic_write_text(path, dumps(model))


def load_model(path) -> GestureHmm:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
