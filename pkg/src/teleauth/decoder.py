"""Token-passing decoding for single gesture models and grammar networks.

A network joins the gesture models of one operator: inside a gesture tokens
follow that model's transitions; between gestures a token leaves through
the source model's exit state and enters the destination model's entry
state without consuming a frame. Each exit crossing is written to a
Gesture Link Record so the best gesture segmentation can be traced back.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import ConfigurationError, UsageError
from .hmm import GestureHmm, _as_obs, _require_initialized
from .numerics import component_log_probs

NEG_INF = -np.inf


# ---------------------------------------------------------------------------
# grammar

@dataclass(frozen=True)
class GrammarGraph:
    """Which gesture may follow which, and which gestures may open a sequence."""

    edges: tuple
    start: tuple
    gestures: tuple = ()

    def __post_init__(self):
        edges = tuple((str(a), str(b)) for a, b in self.edges)
        start = tuple(str(g) for g in self.start)
        declared = list(self.gestures) if self.gestures else []
        if not declared:
            for g in start + tuple(x for e in edges for x in e):
                if g not in declared:
                    declared.append(g)
        declared = tuple(str(g) for g in declared)
        known = set(declared)
        if len(known) != len(declared):
            raise ConfigurationError(f"duplicate gesture in {declared}")
        if not start:
            raise ConfigurationError("grammar start set is empty")
        for g in start:
            if g not in known:
                raise ConfigurationError(f"start gesture {g!r} is not declared")
        for a, b in edges:
            for g in (a, b):
                if g not in known:
                    raise ConfigurationError(f"edge {a} -> {b} references undeclared gesture {g!r}")
        if len(set(edges)) != len(edges):
            raise ConfigurationError("grammar lists an edge twice")
        for tok in known:
            if not tok or any(c.isspace() for c in tok) or "," in tok or "->" in tok:
                raise ConfigurationError(f"gesture id {tok!r} is not a bare token")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "gestures", declared)

    def successors(self, gesture):
        return [b for a, b in self.edges if a == gesture]

    def is_walk(self, labels) -> bool:
        """True when ``labels`` starts in the start set and follows edges."""
        labels = list(labels)
        if not labels:
            return True
        if labels[0] not in self.start:
            return False
        allowed = set(self.edges)
        return all((a, b) in allowed for a, b in zip(labels, labels[1:]))


def parse_grammar(text: str) -> GrammarGraph:
    """Parse ``start: G1,G2`` plus one ``FROM -> TO`` line per edge."""
    start, edges, gestures = None, [], None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("start:"):
            if start is not None:
                raise ConfigurationError(f"line {lineno}: second start line")
            start = [g.strip() for g in line[len("start:"):].split(",") if g.strip()]
        elif line.startswith("gestures:"):
            gestures = [g.strip() for g in line[len("gestures:"):].split(",") if g.strip()]
        elif "->" in line:
            a, _, b = line.partition("->")
            a, b = a.strip(), b.strip()
            if not a or not b or " " in a or " " in b:
                raise ConfigurationError(f"line {lineno}: malformed edge {raw!r}")
            edges.append((a, b))
        else:
            raise ConfigurationError(f"line {lineno}: cannot parse {raw!r}")
    if start is None:
        raise ConfigurationError("grammar has no 'start:' line")
    return GrammarGraph(edges=tuple(edges), start=tuple(start), gestures=tuple(gestures or ()))


def serialize_grammar(grammar: GrammarGraph) -> str:
    lines = ["start: " + ",".join(grammar.start)]
    implied = []
    for g in grammar.start + tuple(x for e in grammar.edges for x in e):
        if g not in implied:
            implied.append(g)
    if tuple(implied) != grammar.gestures:
        lines.append("gestures: " + ",".join(grammar.gestures))
    lines += [f"{a} -> {b}" for a, b in grammar.edges]
    return "\n".join(lines) + "\n"


def load_grammar(path) -> GrammarGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_grammar(fh.read())


def save_grammar(grammar: GrammarGraph, path) -> None:
    from .io_utils import atomic_write_text
    atomic_write_text(path, serialize_grammar(grammar))


def builtin_grammar(name: str = "vr_ring_transfer") -> GrammarGraph:
    """Grammars shipped with the package (see ``teleauth/grammars``)."""
    try:
        text = resources.files("teleauth.grammars").joinpath(f"{name}.txt").read_text("utf-8")
    except FileNotFoundError:
        raise ConfigurationError(f"no built-in grammar named {name!r}") from None
    return parse_grammar(text)


def cycle_grammar(gestures) -> GrammarGraph:
    """G1 -> G2 -> ... -> Gn -> G1, starting at G1."""
    gestures = list(gestures)
    edges = tuple((a, b) for a, b in zip(gestures, gestures[1:] + gestures[:1])) \
        if len(gestures) > 1 else ()
    return GrammarGraph(edges=edges, start=(gestures[0],), gestures=tuple(gestures))


# ---------------------------------------------------------------------------
# tokens and link records

@dataclass(frozen=True)
class GestureLinkRecord:
    boundary_time: int                 # last frame (1-based) of the gesture that exited
    gesture_id: str
    operator_id: str
    score_at_boundary: float
    parent: Optional["GestureLinkRecord"] = field(default=None, repr=False)

    def chain(self):
        """Records from the first boundary to this one."""
        out, rec = [], self
        while rec is not None:
            out.append(rec)
            rec = rec.parent
        return out[::-1]


@dataclass(frozen=True)
class Token:
    log_likelihood: float
    glr_link: Optional[GestureLinkRecord] = None
    gesture_id: Optional[str] = None   # gesture of the node holding the token
    state: Optional[int] = None        # model state index of that node
    frame: int = 0                     # frames consumed so far


def traceback(token: Token):
    """Turn a token's GLR chain into ``(gesture_id, start_frame, end_frame)`` spans.

    Frames are 1-based and inclusive. A token whose link is a record at its
    own frame (an exit-inclusive winner) ends exactly at that record;
    otherwise the final span runs from the last boundary to ``token.frame``
    and carries the token's own gesture label.
    """
    chain = token.glr_link.chain() if token.glr_link is not None else []
    spans, start = [], 1
    for rec in chain:
        spans.append((rec.gesture_id, start, rec.boundary_time))
        start = rec.boundary_time + 1
    if start <= token.frame and token.gesture_id is not None:
        spans.append((token.gesture_id, start, token.frame))
    return spans


# ---------------------------------------------------------------------------
# single-model decoding

def _entry_init(model: GestureHmm, open_start: bool) -> np.ndarray:
    init = np.array(model.log_transitions[0, 1:-1])
    if open_start:
        init = np.full_like(init, init.max())
    return init


def decode_single(model: GestureHmm, obs, *, open_start: bool = False,
                  require_exit: bool = False):
    """Viterbi decode of one gesture model by token passing.

    Returns ``(score, state_path)`` with state indices in 1..N-2. The score
    is the best token over emitting states at the last frame, or with
    ``require_exit`` the best token that also takes the exit transition.
    Ties go to the lowest state index at every backtrace step.
    """
    _require_initialized(model)
    logb = np.ascontiguousarray(model.emission_log_probs(obs))
    psi, back = kernels.viterbi_single(logb, model.log_transitions,
                                       _entry_init(model, open_start))
    final = psi + model.log_transitions[1:-1, -1] if require_exit else psi
    s = int(np.argmax(final))
    score = float(final[s])
    if score == NEG_INF:
        return score, []
    path = [s]
    for t in range(len(logb) - 1, 0, -1):
        s = int(back[t, s])
        path.append(s)
    return score, [p + 1 for p in reversed(path)]


def recognize_gesture(models, obs, *, require_exit: bool = False):
    """Pick the (operator, gesture) model with the best Viterbi score."""
    models = list(models)
    if not models:
        raise UsageError("recognize_gesture needs at least one model")
    dims = {m.dim for m in models}
    if len(dims) != 1:
        raise UsageError(f"candidate models disagree on dimension: {sorted(dims)}")
    best = None
    for m in sorted(models, key=lambda m: m.key):
        score, _ = decode_single(m, obs, require_exit=require_exit)
        if best is None or score > best[2]:
            best = (m.operator_id, m.gesture_id, score)
    return best


# ---------------------------------------------------------------------------
# networks

@dataclass(frozen=True)
class InterEdge:
    src: int
    dst: int
    log_weight: float


@dataclass(frozen=True, eq=False)
class DecodingNetwork:
    operator_id: str
    grammar: GrammarGraph
    gesture_ids: tuple
    models: tuple
    nodes: tuple                 # (gesture_id, model state index), sorted
    gest_of: np.ndarray
    gest_start: np.ndarray
    intra: np.ndarray            # (K, K) within-gesture log transitions
    exit_lp: np.ndarray          # (K,) log a(k, i -> exit)
    entry_lp: np.ndarray         # (K,) log a(l, entry -> j)
    edges: np.ndarray            # (G, G) grammar adjacency
    start_mask: np.ndarray       # (G,)
    inter_edges: tuple
    means: np.ndarray
    variances: np.ndarray
    log_weights: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def dim(self) -> int:
        return self.means.shape[-1]

    def inter_matrix(self) -> np.ndarray:
        """Dense (K, K) matrix of combined inter-gesture log weights."""
        out = np.full((self.n_nodes, self.n_nodes), NEG_INF)
        for e in self.inter_edges:
            out[e.src, e.dst] = max(out[e.src, e.dst], e.log_weight)
        return out

    def emission_log_probs(self, obs) -> np.ndarray:
        obs = _as_obs(obs, self.dim)
        comp = component_log_probs(obs, self.means, self.variances, self.log_weights)
        return np.ascontiguousarray(logsumexp(comp, axis=2))

    def init_scores(self, open_start: bool) -> np.ndarray:
        """Log score of entering each node at the first frame."""
        starting = self.start_mask[self.gest_of]
        init = np.where(starting, self.entry_lp, NEG_INF)
        if open_start:
            per_gesture = np.array([self.entry_lp[a:b].max()
                                    for a, b in zip(self.gest_start[:-1], self.gest_start[1:])])
            init = np.maximum(init, per_gesture[self.gest_of])
        return init

    def kernel_args(self):
        return (self.intra, self.exit_lp, self.entry_lp, self.gest_of, self.gest_start, self.edges)


def compile_network(grammar: GrammarGraph, models) -> DecodingNetwork:
    """Join one operator's gesture models according to ``grammar``."""
    models = list(models)
    by_gesture = {}
    for m in models:
        _require_initialized(m)
        if m.gesture_id in by_gesture:
            raise ConfigurationError(f"two models supplied for gesture {m.gesture_id!r}")
        if m.gesture_id not in grammar.gestures:
            raise ConfigurationError(f"model for gesture {m.gesture_id!r} is not in the grammar")
        by_gesture[m.gesture_id] = m
    for g in grammar.gestures:
        if g not in by_gesture:
            raise ConfigurationError(f"no model supplied for gesture {g!r}")
    ops = {m.operator_id for m in models}
    if len(ops) != 1:
        raise ConfigurationError(f"network models come from several operators: {sorted(ops)}")
    dims = {m.dim for m in models}
    if len(dims) != 1:
        raise ConfigurationError(f"network models disagree on dimension: {sorted(dims)}")

    gesture_ids = tuple(sorted(grammar.gestures))
    ordered = tuple(by_gesture[g] for g in gesture_ids)
    G = len(gesture_ids)
    sizes = [m.n_emitting for m in ordered]
    gest_start = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    K = int(gest_start[-1])
    M = max(m.n_mixtures for m in ordered)
    d = ordered[0].dim

    nodes, gest_of = [], np.empty(K, dtype=np.int64)
    intra = np.full((K, K), NEG_INF)
    exit_lp = np.empty(K)
    entry_lp = np.empty(K)
    means = np.zeros((K, M, d))
    variances = np.ones((K, M, d))
    log_weights = np.full((K, M), NEG_INF)
    for g, m in enumerate(ordered):
        lo, hi = gest_start[g], gest_start[g + 1]
        S = m.n_emitting
        gest_of[lo:hi] = g
        nodes += [(gesture_ids[g], s) for s in range(1, S + 1)]
        intra[lo:hi, lo:hi] = m.log_transitions[1:-1, 1:-1]
        exit_lp[lo:hi] = m.log_transitions[1:-1, -1]
        entry_lp[lo:hi] = m.log_transitions[0, 1:-1]
        means[lo:hi, :m.n_mixtures] = m.means
        variances[lo:hi, :m.n_mixtures] = m.variances
        log_weights[lo:hi, :m.n_mixtures] = m.log_weights

    index = {g: i for i, g in enumerate(gesture_ids)}
    edges = np.zeros((G, G), dtype=np.bool_)
    inter = []
    for a, b in grammar.edges:
        k, l = index[a], index[b]
        edges[k, l] = True
        for i in range(gest_start[k], gest_start[k + 1]):
            if exit_lp[i] == NEG_INF:
                continue
            for j in range(gest_start[l], gest_start[l + 1]):
                if entry_lp[j] == NEG_INF:
                    continue
                inter.append(InterEdge(i, j, float(exit_lp[i] + entry_lp[j])))
    start_mask = np.array([g in grammar.start for g in gesture_ids], dtype=np.bool_)

    arrays = dict(gest_of=gest_of, gest_start=gest_start, intra=intra, exit_lp=exit_lp,
                  entry_lp=entry_lp, edges=edges, start_mask=start_mask, means=means,
                  variances=variances, log_weights=log_weights)
    for arr in arrays.values():
        arr.flags.writeable = False
    return DecodingNetwork(operator_id=ordered[0].operator_id, grammar=grammar,
                           gesture_ids=gesture_ids, models=ordered, nodes=tuple(nodes),
                           inter_edges=tuple(inter), **arrays)


@dataclass(frozen=True)
class NetworkDecode:
    score: float                 # best token over emitting nodes at the last frame
    token: Token
    chain: tuple                 # GLR chain of the winning token, oldest first
    exit_score: float            # best token that also left through an exit
    exit_token: Token
    n_records: int               # records created during the pass

    @property
    def admissible(self) -> bool:
        return self.score > NEG_INF

    def spans(self):
        return traceback(self.token)

    def labels(self):
        return tuple(g for g, _, _ in self.spans())


def _build_chain(idx, rec_time, rec_gest, rec_score, rec_parent, gesture_ids, operator_id):
    order = []
    while idx >= 0:
        order.append(idx)
        idx = int(rec_parent[idx])
    rec = None
    for i in reversed(order):
        rec = GestureLinkRecord(int(rec_time[i]), gesture_ids[rec_gest[i]], operator_id,
                                float(rec_score[i]), rec)
    return rec


def decode_network_logb(network: DecodingNetwork, logb, *, open_start: bool = False) -> NetworkDecode:
    """Token passing over precomputed (T, K) emission log-probabilities."""
    logb = np.ascontiguousarray(logb, dtype=float)
    if logb.ndim != 2 or logb.shape[1] != network.n_nodes or len(logb) == 0:
        raise UsageError(f"emission table of shape {logb.shape} does not fit "
                         f"{network.n_nodes} network nodes")
    T = len(logb)
    (psi, link, exit_score, exit_src, exit_glr,
     rec_time, rec_gest, rec_score, rec_parent) = kernels.token_pass(
        logb, *network.kernel_args(), network.init_scores(open_start))
    args = (rec_time, rec_gest, rec_score, rec_parent, network.gesture_ids, network.operator_id)

    j = int(np.argmax(psi))
    score = float(psi[j])
    if score == NEG_INF:
        token = Token(NEG_INF, None, None, None, T)
    else:
        g, s = network.nodes[j]
        token = Token(score, _build_chain(int(link[j]), *args), g, s, T)

    k = int(np.argmax(exit_score))
    xs = float(exit_score[k])
    if xs == NEG_INF:
        exit_token = Token(NEG_INF, None, None, None, T)
    else:
        rec = _build_chain(int(exit_glr[k]), *args)
        exit_token = Token(xs, rec, rec.gesture_id, None, T)

    chain = tuple(token.glr_link.chain()) if token.glr_link is not None else ()
    return NetworkDecode(score, token, chain, xs, exit_token, len(rec_time))


def decode_network(network: DecodingNetwork, obs, *, open_start: bool = False) -> NetworkDecode:
    """Connected decoding of ``obs`` through the grammar network.

    An observation sequence no path can explain yields a result whose
    ``admissible`` flag is False rather than an exception.
    """
    return decode_network_logb(network, network.emission_log_probs(obs), open_start=open_start)


def window_scores_logb(network: DecodingNetwork, logb, window: int, *, open_start: bool = True):
    """Terminal scores of every stride-1 window of length ``window`` over ``logb``."""
    logb = np.ascontiguousarray(logb, dtype=float)
    if not 1 <= window <= len(logb):
        raise UsageError(f"window of {window} frames does not fit {len(logb)} frames")
    return kernels.window_scores(logb, *network.kernel_args(), network.init_scores(open_start),
                                 window)
