"""Hot inner loops with two interchangeable backends.

The numba backend is used when numba imports and ``TELEAUTH_NUMBA`` is not
set to ``0``/``false``/``off``. The numpy backend is always available;
``use_backend`` switches at runtime (tests and the benchmark rely on this).
"""

import os

from . import _np

_DISABLED = os.environ.get("TELEAUTH_NUMBA", "1").strip().lower() in ("0", "false", "off", "no")

try:
    if _DISABLED:
        raise ImportError("disabled by TELEAUTH_NUMBA")
    from . import _nb
except ImportError:  # pragma: no cover - depends on environment
    _nb = None

_BACKENDS = {"numpy": _np}
if _nb is not None:
    _BACKENDS["numba"] = _nb

_active = _BACKENDS["numba" if _nb is not None else "numpy"]

KERNELS = ("forward_loglik", "forward_backward", "bw_accumulate", "viterbi_single",
           "token_pass", "window_scores")


def available_backends():
    return sorted(_BACKENDS)


def backend():
    return "numba" if _active is _nb else "numpy"


def use_backend(name):
    """Select the kernel backend; returns the previously active name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    prev = backend()
    _active = _BACKENDS[name]
    return prev


def module(name):
    """The raw kernel module for a backend, bypassing dispatch."""
    return _BACKENDS[name]


def forward_loglik(logb, trans):
    return _active.forward_loglik(logb, trans)


def forward_backward(logb, trans):
    return _active.forward_backward(logb, trans)


def bw_accumulate(logb, offsets, trans):
    return _active.bw_accumulate(logb, offsets, trans)


def viterbi_single(logb, trans, init):
    return _active.viterbi_single(logb, trans, init)


def token_pass(logb, intra, exit_lp, entry_lp, gest_of, gest_start, edges, init):
    return _active.token_pass(logb, intra, exit_lp, entry_lp, gest_of, gest_start, edges, init)


def window_scores(logb, intra, exit_lp, entry_lp, gest_of, gest_start, edges, init, L):
    return _active.window_scores(logb, intra, exit_lp, entry_lp, gest_of, gest_start, edges,
                                 init, int(L))
