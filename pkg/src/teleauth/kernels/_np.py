"""Vectorised numpy twins of the numba kernels in ``_nb``.

Every function returns the same values as its numba counterpart. Scores
from the max-plus recursions are bit-identical; log-sum-exp results agree
to rounding.
"""

import numpy as np

NEG_INF = -np.inf


def _lse(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - safe), axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


def _split(trans):
    N = trans.shape[0]
    return trans[0, 1:N - 1], trans[1:N - 1, 1:N - 1], trans[1:N - 1, N - 1]


def _forward(logb, trans):
    entry, A, exit_ = _split(trans)
    T, S = logb.shape
    alpha = np.empty((T, S))
    alpha[0] = entry + logb[0]
    for t in range(1, T):
        alpha[t] = _lse(alpha[t - 1][:, None] + A, axis=0) + logb[t]
    return alpha, float(_lse(alpha[T - 1] + exit_, axis=0))


def _backward(logb, trans):
    _, A, exit_ = _split(trans)
    T, S = logb.shape
    beta = np.empty((T, S))
    beta[T - 1] = exit_
    for t in range(T - 2, -1, -1):
        beta[t] = _lse(A + (logb[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def forward_loglik(logb, trans):
    return _forward(logb, trans)[1]


def forward_backward(logb, trans):
    alpha, logp = _forward(logb, trans)
    return alpha, _backward(logb, trans), logp


def bw_accumulate(logb, offsets, trans):
    Ttot, S = logb.shape
    N = trans.shape[0]
    _, A, _ = _split(trans)
    gamma = np.zeros((Ttot, S))
    counts = np.zeros((N, N))
    seg_logp = np.empty(len(offsets) - 1)
    for s in range(len(offsets) - 1):
        lo, hi = offsets[s], offsets[s + 1]
        lb = logb[lo:hi]
        alpha, beta, logp = forward_backward(lb, trans)
        seg_logp[s] = logp
        if logp == NEG_INF:
            continue
        g = np.exp(alpha + beta - logp)
        gamma[lo:hi] = g
        counts[0, 1:N - 1] += g[0]
        counts[1:N - 1, N - 1] += g[-1]
        if hi - lo > 1:
            xi = alpha[:-1, :, None] + A[None] + (lb[1:] + beta[1:])[:, None, :]
            counts[1:N - 1, 1:N - 1] += np.exp(xi - logp).sum(0)
    return gamma, counts, seg_logp


def viterbi_single(logb, trans, init):
    _, A, _ = _split(trans)
    T, S = logb.shape
    back = np.full((T, S), -1, dtype=np.int64)
    psi = init + logb[0]
    for t in range(1, T):
        cand = psi[:, None] + A
        arg = cand.argmax(0)
        best = cand[arg, np.arange(S)]
        back[t] = np.where(best == NEG_INF, -1, arg)
        psi = best + logb[t]
    return psi, back


def _exits(psi, exit_lp, gest_start):
    ex = psi + exit_lp
    G = len(gest_start) - 1
    score = np.empty(G)
    src = np.empty(G, dtype=np.int64)
    for g in range(G):
        seg = ex[gest_start[g]:gest_start[g + 1]]
        a = int(seg.argmax())
        score[g] = seg[a]
        src[g] = gest_start[g] + a if seg[a] != NEG_INF else -1
    return score, src


def token_pass(logb, intra, exit_lp, entry_lp, gest_of, gest_start, edges, init):
    T, K = logb.shape
    G = len(gest_start) - 1
    inter_mask = edges[:, gest_of]                      # (G, K): gesture k may feed node j
    cols = np.arange(K)
    rec_time, rec_gest, rec_score, rec_parent = [], [], [], []

    psi = init + logb[0]
    link = np.full(K, -1, dtype=np.int64)
    exit_glr = np.full(G, -1, dtype=np.int64)
    for t in range(1, T + 1):
        exit_score, exit_src = _exits(psi, exit_lp, gest_start)
        for g in range(G):
            if exit_score[g] != NEG_INF:
                exit_glr[g] = len(rec_time)
                rec_time.append(t)
                rec_gest.append(g)
                rec_score.append(exit_score[g])
                rec_parent.append(link[exit_src[g]])
            else:
                exit_glr[g] = -1
        if t == T:
            break
        cand = psi[:, None] + intra
        intra_src = cand.argmax(0)
        intra_best = cand[intra_src, cols]
        inter = np.where(inter_mask, exit_score[:, None] + entry_lp[None, :], NEG_INF)
        inter_k = inter.argmax(0)
        inter_best = inter[inter_k, cols]
        inter_src = exit_src[inter_k]
        use_inter = (inter_best > intra_best) | (
            (inter_best == intra_best) & (inter_best != NEG_INF) & (inter_src < intra_src))
        best = np.where(use_inter, inter_best, intra_best)
        new_link = np.where(use_inter, exit_glr[inter_k], link[intra_src])
        link = np.where(best == NEG_INF, -1, new_link).astype(np.int64)
        psi = best + logb[t]

    return (psi, link, exit_score, exit_src, exit_glr.copy(),
            np.asarray(rec_time, dtype=np.int64), np.asarray(rec_gest, dtype=np.int64),
            np.asarray(rec_score, dtype=float), np.asarray(rec_parent, dtype=np.int64))


def window_scores(logb, intra, exit_lp, entry_lp, gest_of, gest_start, edges, init, L):
    T, K = logb.shape
    W = T - L + 1
    inter_mask = edges[:, gest_of]
    starts = np.asarray(gest_start[:-1])
    psi = init[None, :] + logb[0:W]
    for s in range(1, L):
        intra_best = (psi[:, :, None] + intra[None]).max(1)
        exit_score = np.maximum.reduceat(psi + exit_lp[None, :], starts, axis=1)
        inter = np.where(inter_mask[None], exit_score[:, :, None] + entry_lp[None, None, :], NEG_INF)
        psi = np.maximum(intra_best, inter.max(1)) + logb[s:s + W]
    return psi.max(1)
