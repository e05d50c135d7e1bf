"""Loop kernels compiled with numba.

Conventions shared with the numpy twin in ``_np``: all probabilities are
natural logs, ``-inf`` marks a forbidden transition, ties go to the lowest
source index (strict ``>`` while scanning sources in ascending order).
"""

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def _lse2(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@njit(cache=True)
def _forward(logb, trans):
    T, S = logb.shape
    N = trans.shape[0]
    alpha = np.full((T, S), NEG_INF)
    for j in range(S):
        alpha[0, j] = trans[0, j + 1] + logb[0, j]
    for t in range(1, T):
        for j in range(S):
            acc = NEG_INF
            for i in range(S):
                a = trans[i + 1, j + 1]
                if a != NEG_INF and alpha[t - 1, i] != NEG_INF:
                    acc = _lse2(acc, alpha[t - 1, i] + a)
            alpha[t, j] = acc + logb[t, j]
    logp = NEG_INF
    for i in range(S):
        e = trans[i + 1, N - 1]
        if e != NEG_INF and alpha[T - 1, i] != NEG_INF:
            logp = _lse2(logp, alpha[T - 1, i] + e)
    return alpha, logp


@njit(cache=True)
def _backward(logb, trans):
    T, S = logb.shape
    N = trans.shape[0]
    beta = np.full((T, S), NEG_INF)
    for i in range(S):
        beta[T - 1, i] = trans[i + 1, N - 1]
    for t in range(T - 2, -1, -1):
        for i in range(S):
            acc = NEG_INF
            for j in range(S):
                a = trans[i + 1, j + 1]
                if a != NEG_INF and beta[t + 1, j] != NEG_INF:
                    acc = _lse2(acc, a + logb[t + 1, j] + beta[t + 1, j])
            beta[t, i] = acc
    return beta


@njit(cache=True)
def forward_loglik(logb, trans):
    return _forward(logb, trans)[1]


@njit(cache=True)
def forward_backward(logb, trans):
    alpha, logp = _forward(logb, trans)
    beta = _backward(logb, trans)
    return alpha, beta, logp


@njit(cache=True)
def bw_accumulate(logb, offsets, trans):
    Ttot, S = logb.shape
    N = trans.shape[0]
    nseg = offsets.shape[0] - 1
    gamma = np.zeros((Ttot, S))
    counts = np.zeros((N, N))
    seg_logp = np.empty(nseg)
    for s in range(nseg):
        lo = offsets[s]
        hi = offsets[s + 1]
        lb = logb[lo:hi]
        alpha, beta, logp = forward_backward(lb, trans)
        seg_logp[s] = logp
        if logp == NEG_INF:
            continue
        T = hi - lo
        for t in range(T):
            for i in range(S):
                v = alpha[t, i] + beta[t, i]
                if v != NEG_INF:
                    gamma[lo + t, i] = np.exp(v - logp)
        for j in range(S):
            counts[0, j + 1] += gamma[lo, j]
        for i in range(S):
            counts[i + 1, N - 1] += gamma[hi - 1, i]
        for t in range(T - 1):
            for i in range(S):
                if alpha[t, i] == NEG_INF:
                    continue
                for j in range(S):
                    a = trans[i + 1, j + 1]
                    if a == NEG_INF:
                        continue
                    v = alpha[t, i] + a + lb[t + 1, j] + beta[t + 1, j]
                    if v != NEG_INF:
                        counts[i + 1, j + 1] += np.exp(v - logp)
    return gamma, counts, seg_logp


@njit(cache=True)
def viterbi_single(logb, trans, init):
    T, S = logb.shape
    psi = np.empty(S)
    back = np.full((T, S), -1, dtype=np.int64)
    for j in range(S):
        psi[j] = init[j] + logb[0, j]
    new = np.empty(S)
    for t in range(1, T):
        for j in range(S):
            best = NEG_INF
            arg = -1
            for i in range(S):
                v = psi[i] + trans[i + 1, j + 1]
                if v > best:
                    best = v
                    arg = i
            new[j] = best + logb[t, j]
            back[t, j] = arg
        psi[:] = new
    return psi, back


@njit(cache=True)
def _exits(psi, exit_lp, gest_start, exit_score, exit_src):
    G = gest_start.shape[0] - 1
    for g in range(G):
        best = NEG_INF
        arg = -1
        for i in range(gest_start[g], gest_start[g + 1]):
            v = psi[i] + exit_lp[i]
            if v > best:
                best = v
                arg = i
        exit_score[g] = best
        exit_src[g] = arg


@njit(cache=True)
def token_pass(logb, intra, exit_lp, entry_lp, gest_of, gest_start, edges, init):
    T, K = logb.shape
    G = gest_start.shape[0] - 1
    cap = T * G
    rec_time = np.empty(cap, dtype=np.int64)
    rec_gest = np.empty(cap, dtype=np.int64)
    rec_score = np.empty(cap)
    rec_parent = np.empty(cap, dtype=np.int64)
    n_rec = 0

    psi = np.empty(K)
    link = np.full(K, -1, dtype=np.int64)
    for j in range(K):
        psi[j] = init[j] + logb[0, j]
    new_psi = np.empty(K)
    new_link = np.empty(K, dtype=np.int64)
    exit_score = np.empty(G)
    exit_src = np.empty(G, dtype=np.int64)
    exit_glr = np.full(G, -1, dtype=np.int64)

    for t in range(1, T + 1):
        # tokens leaving each gesture after frame t (1-based) become records
        _exits(psi, exit_lp, gest_start, exit_score, exit_src)
        for g in range(G):
            if exit_score[g] != NEG_INF:
                rec_time[n_rec] = t
                rec_gest[n_rec] = g
                rec_score[n_rec] = exit_score[g]
                rec_parent[n_rec] = link[exit_src[g]]
                exit_glr[g] = n_rec
                n_rec += 1
            else:
                exit_glr[g] = -1
        if t == T:
            break
        for j in range(K):
            lg = gest_of[j]
            best = NEG_INF
            blink = -1
            for k in range(G):
                if k == lg:
                    for i in range(gest_start[k], gest_start[k + 1]):
                        v = psi[i] + intra[i, j]
                        if v > best:
                            best = v
                            blink = link[i]
                        if edges[k, lg] and i == exit_src[k]:
                            v = exit_score[k] + entry_lp[j]
                            if v > best:
                                best = v
                                blink = exit_glr[k]
                elif edges[k, lg]:
                    v = exit_score[k] + entry_lp[j]
                    if v > best:
                        best = v
                        blink = exit_glr[k]
            new_psi[j] = best + logb[t, j]
            new_link[j] = blink
        psi[:] = new_psi
        link[:] = new_link

    return (psi, link, exit_score.copy(), exit_src.copy(), exit_glr.copy(),
            rec_time[:n_rec].copy(), rec_gest[:n_rec].copy(),
            rec_score[:n_rec].copy(), rec_parent[:n_rec].copy())


@njit(cache=True)
def window_scores(logb, intra, exit_lp, entry_lp, gest_of, gest_start, edges, init, L):
    T, K = logb.shape
    G = gest_start.shape[0] - 1
    W = T - L + 1
    out = np.empty(W)
    psi = np.empty(K)
    new_psi = np.empty(K)
    exit_score = np.empty(G)
    exit_src = np.empty(G, dtype=np.int64)
    for w in range(W):
        for j in range(K):
            psi[j] = init[j] + logb[w, j]
        for s in range(1, L):
            _exits(psi, exit_lp, gest_start, exit_score, exit_src)
            for j in range(K):
                lg = gest_of[j]
                best = NEG_INF
                for i in range(gest_start[lg], gest_start[lg + 1]):
                    v = psi[i] + intra[i, j]
                    if v > best:
                        best = v
                for k in range(G):
                    if edges[k, lg]:
                        v = exit_score[k] + entry_lp[j]
                        if v > best:
                            best = v
                new_psi[j] = best + logb[w + s, j]
            psi[:] = new_psi
        m = NEG_INF
        for j in range(K):
            if psi[j] > m:
                m = psi[j]
        out[w] = m
    return out
