"""Hot inner loops.

Every kernel exists twice: a loop form compiled by numba (``*_jit``) and a
vectorised numpy form (``*_numpy``). The public name points at the numba
version unless ``MUDLAB_NUMBA=0`` (see :mod:`mudlab._jit`). Both forms take
and return the same arrays, and both are importable so they can be
benchmarked and cross-checked against each other.

Array conventions: soft estimates ``m`` are ``(K, T)`` with one column per
symbol interval sharing the same correlation matrix ``R``; updates are in
place.
"""

import numpy as np
from scipy.special import logsumexp

from ._jit import USE_NUMBA, njit

__all__ = [
    "sspda_sweep",
    "mic_sweep",
    "posterior_enumerate",
    "bcjr_batch",
    "USE_NUMBA",
]


# ---------------------------------------------------------------------------
# serial simplified PDA
# ---------------------------------------------------------------------------

def _sspda_sweep_loops(m, R, y, lam_half, sigma2, alpha, omega):
    K, T = m.shape
    for t in range(T):
        ss = 0.0
        for j in range(K):
            ss += m[j, t] * m[j, t]
        for k in range(K):
            acc = 0.0
            for j in range(K):
                acc += R[k, j] * m[j, t]
            c = y[k, t] - acc + R[k, k] * m[k, t]
            a = sigma2 + alpha * (1.0 - ss / K)
            old = m[k, t]
            new = omega * old + (1.0 - omega) * np.tanh(lam_half[k, t] + c / a)
            ss += new * new - old * old
            m[k, t] = new


def sspda_sweep_numpy(m, R, y, lam_half, sigma2, alpha, omega):
    K = m.shape[0]
    ss = np.einsum("kt,kt->t", m, m)
    for k in range(K):
        c = y[k] - R[k] @ m + R[k, k] * m[k]
        a = sigma2 + alpha * (1.0 - ss / K)
        old = m[k].copy()
        new = omega * old + (1.0 - omega) * np.tanh(lam_half[k] + c / a)
        ss += new * new - old * old
        m[k] = new


# ---------------------------------------------------------------------------
# soft multistage interference cancellation
# ---------------------------------------------------------------------------

def _mic_sweep_loops(m, R, y, lam_half, sigma2, omega):
    K, T = m.shape
    for t in range(T):
        for k in range(K):
            acc = 0.0
            var = 0.0
            for j in range(K):
                if j != k:
                    rkj = R[k, j]
                    acc += rkj * m[j, t]
                    var += rkj * rkj * (1.0 - m[j, t] * m[j, t])
            old = m[k, t]
            m[k, t] = omega * old + (1.0 - omega) * np.tanh(
                lam_half[k, t] + (y[k, t] - acc) / (sigma2 + var))


def mic_sweep_numpy(m, R, y, lam_half, sigma2, omega):
    K = m.shape[0]
    R2 = R * R
    for k in range(K):
        c = y[k] - R[k] @ m + R[k, k] * m[k]
        var = R2[k] @ (1.0 - m * m) - R2[k, k] * (1.0 - m[k] * m[k])
        m[k] = omega * m[k] + (1.0 - omega) * np.tanh(lam_half[k] + c / (sigma2 + var))


# ---------------------------------------------------------------------------
# exhaustive posterior over {-1,+1}^K
# ---------------------------------------------------------------------------
#
# Log joint up to a constant:  L(d) = sum_k d_k (lam_k/2 + y_k/s2) - d'Rd/(2 s2).
# Returns per-user log-sums over hypotheses with d_k = +1 and d_k = -1, the
# global log normaliser, and (optionally) E{d_j d_l | r}.

def _posterior_loops(y, R, lam, sigma2, want_pairs):
    K = y.shape[0]
    n = 1 << K
    b = 0.5 * lam + y / sigma2
    h = 0.5 / sigma2
    d = -np.ones(K)
    g0 = R @ d
    max_pos = np.full(K, -np.inf)
    max_neg = np.full(K, -np.inf)
    gmax = -np.inf

    g = g0.copy()
    for i in range(n):
        if i > 0:
            k = 0
            while ((i >> k) & 1) == 0:
                k += 1
            old = d[k]
            d[k] = -old
            for j in range(K):
                g[j] -= 2.0 * old * R[j, k]
        L = 0.0
        for j in range(K):
            L += d[j] * b[j] - h * d[j] * g[j]
        if L > gmax:
            gmax = L
        for j in range(K):
            if d[j] > 0:
                if L > max_pos[j]:
                    max_pos[j] = L
            elif L > max_neg[j]:
                max_neg[j] = L

    sum_pos = np.zeros(K)
    sum_neg = np.zeros(K)
    pairs = np.zeros((K, K))
    z = 0.0
    d[:] = -1.0
    g[:] = g0
    for i in range(n):
        if i > 0:
            k = 0
            while ((i >> k) & 1) == 0:
                k += 1
            old = d[k]
            d[k] = -old
            for j in range(K):
                g[j] -= 2.0 * old * R[j, k]
        L = 0.0
        for j in range(K):
            L += d[j] * b[j] - h * d[j] * g[j]
        for j in range(K):
            if d[j] > 0:
                sum_pos[j] += np.exp(L - max_pos[j])
            else:
                sum_neg[j] += np.exp(L - max_neg[j])
        if want_pairs:
            w = np.exp(L - gmax)
            z += w
            for j in range(K):
                wj = w * d[j]
                for l in range(j + 1, K):
                    pairs[j, l] += wj * d[l]
    lse_pos = max_pos + np.log(sum_pos)
    lse_neg = max_neg + np.log(sum_neg)
    if want_pairs:
        for j in range(K):
            pairs[j, j] = 1.0
            for l in range(j + 1, K):
                pairs[j, l] /= z
                pairs[l, j] = pairs[j, l]
    return lse_pos, lse_neg, pairs


def posterior_enumerate_numpy(y, R, lam, sigma2, want_pairs, chunk=1 << 14):
    K = y.shape[0]
    n = 1 << K
    b = 0.5 * lam + y / sigma2
    shifts = np.arange(K)
    lse_pos = np.full(K, -np.inf)
    lse_neg = np.full(K, -np.inf)
    ref = -np.inf
    acc = np.zeros((K, K))
    z = 0.0
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        D = (((idx[:, None] >> shifts) & 1) * 2 - 1).astype(float)
        L = D @ b - (0.5 / sigma2) * np.einsum("ij,ij->i", D @ R, D)
        pos = D > 0
        Lb = L[:, None]
        with np.errstate(divide="ignore"):
            lse_pos = np.logaddexp(lse_pos, logsumexp(np.where(pos, Lb, -np.inf), axis=0))
            lse_neg = np.logaddexp(lse_neg, logsumexp(np.where(pos, -np.inf, Lb), axis=0))
        if want_pairs:
            cmax = L.max()
            if cmax > ref:
                scale = np.exp(ref - cmax) if np.isfinite(ref) else 0.0
                acc *= scale
                z *= scale
                ref = cmax
            w = np.exp(L - ref)
            acc += (D * w[:, None]).T @ D
            z += w.sum()
    if want_pairs:
        pairs = acc / z
        np.fill_diagonal(pairs, 1.0)
    else:
        pairs = np.zeros((K, K))
    return lse_pos, lse_neg, pairs


# ---------------------------------------------------------------------------
# log-domain BCJR over a batch of independent frames
# ---------------------------------------------------------------------------
#
# LLR sign convention: positive means code bit 0, i.e. BPSK symbol +1.
# Lc: (B, n_out*T) channel LLRs of code bits. La: (B, n_info) info priors.
# Steps t >= n_info are termination steps with input forced to 0.

def _maxstar(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


def _bcjr_loops(Lc, La, next_state, out_sym, n_info):
    B, ncode = Lc.shape
    S = next_state.shape[0]
    n_out = out_sym.shape[2]
    T = ncode // n_out
    app_info = np.empty((B, n_info))
    ext = np.empty((B, ncode))
    gam = np.empty((T, S, 2))
    alpha = np.empty((T + 1, S))
    beta = np.empty((T + 1, S))
    c0 = np.empty(n_out)
    c1 = np.empty(n_out)
    for b in range(B):
        for t in range(T):
            for s in range(S):
                for u in range(2):
                    if t >= n_info and u == 1:
                        gam[t, s, u] = -np.inf
                        continue
                    v = 0.0
                    if t < n_info:
                        v = 0.5 * (1.0 - 2.0 * u) * La[b, t]
                    for i in range(n_out):
                        v += 0.5 * out_sym[s, u, i] * Lc[b, t * n_out + i]
                    gam[t, s, u] = v
        alpha[0, :] = -np.inf
        alpha[0, 0] = 0.0
        for t in range(T):
            alpha[t + 1, :] = -np.inf
            for s in range(S):
                for u in range(2):
                    ns = next_state[s, u]
                    alpha[t + 1, ns] = _maxstar(alpha[t + 1, ns], alpha[t, s] + gam[t, s, u])
            mx = alpha[t + 1].max()
            alpha[t + 1, :] -= mx
        beta[T, :] = -np.inf
        beta[T, 0] = 0.0
        for t in range(T - 1, -1, -1):
            for s in range(S):
                acc = -np.inf
                for u in range(2):
                    acc = _maxstar(acc, gam[t, s, u] + beta[t + 1, next_state[s, u]])
                beta[t, s] = acc
            mx = beta[t].max()
            beta[t, :] -= mx
        for t in range(T):
            p0 = -np.inf
            p1 = -np.inf
            c0[:] = -np.inf
            c1[:] = -np.inf
            for s in range(S):
                for u in range(2):
                    mval = alpha[t, s] + gam[t, s, u] + beta[t + 1, next_state[s, u]]
                    if mval == -np.inf:
                        continue
                    if u == 0:
                        p0 = _maxstar(p0, mval)
                    else:
                        p1 = _maxstar(p1, mval)
                    for i in range(n_out):
                        if out_sym[s, u, i] > 0:
                            c0[i] = _maxstar(c0[i], mval)
                        else:
                            c1[i] = _maxstar(c1[i], mval)
            if t < n_info:
                app_info[b, t] = p0 - p1
            for i in range(n_out):
                ext[b, t * n_out + i] = (c0[i] - c1[i]) - Lc[b, t * n_out + i]
    return app_info, ext


def bcjr_batch_numpy(Lc, La, next_state, out_sym, n_info):
    B, ncode = Lc.shape
    S = next_state.shape[0]
    n_out = out_sym.shape[2]
    T = ncode // n_out
    Lcr = Lc.reshape(B, T, n_out)
    usym = np.array([1.0, -1.0])
    La_full = np.zeros((B, T))
    La_full[:, :n_info] = La
    gam = 0.5 * np.einsum("bti,sui->btsu", Lcr, out_sym)
    gam += 0.5 * La_full[:, :, None, None] * usym
    gam[:, n_info:, :, 1] = -np.inf

    # incoming branches of each state (feedforward code: exactly two)
    in_s = np.empty((S, 2), dtype=np.int64)
    in_u = np.empty((S, 2), dtype=np.int64)
    fill = np.zeros(S, dtype=np.int64)
    for s in range(S):
        for u in range(2):
            ns = next_state[s, u]
            in_s[ns, fill[ns]] = s
            in_u[ns, fill[ns]] = u
            fill[ns] += 1

    alpha = np.full((B, T + 1, S), -np.inf)
    alpha[:, 0, 0] = 0.0
    beta = np.full((B, T + 1, S), -np.inf)
    beta[:, T, 0] = 0.0
    with np.errstate(invalid="ignore"):
        for t in range(T):
            a0 = alpha[:, t, in_s[:, 0]] + gam[:, t, in_s[:, 0], in_u[:, 0]]
            a1 = alpha[:, t, in_s[:, 1]] + gam[:, t, in_s[:, 1], in_u[:, 1]]
            nxt = np.logaddexp(a0, a1)
            alpha[:, t + 1] = nxt - nxt.max(axis=1, keepdims=True)
        for t in range(T - 1, -1, -1):
            bt = gam[:, t] + beta[:, t + 1][:, next_state]
            cur = np.logaddexp(bt[:, :, 0], bt[:, :, 1])
            beta[:, t] = cur - cur.max(axis=1, keepdims=True)

        tot = alpha[:, :T, :, None] + gam + beta[:, 1:][:, :, next_state]
        flat = tot.reshape(B, T, 2 * S)
        app_info = (logsumexp(tot[:, :n_info, :, 0], axis=2)
                    - logsumexp(tot[:, :n_info, :, 1], axis=2))
        ext = np.empty((B, T, n_out))
        for i in range(n_out):
            mask0 = (out_sym[:, :, i] > 0).reshape(-1)
            lp = logsumexp(np.where(mask0, flat, -np.inf), axis=2)
            lm = logsumexp(np.where(mask0, -np.inf, flat), axis=2)
            ext[:, :, i] = (lp - lm) - Lcr[:, :, i]
    return app_info, ext.reshape(B, ncode)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

sspda_sweep_jit = njit(_sspda_sweep_loops)
mic_sweep_jit = njit(_mic_sweep_loops)
_posterior_jit = njit(_posterior_loops)
_maxstar = njit(_maxstar)
bcjr_batch_jit = njit(_bcjr_loops)


def posterior_enumerate_jit(y, R, lam, sigma2, want_pairs):
    return _posterior_jit(np.ascontiguousarray(y, dtype=float),
                          np.ascontiguousarray(R, dtype=float),
                          np.ascontiguousarray(lam, dtype=float),
                          float(sigma2), bool(want_pairs))


if USE_NUMBA:
    sspda_sweep = sspda_sweep_jit
    mic_sweep = mic_sweep_jit
    posterior_enumerate = posterior_enumerate_jit
    bcjr_batch = bcjr_batch_jit
else:
    sspda_sweep = sspda_sweep_numpy
    mic_sweep = mic_sweep_numpy
    posterior_enumerate = posterior_enumerate_numpy
    bcjr_batch = bcjr_batch_numpy
