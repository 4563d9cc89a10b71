"""Compiled inner loops. Callers own all randomness; kernels are deterministic.

Each kernel returns ``(event_or_step_index, node)`` of the first update that
left ``[-limit, limit]`` (or produced NaN), or ``(-1, -1)`` on success.
"""
import numpy as np
from numba import njit

GRADIENT = 1


@njit(cache=True)
def sgn_events(w, kinds, nodes, ks, eps, xi, X, xw, lam, G,
               nbr_ptr, nbr_idx, nbr_wt, gamma, gd, limit):
    N, p = w.shape
    m = X.shape[1]
    r = np.empty(m)
    old = np.empty_like(w)
    for e in range(kinds.size):
        if kinds[e] == GRADIENT:
            i = nodes[e]
            k = ks[e]
            for q in range(m):
                acc = 0.0
                for a in range(p):
                    acc += X[i, q, a] * w[i, a]
                r[q] = acc - (xw[i, q] + eps[e, q] + lam[i, q] * xi[k, q])
            for a in range(p):
                g = 0.0
                for q in range(m):
                    g += G[i, a, q] * r[q]
                w[i, a] -= gamma * g
                if not abs(w[i, a]) <= limit:
                    return e, i
        elif gd != 0.0:
            old[:, :] = w
            for i in range(N):
                for a in range(p):
                    acc = 0.0
                    for idx in range(nbr_ptr[i], nbr_ptr[i + 1]):
                        acc += nbr_wt[idx] * (old[i, a] - old[nbr_idx[idx], a])
                    w[i, a] = old[i, a] - gd * acc
                    if not abs(w[i, a]) <= limit:
                        return e, i
    return -1, -1


@njit(cache=True)
def fl_events(w, kinds, nodes, ks, eps, xi, X, xw, lam, G, gamma, limit):
    p = w.size
    m = X.shape[1]
    r = np.empty(m)
    for e in range(kinds.size):
        if kinds[e] != GRADIENT:
            continue
        i = nodes[e]
        k = ks[e]
        for q in range(m):
            acc = 0.0
            for a in range(p):
                acc += X[i, q, a] * w[a]
            r[q] = acc - (xw[i, q] + eps[e, q] + lam[i, q] * xi[k, q])
        for a in range(p):
            g = 0.0
            for q in range(m):
                g += G[i, a, q] * r[q]
            w[a] -= gamma * g
            if not abs(w[a]) <= limit:
                return e, i
    return -1, -1


@njit(cache=True)
def sgn_sde(w, dB_node, dB_common, dt, mu, H, hw, G, lam, tau, vs,
            nbr_ptr, nbr_idx, nbr_wt, db, limit):
    N, p = w.shape
    m = G.shape[2]
    old = np.empty_like(w)
    z = np.empty(m)
    for s in range(dB_common.shape[0]):
        old[:, :] = w
        for i in range(N):
            for q in range(m):
                z[q] = tau[i] * dB_node[s, i, q] + vs[i] * lam[i, q] * dB_common[s, q]
            for a in range(p):
                grad = -hw[i, a]
                for b in range(p):
                    grad += H[i, a, b] * old[i, b]
                pen = 0.0
                for idx in range(nbr_ptr[i], nbr_ptr[i + 1]):
                    pen += nbr_wt[idx] * (old[i, a] - old[nbr_idx[idx], a])
                noise = 0.0
                for q in range(m):
                    noise += G[i, a, q] * z[q]
                w[i, a] = old[i, a] - (mu[i] * grad + db * pen) * dt + noise
                if not abs(w[i, a]) <= limit:
                    return s, i
    return -1, -1


@njit(cache=True)
def fl_sde(w, dB_node, dB_common, dt, mu, H, hw, G, lam, tau, vs, limit):
    N = H.shape[0]
    p = w.size
    m = G.shape[2]
    old = np.empty_like(w)
    z = np.empty(m)
    for s in range(dB_common.shape[0]):
        old[:] = w
        for i in range(N):
            for q in range(m):
                z[q] = tau[i] * dB_node[s, i, q] + vs[i] * lam[i, q] * dB_common[s, q]
            for a in range(p):
                grad = -hw[i, a]
                for b in range(p):
                    grad += H[i, a, b] * old[b]
                noise = 0.0
                for q in range(m):
                    noise += G[i, a, q] * z[q]
                w[a] += -mu[i] * grad * dt + noise
        for a in range(p):
            if not abs(w[a]) <= limit:
                return s, -1
    return -1, -1
