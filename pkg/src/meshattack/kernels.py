"""Hot inner loops: random-walk stepping and GRU time recurrences.

Every kernel exists twice: ``*_nb`` compiled with numba, ``*_np`` in plain
numpy.  The public names at the bottom dispatch on ``_accel.USE_NUMBA``.

GRU convention (gate order z, r, n; reset applied after the recurrent matmul)::

    xp  = x @ W + bx                      # precomputed for all steps
    hp  = h @ U + bh
    z   = sigmoid(xp_z + hp_z)
    r   = sigmoid(xp_r + hp_r)
    n   = tanh(xp_n + r * hp_n)
    h'  = (1 - z) * n + z * h
"""
import numpy as np

from . import _accel
from ._accel import njit

# ---------------------------------------------------------------- random walks


def _walk_np(offsets, nbrs, n_vertices, uniforms):
    n_walks, length = uniforms.shape
    seq = np.zeros((n_walks, length), dtype=np.int64)
    jumps = np.zeros((n_walks, length), dtype=np.bool_)
    for w in range(n_walks):
        visited = np.zeros(n_vertices, dtype=np.bool_)
        u = uniforms[w]
        cur = min(int(u[0] * n_vertices), n_vertices - 1)
        seq[w, 0] = cur
        visited[cur] = True
        for t in range(1, length):
            nb = nbrs[offsets[cur]:offsets[cur + 1]]
            if len(nb):
                fresh = nb[~visited[nb]]
                pool = fresh if len(fresh) else nb
            else:
                pool = np.flatnonzero(~visited)
                if len(pool) == 0:
                    pool = np.arange(n_vertices)
                jumps[w, t] = True
            cur = int(pool[min(int(u[t] * len(pool)), len(pool) - 1)])
            seq[w, t] = cur
            visited[cur] = True
    return seq, jumps


@njit(cache=True)
def _walk_nb(offsets, nbrs, n_vertices, uniforms):
    n_walks, length = uniforms.shape
    seq = np.zeros((n_walks, length), dtype=np.int64)
    jumps = np.zeros((n_walks, length), dtype=np.bool_)
    visited = np.zeros(n_vertices, dtype=np.bool_)
    for w in range(n_walks):
        visited[:] = False
        cur = min(int(uniforms[w, 0] * n_vertices), n_vertices - 1)
        seq[w, 0] = cur
        visited[cur] = True
        for t in range(1, length):
            lo, hi = offsets[cur], offsets[cur + 1]
            u = uniforms[w, t]
            if hi > lo:
                n_fresh = 0
                for k in range(lo, hi):
                    if not visited[nbrs[k]]:
                        n_fresh += 1
                if n_fresh > 0:
                    pick = min(int(u * n_fresh), n_fresh - 1)
                    for k in range(lo, hi):
                        if not visited[nbrs[k]]:
                            if pick == 0:
                                cur = nbrs[k]
                                break
                            pick -= 1
                else:
                    cur = nbrs[lo + min(int(u * (hi - lo)), hi - lo - 1)]
            else:
                jumps[w, t] = True
                n_fresh = 0
                for k in range(n_vertices):
                    if not visited[k]:
                        n_fresh += 1
                if n_fresh == 0:
                    cur = min(int(u * n_vertices), n_vertices - 1)
                else:
                    pick = min(int(u * n_fresh), n_fresh - 1)
                    for k in range(n_vertices):
                        if not visited[k]:
                            if pick == 0:
                                cur = k
                                break
                            pick -= 1
            seq[w, t] = cur
            visited[cur] = True
    return seq, jumps


# ---------------------------------------------------------------- GRU recurrence


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _gru_fwd_np(xp, U, bh):
    B, L, H3 = xp.shape
    H = H3 // 3
    hs = np.zeros((B, L, H))
    zs = np.empty((B, L, H))
    rs = np.empty((B, L, H))
    ns = np.empty((B, L, H))
    hns = np.empty((B, L, H))
    h = np.zeros((B, H))
    for t in range(L):
        hp = h @ U + bh
        x = xp[:, t]
        z = _sigmoid(x[:, :H] + hp[:, :H])
        r = _sigmoid(x[:, H:2 * H] + hp[:, H:2 * H])
        hn = hp[:, 2 * H:]
        n = np.tanh(x[:, 2 * H:] + r * hn)
        h = (1.0 - z) * n + z * h
        hs[:, t], zs[:, t], rs[:, t], ns[:, t], hns[:, t] = h, z, r, n, hn
    return hs, zs, rs, ns, hns


@njit(cache=True)
def _gru_fwd_nb(xp, U, bh):
    B, L, H3 = xp.shape
    H = H3 // 3
    hs = np.zeros((B, L, H))
    zs = np.empty((B, L, H))
    rs = np.empty((B, L, H))
    ns = np.empty((B, L, H))
    hns = np.empty((B, L, H))
    h = np.zeros((B, H))
    for t in range(L):
        hp = np.dot(h, U)
        for b in range(B):
            for j in range(H):
                az = xp[b, t, j] + hp[b, j] + bh[j]
                ar = xp[b, t, H + j] + hp[b, H + j] + bh[H + j]
                z = 0.5 * (np.tanh(0.5 * az) + 1.0)
                r = 0.5 * (np.tanh(0.5 * ar) + 1.0)
                hn = hp[b, 2 * H + j] + bh[2 * H + j]
                n = np.tanh(xp[b, t, 2 * H + j] + r * hn)
                hnew = (1.0 - z) * n + z * h[b, j]
                zs[b, t, j] = z
                rs[b, t, j] = r
                ns[b, t, j] = n
                hns[b, t, j] = hn
                hs[b, t, j] = hnew
        for b in range(B):
            for j in range(H):
                h[b, j] = hs[b, t, j]
    return hs, zs, rs, ns, hns


def _gru_bwd_np(dhs, hs, zs, rs, ns, hns, U, need_param_grads):
    B, L, H = hs.shape
    dxp = np.empty((B, L, 3 * H))
    dU = np.zeros_like(U)
    dbh = np.zeros(3 * H)
    dh = np.zeros((B, H))
    zero = np.zeros((B, H))
    UT = np.ascontiguousarray(U.T)
    for t in range(L - 1, -1, -1):
        dh = dh + dhs[:, t]
        z, r, n, hn = zs[:, t], rs[:, t], ns[:, t], hns[:, t]
        h_prev = hs[:, t - 1] if t > 0 else zero
        dn_pre = dh * (1.0 - z) * (1.0 - n * n)
        dz_pre = dh * (h_prev - n) * z * (1.0 - z)
        dr_pre = dn_pre * hn * r * (1.0 - r)
        dhp = np.concatenate([dz_pre, dr_pre, dn_pre * r], axis=1)
        dxp[:, t, :H] = dz_pre
        dxp[:, t, H:2 * H] = dr_pre
        dxp[:, t, 2 * H:] = dn_pre
        if need_param_grads:
            dU += h_prev.T @ dhp
            dbh += dhp.sum(axis=0)
        dh = dh * z + dhp @ UT
    return dxp, dU, dbh


@njit(cache=True)
def _gru_bwd_nb(dhs, hs, zs, rs, ns, hns, U, need_param_grads):
    B, L, H = hs.shape
    dxp = np.empty((B, L, 3 * H))
    dU = np.zeros_like(U)
    dbh = np.zeros(3 * H)
    dh = np.zeros((B, H))
    dhp = np.empty((B, 3 * H))
    h_prev = np.zeros((B, H))
    UT = np.ascontiguousarray(U.T)
    for t in range(L - 1, -1, -1):
        for b in range(B):
            for j in range(H):
                g = dh[b, j] + dhs[b, t, j]
                z = zs[b, t, j]
                r = rs[b, t, j]
                n = ns[b, t, j]
                hprev = hs[b, t - 1, j] if t > 0 else 0.0
                h_prev[b, j] = hprev
                dn_pre = g * (1.0 - z) * (1.0 - n * n)
                dz_pre = g * (hprev - n) * z * (1.0 - z)
                dr_pre = dn_pre * hns[b, t, j] * r * (1.0 - r)
                dxp[b, t, j] = dz_pre
                dxp[b, t, H + j] = dr_pre
                dxp[b, t, 2 * H + j] = dn_pre
                dhp[b, j] = dz_pre
                dhp[b, H + j] = dr_pre
                dhp[b, 2 * H + j] = dn_pre * r
                dh[b, j] = g * z
        if need_param_grads:
            dU += np.dot(h_prev.T, dhp)
            for b in range(B):
                for k in range(3 * H):
                    dbh[k] += dhp[b, k]
        dh += np.dot(dhp, UT)
    return dxp, dU, dbh


# ---------------------------------------------------------------- dispatch


def walk_kernel(offsets, nbrs, n_vertices, uniforms, use_numba=None):
    use = _accel.USE_NUMBA if use_numba is None else use_numba
    fn = _walk_nb if use else _walk_np
    return fn(np.ascontiguousarray(offsets, dtype=np.int64), np.ascontiguousarray(nbrs, dtype=np.int64),
              int(n_vertices), np.ascontiguousarray(uniforms, dtype=np.float64))


def gru_forward(xp, U, bh, use_numba=None):
    use = _accel.USE_NUMBA if use_numba is None else use_numba
    if use:
        return _gru_fwd_nb(np.ascontiguousarray(xp), np.ascontiguousarray(U), np.ascontiguousarray(bh))
    return _gru_fwd_np(xp, U, bh)


def gru_backward(dhs, cache, U, need_param_grads=True, use_numba=None):
    """Reverse pass through the recurrence.

    ``dhs`` holds the loss gradient arriving at each hidden state from above.
    Returns gradients w.r.t. the precomputed input projections, ``U`` and ``bh``.
    """
    use = _accel.USE_NUMBA if use_numba is None else use_numba
    hs, zs, rs, ns, hns = cache
    if use:
        return _gru_bwd_nb(np.ascontiguousarray(dhs), hs, zs, rs, ns, hns, np.ascontiguousarray(U),
                           bool(need_param_grads))
    return _gru_bwd_np(dhs, hs, zs, rs, ns, hns, U, need_param_grads)
