"""Numpy implementation of the batch kernels (lockstep over samples)."""

import numpy as np

UNMATCHED, ACTIVE, PASSIVE = 0, 1, 2


def simulate(kind, vert, indptr, indices, offer, gy, stop):
    """Ranking-style runs for every row of ``gy``.

    At each deadline event the unmatched vertex ``u`` takes the arrived,
    unexpired, unmatched neighbour maximising ``1 - gy[v] - offer[slot]``,
    ties to the earliest slot (smaller id). Events after ``stop`` are skipped.
    """
    S, n = gy.shape
    partner = np.full((S, n), -1, dtype=np.int32)
    role = np.zeros((S, n), dtype=np.int8)
    alpha = np.zeros((S, n))
    mtime = np.full((S, n), -1, dtype=np.int32)
    arrived = np.zeros(n, dtype=bool)
    expired = np.zeros(n, dtype=bool)
    for t in range(stop + 1):
        u = int(vert[t])
        if kind[t] == 0:
            arrived[u] = True
            continue
        lo, hi = indptr[u], indptr[u + 1]
        nb = indices[lo:hi]
        keep = arrived[nb] & ~expired[nb]
        expired[u] = True
        if not keep.any():
            continue
        nb = nb[keep]
        off = offer[lo:hi][keep]
        if np.isnan(off).any():
            raise KeyError(f"missing offer entry at deadline of vertex {u}")
        score = 1.0 - gy[:, nb] - off
        score[partner[:, nb] >= 0] = -np.inf
        r = np.flatnonzero(partner[:, u] < 0)
        if r.size == 0:
            continue
        sc = score[r]
        k = np.argmax(sc, axis=1)
        best = sc[np.arange(r.size), k]
        ok = np.isfinite(best)
        r, k, best = r[ok], k[ok], best[ok]
        v = nb[k]
        partner[r, u] = v
        partner[r, v] = u
        role[r, u] = ACTIVE
        role[r, v] = PASSIVE
        alpha[r, u] = best
        alpha[r, v] = gy[r, v] + off[k]
        mtime[r, u] = t
        mtime[r, v] = t
    return partner, role, alpha, mtime
