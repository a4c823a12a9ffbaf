"""Compiled inner loops for the fluid engine."""
import numpy as np
from numba import njit


@njit(cache=True)
def _sift_up(hs, hl, hv, i):
    while i > 0:
        p = (i - 1) >> 1
        if hs[p] <= hs[i]:
            break
        hs[p], hs[i] = hs[i], hs[p]
        hl[p], hl[i] = hl[i], hl[p]
        hv[p], hv[i] = hv[i], hv[p]
        i = p


@njit(cache=True)
def _sift_down(hs, hl, hv, n):
    i = 0
    while True:
        c = 2 * i + 1
        if c >= n:
            break
        if c + 1 < n and hs[c + 1] < hs[c]:
            c += 1
        if hs[i] <= hs[c]:
            break
        hs[c], hs[i] = hs[i], hs[c]
        hl[c], hl[i] = hl[i], hl[c]
        hv[c], hv[i] = hv[i], hv[c]
        i = c


@njit(cache=True)
def maxmin_rates(flows, paths, plen, cap, up, out):
    """Max-min fair rates by progressive filling.

    ``flows`` indexes rows of ``paths``/``plen``; rates land in ``out`` at the
    same positions as ``flows``.  Returns -1 on success, otherwise the id of
    a down link that some flow tries to use.

    Links are kept in a min-heap keyed by fair share (remaining capacity over
    unfrozen flows).  Freezing flows only ever raises the share of the other
    links they cross, so stale heap entries can be skipped lazily.
    """
    nf = flows.shape[0]
    nl = cap.shape[0]
    cnt = np.zeros(nl, np.int64)
    total = 0
    for a in range(nf):
        f = flows[a]
        for j in range(plen[f]):
            l = paths[f, j]
            if not up[l]:
                return l
            cnt[l] += 1
        total += plen[f]
    # link -> positions in ``flows`` (CSR)
    start = np.zeros(nl + 1, np.int64)
    for l in range(nl):
        start[l + 1] = start[l] + cnt[l]
    fill = start[:-1].copy()
    members = np.empty(total, np.int64)
    for a in range(nf):
        f = flows[a]
        for j in range(plen[f]):
            l = paths[f, j]
            members[fill[l]] = a
            fill[l] += 1

    rem = cap.copy()
    version = np.zeros(nl, np.int64)
    cap_heap = nl + total + 1
    hs = np.empty(cap_heap)
    hl = np.empty(cap_heap, np.int64)
    hv = np.empty(cap_heap, np.int64)
    n = 0
    for l in range(nl):
        if cnt[l] > 0:
            hs[n] = rem[l] / cnt[l]
            hl[n] = l
            hv[n] = 0
            _sift_up(hs, hl, hv, n)
            n += 1

    frozen = np.zeros(nf, np.bool_)
    left = nf
    while left > 0 and n > 0:
        best = hs[0]
        l = hl[0]
        v = hv[0]
        n -= 1
        hs[0] = hs[n]
        hl[0] = hl[n]
        hv[0] = hv[n]
        _sift_down(hs, hl, hv, n)
        if v != version[l] or cnt[l] == 0:
            continue
        if best < 0.0:
            best = 0.0
        for k in range(start[l], start[l + 1]):
            a = members[k]
            if frozen[a]:
                continue
            frozen[a] = True
            out[a] = best
            left -= 1
            f = flows[a]
            for j in range(plen[f]):
                m = paths[f, j]
                rem[m] -= best
                cnt[m] -= 1
                version[m] += 1
                if m != l and cnt[m] > 0:
                    hs[n] = rem[m] / cnt[m]
                    hl[n] = m
                    hv[n] = version[m]
                    _sift_up(hs, hl, hv, n)
                    n += 1
    return -1
