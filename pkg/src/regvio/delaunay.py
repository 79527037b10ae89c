"""2D Delaunay triangulation by Bowyer-Watson insertion.

The insertion loop is compiled with numba; the cocircular tie-break pass is
plain numpy. Input points are normalized to the unit box so the in-circle
tolerance is scale free.
"""

from __future__ import annotations

import numba
import numpy as np

INCIRCLE_EPS = 1e-9
_SUPER = 1e6


@numba.njit(cache=True)
def _incircle(ax, ay, bx, by, cx, cy, dx, dy):
    """(det, permanent) of the in-circle determinant; det > 0 iff d inside CCW abc."""
    adx = ax - dx
    ady = ay - dy
    bdx = bx - dx
    bdy = by - dy
    cdx = cx - dx
    cdy = cy - dy
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    t1 = bdx * cdy - bdy * cdx
    t2 = cdx * ady - cdy * adx
    t3 = adx * bdy - ady * bdx
    det = alift * t1 + blift * t2 + clift * t3
    perm = (
        alift * (abs(bdx * cdy) + abs(bdy * cdx))
        + blift * (abs(cdx * ady) + abs(cdy * adx))
        + clift * (abs(adx * bdy) + abs(ady * bdx))
    )
    return det, perm


@numba.njit(cache=True)
def _circle_reach(ax, ay, bx, by, cx, cy):
    """Largest x covered by the circumcircle of abc (inf when degenerate)."""
    bx -= ax
    by -= ay
    cx -= ax
    cy -= ay
    d = 2.0 * (bx * cy - by * cx)
    if d == 0.0:
        return np.inf
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    ux = (cy * b2 - by * c2) / d
    uy = (bx * c2 - cx * b2) / d
    r = np.sqrt(ux * ux + uy * uy)
    if not np.isfinite(r) or r > 1e3:
        return np.inf
    return ax + ux + r


@numba.njit(cache=True)
def _bowyer_watson(pts, eps):
    n = pts.shape[0]
    xs = np.empty(n + 3)
    ys = np.empty(n + 3)
    xs[:n] = pts[:, 0]
    ys[:n] = pts[:, 1]
    xs[n], ys[n] = -_SUPER, -_SUPER
    xs[n + 1], ys[n + 1] = _SUPER, -_SUPER
    xs[n + 2], ys[n + 2] = 0.5, _SUPER

    cap = 8 * n + 16
    tri = np.empty((cap, 3), dtype=np.int64)
    alive = np.zeros(cap, dtype=np.bool_)
    tri[0, 0], tri[0, 1], tri[0, 2] = n, n + 1, n + 2
    alive[0] = True
    ntri = 1
    bad = np.empty(cap, dtype=np.int64)
    edges = np.empty((3 * cap, 2), dtype=np.int64)

    # circumcircle right extent per triangle; points arrive sorted by x, so a
    # triangle whose circle ends left of the sweep line can never turn bad again
    reach = np.empty(cap)
    reach[0] = np.inf
    done = np.empty((cap, 3), dtype=np.int64)
    ndone = 0
    margin = 1e-6

    for p in range(n):
        px = xs[p]
        py = ys[p]
        nbad = 0
        for t in range(ntri):
            if not alive[t]:
                continue
            if reach[t] < px - margin:
                alive[t] = False
                if ndone == done.shape[0]:
                    grown = np.empty((2 * ndone, 3), dtype=np.int64)
                    grown[:ndone] = done[:ndone]
                    done = grown
                done[ndone] = tri[t]
                ndone += 1
                continue
            a, b, c = tri[t, 0], tri[t, 1], tri[t, 2]
            det, perm = _incircle(xs[a], ys[a], xs[b], ys[b], xs[c], ys[c], px, py)
            if det > eps * perm:
                bad[nbad] = t
                nbad += 1
        if nbad == 0:
            continue  # duplicate point
        # cavity boundary: directed edges of bad triangles whose twin is not bad
        nedge = 0
        for i in range(nbad):
            t = bad[i]
            for k in range(3):
                u = tri[t, k]
                v = tri[t, (k + 1) % 3]
                shared = False
                for j in range(nbad):
                    if j == i:
                        continue
                    s = bad[j]
                    for m in range(3):
                        if tri[s, m] == v and tri[s, (m + 1) % 3] == u:
                            shared = True
                            break
                    if shared:
                        break
                if not shared:
                    edges[nedge, 0] = u
                    edges[nedge, 1] = v
                    nedge += 1
        for i in range(nbad):
            alive[bad[i]] = False
        if ntri + nedge > cap:
            # compact
            w = 0
            for t in range(ntri):
                if alive[t]:
                    tri[w] = tri[t]
                    alive[w] = True
                    reach[w] = reach[t]
                    w += 1
            for t in range(w, ntri):
                alive[t] = False
            ntri = w
        for e in range(nedge):
            u = edges[e, 0]
            v = edges[e, 1]
            tri[ntri, 0] = u
            tri[ntri, 1] = v
            tri[ntri, 2] = p
            alive[ntri] = True
            reach[ntri] = _circle_reach(xs[u], ys[u], xs[v], ys[v], px, py)
            ntri += 1

    count = 0
    for t in range(ntri):
        if alive[t] and tri[t, 0] < n and tri[t, 1] < n and tri[t, 2] < n:
            count += 1
    for t in range(ndone):
        if done[t, 0] < n and done[t, 1] < n and done[t, 2] < n:
            count += 1
    out = np.empty((count, 3), dtype=np.int64)
    w = 0
    for t in range(ndone):
        if done[t, 0] < n and done[t, 1] < n and done[t, 2] < n:
            out[w] = done[t]
            w += 1
    for t in range(ntri):
        if alive[t] and tri[t, 0] < n and tri[t, 1] < n and tri[t, 2] < n:
            out[w] = tri[t]
            w += 1
    return out


def _normalize(points: np.ndarray) -> np.ndarray:
    lo = points.min(axis=0)
    span = float(np.max(points.max(axis=0) - lo))
    if span <= 0.0:
        span = 1.0
    return (points - lo) / span


def incircle(a, b, c, d) -> tuple[float, float]:
    return _incircle(a[0], a[1], b[0], b[1], c[0], c[1], d[0], d[1])


def _lex_smallest(points: np.ndarray, idx) -> int:
    return min(idx, key=lambda i: (points[i, 0], points[i, 1]))


def _apply_tie_break(points: np.ndarray, norm: np.ndarray, tris: np.ndarray, eps: float) -> np.ndarray:
    """Flip cocircular diagonals onto the lexicographically smallest quad vertex."""
    tris = [list(t) for t in tris]
    for _ in range(4 * len(tris) + 4):
        edge_map: dict[tuple[int, int], tuple[int, int]] = {}
        for ti, (a, b, c) in enumerate(tris):
            edge_map[(a, b)] = (ti, c)
            edge_map[(b, c)] = (ti, a)
            edge_map[(c, a)] = (ti, b)
        flipped = False
        for (a, b), (t1, c) in edge_map.items():
            if a > b:
                continue
            twin = edge_map.get((b, a))
            if twin is None:
                continue
            t2, d = twin
            det, perm = incircle(norm[a], norm[b], norm[c], norm[d])
            if abs(det) > eps * perm:
                continue
            s = _lex_smallest(points, (a, b, c, d))
            if s in (a, b):
                continue
            # quad in CCW order is a, d, b, c
            tris[t1] = [a, d, c]
            tris[t2] = [d, b, c]
            flipped = True
            break
        if not flipped:
            break
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def _needs_tie_break(norm: np.ndarray, tris: np.ndarray, eps: float) -> bool:
    if len(tris) < 2:
        return False
    e = np.concatenate([tris[:, [0, 1, 2]], tris[:, [1, 2, 0]], tris[:, [2, 0, 1]]])
    # e rows: (u, v, opposite)
    key_lo = np.minimum(e[:, 0], e[:, 1])
    key_hi = np.maximum(e[:, 0], e[:, 1])
    order = np.lexsort((key_hi, key_lo))
    lo, hi, opp = key_lo[order], key_hi[order], e[order, 2]
    same = (lo[1:] == lo[:-1]) & (hi[1:] == hi[:-1])
    i = np.nonzero(same)[0]
    if len(i) == 0:
        return False
    A, B, C, D = norm[lo[i]], norm[hi[i]], norm[opp[i]], norm[opp[i + 1]]
    # in-circle of (A, B, C, D); orientation sign does not matter for |det|
    ad, bd, cd = A - D, B - D, C - D
    al, bl, cl = (ad**2).sum(1), (bd**2).sum(1), (cd**2).sum(1)
    t1 = bd[:, 0] * cd[:, 1] - bd[:, 1] * cd[:, 0]
    t2 = cd[:, 0] * ad[:, 1] - cd[:, 1] * ad[:, 0]
    t3 = ad[:, 0] * bd[:, 1] - ad[:, 1] * bd[:, 0]
    det = al * t1 + bl * t2 + cl * t3
    perm = (
        al * (np.abs(bd[:, 0] * cd[:, 1]) + np.abs(bd[:, 1] * cd[:, 0]))
        + bl * (np.abs(cd[:, 0] * ad[:, 1]) + np.abs(cd[:, 1] * ad[:, 0]))
        + cl * (np.abs(ad[:, 0] * bd[:, 1]) + np.abs(ad[:, 1] * bd[:, 0]))
    )
    return bool(np.any(np.abs(det) <= eps * perm))


def delaunay(points: np.ndarray, eps: float = INCIRCLE_EPS) -> np.ndarray:
    """Triangles (index triples, CCW) of the Delaunay triangulation of ``points``.

    Returns an empty ``(0, 3)`` array for fewer than three points or a
    collinear set. Cocircular quadrilaterals take the diagonal incident to the
    lexicographically smallest (x, then y) point.
    """
    points = np.asarray(points, dtype=float)
    if len(points) < 3:
        return np.empty((0, 3), dtype=np.int64)
    norm = _normalize(points)
    order = np.lexsort((norm[:, 1], norm[:, 0]))
    tris = order[_bowyer_watson(norm[order], eps)]
    if len(tris) and _needs_tie_break(norm, tris, eps):
        tris = _apply_tie_break(points, norm, tris, eps)
    return tris
