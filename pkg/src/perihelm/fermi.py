"""Level-set geometry of the bands over the quasimomentum square.

The pipeline: march the tabulated bands for crossings of the level k^2,
polish every traced vertex onto the discrete level with Newton steps fed by
exact band gradients, repair label kinks where two bands touch on the level
(the sorted eigenvalues swap branches there; tangent continuity recovers the
analytic curves), and unfold the arcs cut by the square's boundary into
closed or lattice-periodic curves by matching congruent endpoints.

Curves are oriented so the band gradient sits on the left of the tangent;
signed curvature, inflection points, and stationary points of the phase
ell . x_hat all refer to that orientation.
"""

from __future__ import annotations

import bisect
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .bloch import BandGrid, detect_sigma0
from .errors import (DegenerateInflection, GapWarning, ShortCurveWarning,
                     Sigma0Proximity, TangencyWarning, UnmatchedEndpoint)

DEFAULT_NEWTON_TOL = 1e-10
DEFAULT_GRAD_FLOOR = 1e-3
DEFAULT_MATCH_TOL = 1e-6
DEFAULT_SMOOTH = 0.0
AIRY_BAND_FRACTION = 0.05


# ------------------------------------------------------------------- models


class SyntheticBandModel:
    """Analytic bands with gradients, for exercising the geometry alone.

    funcs is a list of (value, gradient) callables taking (L, 2) arrays.
    Values are sorted per point, like an eigensolver would return them, so
    branch crossings produce the same relabeling kinks the real model has.
    """

    def __init__(self, funcs):
        self.funcs = list(funcs)
        self.n_bands = len(self.funcs)

    def eval(self, ells, need_grads: bool = True, need_vectors: bool = False):
        ells = np.atleast_2d(np.asarray(ells, dtype=float))
        lams = np.stack([np.asarray(f(ells), dtype=float) for f, _ in self.funcs], axis=1)
        order = np.argsort(lams, axis=1, kind="stable")
        out_lams = np.take_along_axis(lams, order, axis=1)
        grads = None
        if need_grads:
            grads = np.stack([np.asarray(g(ells), dtype=float) for _, g in self.funcs], axis=1)
            grads = np.take_along_axis(grads, order[..., None], axis=1)
        return out_lams, grads, None, np.full(len(ells), np.inf)


# -------------------------------------------------------------------- types


@dataclass
class FermiCurve:
    """Polyline on the level {lam_band = k2} inside the momentum square."""

    points: np.ndarray            # (V, 2)
    bands: np.ndarray             # (V,) sorted-band index per vertex
    grads: np.ndarray             # (V, 2) band gradient per vertex
    k2: float
    closed: bool
    boundary_fix: np.ndarray = None   # (V,) -1 free, 0/1 coordinate pinned to the box edge

    def __post_init__(self):
        if self.boundary_fix is None:
            self.boundary_fix = np.full(len(self.points), -1, dtype=int)

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    def chord_lengths(self) -> np.ndarray:
        """Cumulative chord length, (V,); excludes the closing chord."""
        d = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(d)])

    def reversed_copy(self) -> "FermiCurve":
        return FermiCurve(points=self.points[::-1].copy(), bands=self.bands[::-1].copy(),
                          grads=self.grads[::-1].copy(), k2=self.k2, closed=self.closed,
                          boundary_fix=self.boundary_fix[::-1].copy())


@dataclass
class UnfoldedCurve(FermiCurve):
    """Concatenation of congruent arcs in the extended momentum plane.

    period is the accumulated lattice translation: zero for a closed curve,
    a nonzero integer vector for a curve periodic modulo the lattice.
    family groups curves that intersect: where two bands cross exactly on
    the level, the rejoined analytic branches share the junction vertex, so
    the curves through it form one connected component of the level set.
    """

    period: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=int))
    arcs_used: int = 1
    family: int = 0


# ----------------------------------------------------- marching the level


def _march_band(axis: np.ndarray, F: np.ndarray):
    """Segments of {F = 0} by cell-wise linear interpolation.

    Returns (points dict edge_key -> (x, y), segments list of edge-key pairs).
    Edge keys: ("h", i, j) joins nodes (i, j)-(i+1, j); ("v", i, j) joins
    (i, j)-(i, j+1).  Zeros count as positive so signs are well defined.
    """
    G = len(axis)
    S = F >= 0.0
    pts = {}
    hx = np.argwhere(S[:-1, :] != S[1:, :])
    for i, j in hx:
        t = F[i, j] / (F[i, j] - F[i + 1, j])
        pts[("h", i, j)] = (axis[i] + t * (axis[i + 1] - axis[i]), axis[j])
    vx = np.argwhere(S[:, :-1] != S[:, 1:])
    for i, j in vx:
        t = F[i, j] / (F[i, j] - F[i, j + 1])
        pts[("v", i, j)] = (axis[i], axis[j] + t * (axis[j + 1] - axis[j]))

    segments = []
    busy = np.argwhere((S[:-1, :-1] != S[1:, :-1]) | (S[:-1, :-1] != S[:-1, 1:])
                       | (S[:-1, :-1] != S[1:, 1:]))
    for i, j in busy:
        edges = [k for k in (("h", i, j), ("h", i, j + 1), ("v", i, j), ("v", i + 1, j))
                 if k in pts]
        if len(edges) == 2:
            segments.append((edges[0], edges[1]))
        elif len(edges) == 4:
            # saddle cell: split by the sign of the center estimate
            center = 0.25 * (F[i, j] + F[i + 1, j] + F[i, j + 1] + F[i + 1, j + 1])
            corner = S[i, j]
            same = (center >= 0.0) == corner
            # corner (i, j) touches edges ("h", i, j) and ("v", i, j)
            if same:
                segments.append((("h", i, j), ("v", i + 1, j)))
                segments.append((("v", i, j), ("h", i, j + 1)))
            else:
                segments.append((("h", i, j), ("v", i, j)))
                segments.append((("v", i + 1, j), ("h", i, j + 1)))
    return pts, segments


def _chain_segments(pts: dict, segments: list):
    """Walk shared edge keys into open chains and cycles of edge keys."""
    link: dict = {}
    for a, b in segments:
        link.setdefault(a, []).append(b)
        link.setdefault(b, []).append(a)
    used = set()
    chains = []

    def walk(start):
        chain = [start]
        prev = None
        cur = start
        while True:
            nxts = [e for e in link[cur] if e != prev and ((cur, e) not in used
                    and (e, cur) not in used)]
            if not nxts:
                return chain, False
            nxt = nxts[0]
            used.add((cur, nxt))
            used.add((nxt, cur))
            chain.append(nxt)
            if nxt == start:
                return chain[:-1], True
            prev, cur = cur, nxt

    # open chains start at degree-1 edges
    for key in sorted(k for k, v in link.items() if len(v) == 1):
        if any((key, o) in used or (o, key) in used for o in link[key]):
            continue
        chain, _ = walk(key)
        if len(chain) >= 2:
            chains.append((chain, False))
    # remaining connectivity is cycles
    for key in sorted(link.keys()):
        free = [o for o in link[key] if (key, o) not in used and (o, key) not in used]
        if not free:
            continue
        chain, closed = walk(key)
        if len(chain) >= 3:
            chains.append((chain, closed))
    return chains


def _boundary_fix_of(key, G: int) -> int:
    """Which coordinate a crossing point is pinned to on the box edge."""
    kind, i, j = key
    if kind == "v" and (i == 0 or i == G - 1):
        return 0
    if kind == "h" and (j == 0 or j == G - 1):
        return 1
    return -1


# --------------------------------------------------------- vertex polishing


def polish_onto_level(model, points, bands, k2, newton_tol=DEFAULT_NEWTON_TOL,
                      boundary_fix=None, max_move=0.02, iters=30):
    """Newton-project vertices onto {lam_band = k2}.

    Vertices with boundary_fix 0 or 1 keep that coordinate pinned and slide
    along the box edge; boundary_fix 2 freezes the vertex entirely (used to
    keep congruent endpoints of a periodic curve congruent).  Returns
    (points, grads, residual per vertex).
    """
    pts = np.array(points, dtype=float)
    bands = np.asarray(bands, dtype=int)
    V = len(pts)
    if boundary_fix is None:
        boundary_fix = np.full(V, -1, dtype=int)
    active = np.ones(V, dtype=bool)
    grads = np.zeros((V, 2))
    resid = np.full(V, np.inf)
    for _ in range(iters):
        if not active.any():
            break
        lams, g, _, _ = model.eval(pts[active], need_grads=True)
        idx = np.arange(active.sum())
        f = lams[idx, bands[active]] - k2
        gv = g[idx, bands[active]]
        grads[active] = gv
        resid[active] = np.abs(f)
        done = np.abs(f) < newton_tol
        step = np.zeros_like(gv)
        fix = boundary_fix[active]
        free = fix < 0
        denom = (gv[free] ** 2).sum(1)
        denom = np.where(denom < 1e-300, 1.0, denom)
        step[free] = (f[free] / denom)[:, None] * gv[free]
        for c in (0, 1):
            m = fix == c
            if m.any():
                o = 1 - c
                go = gv[m, o]
                go = np.where(np.abs(go) < 1e-14, np.inf, go)
                step[m, o] = f[m] / go
        frozen = fix == 2
        step[frozen] = 0.0
        done |= frozen
        norms = np.linalg.norm(step, axis=1)
        big = norms > max_move
        step[big] *= (max_move / norms[big])[:, None]
        upd = pts[active]
        upd[~done] -= step[~done]
        pts[active] = upd
        sub = np.where(active)[0]
        active[sub[done]] = False
    return pts, grads, resid


# ------------------------------------------------------- crossing junctions


def polish_level_crossing(model, ell0, n, k2, tol, max_dist, iters=14):
    """Newton for a point where bands n and n+1 both sit on the level."""
    ell = np.asarray(ell0, dtype=float).copy()
    for _ in range(iters):
        lams, grads, _, _ = model.eval(ell[None], need_grads=True)
        f = np.array([lams[0, n] - k2, lams[0, n + 1] - k2])
        if np.abs(f).max() < 0.25 * tol:
            break
        J = np.stack([grads[0, n], grads[0, n + 1]])
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if abs(det) < 1e-12:
            return None
        step = np.linalg.solve(J, f)
        nstep = np.linalg.norm(step)
        if nstep > 0.5 * max_dist:
            step *= 0.5 * max_dist / nstep
        ell = ell - step
        if np.linalg.norm(ell - np.asarray(ell0)) > max_dist:
            return None
    lams, _, _, _ = model.eval(ell[None], need_grads=False)
    if max(abs(lams[0, n] - k2), abs(lams[0, n + 1] - k2)) > tol:
        return None
    return ell


def _gap_minimum(model, ell0, n, max_dist, iters=60):
    """Local minimum of lam_{n+1} - lam_n near ell0, or None.

    The gap of a narrowly avoided crossing is a smooth positive bowl; a
    gradient descent with backtracking finds its bottom.  Wandering out of
    the max_dist disk means there is no bowl here.
    """
    ell0 = np.asarray(ell0, dtype=float)
    ell = ell0.copy()

    def gap_and_grad(p):
        lams, g, _, _ = model.eval(p[None], need_grads=True)
        return float(lams[0, n + 1] - lams[0, n]), g[0, n + 1] - g[0, n]

    f, df = gap_and_grad(ell)
    step = 0.25 * max_dist / max(np.linalg.norm(df), 1e-12)
    for _ in range(iters):
        gnorm = np.linalg.norm(df)
        if gnorm * max_dist < 1e-12 or step * gnorm < 1e-12:
            break
        cand = ell - min(step, 0.25 * max_dist / gnorm) * df
        fc, dfc = gap_and_grad(cand)
        if fc < f:
            ell, f, df = cand, fc, dfc
            step *= 1.3
        else:
            step *= 0.4
        if np.linalg.norm(ell - ell0) > max_dist:
            return None
    return ell, f


def _junction_bridge(model, pa, na, pb, nb, k2, spacing):
    """Straight-chord vertices bridging an avoided-crossing gap.

    Both re-paired flanks approach the junction along the same asymptote
    of the avoided crossing, so the chord between them follows the
    continuing analytic branch to within the zone scale.  No level polish
    exists for these vertices: the sorted levels veer off along the
    hyperbola flanks and the mean of the two bands follows the bisector of
    the asymptotes instead, so the bridge is frozen (fix = 2) and later
    passes must leave it on the interpolating spline.  Returns (points,
    bands, grads, fix).
    """
    pa = np.asarray(pa, dtype=float)
    pb = np.asarray(pb, dtype=float)
    m = int(np.ceil(np.linalg.norm(pb - pa) / spacing)) - 1
    if m < 1:
        return (np.empty((0, 2)), np.empty(0, dtype=int),
                np.empty((0, 2)), np.empty(0, dtype=int))
    ts = (np.arange(m) + 1.0) / (m + 1.0)
    pts = pa[None] + ts[:, None] * (pb - pa)[None]
    lams, g, _, _ = model.eval(pts, need_grads=True)
    bands = np.where(np.abs(lams[:, na] - k2) <= np.abs(lams[:, nb] - k2),
                     na, nb).astype(int)
    grads = 0.5 * (g[:, na] + g[:, nb])
    return pts, bands, grads, np.full(m, 2, dtype=int)


@dataclass
class _Piece:
    points: np.ndarray
    bands: np.ndarray
    grads: np.ndarray
    fix: np.ndarray
    closed: bool


def _cut_piece_at(piece: _Piece, center: np.ndarray, radius: float):
    """Remove the part of a chain inside a disk; return the resulting pieces
    and how many new ends face the junction.

    A chain can step across the disk without placing a vertex inside it, so
    segment chords are tested as well and both endpoints of a crossing
    segment are removed.
    """
    pts = piece.points
    d = np.linalg.norm(pts - center, axis=1)
    inside = d < radius
    if piece.closed:
        seg0, seg1 = pts, np.roll(pts, -1, axis=0)
    else:
        seg0, seg1 = pts[:-1], pts[1:]
    dv = seg1 - seg0
    den = np.einsum("ij,ij->i", dv, dv)
    t = np.einsum("ij,ij->i", center - seg0, dv) / np.where(den > 0.0, den, 1.0)
    proj = seg0 + np.clip(t, 0.0, 1.0)[:, None] * dv
    seghit = np.linalg.norm(proj - center, axis=1) < radius
    if piece.closed:
        inside |= seghit
        inside |= np.roll(seghit, 1)
    else:
        inside[:-1] |= seghit
        inside[1:] |= seghit
    if not inside.any():
        return [piece], 0
    if piece.closed:
        # rotate so a removed run sits at the seam, then treat as open
        first_in = int(np.argmax(inside))
        order = np.roll(np.arange(len(d)), -first_in)
        piece = _Piece(piece.points[order], piece.bands[order],
                       piece.grads[order], piece.fix[order], closed=False)
        inside = inside[order]
    runs = _true_runs(inside)
    pieces = []
    ends = 0
    prev = 0
    for a, b in runs:
        if a - prev >= 2:
            pieces.append(_Piece(piece.points[prev:a], piece.bands[prev:a],
                                 piece.grads[prev:a], piece.fix[prev:a], closed=False))
        ends += 2 if (a > 0 and b < len(inside)) else 1
        prev = b
    if len(inside) - prev >= 2:
        pieces.append(_Piece(piece.points[prev:], piece.bands[prev:],
                             piece.grads[prev:], piece.fix[prev:], closed=False))
    return pieces, ends


def _true_runs(mask: np.ndarray):
    """[(start, stop), ...] of the contiguous True runs of mask."""
    idx = np.flatnonzero(np.diff(np.concatenate([[0], mask.view(np.int8), [0]])))
    return list(zip(idx[::2], idx[1::2]))


def _reconnect_crossings(pieces: list[_Piece], model, k2: float, h: float,
                         gap_tol: float, avoided_gap: float = 0.0):
    """Repair relabeling kinks where bands touch or nearly touch on the level.

    Wherever pieces of adjacent sorted bands pass within a cell of each
    other and Newton confirms a common level point, the four incident
    strands are re-paired by eigenvector continuity and joined through the
    junction, recovering the smooth analytic branches.

    With avoided_gap > 0 the same repair covers narrowly avoided crossings:
    where the minimal splitting between the two bands is below avoided_gap,
    the level curves are two hyperbola-like branches whose sorted labels
    swap across the gap, and tracing either label turns sharply at the
    near-degeneracy.  The analytic branches continue straight through, so
    the strands are re-paired the same way and joined by short frozen
    bridges along the continuation.
    """
    events = []
    for ia in range(len(pieces)):
        for ib in range(ia + 1, len(pieces)):
            pa, pb = pieces[ia], pieces[ib]
            tree = cKDTree(pb.points)
            dist, jj = tree.query(pa.points, k=1)
            close = dist < 1.5 * h
            if not close.any():
                continue
            # one event per contiguous encounter; a pair of chains can meet
            # at several junctions
            for a, b in _true_runs(close):
                ii = a + int(np.argmin(dist[a:b]))
                na = int(pa.bands[ii])
                nb = int(pb.bands[jj[ii]])
                if abs(na - nb) != 1:
                    continue
                mid = 0.5 * (pa.points[ii] + pb.points[jj[ii]])
                events.append((mid, min(na, nb), float(dist[ii])))
    # deduplicate events spatially
    kept = []
    for mid, n, dmin in events:
        if any(np.linalg.norm(mid - m) < 3.0 * h for m, _, _ in kept):
            continue
        kept.append((mid, n, dmin))

    junctions = []
    for mid, n, dmin in kept:
        ell = polish_level_crossing(model, mid, n, k2, tol=max(gap_tol, 1e-9),
                                    max_dist=3.0 * h)
        if ell is not None:
            junctions.append((ell, n, 1.1 * h, True))
        elif avoided_gap > 0.0:
            bowl = _gap_minimum(model, mid, n, max_dist=3.0 * h)
            if bowl is not None and bowl[1] < avoided_gap:
                radius = max(1.1 * h, 1.6 * dmin)
                junctions.append((bowl[0], n, radius, False))

    for ell, n, radius, exact in junctions:
        reach = radius + 2.5 * h
        new_pieces = []
        for p in pieces:
            cut, _ = _cut_piece_at(p, ell, radius)
            new_pieces.extend(cut)
        # cutting can leave tiny fragments inside the junction disk; drop them
        pieces = [p for p in new_pieces
                  if p.closed or len(p.points) >= 5
                  or np.linalg.norm(p.points - ell, axis=1).max() >= reach]
        # gather strand ends facing the junction
        ends = []
        for pi, p in enumerate(pieces):
            if p.closed:
                continue
            for endsel in (0, -1):
                q = p.points[endsel]
                if np.linalg.norm(q - ell) < reach:
                    ref = p.points[1] if endsel == 0 else p.points[-2]
                    direction = q - ref
                    nn = np.linalg.norm(direction)
                    if nn > 0 and np.dot(ell - q, direction) >= 0.0:
                        ends.append((pi, endsel, direction / nn))
        if len(ends) < 2 or len(ends) % 2:
            warnings.warn(f"junction at {ell} has {len(ends)} strands; left unrepaired",
                          TangencyWarning)
            continue
        # eigenvectors at the strand ends: each analytic branch keeps a
        # continuous eigenvector through the crossing, so overlap is the
        # reliable pairing invariant (tangents only break ties)
        epts = np.array([pieces[pi].points[es] for pi, es, _ in ends])
        epts = ell + (epts - ell + 0.5) % 1.0 - 0.5
        _, evec, _ = model._solve_block(epts, True)
        evecs = [evec[i, :, int(pieces[pi].bands[es])]
                 for i, (pi, es, _) in enumerate(ends)]
        bridge_ctx = None if exact else (model, k2, 0.45 * h)
        pieces = _join_strands(pieces, ends, ell, evecs, model.beta_mat,
                               bridge_ctx=bridge_ctx)
    return pieces


def _all_matchings(items):
    """All ways to split an even-length list into unordered pairs."""
    if not items:
        yield []
        return
    a, rest = items[0], items[1:]
    for i in range(len(rest)):
        head = (a, rest[i])
        for tail in _all_matchings(rest[:i] + rest[i + 1:]):
            yield [head] + tail


def _join_strands(pieces, ends, ell, evecs, bmat, bridge_ctx=None):
    """Pair strand ends across a junction by eigenvector continuity.

    At an exact crossing (bridge_ctx None) the paired strands are joined
    through the junction vertex itself.  At an avoided crossing bridge_ctx
    carries (model, k2, spacing) and the pair is joined by a frozen
    straight-chord bridge instead; the junction point is not a level point
    there, so it is never inserted.
    """
    ne = len(ends)
    norms = np.array([np.abs(np.vdot(v, bmat @ v)) for v in evecs])
    ov = np.zeros((ne, ne))
    for a in range(ne):
        for b in range(a + 1, ne):
            num = np.abs(np.vdot(evecs[a], bmat @ evecs[b]))
            ov[a, b] = ov[b, a] = num / max(np.sqrt(norms[a] * norms[b]), 1e-300)
    matchings = list(_all_matchings(list(range(ne))))
    scores = []
    for pr in matchings:
        s = 0.0
        for a, b in pr:
            s += ov[a, b] - 0.05 * float(np.dot(ends[a][2], ends[b][2]))
        scores.append(s)
    order = np.argsort(scores)[::-1]
    if len(scores) > 1 and scores[int(order[0])] - scores[int(order[1])] < 0.1:
        warnings.warn(f"junction at {ell}: strand pairing ambiguous",
                      TangencyWarning)
    best = matchings[int(order[0])]
    for a, b in best:
        if -float(np.dot(ends[a][2], ends[b][2])) < 0.5:
            warnings.warn(f"sharp continuation through junction at {ell}",
                          TangencyWarning)

    # stitch pairs one at a time; a piece can take part in two pairs, so
    # pending ends are remapped onto the merged pieces as they are built
    def junction_filler(A, B):
        """Vertices tying A's last vertex to B's first, with their metadata."""
        if bridge_ctx is None:
            gj = 0.5 * (A.grads[-1] + B.grads[0])
            return (ell[None], A.bands[-1:], gj[None], np.array([-1], dtype=int))
        model, k2, spacing = bridge_ctx
        return _junction_bridge(model, A.points[-1], int(A.bands[-1]),
                                B.points[0], int(B.bands[0]), k2, spacing)

    pool = dict(enumerate(pieces))
    refs = {i: (ends[i][0], ends[i][1]) for i in range(len(ends))}
    fresh = len(pieces)
    for a, b in best:
        pa, ea = refs[a]
        pb, eb = refs[b]
        A = pool.pop(pa)
        if ea == 0:
            A = _reverse_piece(A)
        if pa == pb:
            # strand loops back to itself: the junction closes it
            jp, jb, jg, jf = junction_filler(A, A)
            pool[fresh] = _Piece(np.vstack([A.points, jp]),
                                 np.concatenate([A.bands, jb]),
                                 np.vstack([A.grads, jg]),
                                 np.concatenate([A.fix, jf]), closed=True)
            fresh += 1
            continue
        B = pool.pop(pb)
        if eb == -1:
            B = _reverse_piece(B)
        jp, jb, jg, jf = junction_filler(A, B)
        pool[fresh] = _Piece(np.vstack([A.points, jp, B.points]),
                             np.concatenate([A.bands, jb, B.bands]),
                             np.vstack([A.grads, jg, B.grads]),
                             np.concatenate([A.fix, jf, B.fix]),
                             closed=False)
        for k, (pk, _) in refs.items():
            if pk == pa:
                refs[k] = (fresh, 0)
            elif pk == pb:
                refs[k] = (fresh, -1)
        fresh += 1
    return list(pool.values())


def _reverse_piece(p: _Piece) -> _Piece:
    return _Piece(p.points[::-1].copy(), p.bands[::-1].copy(), p.grads[::-1].copy(),
                  p.fix[::-1].copy(), p.closed)


# ------------------------------------------------------------- extraction


def extract_level_set(grid: BandGrid, k2: float, *, newton_tol: float = DEFAULT_NEWTON_TOL,
                      max_step: float | None = None, grad_floor: float = DEFAULT_GRAD_FLOOR,
                      sigma0_tol: float = 1e-2, reconnect: bool = True,
                      avoided_gap: float | None = None,
                      min_vertices: int = 5) -> list[FermiCurve]:
    """Trace, polish and repair all level curves of the grid's bands at k2.

    An empty list (with a GapWarning) means the level sits in a spectral
    gap.  Sigma0Proximity is raised when the level passes through a point
    of vanishing group velocity, where curve geometry is meaningless.

    avoided_gap is the band splitting below which a narrowly avoided
    crossing is repaired like an exact one, so that curves continue onto
    the analytically continuing branch instead of turning with the sorted
    label; None picks a default proportional to the level, 0 disables it.
    """
    model = grid.model
    active = grid.active_bands(k2)
    if not active:
        gap = grid.gap_interval(k2)
        warnings.warn(f"level {k2:g} lies in a spectral gap {gap}", GapWarning)
        return []
    flags = detect_sigma0(grid, k2, tol=sigma0_tol)
    if flags:
        raise Sigma0Proximity(
            f"level {k2:g} passes near critical points: {[(f.ell.tolist(), f.band) for f in flags]}")

    G = grid.grid_n
    h = 1.0 / (G - 1)
    if max_step is None:
        max_step = 2.0 / G

    pieces: list[_Piece] = []
    for n in active:
        F = grid.lams[:, :, n] - k2
        pts_map, segments = _march_band(grid.axis, F)
        for chain, closed in _chain_segments(pts_map, segments):
            pts = np.array([pts_map[k] for k in chain])
            fix = np.array([_boundary_fix_of(k, G) for k in chain], dtype=int)
            if not closed:
                fix[1:-1] = -1        # only chain ends may slide on the box edge
            else:
                fix[:] = -1
            bands = np.full(len(pts), n, dtype=int)
            pts, grads, resid = polish_onto_level(model, pts, bands, k2,
                                                  newton_tol=newton_tol,
                                                  boundary_fix=fix, max_move=0.45 * h)
            keep = _dedupe_mask(pts, 1e-4 * h, closed)
            pieces.append(_Piece(pts[keep], bands[keep], grads[keep], fix[keep], closed))

    if avoided_gap is None:
        avoided_gap = 5e-3 * (1.0 + abs(k2))
    if reconnect and len(active) > 1:
        pieces = _reconnect_crossings(pieces, model, k2, h,
                                      gap_tol=1e-6 * (1.0 + abs(k2)),
                                      avoided_gap=avoided_gap)

    curves = []
    for p in pieces:
        if len(p.points) < min_vertices:
            warnings.warn(f"dropping a {len(p.points)}-vertex fragment", ShortCurveWarning)
            continue
        gnorm = np.linalg.norm(p.grads, axis=1)
        if gnorm.min() < grad_floor:
            raise Sigma0Proximity(
                f"group velocity {gnorm.min():.2e} below floor {grad_floor:g} on a traced curve")
        c = FermiCurve(points=p.points, bands=p.bands, grads=p.grads, k2=k2,
                       closed=p.closed, boundary_fix=p.fix)
        c = _subdivide(c, model, max_step, newton_tol)
        c = _orient_grad_left(c)
        curves.append(c)
    curves.sort(key=lambda c: (round(c.points[0, 0], 9), round(c.points[0, 1], 9),
                               int(c.bands[0])))
    return curves


def _dedupe_mask(pts: np.ndarray, tol: float, closed: bool) -> np.ndarray:
    keep = np.ones(len(pts), dtype=bool)
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep[1:][d < tol] = False
    if closed and keep.sum() > 1:
        if np.linalg.norm(pts[keep][-1] - pts[keep][0]) < tol:
            last = np.where(keep)[0][-1]
            keep[last] = False
    return keep


def _resolve_bands(model, pts, left, right, k2):
    """Band labels for points sampled between vertices.

    Where the bracketing labels disagree (the sample sits next to a
    junction vertex) the nearest-vertex label can belong to the other side
    of the crossing, so the band whose eigenvalue at the sample is closest
    to the level wins.
    """
    left = np.asarray(left, dtype=int)
    right = np.asarray(right, dtype=int)
    bands = left.copy()
    mix = left != right
    if mix.any():
        lams, _, _, _ = model.eval(np.atleast_2d(pts[mix]), need_grads=False)
        rows = np.arange(int(mix.sum()))
        da = np.abs(lams[rows, left[mix]] - k2)
        db = np.abs(lams[rows, right[mix]] - k2)
        bands[mix] = np.where(da <= db, left[mix], right[mix])
    return bands


def _subdivide(curve: FermiCurve, model, max_step: float, newton_tol: float) -> FermiCurve:
    """Insert polished midpoints until no chord exceeds max_step."""
    for _ in range(4):
        pts = curve.points
        nxt = np.roll(pts, -1, axis=0) if curve.closed else pts[1:]
        base = pts if curve.closed else pts[:-1]
        seg = np.linalg.norm(nxt - base, axis=1)
        too_long = seg > max_step
        if not too_long.any():
            return curve
        new_pts = []
        new_bands = []
        new_grads = []
        new_fix = []
        mids = []                 # (index in new arrays, right-vertex band)
        V = curve.n_vertices
        for i in range(V if curve.closed else V - 1):
            new_pts.append(pts[i])
            new_bands.append(curve.bands[i])
            new_grads.append(curve.grads[i])
            new_fix.append(curve.boundary_fix[i])
            if too_long[i]:
                mid = 0.5 * (pts[i] + pts[(i + 1) % V])
                mids.append((len(new_pts), curve.bands[(i + 1) % V]))
                new_pts.append(mid)
                new_bands.append(curve.bands[i])
                new_grads.append(curve.grads[i])
                fi, fj = curve.boundary_fix[i], curve.boundary_fix[(i + 1) % V]
                new_fix.append(fi if fi == fj else -1)
        if not curve.closed:
            new_pts.append(pts[-1])
            new_bands.append(curve.bands[-1])
            new_grads.append(curve.grads[-1])
            new_fix.append(curve.boundary_fix[-1])
        pts = np.array(new_pts)
        bands = np.array(new_bands, dtype=int)
        fix = np.array(new_fix, dtype=int)
        if mids:
            mi = np.array([m[0] for m in mids], dtype=int)
            bands[mi] = _resolve_bands(model, pts[mi], bands[mi],
                                       [m[1] for m in mids], curve.k2)
        pts, grads, _ = polish_onto_level(model, pts, bands, curve.k2,
                                          newton_tol=newton_tol, boundary_fix=fix)
        curve = FermiCurve(points=pts, bands=bands, grads=grads, k2=curve.k2,
                           closed=curve.closed, boundary_fix=fix)
    return curve


def _orient_grad_left(curve: FermiCurve) -> FermiCurve:
    """Reverse the vertex order if the gradient sits on the right."""
    pts = curve.points
    if curve.closed:
        tang = np.roll(pts, -1, axis=0) - pts
    else:
        tang = np.vstack([np.diff(pts, axis=0), pts[-1] - pts[-2]])
    cross = tang[:, 0] * curve.grads[:, 1] - tang[:, 1] * curve.grads[:, 0]
    if np.median(cross) < 0:
        return curve.reversed_copy()
    return curve


# --------------------------------------------------------------- unfolding


def unfold(curves: list[FermiCurve], match_tol: float = DEFAULT_MATCH_TOL) -> list[UnfoldedCurve]:
    """Assemble boundary-cut arcs into closed or lattice-periodic curves.

    Congruent endpoints (equal modulo Z^2) are glued with the appropriate
    integer translation; when several candidates coincide (a crossing on the
    box boundary) the straightest continuation wins.  Walking stops at the
    first endpoint congruent to the start: zero accumulated translation
    closes the curve, a nonzero one makes it periodic modulo the lattice.
    """
    out: list[UnfoldedCurve] = []
    open_arcs = []
    for c in curves:
        if c.closed:
            out.append(UnfoldedCurve(points=c.points.copy(), bands=c.bands.copy(),
                                     grads=c.grads.copy(), k2=c.k2, closed=True,
                                     boundary_fix=c.boundary_fix.copy(),
                                     period=np.zeros(2, dtype=int), arcs_used=1))
        else:
            open_arcs.append(c)

    unused = set(range(len(open_arcs)))

    def endpoint(i, which):
        c = open_arcs[i]
        return c.points[0] if which == 0 else c.points[-1]

    def end_tangent(i, which):
        """Direction pointing out of the arc at the given end."""
        c = open_arcs[i]
        q = c.points[0] - c.points[min(4, c.n_vertices - 1)] if which == 0 \
            else c.points[-1] - c.points[-min(5, c.n_vertices)]
        n = np.linalg.norm(q)
        return q / n if n > 0 else q

    while unused:
        start = min(unused)
        unused.discard(start)
        base = open_arcs[start]
        chain_pts = [base.points]
        chain_bands = [base.bands]
        chain_grads = [base.grads]
        chain_fix = [base.boundary_fix]
        arcs_used = 1
        start_pt = base.points[0]
        cur_pt = base.points[-1]
        cur_dir = end_tangent(start, 1)

        for _ in range(10 * max(1, len(open_arcs))):
            dstart = cur_pt - start_pt
            if np.abs(dstart - np.round(dstart)).max() < match_tol:
                period = np.round(dstart).astype(int)
                pts = np.vstack(chain_pts)
                bands = np.concatenate(chain_bands)
                grads = np.vstack(chain_grads)
                # edge pins lose meaning once arcs are translated; keep only
                # the frozen bridge vertices
                fix = np.where(np.concatenate(chain_fix) == 2, 2, -1)
                closed = bool((period == 0).all())
                if closed and np.linalg.norm(pts[-1] - pts[0]) < 16 * match_tol:
                    pts, bands, grads, fix = pts[:-1], bands[:-1], grads[:-1], fix[:-1]
                out.append(UnfoldedCurve(points=pts, bands=bands, grads=grads,
                                         k2=base.k2, closed=closed, boundary_fix=fix,
                                         period=period, arcs_used=arcs_used))
                break
            cands = []
            for i in sorted(unused):
                for which in (0, 1):
                    d = cur_pt - endpoint(i, which)
                    if np.abs(d - np.round(d)).max() < match_tol:
                        align = -float(np.dot(cur_dir, end_tangent(i, which)))
                        cands.append((align, i, which, np.round(d)))
            if not cands:
                raise UnmatchedEndpoint(
                    f"no congruent endpoint for {cur_pt} (start {start_pt})")
            cands.sort(key=lambda t: (-t[0], t[1], t[2]))
            if len(cands) > 1 and cands[0][0] - cands[1][0] < 0.05:
                warnings.warn(f"ambiguous continuation at {cur_pt}", TangencyWarning)
            _, i, which, shift = cands[0]
            unused.discard(i)
            arc = open_arcs[i] if which == 0 else open_arcs[i].reversed_copy()
            chain_pts.append(arc.points[1:] + shift)
            chain_bands.append(arc.bands[1:])
            chain_grads.append(arc.grads[1:])
            chain_fix.append(arc.boundary_fix[1:])
            arcs_used += 1
            cur_pt = arc.points[-1] + shift
            cur_dir = end_tangent(i, 1) if which == 0 else end_tangent(i, 0)
        else:
            raise UnmatchedEndpoint("unfolding did not terminate")

    for c in out:
        oriented = _orient_grad_left(c)
        c.points, c.bands, c.grads = oriented.points, oriented.bands, oriented.grads
        c.boundary_fix = oriented.boundary_fix
        if not c.closed:
            c.period = np.round(c.points[-1] - c.points[0]).astype(int)
    out.sort(key=lambda c: (round(c.points[0, 0], 9), round(c.points[0, 1], 9)))
    _assign_families(out, match_tol)
    return out


def _assign_families(curves: list[UnfoldedCurve], tol: float) -> None:
    """Union curves that share a vertex modulo Z^2.

    Rejoined branches both carry the junction vertex where they cross, so
    vertex sharing identifies the connected components of the level set.
    """
    parent = list(range(len(curves)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    folded = [np.mod(c.points, 1.0) for c in curves]
    trees = [cKDTree(f, boxsize=1.0) for f in folded]
    for a in range(len(curves)):
        for b in range(a + 1, len(curves)):
            d, _ = trees[b].query(folded[a], k=1)
            if d.min() < tol:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    labels: dict[int, int] = {}
    for i, c in enumerate(curves):
        r = find(i)
        if r not in labels:
            labels[r] = len(labels)
        c.family = labels[r]


# ---------------------------------------------------- level continuation


def continue_in_lambda(curve: FermiCurve, model, lam_target: float, steps: int = 8,
                       grad_floor: float = DEFAULT_GRAD_FLOOR,
                       newton_tol: float = DEFAULT_NEWTON_TOL) -> FermiCurve:
    """Transport a level curve to a nearby level along the gradient flow.

    Integrates d ell / d lam = grad / |grad|^2 with classical RK4 and a
    final Newton projection; each vertex keeps its band by eigenvalue
    continuity.  The flow is orthogonal to the level curves, so vertex
    parameterization transports consistently.
    """
    pts = curve.points.copy()
    bands = curve.bands.copy()
    lam0 = curve.k2
    dlam = (lam_target - lam0) / steps

    def rhs(p, b, lam_ref):
        lams, grads, _, _ = model.eval(p, need_grads=True)
        # re-anchor band labels by eigenvalue continuity
        bb = np.argmin(np.abs(lams - lam_ref), axis=1)
        g = grads[np.arange(len(p)), bb]
        n2 = (g ** 2).sum(1)
        if np.sqrt(n2.min()) < grad_floor:
            raise Sigma0Proximity(f"flow stalled: |grad| {np.sqrt(n2.min()):.2e}")
        return g / n2[:, None], bb

    lam = lam0
    for _ in range(steps):
        k1, bands = rhs(pts, bands, lam)
        k2v, _ = rhs(pts + 0.5 * dlam * k1, bands, lam + 0.5 * dlam)
        k3v, _ = rhs(pts + 0.5 * dlam * k2v, bands, lam + 0.5 * dlam)
        k4v, _ = rhs(pts + dlam * k3v, bands, lam + dlam)
        pts = pts + (dlam / 6.0) * (k1 + 2 * k2v + 2 * k3v + k4v)
        lam += dlam

    lams, _, _, _ = model.eval(pts, need_grads=False)
    bands = np.argmin(np.abs(lams - lam_target), axis=1)
    pts, grads, _ = polish_onto_level(model, pts, bands, lam_target, newton_tol=newton_tol)
    return FermiCurve(points=pts, bands=bands, grads=grads, k2=lam_target,
                      closed=curve.closed)


# ------------------------------------------------------ spline geometry


class CurveGeometry:
    """Spline parameterization of a traced curve with curvature access.

    The parameterization follows cumulative chord length scaled to [0, 1];
    all derived quantities (arc length, signed curvature, tangents) are
    parameterization-invariant.  Vertices are Newton-polished well below
    discretization error, so the default fit interpolates them; smooth > 0
    (rms vertex deviation in units of the mean spacing) is only for noisy
    input and biases curvature, so point quantities should then come from
    local_frame probes of the gradient field instead.
    """

    def __init__(self, curve: FermiCurve, smooth: float = DEFAULT_SMOOTH):
        self.curve = curve
        self.closed = curve.closed
        pts = curve.points
        if self.closed:
            data = np.vstack([pts, pts[:1]])
        else:
            data = pts
        d = np.linalg.norm(np.diff(data, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(d)])
        self.chord_total = float(s[-1])
        u = s / self.chord_total
        h_mean = self.chord_total / max(1, len(d))
        budget = len(u) * (smooth * h_mean) ** 2
        self.tck, _ = interpolate.splprep(list(data.T), u=u, s=budget, k=3,
                                          per=1 if self.closed else 0)
        self.u_vertices = u[:-1] if self.closed else u

    # -- raw spline evaluations

    def point(self, u):
        x, y = interpolate.splev(np.mod(u, 1.0) if self.closed else u, self.tck)
        return np.stack([x, y], axis=-1)

    def _d(self, u, order):
        x, y = interpolate.splev(np.mod(u, 1.0) if self.closed else u, self.tck, der=order)
        return np.stack([x, y], axis=-1)

    def speed(self, u):
        return np.linalg.norm(self._d(u, 1), axis=-1)

    def tangent(self, u):
        d1 = self._d(u, 1)
        return d1 / np.linalg.norm(d1, axis=-1, keepdims=True)

    def kappa(self, u):
        d1 = self._d(u, 1)
        d2 = self._d(u, 2)
        num = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        den = (d1[..., 0] ** 2 + d1[..., 1] ** 2) ** 1.5
        return num / den

    def dkappa_ds(self, u, du: float = 1e-5):
        um = np.asarray(u) - du
        up = np.asarray(u) + du
        return (self.kappa(up) - self.kappa(um)) / ((2 * du) * self.speed(u))

    def arc_length(self, n_samples: int = 4096) -> float:
        us = np.linspace(0.0, 1.0, n_samples)
        return float(np.trapz(self.speed(us), us))

    def total_turning(self, n_samples: int = 8192) -> float:
        """Integral of signed curvature over arc length (Gauss-Bonnet check)."""
        us = np.linspace(0.0, 1.0, n_samples)
        return float(np.trapz(self.kappa(us) * self.speed(us), us))

    def vertex_kappa(self) -> np.ndarray:
        return self.kappa(self.u_vertices)

    def median_abs_kappa(self) -> float:
        return float(np.median(np.abs(self.vertex_kappa())))

    def band_at(self, u) -> int:
        return int(self.bands_at(np.atleast_1d(u))[0])

    def bands_at(self, us) -> np.ndarray:
        """Band labels at arbitrary parameters, from the nearest vertex."""
        us = np.mod(us, 1.0) if self.closed else np.asarray(us, dtype=float)
        uv = self.u_vertices
        j = np.clip(np.searchsorted(uv, us), 1, len(uv) - 1)
        left_closer = (us - uv[j - 1]) < (uv[j] - us)
        idx = np.where(left_closer, j - 1, j)
        return self.curve.bands[idx]


def refine_curve(curve: FermiCurve, model, target_spacing: float,
                 newton_tol: float = DEFAULT_NEWTON_TOL) -> FermiCurve:
    """Resample a curve to roughly uniform spacing and re-polish."""
    geom = CurveGeometry(curve, smooth=0.0)
    length = geom.arc_length()
    n = max(curve.n_vertices, int(np.ceil(length / target_spacing)))
    if curve.closed:
        us = np.arange(n) / n
    else:
        us = np.linspace(0.0, 1.0, n)
    pts = geom.point(us)
    uv = geom.u_vertices
    j = np.clip(np.searchsorted(uv, us), 1, len(uv) - 1)
    bands = _resolve_bands(model, pts, curve.bands[j - 1], curve.bands[j],
                           curve.k2)
    fix = np.full(n, -1, dtype=int)
    # samples bracketed by a frozen bridge vertex stay on the spline: the
    # bridge does not lie on either sorted band's level, so polishing there
    # would veer off onto one of the hyperbola flanks
    frozen = (curve.boundary_fix[j - 1] == 2) | (curve.boundary_fix[j] == 2)
    fix[frozen] = 2
    if not curve.closed:
        # keep endpoints where they are: box-edge arcs stay pinned to the
        # edge, periodic unfolded curves keep their endpoints congruent
        if isinstance(curve, UnfoldedCurve):
            fix[0] = fix[-1] = 2
        else:
            fix[0] = curve.boundary_fix[0]
            fix[-1] = curve.boundary_fix[-1]
        pts[0] = curve.points[0]
        pts[-1] = curve.points[-1]
    pts, grads, _ = polish_onto_level(model, pts, bands, curve.k2,
                                      newton_tol=newton_tol, boundary_fix=fix)
    cls = type(curve)
    kwargs = {}
    if isinstance(curve, UnfoldedCurve):
        kwargs = dict(period=curve.period, arcs_used=curve.arcs_used,
                      family=curve.family)
    return cls(points=pts, bands=bands, grads=grads, k2=curve.k2,
               closed=curve.closed, boundary_fix=fix, **kwargs)


# ------------------------------------------------- exact local curve data
#
# The model's gradient field fixes the unit tangent exactly at any point of
# the level curve: with the gradient kept on the left, T = R_{-90} grad_hat.
# Point quantities (curvature and its arc derivatives, stationary and
# inflection locations) therefore never need spline second derivatives;
# they come from short polished walks through the exact tangent field.


def tangent_field(model, ells, bands):
    """Exact unit tangents of the level curves through the given points."""
    ells = np.atleast_2d(ells)
    bands = np.atleast_1d(bands)
    _, grads, _, _ = model.eval(ells, need_grads=True)
    g = grads[np.arange(len(ells)), bands]
    n = np.linalg.norm(g, axis=1, keepdims=True)
    return np.stack([g[:, 1], -g[:, 0]], axis=1) / n, g


@dataclass
class LocalFrame:
    """Arc-length Taylor data of a level curve at one point."""

    point: np.ndarray
    band: int
    tangent: np.ndarray
    grad: np.ndarray
    kappa: float
    kappa_prime: float
    kappa_second: float


def _march_lockstep(model, pts, bands, k2, n_steps, step, newton_tol):
    """March every point n_steps of a common signed arc step, with polish.

    Returns (stations (P, n_steps, 2), arc offsets (P, n_steps)) counted
    from the starting points.
    """
    P = len(pts)
    stations = np.zeros((P, n_steps, 2))
    svals = np.zeros((P, n_steps))
    s = np.zeros(P)
    cur = np.array(pts, dtype=float)
    for j in range(n_steps):
        t, _ = tangent_field(model, cur, bands)
        trial = cur + step * t
        nxt, _, _ = polish_onto_level(model, trial, bands, k2, newton_tol=newton_tol)
        s = s + np.sign(step) * np.linalg.norm(nxt - cur, axis=1)
        cur = nxt
        stations[:, j] = cur
        svals[:, j] = s
    return stations, svals


def local_frames(model, ells, bands, k2, delta: float = 2e-4, half: int = 4,
                 degree: int = 4, newton_tol: float = DEFAULT_NEWTON_TOL) -> list[LocalFrame]:
    """Curvature and its arc derivatives from the exact tangent field.

    For each input point, fits the exact tangent angle against arc length
    over 2*half+1 polished stations spaced delta apart; the polynomial
    derivatives at the center give kappa, kappa', kappa'' far below any
    spline's accuracy.  All points march in lockstep, so the model is only
    evaluated on batches.
    """
    ells = np.atleast_2d(np.asarray(ells, dtype=float))
    bands = np.atleast_1d(np.asarray(bands, dtype=int))
    P = len(ells)
    degree = min(degree, 2 * half)
    base, _, _ = polish_onto_level(model, ells, bands, k2, newton_tol=newton_tol)
    fwd_pts, fwd_s = _march_lockstep(model, base, bands, k2, half, +delta, newton_tol)
    bwd_pts, bwd_s = _march_lockstep(model, base, bands, k2, half, -delta, newton_tol)
    pts = np.concatenate([bwd_pts[:, ::-1], base[:, None], fwd_pts], axis=1)
    svals = np.concatenate([bwd_s[:, ::-1], np.zeros((P, 1)), fwd_s], axis=1)
    flat = pts.reshape(-1, 2)
    flat_bands = np.repeat(bands, 2 * half + 1)
    tans, grads = tangent_field(model, flat, flat_bands)
    tans = tans.reshape(P, 2 * half + 1, 2)
    grads = grads.reshape(P, 2 * half + 1, 2)
    phi = np.unwrap(np.arctan2(tans[..., 1], tans[..., 0]), axis=1)

    frames = []
    for i in range(P):
        coeffs = np.polynomial.polynomial.polyfit(svals[i], phi[i], degree)
        kap = float(coeffs[1]) if degree >= 1 else 0.0
        # chord offsets equal arc length to O((kappa*delta)^2); one correction
        coeffs = np.polynomial.polynomial.polyfit(
            svals[i] * (1.0 + (kap * delta) ** 2 / 24.0), phi[i], degree)
        kap = float(coeffs[1]) if degree >= 1 else 0.0
        kp = float(2.0 * coeffs[2]) if degree >= 2 else 0.0
        kpp = float(6.0 * coeffs[3]) if degree >= 3 else 0.0
        frames.append(LocalFrame(point=base[i], band=int(bands[i]),
                                 tangent=tans[i, half], grad=grads[i, half],
                                 kappa=kap, kappa_prime=kp, kappa_second=kpp))
    return frames


def local_frame(model, ell, band, k2, **kw) -> LocalFrame:
    return local_frames(model, np.asarray(ell, float)[None], [band], k2, **kw)[0]


def polish_stationary_batch(model, ells, bands, k2, xhats, iters: int = 12,
                            newton_tol: float = DEFAULT_NEWTON_TOL,
                            tol: float = 1e-12):
    """Newton along the curve for points whose tangent is normal to xhat.

    Vectorized over (point, direction) pairs; the slope d(t.xhat)/ds =
    kappa (n.xhat) uses curvature probed once at the start, which Newton
    tolerates since it only needs the slope approximately.
    """
    pts = np.atleast_2d(np.asarray(ells, dtype=float)).copy()
    bands = np.atleast_1d(np.asarray(bands, dtype=int))
    xhats = np.atleast_2d(np.asarray(xhats, dtype=float))
    pts, _, _ = polish_onto_level(model, pts, bands, k2, newton_tol=newton_tol)
    frames = local_frames(model, pts, bands, k2, half=1, degree=2,
                          newton_tol=newton_tol)
    kappas = np.array([f.kappa for f in frames])
    for _ in range(iters):
        t, _ = tangent_field(model, pts, bands)
        f = np.einsum("ij,ij->i", t, xhats)
        if np.abs(f).max() < tol:
            break
        n = np.stack([-t[:, 1], t[:, 0]], axis=1)
        slope = kappas * np.einsum("ij,ij->i", n, xhats)
        slope = np.where(np.abs(slope) < 1e-14, np.inf, slope)
        ds = np.clip(-f / slope, -5e-4, 5e-4)
        trial = pts + ds[:, None] * t
        pts, _, _ = polish_onto_level(model, trial, bands, k2, newton_tol=newton_tol)
    return pts


def polish_inflection(model, ell, band, k2, iters: int = 10,
                      newton_tol: float = DEFAULT_NEWTON_TOL):
    """Newton along the curve for a zero of the signed curvature."""
    p = np.asarray(ell, dtype=float)
    for _ in range(iters):
        frame = local_frame(model, p, band, k2, newton_tol=newton_tol)
        p = frame.point
        if frame.kappa_prime == 0.0 or abs(frame.kappa / frame.kappa_prime) < 1e-13:
            break
        ds = float(np.clip(-frame.kappa / frame.kappa_prime, -0.005, 0.005))
        t, _ = tangent_field(model, p[None], [band])
        trial = p + ds * t[0]
        q, _, _ = polish_onto_level(model, trial[None], [band], k2,
                                    newton_tol=newton_tol)
        p = q[0]
    return p


# ----------------------------------------- inflections and stationary points


@dataclass
class InflectionPoint:
    curve_id: int
    u: float
    ell: np.ndarray
    band: int
    theta: float                  # direction angle of the band gradient
    kappa_prime: float            # d kappa / d arclength
    grad: np.ndarray
    degenerate: bool


@dataclass
class StationaryPoint:
    curve_id: int
    u: float
    ell: np.ndarray
    band: int
    kappa: float
    grad: np.ndarray
    outgoing: bool
    interval_id: int
    near_inflection: bool


def inflection_points(geom: CurveGeometry, model, curve_id: int = 0,
                      degeneracy_tol: float = 1e-3,
                      kappa_tol: float = 1e-6) -> list[InflectionPoint]:
    """Roots of the signed curvature along the curve.

    The spline brackets the roots; the exact tangent field polishes them
    and supplies kappa' there.  Bracketed roots whose polish does not
    converge to |kappa| < kappa_tol are discarded as spline aliasing.
    """
    us = _dense_params(geom)
    ks = geom.kappa(us)
    roots = _bracketed_roots(geom.kappa, us, ks, geom.closed)
    out = []
    k2 = geom.curve.k2
    for u0 in roots:
        band = geom.band_at(u0)
        ell = polish_inflection(model, geom.point(u0), band, k2)
        # spline ringing around sharp features brackets the same root
        # several times; polished locations identify the duplicates
        if any(p.band == band and np.linalg.norm(p.ell - ell) < 1e-5
               for p in out):
            continue
        frame = local_frame(model, ell, band, k2)
        if abs(frame.kappa) > kappa_tol:
            # Newton did not land on a curvature zero: the spline root was
            # an aliasing artifact of under-resolved fine structure, with
            # no true inflection nearby
            continue
        g = frame.grad
        kp = frame.kappa_prime
        out.append(InflectionPoint(curve_id=curve_id, u=float(u0), ell=frame.point,
                                   band=band, theta=float(np.arctan2(g[1], g[0])),
                                   kappa_prime=kp, grad=g,
                                   degenerate=abs(kp) < degeneracy_tol))
    out.sort(key=lambda p: p.u)
    return out


def stationary_points(geom: CurveGeometry, theta: float, model, curve_id: int = 0,
                      inflections: list[InflectionPoint] | None = None,
                      airy_band_fraction: float = AIRY_BAND_FRACTION,
                      tangency_tol: float = 1e-6) -> list[StationaryPoint]:
    """Points where the phase ell . x_hat is stationary along the curve.

    At a caustic direction the merging pair coalesces into a double root
    of the alignment, which touches zero without a sign change; such
    tangencies are detected separately and reported with their (tiny)
    polished curvature so the divergence of the stationary-phase
    coefficient is visible to callers.
    """
    xhat = np.array([np.cos(theta), np.sin(theta)])
    us = _dense_params(geom)

    def fn(u):
        return geom.tangent(u) @ xhat

    vals = geom.tangent(us) @ xhat
    roots = _bracketed_roots(fn, us, vals, geom.closed)
    tangs = _alignment_tangencies(geom, model, xhat, us, vals, roots, tangency_tol)
    if not roots and not tangs:
        return []
    med_k = geom.median_abs_kappa()
    inf_us = sorted(p.u for p in inflections) if inflections else []
    k2 = geom.curve.k2
    out = []
    if roots:
        bands = [geom.band_at(u0) for u0 in roots]
        seeds = geom.point(np.array(roots))
        pts = polish_stationary_batch(model, seeds, bands, k2,
                                      np.tile(xhat, (len(roots), 1)))
        frames = local_frames(model, pts, bands, k2, half=2, degree=2)
        for u0, frame in zip(roots, frames):
            # distinct brackets can polish onto one point where the spline
            # tangent wiggles through an unresolved sheet crossing
            if any(np.linalg.norm(frame.point - q.ell) < 1e-5 for q in out):
                continue
            interval = _interval_index(u0, inf_us, geom.closed)
            out.append(StationaryPoint(curve_id=curve_id, u=float(u0), ell=frame.point,
                                       band=frame.band, kappa=frame.kappa, grad=frame.grad,
                                       outgoing=bool(frame.grad @ xhat > 0.0),
                                       interval_id=interval,
                                       near_inflection=abs(frame.kappa) < airy_band_fraction * med_k))
    for u0, frame in tangs:
        if any(np.linalg.norm(frame.point - q.ell) < 1e-5 for q in out):
            continue
        interval = _interval_index(u0, inf_us, geom.closed)
        out.append(StationaryPoint(curve_id=curve_id, u=float(u0), ell=frame.point,
                                   band=frame.band, kappa=frame.kappa, grad=frame.grad,
                                   outgoing=bool(frame.grad @ xhat > 0.0),
                                   interval_id=interval, near_inflection=True))
    out.sort(key=lambda p: p.u)
    return out


def _alignment_tangencies(geom: CurveGeometry, model, xhat, us, vals, roots,
                          tol: float) -> list[tuple[float, LocalFrame]]:
    """Tangential double roots of the alignment tangent . x_hat.

    Alignment extrema within tol of zero sit on a curvature zero (the
    alignment derivative is kappa times the normal overlap), so they are
    polished with the curvature Newton; survivors are genuine tangencies.
    """
    n = len(vals)
    if n < 3:
        return []
    k2 = geom.curve.k2
    out = []
    rng = range(n) if geom.closed else range(1, n - 1)
    for i in rng:
        fm, f0, fp = vals[i - 1], vals[i], vals[(i + 1) % n]
        if (f0 - fm) * (fp - f0) >= 0.0 or abs(f0) > tol:
            continue
        u0 = float(us[i])
        if any(min(abs(u0 - r), 1.0 - abs(u0 - r)) < 1e-5 for r in roots):
            continue
        band = geom.band_at(u0)
        ell = polish_inflection(model, geom.point(u0), band, k2)
        frame = local_frame(model, ell, band, k2)
        if abs(frame.kappa) > 1e-6 or abs(frame.tangent @ xhat) > 1e-4:
            continue
        if any(np.linalg.norm(frame.point - fr.point) < 1e-6 for _, fr in out):
            continue
        out.append((u0, frame))
    return out


def _dense_params(geom: CurveGeometry, per_vertex: int = 2) -> np.ndarray:
    base = geom.u_vertices
    refined = [base]
    for extra in range(1, per_vertex):
        shift = extra / per_vertex
        mids = base + shift * np.diff(np.concatenate([base, [1.0 if geom.closed else base[-1]]]))
        refined.append(mids[:-1] if not geom.closed else mids)
    us = np.unique(np.concatenate(refined))
    return us[(us >= 0.0) & (us <= 1.0)]


def _bracketed_roots(fn, us, vals, closed) -> list[float]:
    roots = []
    pairs = list(zip(us[:-1], us[1:], vals[:-1], vals[1:]))
    if closed:
        pairs.append((us[-1], us[-1] + (1.0 - us[-1]) + us[0], vals[-1], vals[0]))
    for ua, ub, fa, fb in pairs:
        if fa == 0.0:
            roots.append(float(ua))
        elif fa * fb < 0.0:
            r = brentq(lambda u: float(np.atleast_1d(fn(u))[0]), ua, ub, xtol=1e-13)
            roots.append(float(np.mod(r, 1.0) if closed else r))
    # merge duplicates (root exactly at a sample point)
    roots = sorted(roots)
    merged = []
    for r in roots:
        if merged and abs(r - merged[-1]) < 1e-9:
            continue
        merged.append(r)
    return merged


def _interval_index(u: float, inf_us: list[float], closed: bool) -> int:
    """Index of the inflection-bounded segment containing parameter u.

    Closed curves have len(inf_us) cyclic segments (the stretch past the
    last inflection wraps around to segment 0); open curves have one more.
    """
    if not inf_us:
        return 0
    i = bisect.bisect_right(inf_us, u)
    return i % len(inf_us) if closed else i
