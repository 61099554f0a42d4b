"""Shifted cell operator in a plane-wave basis.

The operator -beta^{-1}(div + i ell) alpha (grad + i ell) on the periodic
cell is discretized with the orthonormal waves e^{i m.x}/(2 pi), |m|_inf <= N.
Its sesquilinear form gives the Hermitian pencil

    A[m, m'] = alpha_hat(m - m') ((m' + ell) . (m + ell)),
    M[m, m'] = beta_hat(m - m'),

and bands are the generalized eigenvalues in ascending order.  Eigenvectors
are beta-orthonormal (V^H M V = I) with a deterministic phase: the largest
coefficient in modulus is made real positive.

Group velocities come from first-order perturbation of the pencil in ell
(the quadratic form of dA/dell on the eigenvector), which avoids finite
differences entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .cell import Medium
from .errors import DegenerateBand, EigenSolverFailure

DEFAULT_N_CUT = 8


def fold_ell(ells: np.ndarray) -> np.ndarray:
    """Canonical representative of ell modulo Z^2, in [-1/2, 1/2)^2.

    Band quantities are periodic in ell; evaluating at the centered
    representative keeps the square truncation window optimally placed and
    makes the periodicity exact in floating point.
    """
    return ((np.asarray(ells, dtype=float) + 0.5) % 1.0) - 0.5


# -------------------------------------------------------------------- basis


class PlaneWaveBasis:
    """Index bookkeeping for the square truncation |m|_inf <= n_cut."""

    def __init__(self, n_cut: int):
        self.n_cut = int(n_cut)
        r = np.arange(-self.n_cut, self.n_cut + 1)
        M1, M2 = np.meshgrid(r, r, indexing="ij")
        self.members = np.stack([M1.ravel(), M2.ravel()], axis=1)  # (dim, 2)
        self.dim = self.members.shape[0]
        d = self.members[:, None, :] - self.members[None, :, :]
        self._dm_index = (d[..., 0] + 2 * self.n_cut, d[..., 1] + 2 * self.n_cut)
        self._mdotm = (self.members[:, None, :] * self.members[None, :, :]).sum(-1).astype(float)
        self._msum = (self.members[:, None, :] + self.members[None, :, :]).astype(float)

    def lookup(self, coef_table_padded: np.ndarray) -> np.ndarray:
        """Matrix C[i, j] = c_hat(m_i - m_j) from a padded coefficient table."""
        return coef_table_padded[self._dm_index]

    def phases(self, x: np.ndarray) -> np.ndarray:
        """Normalized plane-wave values e^{i m.x}/(2 pi) at x of shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        ph = np.exp(1j * (x[..., None, 0] * self.members[:, 0]
                          + x[..., None, 1] * self.members[:, 1]))
        return ph / (2.0 * np.pi)


@dataclass
class BlochMatrixPair:
    A: np.ndarray
    M: np.ndarray
    ell: np.ndarray
    basis: PlaneWaveBasis


@dataclass
class BandSystem:
    """Eigendata of the pencil at one quasimomentum."""

    ell: np.ndarray
    lams: np.ndarray              # (n_bands,), ascending
    vectors: np.ndarray           # (dim, n_bands), beta-orthonormal columns
    basis: PlaneWaveBasis
    lam_next: float = np.inf      # first eigenvalue beyond the kept bands

    def eigenfunction_values(self, x: np.ndarray, n: int) -> np.ndarray:
        """Cell eigenfunction e_n evaluated at x of shape (..., 2)."""
        return self.basis.phases(x) @ self.vectors[:, n]


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-modulus entry is real positive."""
    idx = np.argmax(np.abs(vectors), axis=-2)
    take = np.take_along_axis(vectors, idx[..., None, :], axis=-2)
    phase = take / np.where(np.abs(take) == 0.0, 1.0, np.abs(take))
    return vectors * np.conj(phase)


def assemble(medium: Medium, ell, basis: PlaneWaveBasis) -> BlochMatrixPair:
    """Hermitian matrix pair (A, M) of the shifted operator at one ell."""
    ell = np.asarray(ell, dtype=float)
    alpha = basis.lookup(medium.alpha.padded_table(2 * basis.n_cut))
    beta = basis.lookup(medium.beta.padded_table(2 * basis.n_cut))
    kpl = basis.members + ell                       # m + ell, (dim, 2)
    dots = kpl @ kpl.T                              # (m' + ell).(m + ell)
    A = alpha * dots
    return BlochMatrixPair(A=A, M=beta, ell=ell, basis=basis)


def solve_bands(pair: BlochMatrixPair, n_bands: int) -> BandSystem:
    """Lowest n_bands generalized eigenpairs, beta-orthonormal, phase-fixed."""
    try:
        lams, vecs = scipy.linalg.eigh(pair.A, pair.M)
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        raise EigenSolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(lams)):
        raise EigenSolverFailure("non-finite eigenvalues")
    lam_next = float(lams[n_bands]) if n_bands < len(lams) else np.inf
    vecs = _fix_phases(vecs[:, :n_bands])
    return BandSystem(ell=pair.ell, lams=lams[:n_bands].copy(), vectors=vecs,
                      basis=pair.basis, lam_next=lam_next)


def group_velocity(system: BandSystem, medium: Medium, n: int,
                   gap_tol: float | None = None) -> np.ndarray:
    """Gradient of band n at the system's ell by pencil perturbation.

    Requires band n simple: the gap to both neighbors must exceed gap_tol
    (default 1e-8 times the eigenvalue scale).
    """
    lam = system.lams[n]
    if gap_tol is None:
        gap_tol = 1e-8 * max(1.0, abs(lam))
    neighbors = []
    if n > 0:
        neighbors.append(lam - system.lams[n - 1])
    if n + 1 < len(system.lams):
        neighbors.append(system.lams[n + 1] - lam)
    elif np.isfinite(system.lam_next):
        neighbors.append(system.lam_next - lam)
    if neighbors and min(neighbors) < gap_tol:
        raise DegenerateBand(
            f"band {n} gap {min(neighbors):.3e} below tol {gap_tol:.3e} at ell={system.ell}")
    basis = system.basis
    alpha = basis.lookup(medium.alpha.padded_table(2 * basis.n_cut))
    v = system.vectors[:, n]
    out = np.empty(2)
    av = alpha @ v
    for j in range(2):
        sj = alpha * basis._msum[..., j]
        out[j] = np.real(np.vdot(v, sj @ v)) + 2.0 * system.ell[j] * np.real(np.vdot(v, av))
    return out


# --------------------------------------------------------- batched evaluator


class BlochBandModel:
    """Vectorized band evaluation for a fixed medium and truncation.

    The mass matrix does not depend on ell, so the Cholesky reduction to a
    standard Hermitian problem is precomputed once.  Media with beta = 1
    skip the reduction; constant-alpha media skip the dense solve entirely
    (the pencil is diagonal in the plane-wave basis).
    """

    def __init__(self, medium: Medium, n_cut: int = DEFAULT_N_CUT, n_bands: int = 8):
        self.medium = medium
        self.basis = PlaneWaveBasis(n_cut)
        self.n_bands = int(n_bands)
        self.alpha_mat = self.basis.lookup(medium.alpha.padded_table(2 * n_cut))
        self.beta_mat = self.basis.lookup(medium.beta.padded_table(2 * n_cut))
        self._alpha_diagonal = _is_scaled_identity(self.alpha_mat)
        self._beta_diagonal = _is_scaled_identity(self.beta_mat)
        self._beta_scale = float(self.beta_mat[0, 0].real)
        self._diagonal = self._alpha_diagonal and self._beta_diagonal
        if self._beta_diagonal:
            self._linv = None
        else:
            try:
                chol = scipy.linalg.cholesky(self.beta_mat, lower=True)
            except scipy.linalg.LinAlgError as exc:
                raise EigenSolverFailure(f"mass matrix not positive definite: {exc}") from exc
            self._linv = scipy.linalg.solve_triangular(
                chol, np.eye(self.basis.dim, dtype=complex), lower=True)

    # -- core batched solve

    def solve_many(self, ells: np.ndarray, need_vectors: bool = True,
                   batch: int = 512) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
        """Eigendata at many quasimomenta.

        Returns (lams (L, n_bands), vectors (L, dim, n_bands) or None,
        lam_next (L,)).
        """
        ells = fold_ell(np.atleast_2d(ells))
        L = ells.shape[0]
        nb = self.n_bands
        lams = np.empty((L, nb))
        lam_next = np.empty(L)
        vecs = np.empty((L, self.basis.dim, nb), dtype=complex) if need_vectors else None
        for start in range(0, L, batch):
            sl = slice(start, min(start + batch, L))
            w, v, nxt = self._solve_block(ells[sl], need_vectors)
            lams[sl] = w
            lam_next[sl] = nxt
            if need_vectors:
                vecs[sl] = v
        return lams, vecs, lam_next

    def _solve_block(self, ells, need_vectors):
        nb = self.n_bands
        if self._diagonal:
            return self._solve_diagonal(ells, need_vectors)
        A = self._assemble_block(ells)
        if self._linv is not None:
            A = self._linv @ A @ self._linv.conj().T
        elif self._beta_scale != 1.0:
            A = A / self._beta_scale
        try:
            w, v = np.linalg.eigh(A)
        except np.linalg.LinAlgError as exc:
            raise EigenSolverFailure(str(exc)) from exc
        if not np.all(np.isfinite(w)):
            raise EigenSolverFailure("non-finite eigenvalues in batch")
        lam_next = w[:, nb] if nb < w.shape[1] else np.full(len(w), np.inf)
        if not need_vectors:
            return w[:, :nb], None, lam_next
        v = v[:, :, :nb]
        if self._linv is not None:
            v = self._linv.conj().T @ v
        elif self._beta_scale != 1.0:
            v = v / np.sqrt(self._beta_scale)
        return w[:, :nb], _fix_phases(v), lam_next

    def _assemble_block(self, ells):
        basis = self.basis
        dot = (basis._mdotm[None]
               + ells[:, None, None, 0] * basis._msum[None, ..., 0]
               + ells[:, None, None, 1] * basis._msum[None, ..., 1]
               + (ells ** 2).sum(1)[:, None, None])
        return self.alpha_mat[None] * dot

    def _solve_diagonal(self, ells, need_vectors):
        # constant coefficients: eigenpairs are single plane waves
        nb = self.n_bands
        a0 = float(self.alpha_mat[0, 0].real)
        b0 = self._beta_scale
        kpl = self.basis.members[None] + ells[:, None, :]
        diag = (a0 / b0) * (kpl ** 2).sum(-1)                      # (L, dim)
        order = np.argsort(diag, axis=1, kind="stable")
        w = np.take_along_axis(diag, order, axis=1)
        lam_next = w[:, nb] if nb < w.shape[1] else np.full(len(w), np.inf)
        if not need_vectors:
            return w[:, :nb], None, lam_next
        L = ells.shape[0]
        v = np.zeros((L, self.basis.dim, nb), dtype=complex)
        rows = order[:, :nb]
        scale = 1.0 / np.sqrt(b0)
        for n in range(nb):
            v[np.arange(L), rows[:, n], n] = scale
        return w[:, :nb], v, lam_next

    # -- gradients

    def gradients(self, ells: np.ndarray, vectors: np.ndarray) -> np.ndarray:
        """Band gradients for already-solved eigenvectors, shape (L, nb, 2).

        ells must be the same values the vectors were solved at; they are
        folded with the same convention as solve_many.
        """
        ells = fold_ell(np.atleast_2d(ells))
        out = np.empty(vectors.shape[:1] + (vectors.shape[2], 2))
        if self._alpha_diagonal:
            # alpha * (m + m')_j is diagonal: skip the dense contractions
            a0 = float(self.alpha_mat[0, 0].real)
            sq = (np.conj(vectors) * vectors).real
            base = a0 * sq.sum(axis=1)
            for j in range(2):
                mj = 2.0 * a0 * self.basis.members[:, j]
                quad = np.einsum("lin,i->ln", sq, mj)
                out[..., j] = quad + 2.0 * ells[:, None, j] * base
            return out / self._beta_norm(vectors)
        av = np.einsum("ij,ljn->lin", self.alpha_mat, vectors)
        base = np.einsum("lin,lin->ln", np.conj(vectors), av).real  # v^H alpha v
        for j in range(2):
            sj = self.alpha_mat * self.basis._msum[..., j]
            sv = np.einsum("ij,ljn->lin", sj, vectors)
            quad = np.einsum("lin,lin->ln", np.conj(vectors), sv).real
            out[..., j] = quad + 2.0 * ells[:, None, j] * base
        return out / self._beta_norm(vectors)

    def _beta_norm(self, vectors):
        # vectors are beta-orthonormal by construction; recompute defensively
        if self._beta_diagonal:
            sq = np.einsum("lin,lin->ln", np.conj(vectors), vectors).real
            return (self._beta_scale * sq)[..., None]
        bv = np.einsum("ij,ljn->lin", self.beta_mat, vectors)
        return np.einsum("lin,lin->ln", np.conj(vectors), bv).real[..., None]

    def eval(self, ells, need_grads: bool = True, need_vectors: bool = False,
             batch: int = 512):
        """One-stop evaluation: (lams, grads or None, vectors or None, lam_next).

        Gradient evaluation is blocked so eigenvectors never accumulate
        beyond one batch unless they are explicitly requested.
        """
        if not need_grads:
            lams, vecs, lam_next = self.solve_many(ells, need_vectors=need_vectors)
            return lams, None, vecs, lam_next
        ells = np.atleast_2d(np.asarray(ells, dtype=float))
        folded = fold_ell(ells)
        L = ells.shape[0]
        nb = self.n_bands
        lams = np.empty((L, nb))
        grads = np.empty((L, nb, 2))
        lam_next = np.empty(L)
        vecs = np.empty((L, self.basis.dim, nb), dtype=complex) if need_vectors else None
        for start in range(0, L, batch):
            sl = slice(start, min(start + batch, L))
            w, v, nxt = self._solve_block(folded[sl], True)
            lams[sl] = w
            lam_next[sl] = nxt
            grads[sl] = self.gradients(folded[sl], v)
            if need_vectors:
                vecs[sl] = v
        return lams, grads, vecs, lam_next

    def resolvent_coefficients(self, ells, z, rhs, band_weight=None,
                               batch: int = 512):
        """Plane-wave coefficients of the band-truncated resolvent action.

        For each quasimomentum the action of (z M - A(ell))^{-1} on rhs is
        expanded over the first n_bands eigenpairs,
        sum_n (v_n^H rhs) v_n / (z - lam_n), which is the exact resolvent
        when no band is omitted.  With constant coefficients every plane
        wave is an eigenfunction, so the closed form over the full basis is
        used and nothing is truncated.

        Parameters
        ----------
        ells : (L, 2) array
            Quasimomenta, folded internally; rhs must be expanded at the
            same folded representatives (source coefficients are).
        z : complex
            Spectral parameter, off the local spectrum (Im z != 0 suffices).
        rhs : (L, dim) array
            Right-hand-side coefficients in the plane-wave basis.
        band_weight : callable, optional
            Maps eigenvalues to multiplicative weights.  When given, a
            second coefficient set with the weights applied per band is
            returned (spectral-cutoff splits).

        Returns
        -------
        coef : (L, dim) complex array
        coef_weighted : (L, dim) complex array or None
        residual : (L,) array
            Right-hand-side mass outside the retained bands; exact for
            beta = 1, a plain l2 estimate otherwise.
        lam_gap : (L,) array
            First omitted eigenvalue (inf when nothing is omitted).
        """
        ells = fold_ell(np.atleast_2d(ells))
        rhs = np.asarray(rhs, dtype=complex)
        L = ells.shape[0]
        if self._diagonal:
            a0 = float(self.alpha_mat[0, 0].real)
            b0 = self._beta_scale
            kpl = self.basis.members[None] + ells[:, None, :]
            diag = (a0 / b0) * (kpl ** 2).sum(-1)
            coef = rhs / (b0 * (z - diag))
            coef_w = band_weight(diag) * coef if band_weight is not None else None
            return (coef, coef_w, np.zeros(L), np.full(L, np.inf))
        dim = self.basis.dim
        coef = np.empty((L, dim), dtype=complex)
        coef_w = np.empty((L, dim), dtype=complex) if band_weight is not None else None
        residual = np.empty(L)
        lam_gap = np.empty(L)
        for start in range(0, L, batch):
            sl = slice(start, min(start + batch, L))
            w, v, nxt = self._solve_block(ells[sl], True)
            a = np.einsum("lin,li->ln", np.conj(v), rhs[sl])
            g = a / (z - w)
            coef[sl] = np.einsum("lin,ln->li", v, g)
            if coef_w is not None:
                coef_w[sl] = np.einsum("lin,ln->li", v, band_weight(w) * g)
            mass = (np.abs(rhs[sl]) ** 2).sum(1) - (np.abs(a) ** 2).sum(1)
            residual[sl] = np.sqrt(np.clip(mass, 0.0, None))
            lam_gap[sl] = nxt
        return coef, coef_w, residual, lam_gap

    def system_at(self, ell) -> BandSystem:
        """Single-point BandSystem (convenience wrapper over the batch path).

        The returned system carries the folded representative of ell, which
        is the quasimomentum its coefficient vectors refer to.
        """
        ell_f = fold_ell(np.asarray(ell, dtype=float))
        lams, vecs, lam_next = self.solve_many(ell_f[None])
        return BandSystem(ell=ell_f, lams=lams[0],
                          vectors=vecs[0], basis=self.basis, lam_next=float(lam_next[0]))


def _is_scaled_identity(mat: np.ndarray) -> bool:
    off = mat - np.diag(np.diag(mat))
    return (np.abs(off).max() < 1e-15 * max(1.0, np.abs(mat).max())
            and np.ptp(np.diag(mat).real) < 1e-15 * max(1.0, np.abs(mat).max()))


# ---------------------------------------------------------------- band grid


@dataclass
class BandGrid:
    """Bands and gradients tabulated on a uniform closed grid over [0,1]^2."""

    axis: np.ndarray              # (G,), includes both edges
    lams: np.ndarray              # (G, G, nb)
    grads: np.ndarray             # (G, G, nb, 2)
    model: BlochBandModel = field(repr=False, default=None)

    @property
    def grid_n(self) -> int:
        return len(self.axis)

    @property
    def n_bands(self) -> int:
        return self.lams.shape[2]

    def band_ranges(self) -> np.ndarray:
        """(nb, 2) array of [min, max] over the grid per band."""
        flat = self.lams.reshape(-1, self.n_bands)
        return np.stack([flat.min(0), flat.max(0)], axis=1)

    def active_bands(self, k2: float) -> list[int]:
        """Bands whose sampled range straddles the level k^2."""
        r = self.band_ranges()
        return [n for n in range(self.n_bands) if r[n, 0] <= k2 <= r[n, 1]]

    def gap_interval(self, k2: float) -> tuple[float, float] | None:
        """Enclosing spectral gap around k^2 if no band covers it."""
        if self.active_bands(k2):
            return None
        r = self.band_ranges()
        below = r[r[:, 1] < k2, 1]
        above = r[r[:, 0] > k2, 0]
        lo = float(below.max()) if len(below) else 0.0
        hi = float(above.min()) if len(above) else np.inf
        return lo, hi


def band_grid(model: BlochBandModel, grid_n: int = 128) -> BandGrid:
    """Tabulate bands and gradients on a (grid_n x grid_n) closed grid."""
    axis = np.linspace(0.0, 1.0, grid_n)
    E1, E2 = np.meshgrid(axis, axis, indexing="ij")
    ells = np.stack([E1.ravel(), E2.ravel()], axis=1)
    lams, grads, _, _ = model.eval(ells, need_grads=True)
    nb = model.n_bands
    return BandGrid(axis=axis,
                    lams=lams.reshape(grid_n, grid_n, nb),
                    grads=grads.reshape(grid_n, grid_n, nb, 2),
                    model=model)


# -------------------------------------------------------------- diagnostics


@dataclass
class Sigma0Flag:
    ell: np.ndarray
    band: int
    lam: float
    grad_norm: float


@dataclass
class CrossingFlag:
    ell: np.ndarray
    bands: tuple[int, int]
    gap: float
    kind: str                     # "regular" or "suspected_singular"


def detect_sigma0(grid: BandGrid, k2: float, tol: float = 1e-2,
                  band_tol: float | None = None) -> list[Sigma0Flag]:
    """Grid points where a band touches the level with small group velocity.

    Such points witness proximity to a critical value of the band (a Landau
    level of the problem); curve extraction refuses to run across them.
    """
    if band_tol is None:
        band_tol = 1e-4 * (1.0 + abs(k2))
    near = np.abs(grid.lams - k2) < band_tol
    slow = np.linalg.norm(grid.grads, axis=-1) < tol
    hits = np.argwhere(near & slow)
    flags: list[Sigma0Flag] = []
    seen: list[tuple[np.ndarray, int]] = []
    for i, j, n in hits:
        ell = np.array([grid.axis[i], grid.axis[j]])
        dup = False
        for e0, n0 in seen:
            d = np.abs(ell - e0)
            d = np.minimum(d, 1.0 - d)       # periodic identification
            if n0 == n and np.hypot(*d) < 2.5 / grid.grid_n:
                dup = True
                break
        if dup:
            continue
        seen.append((ell, int(n)))
        flags.append(Sigma0Flag(ell=ell, band=int(n), lam=float(grid.lams[i, j, n]),
                                grad_norm=float(np.linalg.norm(grid.grads[i, j, n]))))
    return flags


def detect_crossings(grid: BandGrid, k2: float, gap_tol: float | None = None,
                     band_tol: float | None = None) -> list[CrossingFlag]:
    """Locate and classify band touchings on the level k^2.

    Candidate cells (small inter-band gap near the level) are polished by a
    two-band Newton iteration; confirmed touchings are classified by sampling
    the gap on a small loop.  A gap that vanishes at two loop angles means
    the touching set is a curve through the point (the two surfaces cross
    transversally and relabel: a regular crossing).  A gap bounded away from
    zero on the loop and scaling linearly with its radius is a conical point
    (suspected member of the singular set).
    """
    if gap_tol is None:
        gap_tol = 1e-6 * (1.0 + abs(k2))
    if band_tol is None:
        band_tol = 1e-4 * (1.0 + abs(k2))
    model = grid.model
    g = grid.grid_n
    h = 1.0 / (g - 1)
    grad_scale = np.linalg.norm(grid.grads, axis=-1).max() + 1.0
    flags: list[CrossingFlag] = []
    taken: list[np.ndarray] = []
    for n in range(grid.n_bands - 1):
        gap = grid.lams[..., n + 1] - grid.lams[..., n]
        lvl = np.minimum(np.abs(grid.lams[..., n] - k2), np.abs(grid.lams[..., n + 1] - k2))
        cand = (gap < 4.0 * h * grad_scale) & (lvl < max(band_tol, 4.0 * h * grad_scale))
        if not cand.any():
            continue
        for i, j in np.argwhere(cand):
            ell0 = np.array([grid.axis[i], grid.axis[j]])
            if any(np.linalg.norm(ell0 - t) < 2.0 * h for t in taken):
                continue
            hit = _polish_crossing(model, ell0, n, k2, gap_tol, max_dist=3.0 * h)
            if hit is None:
                continue
            ell, gap_val = hit
            if any(np.linalg.norm(ell - t) < 2.0 * h for t in taken):
                continue
            taken.append(ell)
            kind = _classify_crossing(model, ell, n, loop_radius=0.5 * h)
            flags.append(CrossingFlag(ell=ell, bands=(n, n + 1), gap=gap_val, kind=kind))
    return flags


def _polish_crossing(model, ell0, n, k2, gap_tol, max_dist, iters=12):
    """Newton on (lam_n - k2, lam_{n+1} - k2) = 0; None if it escapes."""
    ell = ell0.copy()
    for _ in range(iters):
        lams, grads, _, _ = model.eval(ell[None], need_grads=True)
        f = np.array([lams[0, n] - k2, lams[0, n + 1] - k2])
        if np.abs(f).max() < 0.25 * gap_tol:
            break
        J = np.stack([grads[0, n], grads[0, n + 1]])
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if abs(det) < 1e-12:
            return None
        step = np.linalg.solve(J, f)
        limit = 0.5 * max_dist
        norm = np.linalg.norm(step)
        if norm > limit:
            step *= limit / norm
        ell = ell - step
        if np.linalg.norm(ell - ell0) > max_dist:
            return None
    lams, _, _, _ = model.eval(ell[None], need_grads=False)
    gap_val = float(lams[0, n + 1] - lams[0, n])
    lvl = max(abs(lams[0, n] - k2), abs(lams[0, n + 1] - k2))
    if gap_val > gap_tol or lvl > gap_tol:
        return None
    return ell, gap_val


def _classify_crossing(model, ell, n, loop_radius, n_angles=24):
    phis = 2.0 * np.pi * np.arange(n_angles) / n_angles
    ring = ell + loop_radius * np.stack([np.cos(phis), np.sin(phis)], axis=1)
    lams, _, _, _ = model.eval(ring, need_grads=False)
    gaps = lams[:, n + 1] - lams[:, n]
    if gaps.min() < 0.05 * gaps.max():
        return "regular"
    # conical profile: the loop gap scales linearly with the radius
    lams2, _, _, _ = model.eval(ell + 0.5 * (ring - ell), need_grads=False)
    gaps2 = lams2[:, n + 1] - lams2[:, n]
    ratio = np.median(gaps / np.maximum(gaps2, 1e-300))
    if 1.5 < ratio < 2.5:
        return "suspected_singular"
    return "regular"
