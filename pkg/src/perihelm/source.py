"""Cell-windowed Fourier data of compactly supported sources.

For a source supported strictly inside the reference cell W = [0, 2pi]^2,
the lattice-summed transform reduces to a single term on W:

    fhat(x, ell) = f(x) e^{-i ell.x},      x in W,

and its coefficients on the normalized waves e^{i m.x}/(2 pi) are

    b_m(ell) = (1/(2 pi)) \int_W f(x) e^{-i (m + ell).x} dx,

a windowed continuous Fourier transform sampled at m + ell.  Gaussian bumps
admit a closed form; gridded sources go through the FFT.  All quasimomenta
are folded to the same canonical representative the band solver uses, so
coefficient arrays and eigenvectors always index the same plane waves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bloch import BandSystem, PlaneWaveBasis, fold_ell
from .errors import SupportViolation, TruncationMismatch

TWO_PI = 2.0 * np.pi

# |f| falls below 1e-14 of its peak outside this many standard widths
_GAUSS_REACH = np.sqrt(2.0 * 14.0 * np.log(10.0))


@dataclass
class SourceTerm:
    """Right-hand side supported inside the reference cell.

    kind is "gaussian" (center/width/amplitude) or "grid" (periodic samples
    of one cell).  Construction validates that the numerical support stays
    strictly inside W.
    """

    kind: str
    center: np.ndarray | None = None
    width: float = 0.0
    amplitude: float = 1.0
    values: np.ndarray | None = None

    # -- constructors

    @classmethod
    def gaussian(cls, center=(np.pi, np.pi), width: float = 0.5,
                 amplitude: float = 1.0) -> "SourceTerm":
        center = np.asarray(center, dtype=float)
        reach = _GAUSS_REACH * width
        if width <= 0:
            raise ValueError("width must be positive")
        if np.any(center - reach < 0.0) or np.any(center + reach > TWO_PI):
            raise SupportViolation(
                f"gaussian support radius {reach:.3f} at center {center} leaves the cell")
        return cls(kind="gaussian", center=center, width=float(width),
                   amplitude=float(amplitude))

    @classmethod
    def from_grid(cls, values: np.ndarray) -> "SourceTerm":
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("grid source needs square samples")
        peak = np.abs(values).max()
        edge = max(np.abs(values[0]).max(), np.abs(values[-1]).max(),
                   np.abs(values[:, 0]).max(), np.abs(values[:, -1]).max())
        if peak > 0 and edge > 1e-12 * peak:
            raise SupportViolation("grid source does not vanish at the cell boundary")
        return cls(kind="grid", values=values)

    # -- pointwise and integral data

    def support_radius(self) -> float:
        if self.kind == "gaussian":
            return _GAUSS_REACH * self.width
        nz = np.argwhere(np.abs(self.values) > 1e-14 * np.abs(self.values).max())
        if len(nz) == 0:
            return 0.0
        n = self.values.shape[0]
        xs = TWO_PI * nz / n
        c = xs.mean(axis=0)
        return float(np.linalg.norm(xs - c, axis=1).max())

    def f(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the source at points of shape (..., 2)."""
        pts = np.asarray(points, dtype=float)
        if self.kind == "gaussian":
            d2 = ((pts - self.center) ** 2).sum(-1)
            return self.amplitude * np.exp(-0.5 * d2 / self.width ** 2)
        raise NotImplementedError("pointwise evaluation only for gaussian sources")

    def l2_norm(self) -> float:
        if self.kind == "gaussian":
            return float(self.amplitude * self.width * np.sqrt(np.pi))
        n = self.values.shape[0]
        return float(np.sqrt((self.values ** 2).sum() * (TWO_PI / n) ** 2))

    def continuum_transform(self, xi: np.ndarray) -> np.ndarray:
        """F(xi) = \int f(x) e^{-i xi.x} dx at xi of shape (..., 2)."""
        xi = np.asarray(xi, dtype=float)
        if self.kind == "gaussian":
            phase = np.exp(-1j * (xi * self.center).sum(-1))
            decay = np.exp(-0.5 * self.width ** 2 * (xi ** 2).sum(-1))
            return self.amplitude * TWO_PI * self.width ** 2 * phase * decay
        n = self.values.shape[0]
        xs = TWO_PI * np.arange(n) / n
        e1 = np.exp(-1j * xi[..., 0, None] * xs)
        e2 = np.exp(-1j * xi[..., 1, None] * xs)
        return np.einsum("...a,ab,...b->...", e1, self.values, e2) * (TWO_PI / n) ** 2

    # -- coefficients

    def coefficients(self, ells: np.ndarray, basis: PlaneWaveBasis) -> np.ndarray:
        """b_m(ell) for a batch of quasimomenta, shape (L, dim).

        ells are folded to the canonical representative; pair the result
        only with eigendata solved at the same representative.
        """
        ells = fold_ell(np.atleast_2d(ells))
        xi = basis.members[None, :, :] + ells[:, None, :]
        return self.continuum_transform(xi) / TWO_PI


@dataclass
class BlochSource:
    """Coefficients of fhat(., ell) on the truncated plane-wave basis."""

    ell: np.ndarray
    coeffs: np.ndarray
    basis: PlaneWaveBasis

    def values(self, x: np.ndarray) -> np.ndarray:
        """Reconstruct fhat(x, ell) at x of shape (..., 2)."""
        return self.basis.phases(x) @ self.coeffs

    def norm_sq(self) -> float:
        """L2(W) norm squared of the truncated transform."""
        return float((np.abs(self.coeffs) ** 2).sum())


def bloch_transform(f: SourceTerm, ell, basis: PlaneWaveBasis | int) -> BlochSource:
    """Windowed transform of f at one quasimomentum."""
    if isinstance(basis, int):
        basis = PlaneWaveBasis(basis)
    ell_f = fold_ell(np.asarray(ell, dtype=float))
    coeffs = f.coefficients(ell_f[None], basis)[0]
    return BlochSource(ell=ell_f, coeffs=coeffs, basis=basis)


def pair_with_band(source: BlochSource, system: BandSystem, n: int) -> complex:
    """(fhat, e_n)_{L2(W)}: the excitation amplitude of band n.

    Conjugate-linear in the eigenvector; both operands must live on the same
    truncation and the same folded quasimomentum.
    """
    if source.basis.n_cut != system.basis.n_cut:
        raise TruncationMismatch(
            f"source at n_cut={source.basis.n_cut}, bands at n_cut={system.basis.n_cut}")
    d = fold_ell(source.ell) - fold_ell(system.ell)
    if np.abs(d).max() > 1e-10:
        raise TruncationMismatch(
            f"source transform at ell={source.ell}, bands at ell={system.ell}")
    # sum_m b_m conj(c_m), which vdot produces with its first-argument conjugation
    return complex(np.vdot(system.vectors[:, n], source.coeffs))
