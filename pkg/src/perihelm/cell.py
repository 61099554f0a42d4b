"""Periodic material coefficients on the reference cell [0, 2pi]^2.

A coefficient is carried as a truncated Fourier table c_hat(m) for
|m|_inf <= m_cut, obtained from samples on a uniform grid.  Positivity and
aliasing are checked at construction; silent truncation of badly resolved
input is refused rather than absorbed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import NonPositiveCoefficient, ResolutionTooLow
from .expressions import compile_expression

CoefficientInput = Union[str, float, int, Callable[[np.ndarray, np.ndarray], np.ndarray]]

TOP_OCTAVE_TOL = 1e-8


@dataclass
class MediumSpec:
    """User-facing description of a medium.

    alpha, beta accept a constant, an expression string over x/y, or a
    callable of meshgrid arrays.  resolution is the sampling grid per axis,
    m_cut the Fourier truncation |m|_inf kept for each coefficient.
    """

    alpha: CoefficientInput = 1.0
    beta: CoefficientInput = 1.0
    resolution: int = 64
    m_cut: int = 8


class PeriodicCoefficient:
    """Truncated Fourier representation of a real positive cell function."""

    def __init__(self, table: np.ndarray, m_cut: int):
        assert table.shape == (2 * m_cut + 1, 2 * m_cut + 1)
        self.m_cut = m_cut
        self.table = np.asarray(table, dtype=complex)

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"PeriodicCoefficient(m_cut={self.m_cut})"

    def coefficient(self, m1: int, m2: int) -> complex:
        """Fourier coefficient of e^{i m.x}; zero outside the truncation."""
        if abs(m1) > self.m_cut or abs(m2) > self.m_cut:
            return 0.0
        return complex(self.table[m1 + self.m_cut, m2 + self.m_cut])

    def padded_table(self, reach: int) -> np.ndarray:
        """Table extended with zeros out to |m|_inf <= reach (reach >= m_cut
        not required; tables can also be cropped)."""
        out = np.zeros((2 * reach + 1, 2 * reach + 1), dtype=complex)
        keep = min(reach, self.m_cut)
        sl_out = slice(reach - keep, reach + keep + 1)
        sl_in = slice(self.m_cut - keep, self.m_cut + keep + 1)
        out[sl_out, sl_out] = self.table[sl_in, sl_in]
        return out

    def values(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the trig polynomial at points of shape (..., 2)."""
        pts = np.asarray(points, dtype=float)
        m = np.arange(-self.m_cut, self.m_cut + 1)
        ph1 = np.exp(1j * pts[..., 0, None] * m)          # (..., 2M+1)
        ph2 = np.exp(1j * pts[..., 1, None] * m)
        out = np.einsum("...a,ab,...b->...", ph1, self.table, ph2)
        return out.real

    def value_grid(self, n: int) -> np.ndarray:
        """Reconstruction on an n x n periodic grid (real part)."""
        xs = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        pts = np.stack([X, Y], axis=-1)
        return self.values(pts)

    def bounds(self, oversample: int = 4) -> tuple[float, float]:
        """Min and max of the reconstruction on a dense grid; the grid is at
        least `oversample` times denser than the trig degree."""
        n = max(64, oversample * (2 * self.m_cut + 1))
        vals = self.value_grid(n)
        return float(vals.min()), float(vals.max())


def _as_callable(coef: CoefficientInput) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    if callable(coef):
        return coef
    if isinstance(coef, str):
        return compile_expression(coef)
    value = float(coef)
    return lambda x, y: np.full(np.broadcast_shapes(np.shape(x), np.shape(y)), value)


def _analyze(name: str, coef: CoefficientInput, resolution: int, m_cut: int,
             strict: bool = True) -> PeriodicCoefficient:
    if resolution < max(16, 4 * m_cut):
        raise ResolutionTooLow(
            f"{name}: resolution {resolution} cannot carry m_cut={m_cut}")
    func = _as_callable(coef)
    xs = np.linspace(0.0, 2.0 * np.pi, resolution, endpoint=False)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    samples = np.asarray(func(X, Y), dtype=float)
    if samples.shape != (resolution, resolution):
        raise ValueError(f"{name}: coefficient callable returned shape {samples.shape}")
    if not np.all(np.isfinite(samples)):
        raise ValueError(f"{name}: coefficient samples are not finite")
    smin = samples.min()
    if smin <= 0.0:
        raise NonPositiveCoefficient(f"{name}: minimum sample {smin:g} <= 0")

    spec = np.fft.fft2(samples) / resolution ** 2
    k = np.fft.fftfreq(resolution, d=1.0 / resolution).astype(int)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    reach = np.maximum(np.abs(K1), np.abs(K2))
    energy = np.abs(spec) ** 2
    total = energy.sum()
    top = energy[(reach > resolution // 4) & (reach <= resolution // 2)].sum()
    if strict and total > 0 and top / total > TOP_OCTAVE_TOL:
        raise ResolutionTooLow(
            f"{name}: top-octave spectral energy fraction {top / total:.2e} "
            f"exceeds {TOP_OCTAVE_TOL:g}; raise resolution (or pass strict=False "
            "to accept the documented accuracy loss)")

    table = np.zeros((2 * m_cut + 1, 2 * m_cut + 1), dtype=complex)
    for i, m1 in enumerate(range(-m_cut, m_cut + 1)):
        for j, m2 in enumerate(range(-m_cut, m_cut + 1)):
            table[i, j] = spec[m1 % resolution, m2 % resolution]
    # enforce the Hermitian symmetry of a real function exactly
    table = 0.5 * (table + np.conj(table[::-1, ::-1]))
    return PeriodicCoefficient(table, m_cut)


@dataclass
class Medium:
    alpha: PeriodicCoefficient
    beta: PeriodicCoefficient
    spec: MediumSpec = field(repr=False, default_factory=MediumSpec)

    def contrast_ratio(self) -> float:
        """max(alpha) / min(beta); controls the group-velocity bound."""
        return self.alpha.bounds()[1] / self.beta.bounds()[0]


def build_medium(spec: MediumSpec, strict: bool = True) -> Medium:
    """Sample, verify and truncate both material coefficients."""
    alpha = _analyze("alpha", spec.alpha, spec.resolution, spec.m_cut, strict)
    beta = _analyze("beta", spec.beta, spec.resolution, spec.m_cut, strict)
    return Medium(alpha=alpha, beta=beta, spec=spec)


def coefficient_bounds(coef: PeriodicCoefficient) -> tuple[float, float]:
    """(min, max) of the reconstructed coefficient on a dense grid."""
    return coef.bounds()


# ------------------------------------------------------------------- presets


def homogeneous_medium(m_cut: int = 8) -> Medium:
    return build_medium(MediumSpec(alpha=1.0, beta=1.0, m_cut=m_cut))


def cosine_lattice_medium(depth: float = 0.8, m_cut: int = 8) -> Medium:
    """Separable cosine profile alpha = 1 + depth*cos(x)*cos(y), beta = 1."""
    return build_medium(MediumSpec(alpha=f"1 + {depth!r}*cos(x)*cos(y)",
                                   beta=1.0, m_cut=m_cut))
