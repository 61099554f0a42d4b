"""Exception and warning types shared across the package."""

from __future__ import annotations


class PerihelmError(Exception):
    """Base class for all package-specific failures."""


# ---------------------------------------------------------------- cell model


class NonPositiveCoefficient(PerihelmError):
    """A material coefficient is not strictly positive on the cell."""


class ResolutionTooLow(PerihelmError):
    """Sampling grid too coarse for the requested coefficient: the top
    octave of the spectrum carries more relative energy than allowed."""


# ------------------------------------------------------------ Bloch operator


class EigenSolverFailure(PerihelmError):
    """LAPACK did not converge or returned non-finite eigendata."""


class DegenerateBand(PerihelmError):
    """Band too close to a neighbor for the requested single-band quantity."""


# ------------------------------------------------------------ level geometry


class Sigma0Proximity(PerihelmError):
    """Group velocity below floor on or near the requested level: the level
    is too close to a critical value for curve operations to be trusted."""


class UnmatchedEndpoint(PerihelmError):
    """Unfolding could not continue an arc: no congruent endpoint found."""


class DegenerateInflection(PerihelmError):
    """Curvature derivative vanishes at a sign change; cubic phase model
    does not apply."""


# ------------------------------------------------------------------- sources


class SupportViolation(PerihelmError):
    """Source support reaches the boundary of the reference cell."""


class TruncationMismatch(PerihelmError):
    """Operands built at different truncation orders or quasimomenta."""


# ------------------------------------------------------------------ far field


class RangeExceeded(PerihelmError):
    """Special-function argument outside the supported range."""


class InAiryNeighborhood(PerihelmError):
    """Direction falls inside a caustic neighborhood where the plain
    stationary-phase sum is invalid."""


# ----------------------------------------------------------------- reference


class TailTooLarge(PerihelmError):
    """Truncated band sum cannot meet the requested tail bound."""


class CutoffInvalid(PerihelmError):
    """Spectral cutoff support is not compatible with the active bands."""


class UnderResolvedCircle(PerihelmError):
    """Circle sampling too sparse for the oscillation of the field."""


# ------------------------------------------------------------------ warnings


class TangencyWarning(UserWarning):
    """Two curve branches meet near-tangentially; pairing by tangent
    continuity is ambiguous."""


class ShortCurveWarning(UserWarning):
    """A traced curve had too few vertices and was discarded."""


class CouplingWarning(UserWarning):
    """Quadrature grid coarser than the absorption scale requires."""


class GapWarning(UserWarning):
    """Requested level lies in a spectral gap."""
