"""Outgoing solutions of the 2D periodic Helmholtz problem.

Subpackage map:

- ``cell``        periodic coefficients on the unit cell, Fourier data
- ``bloch``       shifted cell operator, bands, group velocities, diagnostics
- ``source``      cell-windowed transform of compactly supported sources
- ``fermi``       level-set extraction, unfolding, curvature, inflections
- ``farfield``    radiation asymptotics: curve integral, stationary phase, caustic patches
- ``reference``   limiting-absorption solver, free-space oracle, flux diagnostic
- ``special``     Airy and Hankel evaluators
- ``cli``         command-line front end
"""

from __future__ import annotations

__version__ = "0.1.0"
