"""Gaussian-beam intensity fields and spin-dependent dipole potentials.

Covers the three beams of the experiment: the tightly focused tweezer, the
planar light sheet, and the near-resonant separation beam whose tensor
polarizability makes the potential depend on m^2.

Beams are axis-aligned: the propagation direction is one of the lab coordinate
axes, with independent waists (and Rayleigh ranges) along the two transverse
axes, listed in ascending coordinate-index order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constants import AU_POLARIZABILITY_SI, C, EPS0, SPIN_F


def _axis_index(v) -> int:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero propagation axis")
    u = np.abs(v / n)
    idx = int(np.argmax(u))
    if abs(u[idx] - 1.0) > 1e-12:
        raise ValueError("beams must propagate along a coordinate axis")
    return idx


def transverse_indices(axis_index: int) -> tuple[int, int]:
    return tuple(i for i in range(3) if i != axis_index)  # type: ignore[return-value]


@dataclass(frozen=True)
class GaussianBeam:
    """Focused Gaussian beam, possibly elliptical.

    ``waists`` are the 1/e^2 intensity radii along the two transverse axes in
    ascending coordinate-index order.
    """

    power: float
    waists: tuple[float, float]
    center: np.ndarray
    propagation_axis: np.ndarray
    wavelength: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "propagation_axis", np.asarray(self.propagation_axis, dtype=float))
        if min(self.waists) <= 0 or self.wavelength <= 0:
            raise ValueError("waists and wavelength must be > 0")

    @property
    def axis_index(self) -> int:
        return _axis_index(self.propagation_axis)

    @property
    def peak_intensity(self) -> float:
        """I0 = 2P / (pi * w_a * w_b) at focus, W/m^2."""
        return 2 * self.power / (np.pi * self.waists[0] * self.waists[1])

    @property
    def rayleigh_ranges(self) -> tuple[float, float]:
        return tuple(np.pi * w**2 / self.wavelength for w in self.waists)  # type: ignore[return-value]

    def intensity(self, position) -> float:
        """Intensity at a point, including divergence along propagation."""
        return self.peak_intensity * _profile(
            np.atleast_2d(np.asarray(position, dtype=float)),
            self.center, self.axis_index,
            np.asarray(self.waists), np.asarray(self.rayleigh_ranges),
        )[0]


def _profile(pos: np.ndarray, center, axis_index, waists, rayleigh):
    """Normalized intensity profile (1 at focus center) for (n,3) positions."""
    a, b = transverse_indices(axis_index)
    dz = pos[:, axis_index] - center[axis_index]
    wa = waists[0] * np.sqrt(1 + (dz / rayleigh[0]) ** 2)
    wb = waists[1] * np.sqrt(1 + (dz / rayleigh[1]) ** 2)
    da = pos[:, a] - center[a]
    db = pos[:, b] - center[b]
    return (waists[0] * waists[1] / (wa * wb)) * np.exp(
        -2 * da**2 / wa**2 - 2 * db**2 / wb**2
    )


def tensor_weight(m: float, f: float = SPIN_F) -> float:
    """m^2-dependent weight of the tensor light shift: (3m^2 - F(F+1)) / (F(2F-1))."""
    if abs(m) > f + 1e-12:
        raise ValueError(f"|m| = {abs(m)} exceeds F = {f}")
    return (3 * m**2 - f * (f + 1)) / (f * (2 * f - 1))


@dataclass(frozen=True)
class PolarizabilitySpec:
    """Scalar and tensor polarizabilities (atomic units) for linear polarization."""

    alpha_scalar: float = 7.2e3
    alpha_tensor: float = 42.5e3
    f: float = SPIN_F
    au_to_si: float = AU_POLARIZABILITY_SI

    def alpha_effective(self, m: float) -> float:
        """Effective polarizability for projection m, atomic units (even in m)."""
        return self.alpha_scalar + self.alpha_tensor * tensor_weight(m, self.f)

    def alpha_effective_si(self, m: float) -> float:
        return self.alpha_effective(m) * self.au_to_si


def osg_potential(beam: GaussianBeam, pol: PolarizabilitySpec, position, m: float) -> float:
    """Dipole potential of the separation beam for projection m, joules.

    Sign convention: at the blue detuning used here a positive effective
    polarizability repels the atom (stretched states pushed away from the
    beam, m = 1/2 pulled toward it), so U = +alpha_eff * I / (2 eps0 c).
    """
    return pol.alpha_effective_si(m) * beam.intensity(position) / (2 * EPS0 * C)


class GaussianBeamField:
    """Potential field of one beam: maps (position, m) to energy and force.

    ``peak_u0`` is either a scalar (spin-independent trap, signed: negative is
    attractive) or a callable m -> peak potential in joules.
    """

    def __init__(self, center, axis_index: int, waists, rayleigh,
                 peak_u0: float | Callable[[float], float]):
        self.center = np.asarray(center, dtype=float)
        self.axis_index = int(axis_index)
        self.waists = np.asarray(waists, dtype=float)
        self.rayleigh = np.asarray(rayleigh, dtype=float)
        self._peak_u0 = peak_u0

    def peak_u0(self, m: float = 0.0) -> float:
        if callable(self._peak_u0):
            return float(self._peak_u0(m))
        return float(self._peak_u0)

    def potential(self, position, m: float = 0.0) -> float:
        pos = np.atleast_2d(np.asarray(position, dtype=float))
        return self.peak_u0(m) * float(_profile(
            pos, self.center, self.axis_index, self.waists, self.rayleigh)[0])

    def force(self, position, m: float = 0.0) -> np.ndarray:
        """Analytic force -grad U, newtons."""
        pos = np.asarray(position, dtype=float)
        a, b = transverse_indices(self.axis_index)
        p = self.axis_index
        dz = pos[p] - self.center[p]
        da = pos[a] - self.center[a]
        db = pos[b] - self.center[b]
        wa0, wb0 = self.waists
        zra, zrb = self.rayleigh
        wa = wa0 * np.sqrt(1 + (dz / zra) ** 2)
        wb = wb0 * np.sqrt(1 + (dz / zrb) ** 2)
        u = self.peak_u0(m) * (wa0 * wb0 / (wa * wb)) * np.exp(
            -2 * da**2 / wa**2 - 2 * db**2 / wb**2)
        out = np.zeros(3)
        out[a] = u * 4 * da / wa**2
        out[b] = u * 4 * db / wb**2
        dwa = wa0**2 * dz / (zra**2 * wa)
        dwb = wb0**2 * dz / (zrb**2 * wb)
        out[p] = u * (dwa / wa + dwb / wb
                      - 4 * da**2 * dwa / wa**3 - 4 * db**2 * dwb / wb**3)
        return out


def trap_field(depth: float, waists, center, axis_index: int, wavelength: float,
               diverging: bool = True) -> GaussianBeamField:
    """Attractive Gaussian trap of given depth (joules, > 0)."""
    if depth <= 0:
        raise ValueError("depth must be > 0")
    waists = np.asarray(waists, dtype=float)
    if diverging:
        rayleigh = np.pi * waists**2 / wavelength
    else:
        rayleigh = np.array([np.inf, np.inf])
    return GaussianBeamField(center, axis_index, waists, rayleigh, -depth)


def osg_field(beam: GaussianBeam, pol: PolarizabilitySpec,
              diverging: bool = False) -> GaussianBeamField:
    """Spin-dependent field of the separation beam.

    Divergence is off by default: the pulse is far too short for motion along
    the propagation axis to sample it.
    """
    i0 = beam.peak_intensity
    waists = np.asarray(beam.waists, dtype=float)
    if diverging:
        rayleigh = np.asarray(beam.rayleigh_ranges)
    else:
        rayleigh = np.array([np.inf, np.inf])

    def u0(m: float) -> float:
        return pol.alpha_effective_si(m) * i0 / (2 * EPS0 * C)

    return GaussianBeamField(beam.center, beam.axis_index, waists, rayleigh, u0)


@dataclass(frozen=True)
class HarmonicField:
    """Harmonic reference potential, used by tests and thermal sampling checks."""

    omega: np.ndarray
    mass: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def potential(self, position, m: float = 0.0) -> float:
        d = np.asarray(position, dtype=float) - self.center
        return 0.5 * self.mass * float(np.sum(np.asarray(self.omega) ** 2 * d**2))

    def force(self, position, m: float = 0.0) -> np.ndarray:
        d = np.asarray(position, dtype=float) - self.center
        return -self.mass * np.asarray(self.omega) ** 2 * d


def radial_trap_frequency(depth: float, waist: float, mass: float) -> float:
    """Harmonic frequency (rad/s) at the focus of a symmetric Gaussian trap."""
    return np.sqrt(4 * depth / (mass * waist**2))


def axial_trap_frequency(depth: float, waist: float, wavelength: float, mass: float) -> float:
    zr = np.pi * waist**2 / wavelength
    return np.sqrt(2 * depth / (mass * zr**2))
