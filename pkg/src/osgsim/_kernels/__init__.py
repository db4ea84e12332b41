"""Trajectory-kernel backend selection.

The compiled Cython kernel is used when present; otherwise (or when the
``OSGSIM_DISABLE_NATIVE`` environment variable is set) a numpy fallback with
identical semantics takes over.  ``BACKEND`` records which one is active.
"""

import os

import numpy as np

from . import fallback

if os.environ.get("OSGSIM_DISABLE_NATIVE"):
    _impl = fallback
    BACKEND = "fallback"
else:
    try:
        from . import native as _impl  # type: ignore[no-redef]
        BACKEND = "native"
    except ImportError:
        _impl = fallback
        BACKEND = "fallback"


def propagate(pos, vel, u0, centers, axes, waists, rayleigh, mass, dt, n_steps,
              backend=None):
    """RK4-propagate atoms through summed axis-aligned Gaussian-beam potentials.

    Arrays: pos/vel (n,3) m and m/s; u0 (nb,n) signed peak potentials in J
    (negative attracts); centers (nb,3); axes (nb,) coordinate index of
    propagation; waists (nb,2) transverse 1/e^2 radii; rayleigh (nb,2) with
    np.inf for a collimated beam.  Returns new (pos, vel).
    """
    pos = np.ascontiguousarray(pos, dtype=np.float64).copy()
    vel = np.ascontiguousarray(vel, dtype=np.float64).copy()
    u0 = np.ascontiguousarray(np.atleast_2d(u0), dtype=np.float64)
    centers = np.ascontiguousarray(np.atleast_2d(centers), dtype=np.float64)
    axes = np.ascontiguousarray(axes, dtype=np.int64).ravel()
    waists = np.ascontiguousarray(np.atleast_2d(waists), dtype=np.float64)
    rayleigh = np.asarray(np.atleast_2d(rayleigh), dtype=np.float64)
    with np.errstate(over="ignore"):
        inv_r2 = np.where(np.isinf(rayleigh), 0.0, 1.0 / rayleigh**2)
    inv_r2 = np.ascontiguousarray(inv_r2, dtype=np.float64)
    if u0.shape != (centers.shape[0], pos.shape[0]):
        raise ValueError("u0 must have shape (n_beams, n_atoms)")
    impl = _impl
    if backend == "fallback":
        impl = fallback
    elif backend == "native":
        if BACKEND != "native":
            raise RuntimeError("native kernel not available")
        impl = _impl
    return impl.propagate(pos, vel, u0, centers, axes, waists, inv_r2,
                          float(mass), float(dt), int(n_steps))
