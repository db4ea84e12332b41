"""Pure-numpy trajectory kernel, vectorized over atoms.

Same contract as the compiled module in ``native.pyx``; selected at import
time when the extension is unavailable (or explicitly disabled).
"""

import numpy as np


def _accel(pos, u0, centers, axes, waists, inv_r2, mass):
    """Acceleration (n,3) from nb axis-aligned Gaussian beams."""
    n = pos.shape[0]
    acc = np.zeros((n, 3))
    for k in range(u0.shape[0]):
        p = axes[k]
        a, b = [i for i in range(3) if i != p]
        dz = pos[:, p] - centers[k, p]
        da = pos[:, a] - centers[k, a]
        db = pos[:, b] - centers[k, b]
        wa0, wb0 = waists[k]
        wa2 = wa0**2 * (1 + dz**2 * inv_r2[k, 0])
        wb2 = wb0**2 * (1 + dz**2 * inv_r2[k, 1])
        u = u0[k] * (wa0 * wb0 / np.sqrt(wa2 * wb2)) * np.exp(
            -2 * da**2 / wa2 - 2 * db**2 / wb2)
        acc[:, a] += u * 4 * da / wa2
        acc[:, b] += u * 4 * db / wb2
        # d(w^2)/dz = 2 w0^2 z / zr^2; axial term from waist growth.
        ga = wa0**2 * dz * inv_r2[k, 0]
        gb = wb0**2 * dz * inv_r2[k, 1]
        acc[:, p] += u * (ga / wa2 + gb / wb2
                          - 4 * da**2 * ga / wa2**2 - 4 * db**2 * gb / wb2**2)
    acc /= mass
    return acc


def propagate(pos, vel, u0, centers, axes, waists, inv_r2, mass, dt, n_steps):
    """Classical RK4 for n atoms in summed Gaussian-beam potentials (in place)."""
    for _ in range(n_steps):
        k1x = vel
        k1v = _accel(pos, u0, centers, axes, waists, inv_r2, mass)
        k2x = vel + (dt / 2) * k1v
        k2v = _accel(pos + (dt / 2) * k1x, u0, centers, axes, waists, inv_r2, mass)
        k3x = vel + (dt / 2) * k2v
        k3v = _accel(pos + (dt / 2) * k2x, u0, centers, axes, waists, inv_r2, mass)
        k4x = vel + dt * k3v
        k4v = _accel(pos + dt * k3x, u0, centers, axes, waists, inv_r2, mass)
        pos += (dt / 6) * (k1x + 2 * k2x + 2 * k3x + k4x)
        vel += (dt / 6) * (k1v + 2 * k2v + 2 * k3v + k4v)
    return pos, vel
