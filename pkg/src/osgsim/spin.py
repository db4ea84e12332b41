"""Spin-9/2 operator algebra and time evolution in a time-dependent magnetic field.

The state is a vector of 2F+1 complex amplitudes over m = +F ... -F (strictly
descending, the fixed convention everywhere in this package).  Evolution is
piecewise-constant: each step applies exp(-i H(t_mid) dt) built from the
spectral decomposition of the 10x10 Hermitian Zeeman Hamiltonian, so unitarity
is exact to machine precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .constants import G_FACTOR_HZ_PER_G, SPIN_F

Z_AXIS = np.array([0.0, 0.0, 1.0])

NORM_TOL = 1e-8


def m_values(f: float) -> np.ndarray:
    """Magnetic quantum numbers in descending order, +F ... -F."""
    dim = int(round(2 * f)) + 1
    return f - np.arange(dim)


@dataclass(frozen=True)
class SpinOperators:
    """Dimensionless angular-momentum matrices for a spin-F manifold."""

    f: float
    fx: np.ndarray
    fy: np.ndarray
    fz: np.ndarray

    @property
    def dim(self) -> int:
        return self.fz.shape[0]


def make_spin_operators(f: float) -> SpinOperators:
    """Build fx, fy, fz from the ladder-operator matrix elements.

    <m+1|f+|m> = sqrt(F(F+1) - m(m+1)); fx = (f+ + f-)/2, fy = (f+ - f-)/2i.
    """
    if f <= 0 or abs(2 * f - round(2 * f)) > 1e-12:
        raise ValueError(f"F must be a positive half-integer, got {f}")
    ms = m_values(f)
    dim = ms.size
    fp = np.zeros((dim, dim), dtype=complex)
    # Descending index order: raising connects index i+1 (m) to index i (m+1).
    for i in range(dim - 1):
        m = ms[i + 1]
        fp[i, i + 1] = np.sqrt(f * (f + 1) - m * (m + 1))
    fm = fp.conj().T
    fx = (fp + fm) / 2
    fy = (fp - fm) / (2j)
    fz = np.diag(ms).astype(complex)
    return SpinOperators(f=f, fx=fx, fy=fy, fz=fz)


@dataclass
class SpinVector:
    """Qudit state: complex amplitudes quantized along ``basis_axis``."""

    amps: np.ndarray
    basis_axis: np.ndarray = field(default_factory=lambda: Z_AXIS.copy())

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=complex)
        self.basis_axis = _unit(np.asarray(self.basis_axis, dtype=float))
        if abs(self.norm() - 1.0) > NORM_TOL:
            raise ValueError(f"state not normalized: |psi| = {self.norm()}")

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amps) ** 2)))

    def populations(self) -> np.ndarray:
        return np.abs(self.amps) ** 2


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValueError("zero-length or non-finite axis")
    return v / n


def axis_angle_operator(ops: SpinOperators, axis, angle: float) -> np.ndarray:
    """Unitary exp(-i * angle * (axis . F)) via spectral decomposition."""
    n = _unit(np.asarray(axis, dtype=float))
    gen = n[0] * ops.fx + n[1] * ops.fy + n[2] * ops.fz
    evals, evecs = np.linalg.eigh(gen)
    return (evecs * np.exp(-1j * angle * evals)) @ evecs.conj().T


def rotation_between(a, b) -> tuple[np.ndarray, float]:
    """Axis and angle of the rotation taking unit vector a onto b."""
    a = _unit(np.asarray(a, dtype=float))
    b = _unit(np.asarray(b, dtype=float))
    c = float(np.clip(np.dot(a, b), -1.0, 1.0))
    cross = np.cross(a, b)
    s = np.linalg.norm(cross)
    if s < 1e-14:
        if c > 0:
            return Z_AXIS.copy(), 0.0
        # Antiparallel: any axis orthogonal to a works.
        ortho = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(ortho) < 1e-9:
            ortho = np.cross(a, [0.0, 1.0, 0.0])
        return _unit(ortho), np.pi
    return cross / s, float(np.arctan2(s, c))


def stretched_state(ops: SpinOperators, axis=Z_AXIS) -> SpinVector:
    """Stretched m = +F state quantized along ``axis`` (amplitudes in the lab basis)."""
    amps = np.zeros(ops.dim, dtype=complex)
    amps[0] = 1.0
    u, theta = rotation_between(Z_AXIS, axis)
    if theta != 0.0:
        amps = axis_angle_operator(ops, u, theta) @ amps
    return SpinVector(amps=amps, basis_axis=Z_AXIS)


def zeeman_hamiltonian(ops: SpinOperators, b_gauss, g_factor: float = G_FACTOR_HZ_PER_G) -> np.ndarray:
    """Linear Zeeman Hamiltonian H = 2*pi*g*(b . F) in rad/s, b in gauss."""
    b = np.asarray(b_gauss, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("non-finite magnetic field")
    return 2 * np.pi * g_factor * (b[0] * ops.fx + b[1] * ops.fy + b[2] * ops.fz)


@dataclass(frozen=True)
class FieldSchedule:
    """Guide field plus an exponentially switched transverse quench field.

    B(t) = b_guide + b_quench_amplitude * (1 - exp(-t/tau)) * quench_axis.
    ``detection_axis_angle`` tilts the detection basis away from the guide axis
    in the guide-quench plane.
    """

    b_guide: np.ndarray = field(default_factory=lambda: np.array([0.08, 0.0, 0.0]))
    b_quench_amplitude: float = 1.158
    quench_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    rise_time_tau: float = 0.3e-3
    detection_axis_angle: float = np.deg2rad(5.0)

    def __post_init__(self):
        object.__setattr__(self, "b_guide", np.asarray(self.b_guide, dtype=float))
        object.__setattr__(self, "quench_axis", _unit(np.asarray(self.quench_axis, dtype=float)))
        if self.rise_time_tau <= 0:
            raise ValueError("rise_time_tau must be > 0")
        if not (np.all(np.isfinite(self.b_guide)) and np.isfinite(self.b_quench_amplitude)):
            raise ValueError("non-finite field parameters")

    def field_at(self, t: float) -> np.ndarray:
        ramp = -np.expm1(-t / self.rise_time_tau)
        return self.b_guide + self.b_quench_amplitude * ramp * self.quench_axis

    @property
    def guide_axis(self) -> np.ndarray:
        return _unit(self.b_guide)

    @property
    def b_max(self) -> float:
        return float(np.linalg.norm(self.b_guide) + abs(self.b_quench_amplitude))

    def detection_axis(self) -> np.ndarray:
        """Guide axis tilted by detection_axis_angle toward the quench axis."""
        g = self.guide_axis
        q = self.quench_axis
        perp = q - np.dot(q, g) * g
        perp = _unit(perp)
        return np.cos(self.detection_axis_angle) * g + np.sin(self.detection_axis_angle) * perp


def _check_step(schedule: FieldSchedule, dt: float, g_factor: float) -> None:
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if abs(schedule.b_quench_amplitude) > 0 and dt > schedule.rise_time_tau / 30 * (1 + 1e-12):
        raise ValueError(f"dt = {dt} exceeds tau/30 = {schedule.rise_time_tau / 30}")
    f_larmor = abs(g_factor) * schedule.b_max
    if f_larmor > 0 and dt > 1.0 / (50 * f_larmor) * (1 + 1e-12):
        raise ValueError(f"dt = {dt} exceeds 1/(50 f_Larmor) = {1.0 / (50 * f_larmor)}")


def evolve(
    state: SpinVector,
    schedule: FieldSchedule,
    ops: SpinOperators,
    t_final: float,
    dt: float,
    g_factor: float = G_FACTOR_HZ_PER_G,
    t_start: float = 0.0,
) -> SpinVector:
    """Propagate from t_start to t_final with midpoint-sampled exact exponentials."""
    _check_step(schedule, dt, g_factor)
    if abs(state.norm() - 1.0) > NORM_TOL:
        raise ValueError("input state not normalized")
    span = t_final - t_start
    if span < 0:
        raise ValueError("t_final must be >= t_start")
    psi = state.amps.copy()
    n_full = int(span / dt)
    cache: dict[bytes, np.ndarray] = {}
    t = t_start
    remaining = span
    for i in range(n_full + 1):
        step = dt if i < n_full else remaining - n_full * dt
        if step <= 1e-18:
            break
        b = schedule.field_at(t + step / 2)
        key = b.tobytes() + np.float64(step).tobytes()
        u = cache.get(key)
        if u is None:
            h = zeeman_hamiltonian(ops, b, g_factor)
            evals, evecs = np.linalg.eigh(h)
            u = (evecs * np.exp(-1j * evals * step)) @ evecs.conj().T
            cache[key] = u
        psi = u @ psi
        t += step
    return SpinVector(amps=psi, basis_axis=state.basis_axis)


# |m| bins reported by the detection: 9/2, 7/2, 5/2, merged(3/2 and 1/2).
ABS_BIN_LABELS = ("9/2", "7/2", "5/2", "3/2+1/2")


@dataclass(frozen=True)
class PopulationRecord:
    time: float
    p_m: np.ndarray    # over m = +9/2 ... -9/2
    p_abs: np.ndarray  # over |m| bins per ABS_BIN_LABELS


def fold_abs(p_m: np.ndarray) -> np.ndarray:
    """Fold signed-m populations into the four resolvable |m| bins."""
    p = np.asarray(p_m, dtype=float)
    n = p.size
    return np.array([
        p[0] + p[n - 1],
        p[1] + p[n - 2],
        p[2] + p[n - 3],
        float(np.sum(p[3:n - 3])),
    ])


def measure_populations(state: SpinVector, detection_axis, ops: SpinOperators,
                        time: float = 0.0) -> PopulationRecord:
    """Populations in the basis quantized along ``detection_axis``."""
    n = _unit(np.asarray(detection_axis, dtype=float))
    u, theta = rotation_between(state.basis_axis, n)
    amps = state.amps
    if theta != 0.0:
        rot = axis_angle_operator(ops, u, theta)
        amps = rot.conj().T @ amps
    p_m = np.abs(amps) ** 2
    return PopulationRecord(time=time, p_m=p_m, p_abs=fold_abs(p_m))


def quench_experiment(
    schedule: FieldSchedule,
    times,
    ops: SpinOperators | None = None,
    dt: float | None = None,
    g_factor: float = G_FACTOR_HZ_PER_G,
    p_prep: float = 1.0,
) -> list[PopulationRecord]:
    """Evolve a stretched +F state along the guide axis and read out |m| populations.

    Optional preparation imperfection: weight 1 - p_prep starts in m = +F-1.
    Hold times are evolved incrementally (sorted internally, output follows the
    input order).
    """
    times = list(times)
    if not times:
        return []
    if ops is None:
        ops = make_spin_operators(SPIN_F)
    if dt is None:
        dt = _default_dt(schedule, g_factor)
    det_axis = schedule.detection_axis()

    initial_states = [(p_prep, stretched_state(ops, schedule.guide_axis))]
    if p_prep < 1.0:
        # m = +F-1 along the guide axis: rotate the lab-basis |+F-1> state.
        amps = np.zeros(ops.dim, dtype=complex)
        amps[1] = 1.0
        u, theta = rotation_between(Z_AXIS, schedule.guide_axis)
        if theta != 0.0:
            amps = axis_angle_operator(ops, u, theta) @ amps
        initial_states.append((1.0 - p_prep, SpinVector(amps=amps)))

    order = np.argsort(times, kind="stable")
    p_m_acc = np.zeros((len(times), ops.dim))
    for weight, state in initial_states:
        if weight <= 0:
            continue
        t_prev = 0.0
        psi = state
        for idx in order:
            t = float(times[idx])
            if t < 0:
                raise ValueError("hold times must be >= 0")
            psi = evolve(psi, schedule, ops, t, dt, g_factor=g_factor, t_start=t_prev)
            t_prev = t
            rec = measure_populations(psi, det_axis, ops, time=t)
            p_m_acc[idx] += weight * rec.p_m
    return [
        PopulationRecord(time=float(t), p_m=p_m_acc[i], p_abs=fold_abs(p_m_acc[i]))
        for i, t in enumerate(times)
    ]


def _default_dt(schedule: FieldSchedule, g_factor: float) -> float:
    limits = [1e-3]
    if abs(schedule.b_quench_amplitude) > 0:
        limits.append(schedule.rise_time_tau / 30)
    f_larmor = abs(g_factor) * schedule.b_max
    if f_larmor > 0:
        limits.append(1.0 / (50 * f_larmor))
    return min(limits)


def population_records_to_csv(records, path) -> None:
    """Write a PopulationRecord series as CSV (|m| bins plus signed-m columns)."""
    if not records:
        raise ValueError("no records to write")
    dim = records[0].p_m.size
    f = records[0].p_m.size // 2 - 0.5
    signed_cols = []
    for m in m_values(f):
        num = int(round(2 * abs(m)))
        signed_cols.append(f"pm_{'p' if m > 0 else 'm'}{num}_2")
    header = ["t_s", "p_9half", "p_7half", "p_5half", "p_merged"] + signed_cols
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rec in records:
            row = [f"{rec.time:.9e}"]
            row += [f"{v:.12e}" for v in rec.p_abs]
            row += [f"{v:.12e}" for v in rec.p_m]
            w.writerow(row)
