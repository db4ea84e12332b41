"""Classical atom-ensemble Monte Carlo.

Thermal initial states in the tweezer, RK4 trajectories through the beam
potentials (spin-separation pulse + in-plane expansion), the photon-recoil
random walk during fluorescence imaging, and release-recapture thermometry.

Randomness: ensemble-level draws use one Philox stream per (seed, tag);
per-atom operations use streams keyed by (seed, atom index) so results are
independent of evaluation order and parallel scheduling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .constants import (
    BLUE_LINEWIDTH,
    BLUE_WAVELENGTH,
    DARK_STATE_BRANCHING,
    GRAVITY,
    HBAR,
    KB,
    SR87_MASS,
)
from .optics import GaussianBeam, GaussianBeamField, PolarizabilitySpec, osg_field
from .rng import TAG_SAMPLING as _TAG_SAMPLING
from .rng import TAG_WALK as _TAG_WALK
from .rng import make_rng

CLASSICAL = "classical-boltzmann"
WIGNER = "ground-state-wigner"


@dataclass
class AtomSample:
    position: np.ndarray
    velocity: np.ndarray
    m_f: float = 4.5
    alive: bool = True


@dataclass(frozen=True)
class ThermalSource:
    """Initial phase-space distribution in a (harmonically approximated) trap."""

    temperature: float
    omega: np.ndarray          # trap frequencies per axis, rad/s
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mass: float = SR87_MASS
    sampling_mode: str = CLASSICAL

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.sampling_mode not in (CLASSICAL, WIGNER):
            raise ValueError(f"unknown sampling mode {self.sampling_mode!r}")
        if self.sampling_mode == CLASSICAL and self.temperature <= 0:
            raise ValueError("classical sampling needs T > 0 (use the Wigner mode for T = 0)")

    def sigmas(self) -> tuple[np.ndarray, np.ndarray]:
        """(sigma_x per axis, sigma_v per axis)."""
        if self.sampling_mode == CLASSICAL:
            sv = np.sqrt(KB * self.temperature / self.mass)
            return sv / self.omega, np.full(3, sv)
        sx = np.sqrt(HBAR / (2 * self.mass * self.omega))
        sv = np.sqrt(HBAR * self.omega / (2 * self.mass))
        return sx, sv


def sample_phase_space(source: ThermalSource, n: int, seed: int,
                       stream: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian phase-space samples, arrays (n,3) for position and velocity."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed, _TAG_SAMPLING, stream)
    sx, sv = source.sigmas()
    pos = source.center + sx * rng.standard_normal((n, 3))
    vel = sv * rng.standard_normal((n, 3))
    return pos, vel


def sample_atoms(source: ThermalSource, n: int, seed: int, m_f: float = 4.5) -> list[AtomSample]:
    pos, vel = sample_phase_space(source, n, seed)
    return [AtomSample(position=pos[i], velocity=vel[i], m_f=m_f) for i in range(n)]


def _max_trap_frequency(fields, m_f: float, mass: float) -> float:
    """Largest harmonic frequency (Hz) among the attractive beams, for step checks."""
    f_max = 0.0
    for fld in fields:
        if isinstance(fld, GaussianBeamField):
            u0 = fld.peak_u0(m_f)
            if u0 < 0:
                w_min = float(np.min(fld.waists))
                f_max = max(f_max, np.sqrt(4 * abs(u0) / (mass * w_min**2)) / (2 * np.pi))
        elif hasattr(fld, "omega"):
            f_max = max(f_max, float(np.max(np.asarray(fld.omega))) / (2 * np.pi))
    return f_max


def _pack_fields(fields, m_f: np.ndarray):
    u0 = np.array([[fld.peak_u0(m) for m in m_f] for fld in fields])
    centers = np.array([fld.center for fld in fields])
    axes = np.array([fld.axis_index for fld in fields], dtype=np.int64)
    waists = np.array([fld.waists for fld in fields])
    rayleigh = np.array([fld.rayleigh for fld in fields])
    return u0, centers, axes, waists, rayleigh


def propagate_ensemble(pos, vel, m_f, fields, t: float, dt: float,
                       mass: float = SR87_MASS, backend=None):
    """Batch RK4 through summed Gaussian-beam fields; returns new (pos, vel)."""
    pos = np.atleast_2d(np.asarray(pos, dtype=float))
    vel = np.atleast_2d(np.asarray(vel, dtype=float))
    m_f = np.broadcast_to(np.asarray(m_f, dtype=float), pos.shape[0])
    if not all(isinstance(f, GaussianBeamField) for f in fields):
        raise TypeError("batch propagation requires Gaussian-beam fields")
    f_trap = max(_max_trap_frequency(fields, m, mass) for m in np.unique(m_f))
    if f_trap > 0 and dt > 1.0 / (100 * f_trap) * (1 + 1e-12):
        raise ValueError(f"dt = {dt} exceeds 1/(100 f_trap) = {1.0 / (100 * f_trap)}")
    n_steps = int(round(t / dt))
    if abs(n_steps * dt - t) > 1e-9 * max(t, dt):
        raise ValueError("t must be an integer number of steps")
    if not fields or n_steps == 0:
        return pos + vel * t, vel.copy()
    u0, centers, axes, waists, rayleigh = _pack_fields(fields, m_f)
    return _kernels.propagate(pos, vel, u0, centers, axes, waists, rayleigh,
                              mass, dt, n_steps, backend=backend)


def integrate_trajectory(atom: AtomSample, fields, t: float, dt: float,
                         mass: float = SR87_MASS) -> AtomSample:
    """Single-atom RK4; generic fields fall back to a python integrator."""
    if all(isinstance(f, GaussianBeamField) for f in fields):
        pos, vel = propagate_ensemble(atom.position, atom.velocity, atom.m_f,
                                      fields, t, dt, mass=mass)
        return replace(atom, position=pos[0], velocity=vel[0])
    f_trap = _max_trap_frequency(fields, atom.m_f, mass)
    if f_trap > 0 and dt > 1.0 / (100 * f_trap) * (1 + 1e-12):
        raise ValueError(f"dt = {dt} exceeds 1/(100 f_trap) = {1.0 / (100 * f_trap)}")
    n_steps = int(round(t / dt))

    def acc(r):
        out = np.zeros(3)
        for fld in fields:
            out += fld.force(r, atom.m_f)
        return out / mass

    x = atom.position.astype(float).copy()
    v = atom.velocity.astype(float).copy()
    for _ in range(n_steps):
        k1x, k1v = v, acc(x)
        k2x, k2v = v + dt / 2 * k1v, acc(x + dt / 2 * k1x)
        k3x, k3v = v + dt / 2 * k2v, acc(x + dt / 2 * k2x)
        k4x, k4v = v + dt * k3v, acc(x + dt * k3x)
        x = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return replace(atom, position=x, velocity=v)


def total_energy(atom: AtomSample, fields, mass: float = SR87_MASS) -> float:
    e = 0.5 * mass * float(np.sum(atom.velocity**2))
    for fld in fields:
        e += fld.potential(atom.position, atom.m_f)
    return e


# --- spin-separation sequence ---

@dataclass(frozen=True)
class OSGSequenceConfig:
    """Pulse + in-plane expansion settings (separation axis is y, beams along z/x)."""

    beam: GaussianBeam
    polarizability: PolarizabilitySpec
    lightsheet: GaussianBeamField
    pulse_time: float = 5e-6
    expansion_time: float = 94e-6
    pulse_dt: float = 10e-9
    expansion_dt: float = 100e-9
    mass: float = SR87_MASS


def osg_sequence(pos, vel, m_f, config: OSGSequenceConfig, backend=None):
    """Tweezer release, spin-dependent pulse, then light-sheet-confined expansion."""
    beam_field = osg_field(config.beam, config.polarizability)
    if config.pulse_time > 0:
        pos, vel = propagate_ensemble(pos, vel, m_f, [beam_field, config.lightsheet],
                                      config.pulse_time, config.pulse_dt,
                                      mass=config.mass, backend=backend)
    pos, vel = propagate_ensemble(pos, vel, m_f, [config.lightsheet],
                                  config.expansion_time, config.expansion_dt,
                                  mass=config.mass, backend=backend)
    return pos, vel


# --- fluorescence photon-recoil walk ---

NA = 0.55
OBJECTIVE_TRANSMISSION = 0.5
SOLID_ANGLE_FRACTION = (1 - np.cos(np.arcsin(NA))) / 2


@dataclass(frozen=True)
class ImagingParams:
    duration: float = 15e-6
    linewidth: float = BLUE_LINEWIDTH          # rad/s
    saturation: float = 20.0                   # I / I_sat
    wavelength: float = BLUE_WAVELENGTH
    beam_axis: int = 0                         # alternating +/- beams along x
    alternation_period: float = 500e-9
    collection_efficiency: float = SOLID_ANGLE_FRACTION * OBJECTIVE_TRANSMISSION
    dark_branching: float = DARK_STATE_BRANCHING
    emission_pattern: str = "isotropic"
    mass: float = SR87_MASS

    @property
    def scatter_rate(self) -> float:
        s = self.saturation
        return (self.linewidth / 2) * s / (1 + s)

    @property
    def recoil_velocity(self) -> float:
        return HBAR * (2 * np.pi / self.wavelength) / self.mass


@dataclass(frozen=True)
class EmissionEvent:
    time: float
    position: np.ndarray   # (x, y) object plane
    collected: bool


def _isotropic_units(rng: np.random.Generator, n: int) -> np.ndarray:
    u = rng.standard_normal((n, 3))
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return u / norms


def fluorescence_walk_arrays(position, velocity, imaging: ImagingParams,
                             seed: int, atom_index: int = 0):
    """Photon-recoil random walk for one atom.

    Returns (times, xy, collected, survived, final_position, final_velocity).
    Beam forces during the exposure are neglected (trap periods are far longer
    than the exposure).
    """
    if imaging.duration <= 0:
        raise ValueError("imaging duration must be > 0")
    rng = make_rng(seed, _TAG_WALK, atom_index)
    x0 = np.asarray(position, dtype=float)
    v0 = np.asarray(velocity, dtype=float)
    t_exp = imaging.duration
    n = rng.poisson(imaging.scatter_rate * t_exp)
    survived = True
    if imaging.dark_branching > 0:
        first_loss = rng.geometric(imaging.dark_branching)
        if first_loss <= n:
            # The loss event itself emits into the dark channel, not collected.
            n = first_loss - 1
            survived = False
    times = np.sort(rng.uniform(0.0, t_exp, n))
    v_rec = imaging.recoil_velocity
    # Absorption from the alternating counter-propagating beams.
    beam_sign = 1.0 - 2.0 * (np.floor(times / imaging.alternation_period) % 2)
    dv = v_rec * _isotropic_units(rng, n)
    dv[:, imaging.beam_axis] += v_rec * beam_sign
    collected = rng.uniform(size=n) < imaging.collection_efficiency

    # Position at event i includes all kicks j < i:
    # x_i = x0 + v0 t_i + S_{i} t_i - W_{i}, S_i = sum_{j<i} dv_j, W_i = sum_{j<i} dv_j t_j.
    s = np.vstack([np.zeros(3), np.cumsum(dv, axis=0)])
    w = np.vstack([np.zeros(3), np.cumsum(dv * times[:, None], axis=0)])
    pos_events = x0 + v0 * times[:, None] + s[:-1] * times[:, None] - w[:-1]
    final_pos = x0 + v0 * t_exp + s[-1] * t_exp - w[-1]
    final_vel = v0 + s[-1]
    return times, pos_events[:, :2], collected, survived, final_pos, final_vel


def fluorescence_walk(atom: AtomSample, imaging: ImagingParams, seed: int,
                      atom_index: int = 0) -> tuple[list[EmissionEvent], bool]:
    times, xy, collected, survived, fpos, fvel = fluorescence_walk_arrays(
        atom.position, atom.velocity, imaging, seed, atom_index)
    events = [EmissionEvent(time=float(t), position=xy[i], collected=bool(collected[i]))
              for i, t in enumerate(times)]
    atom.position = fpos
    atom.velocity = fvel
    atom.alive = atom.alive and survived
    return events, survived


# --- release-recapture thermometry ---

def release_recapture(source: ThermalSource, hold_times, n: int, seed: int,
                      trap: GaussianBeamField, gravity: bool = False,
                      gravity_axis: int = 2):
    """Recapture probability vs trap-off hold time, with binomial errors.

    Recapture criterion: total energy in the restored Gaussian trap < 0.
    Returns a list of (t, probability, stderr) tuples.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    pos0, vel0 = sample_phase_space(source, n, seed)
    # Condition on initial boundedness: the harmonic-sampled Boltzmann tail that
    # would already be unbound in the Gaussian trap never enters the experiment.
    e0 = (0.5 * source.mass * np.sum(vel0**2, axis=1)
          + trap.peak_u0() * _beam_profile(trap, pos0))
    bound = e0 < 0
    pos0, vel0 = pos0[bound], vel0[bound]
    n_eff = int(np.sum(bound))
    out = []
    for t in hold_times:
        pos = pos0 + vel0 * t
        vel = vel0.copy()
        if gravity:
            pos = pos.copy()
            pos[:, gravity_axis] -= 0.5 * GRAVITY * t**2
            vel[:, gravity_axis] -= GRAVITY * t
        kinetic = 0.5 * source.mass * np.sum(vel**2, axis=1)
        potential = trap.peak_u0() * _beam_profile(trap, pos)
        recaptured = kinetic + potential < 0
        p = float(np.mean(recaptured))
        err = float(np.sqrt(max(p * (1 - p), 1.0 / n_eff) / n_eff))
        out.append((float(t), p, err))
    return out


def _beam_profile(fld: GaussianBeamField, pos: np.ndarray) -> np.ndarray:
    from .optics import _profile
    return _profile(pos, fld.center, fld.axis_index, fld.waists, fld.rayleigh)


def fit_recapture_temperature(hold_times, probabilities, source: ThermalSource,
                              trap: GaussianBeamField, n: int, seed: int,
                              t_bounds=(100e-9, 20e-6)) -> float:
    """Self-consistent temperature fit of a recapture curve.

    Grid scan over log-spaced temperatures with common random numbers, then a
    parabolic refinement of the squared-error minimum.
    """
    probabilities = np.asarray(probabilities, dtype=float)
    temps = np.geomspace(t_bounds[0], t_bounds[1], 61)

    def objective(temperature):
        src = replace(source, temperature=float(temperature))
        model = release_recapture(src, hold_times, n, seed, trap)
        return float(np.sum((np.array([m[1] for m in model]) - probabilities) ** 2))

    sse = np.array([objective(t) for t in temps])
    i = int(np.argmin(sse))
    if 0 < i < temps.size - 1:
        # Parabolic vertex in log-temperature (equally spaced grid).
        x = np.log(temps[i - 1:i + 2])
        y = sse[i - 1:i + 2]
        denom = y[0] - 2 * y[1] + y[2]
        if denom > 0:
            h = x[1] - x[0]
            return float(np.exp(x[1] + 0.5 * h * (y[0] - y[2]) / denom))
    return float(temps[i])


# --- tabular export (schema-versioned CSV) ---

ENDPOINT_SCHEMA = "osgsim.endpoints.v1"
EVENT_SCHEMA = "osgsim.events.v1"


def endpoints_to_csv(pos, vel, m_f, path, alive=None) -> None:
    pos = np.atleast_2d(pos)
    vel = np.atleast_2d(vel)
    m_f = np.broadcast_to(np.asarray(m_f, dtype=float), pos.shape[0])
    if alive is None:
        alive = np.ones(pos.shape[0], dtype=bool)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={ENDPOINT_SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(["x_m", "y_m", "z_m", "vx_mps", "vy_mps", "vz_mps", "m_f", "alive"])
        for i in range(pos.shape[0]):
            w.writerow([f"{c:.9e}" for c in pos[i]] + [f"{c:.9e}" for c in vel[i]]
                       + [f"{m_f[i]:g}", int(alive[i])])


def events_to_csv(events: list[EmissionEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={EVENT_SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(["t_s", "x_m", "y_m", "collected"])
        for ev in events:
            w.writerow([f"{ev.time:.9e}", f"{ev.position[0]:.9e}",
                        f"{ev.position[1]:.9e}", int(ev.collected)])
