"""Benchmark the compiled trajectory kernel against the numpy fallback.

Propagates a thermal ensemble through the separation-beam plus light-sheet
potential and times both backends on identical inputs, checking that they
agree to floating-point noise.

Usage: python benchmarks/bench_propagate.py [--atoms N] [--steps N] [--repeat N]
"""

import argparse
import time

import numpy as np

from osgsim import config as cfgmod, montecarlo as mc
from osgsim._kernels import BACKEND
from osgsim.optics import osg_field


def build_scene(n_atoms: int, seed: int = 7):
    cfg = cfgmod.default_config()
    source = cfgmod.make_thermal_source(cfg)
    pos, vel = mc.sample_phase_space(source, n_atoms, seed)
    seq = cfgmod.make_sequence(cfg)
    fields = [osg_field(seq.beam, seq.polarizability), seq.lightsheet]
    m_f = np.full(n_atoms, 4.5)
    return pos, vel, m_f, fields


def time_backend(backend, pos, vel, m_f, fields, dt, n_steps, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = mc.propagate_ensemble(pos, vel, m_f, fields, n_steps * dt, dt,
                                    backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--atoms", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--dt", type=float, default=1e-8)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    pos, vel, m_f, fields = build_scene(args.atoms)
    print(f"active backend: {BACKEND}; {args.atoms} atoms x {args.steps} RK4 steps")

    t_fb, out_fb = time_backend("fallback", pos, vel, m_f, fields,
                                args.dt, args.steps, args.repeat)
    print(f"fallback (numpy): {t_fb * 1e3:9.1f} ms")
    if BACKEND == "native":
        t_nat, out_nat = time_backend("native", pos, vel, m_f, fields,
                                      args.dt, args.steps, args.repeat)
        print(f"native (cython) : {t_nat * 1e3:9.1f} ms   "
              f"speedup x{t_fb / t_nat:.1f}")
        err = max(np.max(np.abs(out_nat[i] - out_fb[i])) for i in range(2))
        print(f"max |native - fallback| over pos/vel: {err:.3e}")
        assert err < 1e-12, "backends disagree"
    else:
        print("native kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
