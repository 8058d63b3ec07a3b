"""Compiled versus pure-Python Heun kernel on the same closed-loop problem.

    python benchmarks/bench_kernel.py [--steps N] [--repeat R]

Both backends receive identical noise and servo matrices; the script checks
that the recorded angles agree bit for bit and prints steps per second.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from sntorsion.loops import LoopModel, build_servo
from sntorsion.noise import build_channels
from sntorsion.params import builtin_config, load_config
from sntorsion.sim import kernel
from sntorsion.sim.core import _servo_matrices


def _problem(n: int, mode: int):
    cfg = load_config(builtin_config("desk_quadratic"))
    p = cfg.pendulum
    loop = LoopModel(p, build_servo(cfg.run.servo, p), cfg.sn.omega_sn,
                     build_channels(p, cfg.optics, cfg.run.noise))
    dt = cfg.run.dt
    ad, bd, cc, dd = _servo_matrices(loop, dt)
    rng = np.random.default_rng(1)
    return dict(
        dt=dt, inv_i=1.0 / p.inertia_rz, wt2=p.omega_m**2, wm2=p.omega_m**2, gamma=p.gamma_m,
        wsn2=cfg.sn.omega_sn**2, mode=mode, nq_scale=1e-20, nq_w=1e-18,
        ad=ad, bd=bd, cc=cc, dd=dd,
        tq_tot=rng.standard_normal(n) * 1e-10, tq_mean=rng.standard_normal(n) * 1e-10,
        n_tot=rng.standard_normal(n + 1) * 1e-9, n_mean=rng.standard_normal(n + 1) * 1e-9,
    )


def _run(fn, prob, n):
    r = prob["bd"].shape[0]
    outs = [np.empty(n) for _ in range(5)]
    z = np.zeros(4)
    t0 = time.perf_counter()
    fn(z, np.zeros(r), np.zeros(r), prob["dt"], prob["inv_i"], prob["wt2"], prob["wm2"], prob["gamma"],
       prob["wsn2"], prob["mode"], prob["nq_scale"], prob["nq_w"], prob["ad"], prob["bd"], prob["cc"],
       prob["dd"], prob["tq_tot"], prob["tq_mean"], prob["n_tot"], prob["n_mean"], 1, *outs)
    return time.perf_counter() - t0, outs[0]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=50_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernel.BACKEND != "cython":
        print("compiled kernel not built; only the Python backend is available")
    print(f"{'mode':<14}{'backend':<10}{'steps/s':>14}{'speed-up':>10}")
    for mode, name in ((kernel.MODE_OFF, "off"), (kernel.MODE_QUADRATIC, "quadratic"),
                       (kernel.MODE_NONQUADRATIC, "nonquadratic")):
        prob = _problem(args.steps, mode)
        t_py, th_py = min((_run(kernel.run_heun_python, prob, args.steps) for _ in range(args.repeat)),
                          key=lambda r: r[0])
        print(f"{name:<14}{'python':<10}{args.steps / t_py:>14.3g}{1.0:>10.1f}")
        if kernel.BACKEND == "cython":
            t_cy, th_cy = min((_run(kernel.run_heun, prob, args.steps) for _ in range(args.repeat)),
                              key=lambda r: r[0])
            same = np.array_equal(th_py, th_cy)
            print(f"{name:<14}{'cython':<10}{args.steps / t_cy:>14.3g}{t_py / t_cy:>10.1f}"
                  f"   identical={same}")


if __name__ == "__main__":
    main()
