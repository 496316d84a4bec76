"""Compare the compiled and pure-numpy simplex-QP kernels.

Times the inner solver on random problems and a full nested V/W fit with each
backend, and checks both give the same answer.

    python3 benchmarks/bench_kernels.py --problems 200 --fits 1
"""

from __future__ import annotations

import argparse
import logging
import time
import warnings

import numpy as np

from scmtransmit import _kernels_py, scm
from scmtransmit.fixtures import factor_panel

LOGGER = logging.getLogger("bench_kernels")

try:
    from scmtransmit import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def random_problems(n: int, k: int, j: int, seed: int):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        X0 = rng.normal(size=(k, j))
        X1 = X0 @ rng.dirichlet(np.ones(j)) + rng.normal(0, 0.1, size=k)
        v = rng.dirichlet(np.ones(k))
        H = X0.T @ (v[:, None] * X0)
        c = X0.T @ (v * X1)
        d = float(X1 @ (v * X1))
        lip = 2.0 * float(np.linalg.eigvalsh(H)[-1])
        out.append((H, c, d, lip))
    return out


def time_qp(module, problems) -> tuple[float, list[np.ndarray]]:
    t0 = time.perf_counter()
    sols = [module.solve_simplex_qp(H, c, d, lip, 10_000, 1e-10)[0] for H, c, d, lip in problems]
    return time.perf_counter() - t0, sols


def time_fits(module, seeds) -> tuple[float, list[np.ndarray]]:
    saved = scm.kernels.solve_simplex_qp
    scm.kernels.solve_simplex_qp = module.solve_simplex_qp
    try:
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            weights = [scm.solve_weights(fp.config, fp.data).weights for fp in (factor_panel(s) for s in seeds)]
        return time.perf_counter() - t0, weights
    finally:
        scm.kernels.solve_simplex_qp = saved


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--problems", type=int, default=200)
    parser.add_argument("--donors", type=int, default=8)
    parser.add_argument("--rows", type=int, default=10)
    parser.add_argument("--fits", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    backends = {"python": _kernels_py}
    if _kernels_c is not None:
        backends["cython"] = _kernels_c
    else:
        LOGGER.warning("compiled extension not available; timing the fallback only")

    problems = random_problems(args.problems, args.rows, args.donors, args.seed)
    seeds = range(args.seed, args.seed + args.fits)
    qp, fits = {}, {}
    for name, mod in backends.items():
        qp[name] = time_qp(mod, problems)
        fits[name] = time_fits(mod, seeds)

    print(f"{'backend':<8} {'qp total s':>11} {'qp/solve ms':>12} {'fit total s':>12} {'fit/each s':>11}")
    for name in backends:
        tq, tf = qp[name][0], fits[name][0]
        print(f"{name:<8} {tq:>11.3f} {1e3 * tq / args.problems:>12.3f} {tf:>12.3f} {tf / args.fits:>11.3f}")
    if "cython" in backends:
        print(f"speedup  qp x{qp['python'][0] / qp['cython'][0]:.1f}  fit x{fits['python'][0] / fits['cython'][0]:.1f}")
        dq = max(float(np.max(np.abs(a - b))) for a, b in zip(qp["python"][1], qp["cython"][1]))
        dw = max(float(np.max(np.abs(a - b))) for a, b in zip(fits["python"][1], fits["cython"][1]))
        print(f"max |w_python - w_cython|: qp {dq:.2e}, fit {dw:.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
