"""Compare the compiled and numpy likelihood kernels.

Times one likelihood-plus-gradient evaluation and one full fit for each
backend over a few survey sizes, and prints a table with the speedup.

    python3 benchmarks/bench_kernels.py [--sites 100 1000 10000] [--species 3]
"""
from __future__ import annotations

import argparse
import timeit
import warnings
from contextlib import contextmanager

import numpy as np

from msocc import _pykernels, kernels, model
from msocc.estimation import FitOptions, fit
from msocc.model import OccupancyParams
from msocc.simulation import SimSpec, case_study_params, simulate_history

try:
    from msocc import _ckernels
except ImportError:  # extension not built
    _ckernels = None


@contextmanager
def backend(fn):
    saved = kernels.loglik_grad
    kernels.loglik_grad = fn
    try:
        yield
    finally:
        kernels.loglik_grad = saved


def params_for(S: int) -> OccupancyParams:
    if S == 3:
        return case_study_params()
    rng = np.random.default_rng(S)
    return OccupancyParams(rng.dirichlet(np.full(2**S, 2.0)), rng.uniform(0.3, 0.7, S))


def best_of(stmt, number: int, repeat: int = 5) -> float:
    return min(timeit.repeat(stmt, number=number, repeat=repeat)) / number


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sites", type=int, nargs="+", default=[100, 1000, 10000])
    ap.add_argument("--species", type=int, default=3)
    ap.add_argument("--occasions", type=int, default=12)
    ap.add_argument("--no-fit", action="store_true", help="skip the full-fit timing")
    args = ap.parse_args(argv)

    if _ckernels is None:
        raise SystemExit("compiled kernel not built; run `pip install --no-build-isolation -e .`")
    backends = {"numpy": _pykernels.loglik_grad, "cython": _ckernels.loglik_grad}
    params = params_for(args.species)
    theta = model.params_to_theta(params)

    header = f"{'task':<14}{'sites':>8}{'numpy (ms)':>14}{'cython (ms)':>14}{'speedup':>10}"
    print(f"S={args.species}, T={args.occasions}")
    print(header)
    print("-" * len(header))
    for n_sites in args.sites:
        h = simulate_history(SimSpec(params, n_sites, args.occasions, 0.1, seed=1))
        counts = model.site_counts(h)
        rows = {}
        for name, fn in backends.items():
            with backend(fn):
                rows.setdefault("nll+grad", {})[name] = best_of(
                    lambda: model.nll_theta(theta, counts), number=max(1, 20000 // n_sites)
                )
                if not args.no_fit:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        rows.setdefault("fit (5 starts)", {})[name] = best_of(
                            lambda: fit(counts, FitOptions(seed=1)), number=1, repeat=3
                        )
        for task, t in rows.items():
            print(f"{task:<14}{n_sites:>8}{t['numpy'] * 1e3:>14.3f}{t['cython'] * 1e3:>14.3f}"
                  f"{t['numpy'] / t['cython']:>9.1f}x")


if __name__ == "__main__":
    main()
