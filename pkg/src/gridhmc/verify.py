"""Property suites runnable from the command line.

Each suite returns a dict ``{"suite", "passed", "checks": [...]}`` where every
check records its measured value and the threshold it was held to.  Failures
are report content, not exceptions.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .approx import MultilinearEnergy, kl_bound_check
from .diagnostics import ess, ess_reference
from .domain import DomainBox
from .errors import ValidationError
from .grid import GridForce, build_force_map, cells_for
from .hmc import ChainState, leapfrog
from .models import BananaModel, GaussianConjugateModel, build_model, generate_synthetic
from .sparse import build_interpolant, combination_evaluate, interpolate_batch, sparse_grid_points


def _check(name, value, threshold, passed):
    return {"name": name, "value": float(value), "threshold": threshold, "passed": bool(passed)}


def _suite(name, checks, **extra):
    return {"suite": name, "passed": all(c["passed"] for c in checks), "checks": checks, **extra}


def reversibility_deviation(model, q0s, p0s, step_size, n_steps):
    """Largest ``|q - q0|`` after integrating forward, flipping momentum and integrating back."""
    worst = 0.0
    for q0, p0 in zip(q0s, p0s):
        fwd = leapfrog(ChainState(q0, p0), step_size, n_steps, model.force)
        back = leapfrog(ChainState(fwd.q, -fwd.p), step_size, n_steps, model.force)
        worst = max(worst, float(np.max(np.abs(back.q - q0))), float(np.max(np.abs(back.p + p0))))
    return worst


def suite_leapfrog(n_trajectories=1000, seed=0):
    rng = np.random.default_rng(seed)
    gauss = GaussianConjugateModel(np.zeros(1), 1, np.eye(1), np.eye(1) * 1e12, np.zeros(1))
    banana = BananaModel(generate_synthetic("banana", 100, 1).columns["y"])
    checks = []
    for label, model, dim, eps, n_steps in (("normal-1d", gauss, 1, 0.5, 10), ("banana", banana, 2, 0.05, 10)):
        q0s = rng.normal(size=(n_trajectories, dim))
        p0s = rng.normal(size=(n_trajectories, dim))
        dev = reversibility_deviation(model, q0s, p0s, eps, n_steps)
        checks.append(_check(f"reversibility[{label}]", dev, 1e-10, dev < 1e-10))
    return _suite("leapfrog", checks)


def kl_cases(n_random=50, seed=0):
    """Randomised (U, approximate U) pairs on logistic and banana grids.

    Each case draws its data seed, its cell size and a jitter of the box
    edges.  Yields ``(label, model, energy, domain)``.
    """
    rng = np.random.default_rng(seed)
    for i in range(n_random):
        name = "logistic" if i % 2 == 0 else "banana"
        ds = generate_synthetic(name, 100, int(rng.integers(1 << 30)))
        model = build_model(ds)
        if name == "logistic":
            lo, hi = np.array([-3.0, -0.5]), np.array([0.5, 3.0])
        else:
            lo, hi = np.array([-4.0, -4.0]), np.array([4.0, 4.0])
        jitter = rng.uniform(-0.25, 0.25, size=(2, 2))
        domain = DomainBox(lo + jitter[0], hi + jitter[1])
        cell = float(rng.uniform(0.1, 0.5))
        grid = build_force_map(model, domain, cells_for(domain, cell), with_vertex_potential=True)
        yield f"{name}#{i}(cell={cell:.3f})", model, MultilinearEnergy(grid, model), domain


def suite_kl(n_random=50, seed=0, quadrature_resolution=201, probe_resolution=401):
    checks = []
    for label, model, energy, domain in kl_cases(n_random, seed):
        rep = kl_bound_check(model, energy, domain, probe_resolution, quadrature_resolution, n_random=2000, seed=seed)
        checks.append(_check(f"kl[{label}]", rep.kl_estimate, rep.bound + rep.tolerance, rep.holds))
    # A constant shift changes U by c everywhere; the normalised target is unchanged.
    model = build_model(generate_synthetic("logistic", 100, 7))
    domain = DomainBox([-3.0, -0.5], [0.5, 3.0])

    class Shifted:
        def batch(self, qs):
            return model.potential_batch(qs) + 0.75

    rep = kl_bound_check(model, Shifted(), domain, probe_resolution, quadrature_resolution, n_random=2000, seed=seed)
    checks.append(_check("kl[constant-shift]", rep.kl_estimate, rep.bound + rep.tolerance, rep.holds and abs(rep.kl_estimate) < 1e-10))
    return _suite("kl", checks)


def _gauss_bump(x):
    x = np.asarray(x, dtype=float)
    return float(np.exp(-np.sum(x * x)))


def sparse_convergence(max_depth=6, n_probe=10_000, seed=0):
    """Max probe error of exp(-x^2 - y^2) on the unit square for depths 0..max_depth."""
    rng = np.random.default_rng(seed)
    probe = rng.random((n_probe, 2))
    exact = np.exp(-np.sum(probe**2, axis=1))
    box = DomainBox([0.0, 0.0], [1.0, 1.0])
    errors, node_err = [], []
    for depth in range(max_depth + 1):
        interp = build_interpolant(_gauss_bump, box, depth, tolerance=0.0)
        errors.append(float(np.max(np.abs(interpolate_batch(interp, probe) - exact))))
        nodes = interp.nodes()
        vals = np.exp(-np.sum(nodes**2, axis=1))
        node_err.append(float(np.max(np.abs(interpolate_batch(interp, nodes) - vals))))
    return errors, node_err


def suite_sparse(max_depth=6, seed=0):
    errors, node_err = sparse_convergence(max_depth, seed=seed)
    checks = []
    tail = errors[1:]
    mono = all(b <= a for a, b in zip(tail, tail[1:]))
    checks.append(_check("monotone-error[depth 1..%d]" % max_depth, max(np.diff(tail)), 0.0, mono))
    checks.append(_check("final-error", errors[-1], 1e-2, errors[-1] < 1e-2))
    checks.append(_check("node-exactness", max(node_err), 1e-12, max(node_err) < 1e-12))
    # hierarchical evaluation against the combination formula, d = 2
    rng = np.random.default_rng(seed + 1)
    box = DomainBox([0.0, 0.0], [1.0, 1.0])
    worst = 0.0
    for depth in range(5):
        interp = build_interpolant(_gauss_bump, box, depth, tolerance=0.0)
        for x in rng.random((25, 2)):
            hier = float(interpolate_batch(interp, x[None, :])[0])
            comb = combination_evaluate(_gauss_bump, depth + 2, 2, x)
            worst = max(worst, abs(hier - comb))
    checks.append(_check("combination-formula", worst, 1e-10, worst < 1e-10))
    n_pts = [sparse_grid_points(k + 2, 2).shape[0] for k in range(max_depth + 1)]
    return _suite("sparse", checks, probe_errors=errors, node_counts=n_pts)


def ar1(phi, n, rng):
    eps = rng.normal(size=n)
    x = np.empty(n)
    x[0] = eps[0] / math.sqrt(1 - phi * phi)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + eps[t]
    return x


def suite_ess(n_chains=50, n=3200, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_chains):
        x = ar1(float(rng.uniform(-0.5, 0.95)), n, rng)
        worst = max(worst, abs(ess(x) - ess_reference(x)))
    checks = [_check("oracle-agreement", worst, 1e-10, worst < 1e-10)]
    b = 10_000
    iid = ess(rng.normal(size=b))
    checks.append(_check("iid-ess/B", iid / b, "within 10% of 1", abs(iid / b - 1) < 0.10))
    phi, b = 0.9, 100_000
    target = b * (1 - phi) / (1 + phi)
    got = ess(ar1(phi, b, rng))
    checks.append(_check("ar1(0.9)-ess/theory", got / target, "within 15% of 1", abs(got / target - 1) < 0.15))
    return _suite("ess", checks)


def median_latency(fns, points, rounds=15, block=200):
    """Median seconds per call for each callable in ``fns``.

    Calls are timed in blocks of ``block`` points and the callables are
    interleaved round by round, so slow drift of the machine affects all of
    them alike.
    """
    per_call = {k: [] for k in fns}
    n = len(points)
    for r in range(rounds):
        start = (r * block) % max(1, n - block + 1)
        chunk = points[start : start + block]
        for key, fn in fns.items():
            t0 = time.perf_counter()
            for q in chunk:
                fn(q)
            per_call[key].append((time.perf_counter() - t0) / len(chunk))
    return {k: float(np.median(v)) for k, v in per_call.items()}


def suite_grid(sizes=(100, 100_000), n_points=2000, seed=0):
    rng = np.random.default_rng(seed)
    domain = DomainBox([-3.0, -0.5], [0.5, 3.0])
    points = domain.from_unit(rng.random((n_points, 2)))
    providers, exact_fns = {}, {}
    for n in sizes:
        model = build_model(generate_synthetic("logistic", n, seed))
        grid = build_force_map(model, domain, cells_for(domain, 0.1))
        providers[n] = GridForce(grid, model)
        exact_fns[n] = model.force
    lookup = median_latency(providers, points)
    exact = median_latency(exact_fns, points, rounds=5, block=40)
    lo, hi = min(sizes), max(sizes)
    r_lookup = lookup[hi] / lookup[lo]
    r_exact = exact[hi] / exact[lo]
    checks = [
        _check("lookup-latency-ratio", max(r_lookup, 1 / r_lookup), 2.0, max(r_lookup, 1 / r_lookup) < 2.0),
        _check("exact-latency-ratio", r_exact, 100.0, r_exact > 100.0),
    ]
    return _suite("grid", checks, lookup_seconds={str(k): v for k, v in lookup.items()}, exact_seconds={str(k): v for k, v in exact.items()})


SUITES = {
    "leapfrog": suite_leapfrog,
    "kl": suite_kl,
    "sparse": suite_sparse,
    "ess": suite_ess,
    "grid": suite_grid,
}


def run_suite(name):
    if name not in SUITES:
        raise ValidationError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return SUITES[name]()
