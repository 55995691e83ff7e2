"""Approximate potentials for the accept/reject step and a numerical KL-bound check.

Sampling with an approximate potential ``V`` in the correction targets
``Q ~ exp(-V)`` instead of ``P ~ exp(-U)``; the KL divergence between the two
is at most ``2 * sup|U - V|``.  ``kl_bound_check`` measures both sides on a
box: the sup on a probe lattice plus random probes, the divergence by
normalised trapezoidal quadrature.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from .domain import DomainBox, find_mode, laplace_box
from .errors import NumericalError, ValidationError
from .grid import multilinear_batch
from .sparse import interpolate_batch


class MultilinearEnergy:
    """Multilinear interpolation of a grid's vertex potentials; exact potential outside the box."""

    def __init__(self, grid, model):
        if grid.vertex_potential is None:
            raise ValidationError("grid was built without vertex potentials")
        self.grid = grid
        self.model = model
        self.domain = grid.domain
        d = grid.domain
        self._axes = list(zip(d.lo.tolist(), d.hi.tolist(), grid.cells, d.widths.tolist()))
        self._table = grid.vertex_potential
        self._dim = grid.dim

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        base, frac = [], []
        for x, (lo, hi, n, w) in zip(q.tolist(), self._axes):
            if not lo <= x <= hi:
                return self.model.potential(q)
            t = (x - lo) * n / w
            i = min(int(t), n - 1)
            base.append(i)
            frac.append(t - i)
        total = 0.0
        for corner in range(1 << self._dim):
            w = 1.0
            idx = []
            for k in range(self._dim):
                if (corner >> k) & 1:
                    w *= frac[k]
                    idx.append(base[k] + 1)
                else:
                    w *= 1.0 - frac[k]
                    idx.append(base[k])
            if w:
                total += w * self._table[tuple(idx)]
        return float(total)

    def batch(self, qs):
        qs = np.atleast_2d(np.asarray(qs, dtype=float))
        inside = self.domain.contains_rows(qs)
        out = np.empty(qs.shape[0])
        if inside.any():
            out[inside] = multilinear_batch(self.grid, qs[inside])
        if (~inside).any():
            out[~inside] = self.model.potential_batch(qs[~inside])
        return out


class SparseEnergy:
    """Sparse-grid interpolant of the potential; exact potential outside its box."""

    def __init__(self, interp, model):
        if interp.surplus.ndim != 1:
            raise ValidationError("need a scalar (potential) interpolant")
        self.interp = interp
        self.model = model
        self.domain = interp.domain
        self._lo, self._hi, self._w = interp.domain.lo, interp.domain.hi, interp.domain.widths

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        if np.any(q < self._lo) or np.any(q > self._hi):
            return self.model.potential(q)
        return float(self.interp.eval_unit((q - self._lo) / self._w))

    def batch(self, qs):
        qs = np.atleast_2d(np.asarray(qs, dtype=float))
        inside = self.domain.contains_rows(qs)
        out = np.empty(qs.shape[0])
        if inside.any():
            out[inside] = interpolate_batch(self.interp, qs[inside])
        if (~inside).any():
            out[~inside] = self.model.potential_batch(qs[~inside])
        return out


def approx_potential(energy, q):
    return energy(q)


@dataclass
class KlReport:
    sup_abs_diff: float
    bound: float
    kl_estimate: float
    probe_points: int
    quadrature_points: int
    tolerance: float = 1e-3
    mass_check: bool | None = None

    @property
    def holds(self):
        return self.kl_estimate <= self.bound + self.tolerance

    def to_dict(self):
        doc = asdict(self)
        doc["holds"] = self.holds
        return doc


def _lattice(domain, per_axis):
    axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(domain.lo, domain.hi, per_axis)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1), axes


def _batch(fn, qs):
    if hasattr(fn, "batch"):
        return np.asarray(fn.batch(qs), dtype=float)
    if hasattr(fn, "potential_batch"):
        return np.asarray(fn.potential_batch(qs), dtype=float)
    return np.array([fn(q) for q in qs], dtype=float)


def trapezoid_weights(axes):
    """Tensor-product trapezoid weights for the lattice built from ``axes``."""
    w = np.ones(1)
    for ax in axes:
        h = np.diff(ax)
        wk = np.zeros(ax.size)
        wk[:-1] += 0.5 * h
        wk[1:] += 0.5 * h
        w = np.multiply.outer(w, wk).ravel()
    return w


def kl_divergence_quadrature(u_vals, v_vals, weights):
    """KL(P||Q) for densities ``exp(-u)`` and ``exp(-v)`` normalised by the same quadrature."""
    logw = np.log(weights)
    lp = -u_vals + logw
    lq = -v_vals + logw
    log_zp = logsumexp(lp)
    log_zq = logsumexp(lq)
    p = np.exp(lp - log_zp)
    kl = float(np.sum(p * (v_vals - u_vals)) + (log_zq - log_zp))
    if not np.isfinite(kl):
        raise NumericalError("quadrature produced a non-finite divergence")
    return kl


def kl_bound_check(u_exact, u_approx, domain, probe_resolution=None, quadrature_resolution=None, *, n_random=10_000, seed=0, tolerance=1e-3, model=None, mass=1 - 1e-6):
    """Compare the quadrature KL divergence with twice the probed sup of ``|U - V|``.

    ``u_exact`` and ``u_approx`` are callables (ideally with a ``batch``
    method or a model's ``potential_batch``).  The quadrature lattice is a
    part of the probe set, so the discrete estimate cannot exceed twice the
    probed sup.  When ``model`` is given, the report records whether the
    box contains a Laplace box of the requested ``mass``.
    """
    if not isinstance(domain, DomainBox):
        raise ValidationError("domain must be a DomainBox")
    d = domain.dim
    if d > 3:
        raise ValidationError("quadrature is limited to three dimensions")
    quad = np.broadcast_to(np.asarray(quadrature_resolution or {1: 2001, 2: 201, 3: 41}[d]), (d,)).astype(int)
    if probe_resolution is None:
        probe = 4 * (quad - 1) + 1
    else:
        probe = np.broadcast_to(np.asarray(probe_resolution), (d,)).astype(int)

    qpts, qaxes = _lattice(domain, quad)
    u_q = _batch(u_exact, qpts)
    v_q = _batch(u_approx, qpts)
    kl = kl_divergence_quadrature(u_q, v_q, trapezoid_weights(qaxes))

    ppts, _ = _lattice(domain, probe)
    rng = np.random.default_rng(seed)
    rpts = domain.from_unit(rng.random((n_random, d)))
    sup = 0.0
    for pts in (ppts, rpts):
        step = 200_000
        for start in range(0, pts.shape[0], step):
            block = pts[start : start + step]
            sup = max(sup, float(np.max(np.abs(_batch(u_exact, block) - _batch(u_approx, block)))))
    sup = max(sup, float(np.max(np.abs(u_q - v_q))))

    mass_ok = None
    if model is not None:
        try:
            box = laplace_box(find_mode(model, (domain.lo + domain.hi) / 2), mass)
            mass_ok = bool(np.all(box.lo >= domain.lo) and np.all(box.hi <= domain.hi))
        except (NumericalError, ValidationError):
            mass_ok = False
    return KlReport(sup, 2 * sup, kl, int(ppts.shape[0] + rpts.shape[0]), int(qpts.shape[0]), tolerance, mass_ok)
