"""Domain-of-interest boxes: manual, Laplace-approximation and burn-in trajectory hulls."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import NumericalError, ValidationError


@dataclass(frozen=True, eq=False)
class DomainBox:
    """Axis-aligned box ``[lo, hi]`` with a record of how it was obtained."""

    lo: np.ndarray
    hi: np.ndarray
    provenance: str = "manual"

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape or lo.size == 0:
            raise ValidationError("lo and hi must be non-empty vectors of the same length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValidationError("domain bounds must be finite")
        if np.any(hi <= lo):
            raise ValidationError(f"degenerate domain: need lo < hi on every axis, got {lo} / {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    @property
    def widths(self):
        return self.hi - self.lo

    def contains(self, q):
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.lo) and np.all(q <= self.hi))

    def contains_rows(self, qs):
        qs = np.atleast_2d(qs)
        return np.all((qs >= self.lo) & (qs <= self.hi), axis=1)

    def to_unit(self, q):
        return (np.asarray(q, dtype=float) - self.lo) / self.widths

    def from_unit(self, x):
        return self.lo + np.asarray(x, dtype=float) * self.widths

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "provenance": self.provenance}

    @classmethod
    def from_dict(cls, doc):
        return cls(np.asarray(doc["lo"], dtype=float), np.asarray(doc["hi"], dtype=float), doc.get("provenance", "manual"))

    def __repr__(self):
        return f"DomainBox(lo={self.lo.tolist()}, hi={self.hi.tolist()}, provenance={self.provenance!r})"


@dataclass
class LaplaceFit:
    mode: np.ndarray
    hessian: np.ndarray
    iterations: int
    potential_trace: list

    @property
    def covariance(self):
        return np.linalg.inv(self.hessian)


def fd_hessian(model, q, step=1e-4):
    """Hessian of the potential by central differences of the analytic force, symmetrised."""
    q = np.asarray(q, dtype=float)
    d = q.size
    hess = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        hess[i] = -(model.force(q + e) - model.force(q - e)) / (2 * step)
    return 0.5 * (hess + hess.T)


def find_mode(model, q0, tol=1e-8, max_iters=200):
    """Minimise the potential by damped Newton steps with a backtracking line search.

    Uses the finite-difference Hessian when it is positive definite and the
    force direction otherwise; every accepted step lowers the potential.  The
    returned Hessian must be positive definite.
    """
    q = np.array(q0, dtype=float)
    if q.shape != (model.dim,) or not np.all(np.isfinite(q)):
        raise ValidationError("starting point must be a finite vector of the model dimension")
    u = model.potential(q)
    trace = [u]
    for it in range(max_iters):
        f = model.force(q)
        if np.max(np.abs(f)) < tol:
            hess = fd_hessian(model, q)
            if np.any(np.linalg.eigvalsh(hess) <= 0):
                raise NumericalError(f"Hessian at the stationary point {q.tolist()} is not positive definite")
            return LaplaceFit(q, hess, it, trace)
        hess = fd_hessian(model, q)
        try:
            np.linalg.cholesky(hess)
            direction = np.linalg.solve(hess, f)
        except np.linalg.LinAlgError:
            direction = f
        if direction @ f <= 0:
            direction = f
        step = 1.0
        slope = direction @ f
        while step > 1e-12:
            cand = q + step * direction
            try:
                u_cand = model.potential(cand)
            except (NumericalError, ArithmeticError):
                u_cand = np.inf
            if np.isfinite(u_cand) and u_cand <= u - 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            # no decrease is available at machine precision
            f_norm = np.max(np.abs(f))
            raise NumericalError(f"line search stalled at {q.tolist()} with force norm {f_norm:.3e}")
        q, u = cand, u_cand
        trace.append(u)
    raise NumericalError(f"mode search did not converge within {max_iters} iterations")


def laplace_box(fit, coverage=0.999):
    """Box ``mode +- z * sd`` whose per-axis coverage is ``coverage ** (1/d)``."""
    if not 0 < coverage < 1:
        raise ValidationError("coverage must lie strictly between 0 and 1")
    try:
        cov = np.linalg.inv(fit.hessian)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Hessian is singular") from exc
    d = fit.mode.size
    per_axis = coverage ** (1.0 / d)
    z = norm.ppf(0.5 * (1.0 + per_axis))
    sd = np.sqrt(np.diag(cov))
    return DomainBox(fit.mode - z * sd, fit.mode + z * sd, f"laplace({coverage})")


def trajectory_box(points, padding=0.1):
    """Bounding box of visited positions, widened by ``padding * range`` on each side."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValidationError("no trajectory points given")
    pts = np.atleast_2d(pts)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = hi - lo
    if np.any(span <= 0):
        raise ValidationError("trajectory points do not span every axis")
    return DomainBox(lo - padding * span, hi + padding * span, f"trajectory({padding})")
