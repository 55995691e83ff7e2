"""Leapfrog integration, Metropolis correction and the HMC sampling loop.

The loop is shared by every sampler variant in the package: exact HMC, grid
HMC and sparse-grid HMC differ only in the force provider used inside the
trajectory and in the energy used for the accept/reject step.

Random stream order per iteration (fixed, so chains with different providers
see identical draws): ``dim`` standard normals for the momentum, then one
uniform for the accept test.  The uniform is drawn even when the proposal is
accepted outright.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import GridHMCError, ValidationError

#: trajectories whose energy error exceeds this are treated as divergent
DIVERGENCE_THRESHOLD = 1000.0


class ExactForce:
    """Force provider that calls the model's analytic force."""

    def __init__(self, model):
        self.model = model

    def evaluate(self, q):
        """Return ``(force, fell_back)``; exact evaluation never falls back."""
        return self.model.force(q), False

    def __call__(self, q):
        return self.model.force(q)


class Kinetic:
    """Gaussian kinetic energy ``K(p) = p' M^-1 p / 2`` for a fixed mass matrix."""

    def __init__(self, mass, dim):
        if mass is None:
            mass = np.ones(dim)
        mass = np.asarray(mass, dtype=float)
        if mass.ndim == 1:
            if mass.shape != (dim,) or np.any(mass <= 0) or not np.all(np.isfinite(mass)):
                raise ValidationError("diagonal mass must be a positive vector of length dim")
            self.diagonal = True
            self.inv = 1.0 / mass
            self.chol = np.sqrt(mass)
        else:
            if mass.shape != (dim, dim) or not np.allclose(mass, mass.T):
                raise ValidationError("mass matrix must be symmetric with shape (dim, dim)")
            try:
                self.chol = np.linalg.cholesky(mass)
            except np.linalg.LinAlgError as exc:
                raise ValidationError("mass matrix is not positive definite") from exc
            self.diagonal = False
            self.inv = np.linalg.inv(mass)

    def velocity(self, p):
        return self.inv * p if self.diagonal else self.inv @ p

    def energy(self, p):
        return 0.5 * float(p @ self.velocity(p))

    def draw(self, rng, dim):
        z = rng.standard_normal(dim)
        return self.chol * z if self.diagonal else self.chol @ z


@dataclass(frozen=True)
class HmcConfig:
    step_size: float
    n_steps: int
    iterations: int
    burn_in: int = 0
    mass: object = None
    seed: int = 0

    def __post_init__(self):
        if not (self.step_size > 0 and math.isfinite(self.step_size)):
            raise ValidationError("step size must be positive and finite")
        if int(self.n_steps) < 1:
            raise ValidationError("need at least one leapfrog step")
        if int(self.iterations) < 1:
            raise ValidationError("need at least one post burn-in iteration")
        if int(self.burn_in) < 0:
            raise ValidationError("burn-in cannot be negative")


@dataclass
class ChainState:
    q: np.ndarray
    p: np.ndarray


@dataclass
class ChainResult:
    samples: np.ndarray
    accepted: np.ndarray
    delta_h: np.ndarray
    seconds: np.ndarray
    momenta: np.ndarray
    accept_prob: np.ndarray
    fallbacks: int = 0
    force_calls: int = 0
    burn_in_accept_rate: float = float("nan")
    cpu_seconds: float = 0.0
    trajectory: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accepted))

    @property
    def total_seconds(self):
        return float(np.sum(self.seconds))

    @property
    def fallback_rate(self):
        return self.fallbacks / self.force_calls if self.force_calls else 0.0


def hamiltonian(potential_value, p, mass=None):
    """``H = U + p' M^-1 p / 2``; ``mass`` is None (identity), a diagonal vector or a matrix."""
    p = np.asarray(p, dtype=float)
    if mass is None:
        return float(potential_value) + 0.5 * float(p @ p)
    mass = np.asarray(mass, dtype=float)
    if mass.ndim == 1:
        if np.any(mass == 0):
            raise np.linalg.LinAlgError("singular mass matrix")
        return float(potential_value) + 0.5 * float(p @ (p / mass))
    return float(potential_value) + 0.5 * float(p @ np.linalg.solve(mass, p))


def _force_of(force, q):
    if hasattr(force, "evaluate"):
        return force.evaluate(q)
    return force(q), False


class Divergence(GridHMCError):
    pass


def _integrate(q, p, step_size, n_steps, force, kin, f0, trace=None):
    half = 0.5 * step_size
    f = f0
    for _ in range(n_steps):
        p = p + half * f
        q = q + step_size * kin.velocity(p)
        f, _ = _force_of(force, q)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(q))):
            raise Divergence("non-finite state inside trajectory")
        p = p + half * f
        if trace is not None:
            trace.append(q)
    return q, p, f


def leapfrog(state, step_size, n_steps, force, mass=None):
    """Integrate Hamilton's equations with ``n_steps`` half-kick/drift/half-kick steps.

    ``force`` is a provider with ``evaluate(q) -> (force, fell_back)`` or a
    plain callable returning the force.  Raises ``Divergence`` when the force
    or the position stops being finite.
    """
    q = np.array(state.q, dtype=float)
    p = np.array(state.p, dtype=float)
    if q.shape != p.shape:
        raise ValidationError("position and momentum have different shapes")
    kin = Kinetic(mass, q.size)
    f0, _ = _force_of(force, q)
    q, p, _ = _integrate(q, p, step_size, n_steps, force, kin, f0)
    return ChainState(q, p)


def metropolis_accept(h_old, h_new, u):
    """``u < min(1, exp(h_old - h_new))``; an infinite or NaN ``h_new`` always rejects."""
    if not math.isfinite(h_new):
        return False
    log_ratio = h_old - h_new
    if log_ratio >= 0:
        return True
    return u < math.exp(log_ratio)


class _Tally:
    """Wraps a provider to count calls and fallbacks for one chain."""

    def __init__(self, force):
        self.force = force
        self.calls = 0
        self.fallbacks = 0

    def evaluate(self, q):
        f, fell = _force_of(self.force, q)
        self.calls += 1
        self.fallbacks += bool(fell)
        return f, fell


def sample(model, config, force=None, energy=None, q1=None, *, record_trajectory=False):
    """Run ``burn_in + iterations`` HMC transitions and keep the last ``iterations``.

    ``force`` defaults to the model's exact force and ``energy`` (the potential
    used in the accept/reject step) to the model's exact potential.  Errors
    raised by providers during a trajectory are converted into rejections.
    """
    dim = model.dim
    force = ExactForce(model) if force is None else force
    energy = model.potential if energy is None else energy
    kin = Kinetic(config.mass, dim)
    q = np.zeros(dim) if q1 is None else np.array(q1, dtype=float)
    if q.shape != (dim,) or not np.all(np.isfinite(q)):
        raise ValidationError("initial position must be a finite vector of the model dimension")

    rng = np.random.default_rng(config.seed)
    tally = _Tally(force)
    total = config.burn_in + config.iterations
    samples = np.empty((config.iterations, dim))
    momenta = np.empty((config.iterations, dim))
    accepted = np.zeros(config.iterations, dtype=bool)
    delta_h = np.empty(config.iterations)
    accept_prob = np.empty(config.iterations)
    seconds = np.empty(config.iterations)
    burn_accepts = 0
    trace = [] if record_trajectory else None

    u_cur = float(energy(q))
    f_cur, _ = tally.evaluate(q)
    cpu0 = time.process_time()
    # divergent trajectories may overflow; the energy guard rejects them
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(total):
            t0 = time.perf_counter()
            p0 = kin.draw(rng, dim)
            u_draw = rng.random()
            h_old = u_cur + kin.energy(p0)
            try:
                q_new, p_new, f_new = _integrate(
                    q, p0, config.step_size, config.n_steps, tally, kin, f_cur,
                    trace if it < config.burn_in else None,
                )
                u_new = float(energy(q_new))
                h_new = u_new + kin.energy(p_new)
                if not math.isfinite(h_new) or abs(h_new - h_old) > DIVERGENCE_THRESHOLD:
                    h_new = math.inf
            except (GridHMCError, ArithmeticError, np.linalg.LinAlgError, ValueError):
                h_new = math.inf
            ok = metropolis_accept(h_old, h_new, u_draw)
            if ok:
                q, u_cur, f_cur = q_new, u_new, f_new
            dt = time.perf_counter() - t0
            k = it - config.burn_in
            if k < 0:
                burn_accepts += ok
                continue
            samples[k] = q
            momenta[k] = p0
            accepted[k] = ok
            delta_h[k] = h_new - h_old
            accept_prob[k] = 0.0 if not math.isfinite(h_new) else min(1.0, math.exp(min(0.0, h_old - h_new)))
            seconds[k] = dt
    cpu = time.process_time() - cpu0

    return ChainResult(
        samples=samples,
        accepted=accepted,
        delta_h=delta_h,
        seconds=seconds,
        momenta=momenta,
        accept_prob=accept_prob,
        fallbacks=tally.fallbacks,
        force_calls=tally.calls,
        burn_in_accept_rate=burn_accepts / config.burn_in if config.burn_in else float("nan"),
        cpu_seconds=cpu,
        trajectory=np.array(trace).reshape(-1, dim) if trace is not None else None,
    )
