"""Effective sample size and time-normalised efficiency of chains.

ESS follows Geyer's initial monotone sequence estimator: autocorrelations
are summed in adjacent pairs ``G_m = rho(2m) + rho(2m+1)`` (with
``rho(0) = 1``), the sum stops before the first non-positive pair, and the
retained pairs are made non-increasing.  Then ``tau = -1 + 2 * sum(G_m)`` and
``ESS = B / tau``.  ``tau`` is floored at ``1 / log10(B)`` so antithetic
chains give a large but finite ESS.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError


class DegenerateChain(ValidationError):
    """The chain column has zero variance."""


def _check(x):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 10:
        raise ValidationError("need at least 10 draws")
    if not np.all(np.isfinite(x)):
        raise ValidationError("chain contains non-finite values")
    return x


def autocorrelation(x, max_lag=None):
    """Biased sample autocorrelations ``rho(1..max_lag)`` of a mean-centred series."""
    x = _check(x)
    n = x.size
    max_lag = n - 1 if max_lag is None else min(int(max_lag), n - 1)
    xc = x - x.mean()
    var = xc @ xc / n
    if var <= 0 or var < 1e-300:
        raise DegenerateChain("zero-variance chain")
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(xc, size)
    acov = np.fft.irfft(spec * np.conj(spec), size)[: max_lag + 1] / n
    return acov[1:] / acov[0]


def _tau_from_rho(rho_full, n):
    # rho_full[0] == 1
    tau_sum = 0.0
    prev = math.inf
    m = 0
    while 2 * m + 1 < rho_full.size:
        pair = rho_full[2 * m] + rho_full[2 * m + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau_sum += pair
        prev = pair
        m += 1
    tau = -1.0 + 2.0 * tau_sum
    return max(tau, 1.0 / math.log10(n))


def ess(x):
    """Effective sample size of one chain column."""
    x = _check(x)
    try:
        rho = autocorrelation(x)
    except DegenerateChain:
        return float(x.size)
    return x.size / _tau_from_rho(np.concatenate([[1.0], rho]), x.size)


def ess_reference(x):
    """Same estimator with naive lag-by-lag sums, computing lags only as needed."""
    x = _check(x)
    n = x.size
    xc = x - x.mean()
    c0 = sum(v * v for v in xc) / n
    if c0 <= 0:
        return float(n)

    def rho(k):
        if k == 0:
            return 1.0
        return float(np.dot(xc[: n - k], xc[k:])) / n / c0

    tau_sum = 0.0
    prev = math.inf
    m = 0
    while 2 * m + 1 <= n - 1:
        pair = rho(2 * m) + rho(2 * m + 1)
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau_sum += pair
        prev = pair
        m += 1
    tau = max(-1.0 + 2.0 * tau_sum, 1.0 / math.log10(n))
    return n / tau


@dataclass
class EfficiencyReport:
    ess: list
    acceptance_rate: float
    seconds_per_iteration: float
    min_ess_per_second: float
    total_seconds: float
    iterations: int
    ess_above_b: list
    degenerate: list
    cpu_seconds: float | None = None
    precompute_seconds: float | None = None
    fallback_rate: float | None = None
    label: str = ""

    def to_dict(self):
        return asdict(self)


def efficiency_report(result, label="", precompute_seconds=None):
    """Acceptance rate, per-parameter ESS, seconds per iteration and min ESS per second."""
    samples = np.asarray(result.samples)
    b = samples.shape[0]
    if b < 100:
        raise ValidationError("need at least 100 post burn-in samples")
    values, degenerate = [], []
    for k in range(samples.shape[1]):
        col = samples[:, k]
        degenerate.append(bool(np.ptp(col) == 0))
        values.append(float(ess(col)))
    total = float(np.sum(result.seconds))
    return EfficiencyReport(
        ess=values,
        acceptance_rate=float(np.mean(result.accepted)),
        seconds_per_iteration=total / b,
        min_ess_per_second=min(values) / total if total > 0 else math.inf,
        total_seconds=total,
        iterations=b,
        ess_above_b=[v > b for v in values],
        degenerate=degenerate,
        cpu_seconds=getattr(result, "cpu_seconds", None),
        precompute_seconds=precompute_seconds,
        fallback_rate=getattr(result, "fallback_rate", None),
        label=label,
    )


def format_table(reports):
    """Aligned text table with one row per method."""
    head = ["Method", "AR", "ESS", "s/Iteration", "min ESS/s", "precompute s", "fallback"]
    rows = []
    for r in reports:
        rows.append(
            [
                r.label or "-",
                f"{r.acceptance_rate:.4f}",
                "(" + ", ".join(f"{v:.1f}" for v in r.ess) + ")",
                f"{r.seconds_per_iteration:.4E}",
                f"{r.min_ess_per_second:.4f}",
                "-" if r.precompute_seconds is None else f"{r.precompute_seconds:.3f}",
                "-" if r.fallback_rate is None else f"{r.fallback_rate:.4f}",
            ]
        )
    widths = [max(len(str(x)) for x in col) for col in zip(head, *rows)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)
