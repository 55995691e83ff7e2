"""Target posteriors with analytic potential energy and force.

Every model exposes ``potential(q)`` (negative log posterior up to a constant),
``force(q)`` (the negative gradient of the potential) and ``dim``.  Data
dependent quantities are reduced to sufficient statistics at construction, so
the per-evaluation cost is as small as the model allows.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import NumericalError, ValidationError


def _check_spd(name, mat):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValidationError(f"{name} must be a square matrix, got shape {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=0, atol=1e-12 * max(1.0, np.abs(mat).max())):
        raise ValidationError(f"{name} is not symmetric")
    try:
        linalg.cholesky(mat, lower=True)
    except linalg.LinAlgError as exc:
        raise ValidationError(f"{name} is not positive definite") from exc
    return mat


def _hash_arrays(*parts):
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            arr = np.ascontiguousarray(part, dtype=float)
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        else:
            h.update(repr(part).encode())
        h.update(b"|")
    return h.hexdigest()


class PotentialModel:
    """Base class for targets ``P(q) ~ exp(-U(q))``."""

    name = "base"
    dim: int

    def potential(self, q):
        raise NotImplementedError

    def force(self, q):
        raise NotImplementedError

    def potential_batch(self, qs):
        """Potential at each row of ``qs``; subclasses vectorise where it pays."""
        qs = np.atleast_2d(np.asarray(qs, dtype=float))
        return np.array([self.potential(q) for q in qs])

    def fingerprint(self):
        """Stable hash of the model type, its parameters and its data."""
        raise NotImplementedError

    def _as_point(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dim,):
            raise ValidationError(f"{self.name}: expected a point of shape ({self.dim},), got {q.shape}")
        return q


class GaussianConjugateModel(PotentialModel):
    """Multivariate normal mean with known covariance and a conjugate normal prior.

    The potential is written in terms of the data mean only::

        U(mu) = N/2 (mu - ybar)' S^-1 (mu - ybar) + 1/2 (mu - mu0)' S0^-1 (mu - mu0)

    which differs from the full sum over observations by a data-only constant.
    """

    name = "gaussian"

    def __init__(self, ybar, n, sigma, sigma0, mu0):
        self.ybar = np.asarray(ybar, dtype=float).ravel()
        self.dim = self.ybar.size
        if int(n) < 1:
            raise ValidationError("N must be at least 1")
        self.n = int(n)
        self.sigma = _check_spd("Sigma", sigma)
        self.sigma0 = _check_spd("Sigma0", sigma0)
        self.mu0 = np.asarray(mu0, dtype=float).ravel()
        if self.sigma.shape != (self.dim, self.dim) or self.sigma0.shape != (self.dim, self.dim):
            raise ValidationError("covariance shapes do not match the data dimension")
        if self.mu0.shape != (self.dim,):
            raise ValidationError("mu0 has the wrong length")
        self._prec = np.linalg.inv(self.sigma)
        self._prec0 = np.linalg.inv(self.sigma0)

    @classmethod
    def from_data(cls, y, sigma, sigma0, mu0):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return cls(y.mean(axis=0), y.shape[0], sigma, sigma0, mu0)

    def potential(self, q):
        q = self._as_point(q)
        r = q - self.ybar
        r0 = q - self.mu0
        return 0.5 * self.n * r @ self._prec @ r + 0.5 * r0 @ self._prec0 @ r0

    def force(self, q):
        q = self._as_point(q)
        return -(self.n * self._prec @ (q - self.ybar) + self._prec0 @ (q - self.mu0))

    def potential_batch(self, qs):
        qs = np.atleast_2d(np.asarray(qs, dtype=float))
        r = qs - self.ybar
        r0 = qs - self.mu0
        return 0.5 * self.n * np.einsum("ij,jk,ik->i", r, self._prec, r) + 0.5 * np.einsum(
            "ij,jk,ik->i", r0, self._prec0, r0
        )

    def posterior_precision(self):
        return self.n * self._prec + self._prec0

    def fingerprint(self):
        return _hash_arrays(self.name, self.ybar, self.n, self.sigma, self.sigma0, self.mu0)


class LogisticModel(PotentialModel):
    """Bayesian logistic regression with an intercept column and a flat prior."""

    name = "logistic"

    def __init__(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValidationError("X and Y have different numbers of rows")
        if not np.all(X[:, 0] == 1.0):
            raise ValidationError("the first column of X must be all ones")
        if not np.all((y == 0) | (y == 1)):
            raise ValidationError("Y entries must be 0 or 1")
        self.X = X
        self.y = y
        self.dim = X.shape[1]
        self.n = X.shape[0]
        # X'Y is the only data statistic the linear term needs
        self.xty = X.T @ y

    @staticmethod
    def _softplus(z):
        # log(1 + exp(z)) without overflow
        return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))

    def potential(self, q):
        q = self._as_point(q)
        return float(np.sum(self._softplus(self.X @ q)) - self.xty @ q)

    def force(self, q):
        q = self._as_point(q)
        return self.xty - self.X.T @ expit(self.X @ q)

    def potential_batch(self, qs):
        qs = np.atleast_2d(np.asarray(qs, dtype=float))
        out = np.empty(qs.shape[0])
        step = max(1, 2_000_000 // max(self.n, 1))
        for start in range(0, qs.shape[0], step):
            block = qs[start : start + step]
            z = self.X @ block.T
            out[start : start + step] = self._softplus(z).sum(axis=0) - block @ self.xty
        return out

    def probabilities(self, q):
        return expit(self.X @ self._as_point(q))

    def fingerprint(self):
        return _hash_arrays(self.name, self.X, self.y)


class BananaModel(PotentialModel):
    """``y ~ N(b1 + b2^2, sy^2)`` with independent ``N(0, sb^2)`` priors on (b1, b2)."""

    name = "banana"
    dim = 2

    def __init__(self, y, sigma_y=2.0, sigma_beta=1.0):
        if sigma_y <= 0 or sigma_beta <= 0:
            raise ValidationError("sigma_y and sigma_beta must be positive")
        self.y = np.asarray(y, dtype=float).ravel()
        self.n = self.y.size
        self.sigma_y = float(sigma_y)
        self.sigma_beta = float(sigma_beta)
        self._sy = self.y.sum()
        self._syy = self.y @ self.y

    def _resid_sq(self, s):
        # sum_i (y_i - s)^2 from cached moments
        return self._syy - 2.0 * s * self._sy + self.n * s * s

    def potential(self, q):
        b1, b2 = self._as_point(q)
        s = b1 + b2 * b2
        return self._resid_sq(s) / (2 * self.sigma_y**2) + (b1 * b1 + b2 * b2) / (2 * self.sigma_beta**2)

    def force(self, q):
        q = self._as_point(q)
        b1, b2 = q
        g = (self._sy - self.n * (b1 + b2 * b2)) / self.sigma_y**2
        return g * np.array([1.0, 2.0 * b2]) - q / self.sigma_beta**2

    def potential_batch(self, qs):
        qs = np.atleast_2d(np.asarray(qs, dtype=float))
        s = qs[:, 0] + qs[:, 1] ** 2
        return self._resid_sq(s) / (2 * self.sigma_y**2) + (qs**2).sum(axis=1) / (2 * self.sigma_beta**2)

    def fingerprint(self):
        return _hash_arrays(self.name, self.y, self.sigma_y, self.sigma_beta)


class GpHyperModel(PotentialModel):
    """Log-hyperparameters (eta, l, J) of a zero-mean GP with squared exponential kernel.

    ``Sigma = exp(eta) * exp(-exp(l) * D) + exp(J) * I`` where ``D`` holds pairwise
    squared distances.  Each log-hyperparameter has a ``N(-1, 1)`` prior.
    """

    name = "gp"
    dim = 3
    prior_mean = -1.0
    prior_var = 1.0

    def __init__(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        self.x = x
        self.y = np.asarray(y, dtype=float).ravel()
        if x.shape[0] != self.y.size:
            raise ValidationError("input sites and observations differ in length")
        self.n = self.y.size
        diff = x[:, None, :] - x[None, :, :]
        self.sqdist = np.einsum("ijk,ijk->ij", diff, diff)
        self._eye = np.eye(self.n)

    def covariance(self, q):
        eta, ell, jit = np.exp(self._as_point(q))
        return eta * np.exp(-ell * self.sqdist) + jit * self._eye

    def _factor(self, q):
        cov = self.covariance(q)
        try:
            return cov, linalg.cho_factor(cov, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"GP covariance is not positive definite at {np.asarray(q).tolist()}") from exc

    def _prior(self, q):
        r = q - self.prior_mean
        return 0.5 * (r @ r) / self.prior_var

    def potential(self, q):
        q = self._as_point(q)
        _, cf = self._factor(q)
        alpha = linalg.cho_solve(cf, self.y, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        return 0.5 * logdet + 0.5 * self.y @ alpha + self._prior(q)

    def force(self, q):
        q = self._as_point(q)
        eta, ell, jit = np.exp(q)
        _, cf = self._factor(q)
        inv = linalg.cho_solve(cf, self._eye, check_finite=False)
        alpha = inv @ self.y
        kern = eta * np.exp(-ell * self.sqdist)
        # dSigma/d(log eta) = kern, dSigma/d(log l) = -l * D * kern, dSigma/d(log J) = J * I
        d_ell = -ell * self.sqdist * kern
        grad = np.array(
            [
                0.5 * np.sum(inv * kern) - 0.5 * alpha @ kern @ alpha,
                0.5 * np.sum(inv * d_ell) - 0.5 * alpha @ d_ell @ alpha,
                0.5 * jit * np.trace(inv) - 0.5 * jit * alpha @ alpha,
            ]
        )
        grad += (q - self.prior_mean) / self.prior_var
        return -grad

    def fingerprint(self):
        return _hash_arrays(self.name, self.x, self.y)


class CountingModel(PotentialModel):
    """Proxy that counts potential and force evaluations of a wrapped model."""

    def __init__(self, model):
        self.model = model
        self.name = model.name
        self.dim = model.dim
        self.potential_calls = 0
        self.force_calls = 0

    @property
    def evaluations(self):
        return self.potential_calls + self.force_calls

    def potential(self, q):
        self.potential_calls += 1
        return self.model.potential(q)

    def force(self, q):
        self.force_calls += 1
        return self.model.force(q)

    def potential_batch(self, qs):
        qs = np.atleast_2d(qs)
        self.potential_calls += qs.shape[0]
        return self.model.potential_batch(qs)

    def fingerprint(self):
        return self.model.fingerprint()


# ---------------------------------------------------------------------------
# datasets

@dataclass
class Dataset:
    """Named columns of equal length, one row per observation."""

    model: str
    columns: dict = field(default_factory=dict)

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def digest(self):
        h = hashlib.sha256(self.model.encode())
        for key in sorted(self.columns):
            h.update(key.encode())
            h.update(np.ascontiguousarray(self.columns[key], dtype=float).tobytes())
        return h.hexdigest()


MODEL_COLUMNS = {
    "logistic": ["x1", "y"],
    "banana": ["y"],
    "gp": ["x1", "x2", "y"],
    "gaussian": ["y1", "y2"],
}

DEFAULT_TRUTH = {
    "logistic": {"beta": [-1.0, 1.0]},
    "banana": {"beta": [1.0, 0.0], "sigma_y": 2.0},
    "gp": {"log_eta": 0.0, "log_l": 1.0, "log_j": -0.5},
    "gaussian": {"mu": [0.0, 0.0], "sigma": [[1.0, 0.5], [0.5, 1.0]]},
}


def generate_synthetic(model, n, seed, **truth):
    """Draw a reproducible synthetic dataset for one of the named models.

    Logistic responses are Bernoulli with probabilities from ``beta`` and a
    standard normal covariate; banana responses are ``N(b1 + b2^2, sigma_y^2)``;
    GP responses are drawn from ``N(0, Sigma)`` at uniform sites in the unit
    square; Gaussian observations are ``N(mu, sigma)``.
    """
    if model not in MODEL_COLUMNS:
        raise ValidationError(f"unknown model {model!r}; choose from {sorted(MODEL_COLUMNS)}")
    if int(n) < 1:
        raise ValidationError("N must be at least 1")
    n = int(n)
    params = {**DEFAULT_TRUTH[model], **truth}
    rng = np.random.default_rng(seed)
    if model == "logistic":
        beta = np.asarray(params["beta"], dtype=float)
        x1 = rng.standard_normal(n)
        p = expit(beta[0] + beta[1] * x1)
        y = (rng.random(n) < p).astype(float)
        return Dataset(model, {"x1": x1, "y": y})
    if model == "banana":
        b1, b2 = params["beta"]
        y = rng.normal(b1 + b2 * b2, params["sigma_y"], size=n)
        return Dataset(model, {"y": y})
    if model == "gp":
        x = rng.random((n, 2))
        q = np.array([params["log_eta"], params["log_l"], params["log_j"]])
        cov = GpHyperModel(x, np.zeros(n)).covariance(q)
        y = np.linalg.cholesky(cov) @ rng.standard_normal(n)
        return Dataset(model, {"x1": x[:, 0], "x2": x[:, 1], "y": y})
    mu = np.asarray(params["mu"], dtype=float)
    y = rng.multivariate_normal(mu, np.asarray(params["sigma"], dtype=float), size=n)
    return Dataset(model, {"y1": y[:, 0], "y2": y[:, 1]})


def build_model(dataset, **options):
    """Construct the model matching ``dataset.model`` from its columns."""
    cols = dataset.columns
    if dataset.model == "logistic":
        x1 = np.asarray(cols["x1"], dtype=float)
        return LogisticModel(np.column_stack([np.ones_like(x1), x1]), cols["y"])
    if dataset.model == "banana":
        return BananaModel(cols["y"], options.get("sigma_y", 2.0), options.get("sigma_beta", 1.0))
    if dataset.model == "gp":
        return GpHyperModel(np.column_stack([cols["x1"], cols["x2"]]), cols["y"])
    if dataset.model == "gaussian":
        y = np.column_stack([cols["y1"], cols["y2"]])
        sigma = options.get("sigma", DEFAULT_TRUTH["gaussian"]["sigma"])
        return GaussianConjugateModel.from_data(
            y, sigma, options.get("sigma0", np.eye(2)), options.get("mu0", np.zeros(2))
        )
    raise ValidationError(f"unknown model {dataset.model!r}")


def write_dataset_csv(dataset, path):
    path = Path(path)
    names = MODEL_COLUMNS[dataset.model]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in zip(*(dataset.columns[n] for n in names)):
            writer.writerow([repr(float(v)) for v in row])


def read_dataset_csv(model, path):
    if model not in MODEL_COLUMNS:
        raise ValidationError(f"unknown model {model!r}")
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"dataset file {path} does not exist")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = [[float(v) for v in row] for row in reader if row]
    need = MODEL_COLUMNS[model]
    if header is None or any(n not in header for n in need):
        raise ValidationError(f"{path}: header must name columns {need}, got {header}")
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return Dataset(model, {n: data[:, header.index(n)] for n in need})
