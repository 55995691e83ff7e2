"""Smolyak sparse-grid interpolation on nested Clenshaw-Curtis type nodes.

Levels are numbered from 1.  Level ``i`` has ``m_i`` equispaced nodes on
[0, 1] (``m_1 = 1`` with the single node 0.5, ``m_i = 2**(i-1) + 1``
otherwise) and the node sets are nested.  Each new node of a level carries a
piecewise-linear hat of half-width ``1/(m_i - 1)``; the level-1 function is the
constant 1.

An interpolant of depth ``k`` uses every multi-level ``i`` with
``|i| <= d + k`` and stores one hierarchical surplus per sparse-grid node: the
function value there minus the interpolant of the previous depth.  Evaluation
is a sum of surplus-weighted tensor products of hats; gradients replace one
hat factor by its slope, taking the left derivative at kinks.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from .domain import DomainBox
from .errors import CacheError, GridHMCError, NumericalError, OutOfDomain, ValidationError

FORMAT_VERSION = 1
_CHUNK = 4_000_000


def n_nodes(level):
    if level < 1:
        raise ValidationError("levels start at 1")
    return 1 if level == 1 else 2 ** (level - 1) + 1


def cc_nodes(level):
    """Sorted nodes of one level."""
    m = n_nodes(level)
    if m == 1:
        return np.array([0.5])
    return np.arange(m) / (m - 1)


def new_node_indices(level):
    """1-based indices ``j`` of the nodes first appearing at ``level``."""
    if level == 1:
        return [1]
    if level == 2:
        return [1, 3]
    return list(range(2, n_nodes(level), 2))


def node_coord(level, j):
    m = n_nodes(level)
    return 0.5 if m == 1 else (j - 1) / (m - 1)


def basis_eval(level, j, x):
    """Hat function ``a_j^level`` at ``x``; level 1 is identically one."""
    m = n_nodes(level)
    if m == 1:
        return 1.0
    dist = abs(x - node_coord(level, j))
    return 1.0 - (m - 1) * dist if dist < 1.0 / (m - 1) else 0.0


def basis_slope(level, j, x):
    """Left derivative of ``a_j^level`` at ``x``."""
    m = n_nodes(level)
    if m == 1:
        return 0.0
    diff = x - node_coord(level, j)
    h = 1.0 / (m - 1)
    if -h < diff <= 0:
        return float(m - 1)
    if 0 < diff <= h:
        return -float(m - 1)
    return 0.0


def multi_levels(total, d):
    """All ``d``-tuples of levels >= 1 summing to ``total``."""
    if total < d:
        return []
    out = []
    for cuts in itertools.combinations(range(1, total), d - 1):
        bounds = (0,) + cuts + (total,)
        out.append(tuple(bounds[k + 1] - bounds[k] for k in range(d)))
    return sorted(out)


def sparse_grid_points(q, d):
    """The node set ``H_{q,d}``: union of full tensor grids with ``q-d+1 <= |i| <= q``."""
    if d < 1 or q < d:
        raise ValidationError("need q >= d >= 1")
    pts = set()
    for total in range(max(d, q - d + 1), q + 1):
        for levels in multi_levels(total, d):
            for node in itertools.product(*(cc_nodes(i) for i in levels)):
                pts.add(tuple(float(v) for v in node))
    return np.array(sorted(pts))


@dataclass(eq=False)
class SparseInterpolant:
    """Hierarchical surplus expansion on a box.

    ``levels`` and ``indices`` are ``(R, d)`` integer arrays (one row per
    sparse-grid node); ``surplus`` is ``(R,)`` for scalar functions or
    ``(R, m)`` for vector-valued ones.
    """

    domain: DomainBox
    depth: int
    levels: np.ndarray
    indices: np.ndarray
    surplus: np.ndarray
    depth_of: np.ndarray
    max_surplus: list = field(default_factory=list)
    fingerprint: str = ""

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=int).reshape(-1, self.dim)
        self.indices = np.asarray(self.indices, dtype=int).reshape(-1, self.dim)
        self.surplus = np.asarray(self.surplus, dtype=float)
        self.depth_of = np.asarray(self.depth_of, dtype=int)
        self._refresh()

    def _refresh(self):
        m = np.where(self.levels == 1, 1, 2 ** (self.levels - 1) + 1)
        self._scale = (m - 1).astype(float)
        self._centers = np.where(m == 1, 0.5, (self.indices - 1) / np.maximum(m - 1, 1))
        with np.errstate(divide="ignore"):
            self._half = np.where(self._scale > 0, 1.0 / np.where(self._scale > 0, self._scale, 1.0), np.inf)
        self._cols = (
            [np.ascontiguousarray(self._centers[:, k]) for k in range(self.dim)],
            [np.ascontiguousarray(self._scale[:, k]) for k in range(self.dim)],
            [np.ascontiguousarray(self._half[:, k]) for k in range(self.dim)],
        )

    @property
    def dim(self):
        return self.domain.dim

    @property
    def q(self):
        return self.dim + self.depth

    @property
    def n_points(self):
        return self.levels.shape[0]

    @property
    def error_estimate(self):
        """Largest surplus magnitude at the final depth."""
        return self.max_surplus[-1] if self.max_surplus else float("nan")

    def unit_nodes(self):
        return self._centers.copy()

    def nodes(self):
        return self.domain.from_unit(self._centers)

    # -- evaluation -------------------------------------------------------
    def _phi(self, x):
        return np.maximum(1.0 - self._scale * np.abs(x - self._centers), 0.0)

    def eval_unit(self, x):
        phi = self._phi(x)
        return np.prod(phi, axis=1) @ self.surplus

    def eval_unit_batch(self, xs):
        xs = np.atleast_2d(xs)
        if self.n_points == 0:
            shape = (xs.shape[0],) + self.surplus.shape[1:]
            return np.zeros(shape)
        out = []
        step = max(1, _CHUNK // (self.n_points * self.dim))
        for start in range(0, xs.shape[0], step):
            block = xs[start : start + step]
            phi = np.maximum(1.0 - self._scale * np.abs(block[:, None, :] - self._centers), 0.0)
            out.append(np.prod(phi, axis=2) @ self.surplus)
        return np.concatenate(out, axis=0)

    def grad_unit(self, x):
        d = self.dim
        cols_c, cols_s, cols_h = self._cols
        phi, slope = [], []
        for k in range(d):
            diff = x[k] - cols_c[k]
            sk = cols_s[k]
            phi.append(np.maximum(1.0 - sk * np.abs(diff), 0.0))
            # left derivative: the kink at the node takes the rising slope
            inside = (diff > -cols_h[k]) & (diff <= cols_h[k])
            slope.append(np.where(diff > 0, -sk, sk) * inside)
        grads = np.empty(d)
        for k in range(d):
            term = slope[k]
            for j in range(d):
                if j != k:
                    term = term * phi[j]
            grads[k] = term @ self.surplus
        return grads

    def _check(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dim,):
            raise ValidationError(f"expected a point of shape ({self.dim},)")
        if not self.domain.contains(q):
            raise OutOfDomain(f"{q.tolist()} is outside {self.domain}")
        return self.domain.to_unit(q)


def interpolate(interp, q):
    """Interpolant value at a point of the interpolant's box."""
    return interp.eval_unit(interp._check(q))


def interpolate_batch(interp, qs):
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    if not np.all(interp.domain.contains_rows(qs)):
        raise OutOfDomain("some points are outside the interpolant box")
    return interp.eval_unit_batch(interp.domain.to_unit(qs))


def interpolant_gradient(interp, q):
    """Gradient with respect to the model coordinates (scalar interpolants only)."""
    if interp.surplus.ndim != 1:
        raise ValidationError("gradient is defined for scalar interpolants")
    return interp.grad_unit(interp._check(q)) / interp.domain.widths


def _depth_nodes(d, k):
    levels, indices = [], []
    for lv in multi_levels(d + k, d):
        for idx in itertools.product(*(new_node_indices(i) for i in lv)):
            levels.append(lv)
            indices.append(idx)
    return np.array(levels, dtype=int).reshape(-1, d), np.array(indices, dtype=int).reshape(-1, d)


def build_interpolant(f, domain, max_depth=6, tolerance=None, *, fingerprint=""):
    """Build the surplus expansion of ``f`` depth by depth.

    ``f`` takes a point of ``domain`` and returns a scalar or a vector.  The
    build stops after depth ``max_depth`` or, from depth 1 on, as soon as the
    largest new surplus falls below ``tolerance``.  ``tolerance=None`` picks
    ``1e-3`` times the range of ``f`` over the depth-0 and depth-1 nodes;
    ``tolerance=0`` always builds to ``max_depth``.  ``f`` is called exactly
    once per node.
    """
    if max_depth < 0:
        raise ValidationError("max_depth must be non-negative")
    if tolerance is not None and tolerance < 0:
        raise ValidationError("tolerance must be non-negative")
    d = domain.dim
    interp = None
    all_vals = []
    for k in range(max_depth + 1):
        lv, ix = _depth_nodes(d, k)
        probe = SparseInterpolant(domain, k, lv, ix, np.zeros(lv.shape[0]), np.full(lv.shape[0], k))
        unit = probe.unit_nodes()
        vals = []
        for pt_unit in unit:
            pt = domain.from_unit(pt_unit)
            try:
                v = np.asarray(f(pt), dtype=float)
            except (ArithmeticError, ValueError, GridHMCError) as exc:
                raise NumericalError(f"function evaluation failed at node {pt.tolist()}: {exc}") from exc
            if not np.all(np.isfinite(v)):
                raise NumericalError(f"function is not finite at node {pt.tolist()}")
            vals.append(v)
        vals = np.array(vals)
        prev = interp.eval_unit_batch(unit) if interp is not None else np.zeros_like(vals)
        w = vals - prev
        all_vals.append(vals)
        if interp is None:
            interp = SparseInterpolant(domain, 0, lv, ix, w, np.zeros(lv.shape[0], dtype=int), [float(np.max(np.abs(w)))], fingerprint)
        else:
            interp = SparseInterpolant(
                domain,
                k,
                np.vstack([interp.levels, lv]),
                np.vstack([interp.indices, ix]),
                np.concatenate([interp.surplus, w]),
                np.concatenate([interp.depth_of, np.full(lv.shape[0], k)]),
                interp.max_surplus + [float(np.max(np.abs(w)))],
                fingerprint,
            )
        if k == 1 and tolerance is None:
            early = np.concatenate([v.reshape(v.shape[0], -1) for v in all_vals])
            tolerance = 1e-3 * float(np.max(early.max(axis=0) - early.min(axis=0)))
        if k >= 1 and tolerance and interp.max_surplus[-1] < tolerance:
            break
    return interp


def combination_evaluate(f, q, d, x):
    """Reference evaluation of ``A_{q,d}(f)`` at unit-cube point ``x`` via the combination formula.

    Sums full tensor nodal interpolants with coefficients
    ``(-1)^(q-|i|) * C(d-1, q-|i|)``.  ``f`` maps unit-cube points to scalars.
    """
    x = np.asarray(x, dtype=float)
    cache = {}

    def fval(pt):
        if pt not in cache:
            cache[pt] = float(f(np.array(pt)))
        return cache[pt]

    total = 0.0
    for size in range(max(d, q - d + 1), q + 1):
        coef = (-1) ** (q - size) * comb(d - 1, q - size)
        for levels in multi_levels(size, d):
            per_dim = []
            for k, lv in enumerate(levels):
                nodes = cc_nodes(lv)
                if nodes.size == 1:
                    per_dim.append([(0.5, 1.0)])
                    continue
                h = nodes[1] - nodes[0]
                wts = np.maximum(1.0 - np.abs(x[k] - nodes) / h, 0.0)
                per_dim.append([(float(n), float(w)) for n, w in zip(nodes, wts) if w > 0])
            for combo in itertools.product(*per_dim):
                weight = np.prod([w for _, w in combo])
                total += coef * weight * fval(tuple(n for n, _ in combo))
    return total


class SparseForce:
    """Force provider backed by a sparse interpolant, with exact fallback outside its box.

    A scalar interpolant is taken to be the potential and its negative
    gradient is returned; a vector interpolant is read as the force itself.
    """

    def __init__(self, interp, model):
        self.interp = interp
        self.model = model
        self._lo = interp.domain.lo
        self._hi = interp.domain.hi
        self._widths = interp.domain.widths
        self._potential = interp.surplus.ndim == 1

    def evaluate(self, q):
        if np.any(q < self._lo) or np.any(q > self._hi):
            return self.model.force(q), True
        x = (q - self._lo) / self._widths
        if self._potential:
            return -self.interp.grad_unit(x) / self._widths, False
        return self.interp.eval_unit(x), False

    def __call__(self, q):
        return self.evaluate(np.asarray(q, dtype=float))[0]


def sparse_fingerprint(model, domain, max_depth, tolerance, mode):
    h = hashlib.sha256()
    for part in ("sparse", mode, model.name, model.fingerprint(), domain.lo.tolist(), domain.hi.tolist(), max_depth, tolerance):
        h.update(repr(part).encode())
    return h.hexdigest()


def build_model_interpolant(model, domain, max_depth=6, tolerance=None, mode="potential"):
    """Interpolant of the model potential (``mode='potential'``) or force vector (``'force'``)."""
    if mode not in ("potential", "force"):
        raise ValidationError("sparse mode must be 'potential' or 'force'")
    fn = model.potential if mode == "potential" else model.force
    fp = sparse_fingerprint(model, domain, max_depth, tolerance, mode)
    return build_interpolant(fn, domain, max_depth, tolerance, fingerprint=fp)


def save_interpolant(interp, path):
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "sparse_interpolant",
        "fingerprint": interp.fingerprint,
        "d": interp.dim,
        "depth": interp.depth,
        "domain": interp.domain.to_dict(),
        "max_surplus": interp.max_surplus,
        "records": [
            {"levels": lv.tolist(), "indices": ix.tolist(), "surplus": s.tolist() if np.ndim(s) else float(s), "depth": int(dp)}
            for lv, ix, s, dp in zip(interp.levels, interp.indices, interp.surplus, interp.depth_of)
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_interpolant(path, expected_fingerprint=None):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CacheError(f"{path}: unreadable cache file ({exc})") from exc
    if not isinstance(doc, dict):
        raise CacheError(f"{path}: top level must be an object")
    for name in ("format_version", "fingerprint", "d", "depth", "domain", "records"):
        if name not in doc:
            raise CacheError(f"{path}: missing field {name!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise CacheError(f"{path}: field 'format_version' is {doc['format_version']!r}, expected {FORMAT_VERSION}")
    if expected_fingerprint is not None and doc["fingerprint"] != expected_fingerprint:
        raise CacheError(f"{path}: field 'fingerprint' does not match the current model and settings")
    try:
        domain = DomainBox.from_dict(doc["domain"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CacheError(f"{path}: field 'domain' is malformed ({exc})") from exc
    d = doc["d"]
    if d != domain.dim:
        raise CacheError(f"{path}: field 'd' disagrees with the domain dimension")
    try:
        recs = doc["records"]
        levels = np.array([r["levels"] for r in recs], dtype=int).reshape(-1, d)
        indices = np.array([r["indices"] for r in recs], dtype=int).reshape(-1, d)
        surplus = np.array([r["surplus"] for r in recs], dtype=float)
        depth_of = np.array([r.get("depth", 0) for r in recs], dtype=int)
    except (KeyError, TypeError, ValueError) as exc:
        raise CacheError(f"{path}: field 'records' is malformed ({exc})") from exc
    if np.any(levels < 1) or not np.all(np.isfinite(surplus)):
        raise CacheError(f"{path}: field 'records' holds invalid levels or surpluses")
    return SparseInterpolant(domain, int(doc["depth"]), levels, indices, surplus, depth_of, list(doc.get("max_surplus", [])), doc["fingerprint"])
