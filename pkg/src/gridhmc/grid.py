"""Piecewise-constant force maps on a uniform box grid.

The box ``[lo, hi]`` is split into ``cells[k]`` equal cells per axis.  The map
stores the exact force at every cell centre; a query anywhere inside a cell
returns that centre's value.  Cells are half-open ``[x_{i-1}, x_i)`` except
the last one on each axis, which is closed.  Queries outside the box fall back
to the model's exact force.

A table of potentials at the cell vertices can be stored alongside; it backs
the continuous multilinear energy used by the approximate-target sampler.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import DomainBox
from .errors import CacheError, NumericalError, OutOfDomain, ValidationError

FORMAT_VERSION = 1


def cells_for(domain, cell_size):
    """Number of cells per axis giving cells of (approximately) ``cell_size``."""
    size = np.broadcast_to(np.asarray(cell_size, dtype=float), domain.lo.shape)
    if np.any(size <= 0):
        raise ValidationError("cell size must be positive")
    return tuple(max(1, int(round(w / s))) for w, s in zip(domain.widths, size))


@dataclass(frozen=True, eq=False)
class ForceGrid:
    domain: DomainBox
    cells: tuple
    values: np.ndarray
    vertex_potential: np.ndarray | None = None
    fingerprint: str = ""

    @property
    def dim(self):
        return len(self.cells)

    @property
    def sizes(self):
        return self.domain.widths / np.asarray(self.cells, dtype=float)

    def centers(self):
        """All cell centres, row-major over the cell multi-index."""
        axes = [self.domain.lo[k] + (np.arange(n) + 0.5) * self.sizes[k] for k, n in enumerate(self.cells)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def vertices(self):
        axes = [np.linspace(self.domain.lo[k], self.domain.hi[k], n + 1) for k, n in enumerate(self.cells)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def center_of(self, index):
        return self.domain.lo + (np.asarray(index, dtype=float) + 0.5) * self.sizes


def grid_fingerprint(model, domain, cells, kind="force"):
    h = hashlib.sha256()
    for part in (kind, model.name, model.fingerprint(), domain.lo.tolist(), domain.hi.tolist(), list(cells)):
        h.update(repr(part).encode())
    return h.hexdigest()


def _evaluate_rows(fn, points, workers, what):
    """Evaluate ``fn`` at each row, optionally on a thread pool; output order is fixed."""

    def one(i):
        try:
            val = np.asarray(fn(points[i]), dtype=float)
        except Exception as exc:
            raise NumericalError(f"{what} evaluation failed at row {i} ({points[i].tolist()}): {exc}") from exc
        if not np.all(np.isfinite(val)):
            raise NumericalError(f"{what} is not finite at row {i} ({points[i].tolist()})")
        return val

    idx = range(points.shape[0])
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(one, idx)))
    return np.array([one(i) for i in idx])


def build_force_map(model, domain, cells, *, with_vertex_potential=False, workers=None):
    """Evaluate the exact force once at every cell centre of ``domain``.

    ``cells`` is an int or per-axis sequence.  With ``with_vertex_potential``
    the potential is also tabulated at the ``(cells+1)`` vertices per axis.
    """
    if model.dim != domain.dim:
        raise ValidationError(f"model has dimension {model.dim} but the domain has {domain.dim}")
    cells = tuple(int(c) for c in np.broadcast_to(np.asarray(cells), (domain.dim,)))
    if any(c < 1 for c in cells):
        raise ValidationError("need at least one cell per axis")
    grid = ForceGrid(domain, cells, np.empty(0), fingerprint=grid_fingerprint(model, domain, cells))
    flat = _evaluate_rows(model.force, grid.centers(), workers, "force")
    values = flat.reshape(*cells, domain.dim)
    vpot = None
    if with_vertex_potential:
        vpot = _evaluate_rows(model.potential, grid.vertices(), workers, "potential")
        vpot = vpot.reshape(tuple(c + 1 for c in cells))
    return ForceGrid(domain, cells, values, vpot, grid.fingerprint)


def locate_cell(grid, q):
    """Cell multi-index containing ``q``; raises OutOfDomain outside the box."""
    lo, hi = grid.domain.lo, grid.domain.hi
    idx = []
    for k, n in enumerate(grid.cells):
        x = float(q[k])
        if not (lo[k] <= x <= hi[k]):
            raise OutOfDomain(f"{np.asarray(q).tolist()} is outside {grid.domain}")
        i = math.floor((x - lo[k]) * n / (hi[k] - lo[k]))
        idx.append(min(i, n - 1))
    return tuple(idx)


def lookup_force(grid, model, q):
    """Force at ``q`` from the map, or the exact force outside the box."""
    try:
        cell = locate_cell(grid, q)
    except OutOfDomain:
        return model.force(q)
    return grid.values[cell]


class GridForce:
    """Force provider reading from a ``ForceGrid`` with exact-force fallback."""

    def __init__(self, grid, model):
        self.grid = grid
        self.model = model
        d = grid.domain
        self._lo = d.lo.tolist()
        self._hi = d.hi.tolist()
        self._axes = list(zip(self._lo, self._hi, grid.cells, d.widths.tolist()))
        self._values = grid.values

    def evaluate(self, q):
        idx = []
        # same arithmetic as locate_cell so boundary ties agree
        for x, (lo, hi, n, w) in zip(q.tolist(), self._axes):
            if not lo <= x <= hi:
                return self.model.force(q), True
            i = int((x - lo) * n / w)
            idx.append(i if i < n else n - 1)
        return self._values[tuple(idx)], False

    def __call__(self, q):
        return self.evaluate(np.asarray(q, dtype=float))[0]


def multilinear(grid, q):
    """Multilinear interpolation of the vertex potential table at ``q`` (inside the box)."""
    if grid.vertex_potential is None:
        raise ValidationError("grid has no vertex potential table")
    return multilinear_batch(grid, np.atleast_2d(q))[0]


def multilinear_batch(grid, qs):
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    d = grid.dim
    cells = np.asarray(grid.cells)
    t = (qs - grid.domain.lo) / grid.domain.widths * cells
    base = np.clip(np.floor(t).astype(int), 0, cells - 1)
    frac = t - base
    table = grid.vertex_potential
    out = np.zeros(qs.shape[0])
    for corner in range(2**d):
        bits = [(corner >> k) & 1 for k in range(d)]
        w = np.ones(qs.shape[0])
        for k, b in enumerate(bits):
            w = w * (frac[:, k] if b else 1.0 - frac[:, k])
        out += w * table[tuple(base[:, k] + bits[k] for k in range(d))]
    return out


# ---------------------------------------------------------------------------
# cache files

def save_grid(grid, path):
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "force_grid",
        "fingerprint": grid.fingerprint,
        "domain": grid.domain.to_dict(),
        "cells": list(grid.cells),
        "values": grid.values.ravel().tolist(),
    }
    if grid.vertex_potential is not None:
        doc["vertex_potential"] = grid.vertex_potential.ravel().tolist()
    Path(path).write_text(json.dumps(doc))


def _field(doc, name, path):
    if name not in doc:
        raise CacheError(f"{path}: missing field {name!r}")
    return doc[name]


def load_grid(path, expected_fingerprint=None):
    """Read a grid cache, refusing files whose fingerprint does not match."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CacheError(f"{path}: unreadable cache file ({exc})") from exc
    if not isinstance(doc, dict):
        raise CacheError(f"{path}: top level must be an object")
    version = _field(doc, "format_version", path)
    if version != FORMAT_VERSION:
        raise CacheError(f"{path}: field 'format_version' is {version!r}, expected {FORMAT_VERSION}")
    fp = _field(doc, "fingerprint", path)
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise CacheError(f"{path}: field 'fingerprint' does not match the current model and grid")
    try:
        domain = DomainBox.from_dict(_field(doc, "domain", path))
    except (KeyError, TypeError, ValueError) as exc:
        raise CacheError(f"{path}: field 'domain' is malformed ({exc})") from exc
    cells = _field(doc, "cells", path)
    if not (isinstance(cells, list) and len(cells) == domain.dim and all(isinstance(c, int) and c > 0 for c in cells)):
        raise CacheError(f"{path}: field 'cells' is malformed")
    cells = tuple(cells)
    try:
        values = np.asarray(_field(doc, "values", path), dtype=float).reshape(*cells, domain.dim)
    except (TypeError, ValueError) as exc:
        raise CacheError(f"{path}: field 'values' has the wrong size or type") from exc
    if not np.all(np.isfinite(values)):
        raise CacheError(f"{path}: field 'values' contains non-finite entries")
    vpot = None
    if "vertex_potential" in doc:
        try:
            vpot = np.asarray(doc["vertex_potential"], dtype=float).reshape(tuple(c + 1 for c in cells))
        except (TypeError, ValueError) as exc:
            raise CacheError(f"{path}: field 'vertex_potential' has the wrong size or type") from exc
    return ForceGrid(domain, cells, values, vpot, fp)
