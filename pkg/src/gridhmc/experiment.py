"""Experiment orchestration: datasets, caches, chains, manifests and reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import grid as gridmod
from . import sparse as sparsemod
from .approx import MultilinearEnergy, SparseEnergy, kl_bound_check
from .diagnostics import efficiency_report, format_table
from .domain import DomainBox, find_mode, laplace_box, trajectory_box
from .errors import CacheError, NumericalError, ValidationError
from .hmc import ChainResult, HmcConfig, sample
from .models import CountingModel, build_model, generate_synthetic, read_dataset_csv

log = logging.getLogger(__name__)


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def derive_seed(seed, *tags):
    """Deterministic child seed for a named purpose."""
    return int(np.random.SeedSequence([int(seed)] + [int(hashlib.sha256(str(t).encode()).hexdigest()[:8], 16) for t in tags]).generate_state(1)[0])


def load_dataset(cfg):
    if cfg.dataset is not None:
        return read_dataset_csv(cfg.model, cfg.dataset)
    return generate_synthetic(cfg.model, cfg.n, cfg.data_seed, **cfg.truth)


def load_model(cfg):
    ds = load_dataset(cfg)
    return build_model(ds, **cfg.model_options), ds


def hmc_config(cfg, seed=None):
    return HmcConfig(cfg.step_size, cfg.n_steps, cfg.iterations, cfg.burn_in, cfg.mass_diag, cfg.seed if seed is None else seed)


def initial_point(cfg, model):
    if isinstance(cfg.initial, list):
        q = np.asarray(cfg.initial, dtype=float)
        if q.shape != (model.dim,):
            raise ValidationError(f"initial point needs {model.dim} entries")
        return q
    if cfg.initial == "mode":
        return find_mode(model, np.zeros(model.dim)).mode
    return np.zeros(model.dim)


def resolve_domain(cfg, model):
    """Domain box per the config: manual bounds, a Laplace box, or a burn-in trajectory hull.

    A Laplace fit that fails (saddle, indefinite Hessian) falls back to the
    trajectory box.
    """
    if cfg.domain_mode == "manual":
        if cfg.lo is None or cfg.hi is None:
            raise ValidationError("manual domain needs lo and hi")
        return DomainBox(cfg.lo, cfg.hi, "manual")
    if cfg.domain_mode == "laplace":
        try:
            return laplace_box(find_mode(model, np.zeros(model.dim)), cfg.coverage)
        except NumericalError as exc:
            log.warning("Laplace box failed (%s); using burn-in trajectories", exc)
    burn = HmcConfig(cfg.step_size, cfg.n_steps, 1, cfg.domain_burn_in, cfg.mass_diag, derive_seed(cfg.seed, "domain"))
    res = sample(model, burn, q1=initial_point(cfg, model), record_trajectory=True)
    return trajectory_box(res.trajectory, cfg.padding)


def _cache_path(cfg):
    name = "force_grid.json" if cfg.uses_grid else "sparse_interpolant.json"
    return cfg.out_dir / "cache" / name


def cache_fingerprint(cfg, model):
    h = hashlib.sha256()
    kind = "grid" if cfg.uses_grid else "sparse"
    for part in (kind, model.name, model.fingerprint(), cfg.precompute_key()):
        h.update(repr(part).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# manifest

def manifest_path(cfg):
    return cfg.out_dir / "manifest.json"


def read_manifest(cfg):
    path = manifest_path(cfg)
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: manifest is not valid JSON") from exc


_MERGED = ("caches", "timings")


def update_manifest(cfg, dataset, **entries):
    """Write ``entries`` into the manifest; cache and timing maps merge, other keys replace."""
    doc = read_manifest(cfg)
    doc["config_hash"] = cfg.digest()
    doc["config_path"] = str(cfg.path)
    doc["dataset_hash"] = dataset.digest()
    doc["model"] = cfg.model
    doc["sampler"] = cfg.sampler
    for key, val in entries.items():
        if key in _MERGED and isinstance(doc.get(key), dict):
            doc[key].update(val)
        else:
            doc[key] = val
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path(cfg).write_text(json.dumps(doc, indent=2, sort_keys=True))
    return doc


def verify_manifest(cfg):
    """Names of files whose recorded hash no longer matches (empty when intact)."""
    doc = read_manifest(cfg)
    bad = []
    for group in ("caches", "chains", "timings_files", "reports"):
        for rel, digest in doc.get(group, {}).items():
            p = cfg.out_dir / rel
            if not p.exists() or sha256_file(p) != digest:
                bad.append(rel)
    return bad


# ---------------------------------------------------------------------------
# precompute

def precompute(cfg, force=False, workers=None):
    """Build or reuse the force grid / sparse interpolant cache for ``cfg``.

    Returns ``(cache_object, info)`` where ``info`` records whether the cache
    was reused and how many model evaluations the call performed.
    """
    if not (cfg.uses_grid or cfg.uses_sparse):
        raise ValidationError(f"sampler {cfg.sampler} does not use a precomputed cache")
    base_model, ds = load_model(cfg)
    model = CountingModel(base_model)
    fp = cache_fingerprint(cfg, base_model)
    path = _cache_path(cfg)
    loader = gridmod.load_grid if cfg.uses_grid else sparsemod.load_interpolant
    if path.exists() and not force:
        try:
            obj = loader(path, expected_fingerprint=fp)
        except CacheError as exc:
            if "fingerprint" in str(exc):
                raise CacheError(f"{exc}; rerun with --force to overwrite") from exc
            raise
        info = {"reused": True, "evaluations": model.evaluations, "precompute_s": read_manifest(cfg).get("timings", {}).get("precompute_s", 0.0)}
        update_manifest(cfg, ds, caches={str(path.relative_to(cfg.out_dir)): sha256_file(path)}, precompute=info)
        return obj, info

    t0 = time.perf_counter()
    domain = resolve_domain(cfg, model)
    if cfg.uses_grid:
        cells = gridmod.cells_for(domain, cfg.cell_size)
        obj = gridmod.build_force_map(model, domain, cells, with_vertex_potential=cfg.complete, workers=workers)
        obj = gridmod.ForceGrid(obj.domain, obj.cells, obj.values, obj.vertex_potential, fp)
        save = gridmod.save_grid
    else:
        fn = model.potential if cfg.sparse_mode == "potential" else model.force
        obj = sparsemod.build_interpolant(fn, domain, cfg.sparse_depth, cfg.sparse_tolerance, fingerprint=fp)
        save = sparsemod.save_interpolant
    elapsed = time.perf_counter() - t0
    path.parent.mkdir(parents=True, exist_ok=True)
    save(obj, path)
    info = {"reused": False, "evaluations": model.evaluations, "precompute_s": elapsed}
    update_manifest(
        cfg, ds,
        caches={str(path.relative_to(cfg.out_dir)): sha256_file(path)},
        timings={"precompute_s": elapsed},
        precompute=info,
        domain=domain.to_dict(),
    )
    return obj, info


def load_cache(cfg, model):
    path = _cache_path(cfg)
    if not path.exists():
        raise ValidationError(f"no cache at {path}; run 'precompute' first")
    fp = cache_fingerprint(cfg, model)
    if cfg.uses_grid:
        return gridmod.load_grid(path, expected_fingerprint=fp)
    return sparsemod.load_interpolant(path, expected_fingerprint=fp)


def providers(cfg, model, cache=None):
    """Force provider and correction energy for the configured sampler (None means exact)."""
    if cfg.sampler == "hmc":
        return None, None
    cache = load_cache(cfg, model) if cache is None else cache
    if cfg.uses_grid:
        force = gridmod.GridForce(cache, model)
        energy = MultilinearEnergy(cache, model) if cfg.complete else None
    else:
        force = sparsemod.SparseForce(cache, model)
        energy = SparseEnergy(cache, model) if cfg.complete else None
    return force, energy


# ---------------------------------------------------------------------------
# chains

def chain_csv_text(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = result.samples.shape[1]
    w.writerow(["iter"] + [f"q_{k + 1}" for k in range(d)] + ["accepted", "dH"])
    for i, (row, acc, dh) in enumerate(zip(result.samples, result.accepted, result.delta_h)):
        w.writerow([i] + [repr(float(v)) for v in row] + [int(acc), repr(float(dh))])
    return buf.getvalue()


def timing_csv_text(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "seconds"])
    for i, s in enumerate(result.seconds):
        w.writerow([i, repr(float(s))])
    return buf.getvalue()


def read_chain_csv(path, timing_path=None):
    """Load a chain CSV (and its timing sidecar when present) into a ChainResult."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"chain file {path} does not exist")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "iter":
        raise ValidationError(f"{path}: not a chain CSV")
    head = rows[0]
    qcols = [i for i, h in enumerate(head) if h.startswith("q_")]
    data = rows[1:]
    samples = np.array([[float(r[i]) for i in qcols] for r in data])
    accepted = np.array([r[head.index("accepted")] == "1" for r in data])
    dh = np.array([float(r[head.index("dH")]) for r in data])
    timing_path = Path(timing_path) if timing_path else path.with_suffix(".timing.csv")
    if timing_path.exists():
        with timing_path.open(newline="") as fh:
            trows = list(csv.reader(fh))[1:]
        seconds = np.array([float(r[1]) for r in trows])
    else:
        seconds = np.full(len(data), np.nan)
    n, d = samples.shape
    return ChainResult(samples, accepted, dh, seconds, np.zeros((n, d)), np.zeros(n))


def run_sampling(cfg, n_chains=1, threads=None):
    """Run the configured sampler, write chain and timing CSVs, update the manifest."""
    model, ds = load_model(cfg)
    force, energy = providers(cfg, model)
    q1 = initial_point(cfg, model)
    seeds = [cfg.seed] + [derive_seed(cfg.seed, "chain", c) for c in range(1, n_chains)]

    def run(seed):
        return sample(model, hmc_config(cfg, seed), force, energy, q1)

    t0 = time.perf_counter()
    if threads and threads > 1 and n_chains > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(s) for s in seeds]
    wall = time.perf_counter() - t0

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    chains, timings, stats = {}, {}, []
    for c, res in enumerate(results):
        cpath = cfg.out_dir / f"chain_{c}.csv"
        tpath = cfg.out_dir / f"chain_{c}.timing.csv"
        cpath.write_text(chain_csv_text(res))
        tpath.write_text(timing_csv_text(res))
        chains[cpath.name] = sha256_file(cpath)
        timings[tpath.name] = sha256_file(tpath)
        stats.append(
            {
                "chain": c,
                "seed": int(seeds[c]),
                "acceptance_rate": res.acceptance_rate,
                "sampling_s": res.total_seconds,
                "cpu_s": res.cpu_seconds,
                "fallbacks": res.fallbacks,
                "force_calls": res.force_calls,
                "fallback_rate": res.fallback_rate,
            }
        )
    update_manifest(cfg, ds, chains=chains, timings_files=timings, timings={"sampling_s": wall}, chain_stats=stats)
    return results


def reports_for(cfg):
    """Efficiency reports for each chain recorded in ``cfg``'s manifest."""
    doc = read_manifest(cfg)
    if not doc.get("chains"):
        raise ValidationError(f"{cfg.out_dir}: no completed chains; run 'sample' first")
    stats = {s["chain"]: s for s in doc.get("chain_stats", [])}
    pre = doc.get("timings", {}).get("precompute_s")
    out = []
    for name in sorted(doc["chains"]):
        c = int(name.split("_")[1].split(".")[0])
        res = read_chain_csv(cfg.out_dir / name)
        rep = efficiency_report(res, label=f"{cfg.sampler}" + (f"[{c}]" if len(doc["chains"]) > 1 else ""), precompute_seconds=pre if cfg.sampler != "hmc" else None)
        s = stats.get(c, {})
        rep.fallback_rate = s.get("fallback_rate")
        rep.cpu_seconds = s.get("cpu_s")
        out.append(rep)
    return out, doc


def compare(cfgs):
    if len(cfgs) < 2:
        raise ValidationError("compare needs at least two runs")
    reports, hashes = [], set()
    for cfg in cfgs:
        reps, doc = reports_for(cfg)
        hashes.add(doc.get("dataset_hash"))
        reports.extend(reps)
    if len(hashes) != 1:
        raise ValidationError("runs use different datasets")
    return reports, format_table(reports)


def kl_report(cfg):
    """KL-bound check between the exact potential and the configured approximate one."""
    model, _ = load_model(cfg)
    if cfg.uses_grid:
        domain = resolve_domain(cfg, model)
        cells = gridmod.cells_for(domain, cfg.cell_size)
        g = gridmod.build_force_map(model, domain, cells, with_vertex_potential=True)
        approx = MultilinearEnergy(g, model)
        probe = [4 * c + 1 for c in cells]
    elif cfg.uses_sparse:
        interp = load_cache(cfg, model) if _cache_path(cfg).exists() else precompute(cfg)[0]
        if interp.surplus.ndim != 1:
            raise ValidationError("KL check needs a potential interpolant")
        domain = interp.domain
        approx = SparseEnergy(interp, model)
        probe = None
    else:
        raise ValidationError("verify-kl needs a grid or sparse sampler config")
    return kl_bound_check(model, approx, domain, probe, model=model)
