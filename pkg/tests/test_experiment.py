import json

import numpy as np
import pytest

from gridhmc import experiment as ex
from gridhmc.config import load_config
from gridhmc.errors import CacheError, ValidationError
from gridhmc.models import CountingModel, generate_synthetic, write_dataset_csv

CONFIG = """
[model]
name = {model}
{data}

[sampler]
kind = {kind}

[hmc]
step_size = {eps}
n_steps = {steps}
iterations = 300
burn_in = 100
seed = 17

[domain]
{domain}

{approx}

[output]
dir = out_{kind}
"""

LOGISTIC = dict(model="logistic", data="n = 80\nseed = 4", eps=0.25, steps=6, domain="mode = manual\nlo = -3, -0.5\nhi = 0.5, 3")
GRID = "[grid]\ncell_size = 0.1"


def make(tmp_path, kind="ghmc", approx=GRID, name=None, **over):
    fields = {**LOGISTIC, "kind": kind, "approx": approx, **over}
    path = tmp_path / (name or f"{kind}.ini")
    path.write_text(CONFIG.format(**fields))
    return load_config(path)


def test_precompute_writes_cache_and_manifest(tmp_path):
    cfg = make(tmp_path)
    grid, info = ex.precompute(cfg)
    assert not info["reused"] and info["evaluations"] == 35 * 35
    assert grid.cells == (35, 35)
    doc = json.loads((cfg.out_dir / "manifest.json").read_text())
    assert "cache/force_grid.json" in doc["caches"]
    assert doc["timings"]["precompute_s"] >= 0
    assert ex.verify_manifest(cfg) == []


def test_rerun_reuses_cache_without_evaluations(tmp_path, monkeypatch):
    cfg = make(tmp_path, kind="ghmc-complete")
    ex.precompute(cfg)
    counters = []

    def counting_load_model(c):
        model, ds = orig(c)
        counters.append(CountingModel(model))
        return counters[-1], ds

    orig = ex.load_model
    monkeypatch.setattr(ex, "load_model", counting_load_model)
    _, info = ex.precompute(cfg)
    assert info["reused"] and info["evaluations"] == 0
    assert counters[0].evaluations == 0


def test_changed_settings_refuse_without_force(tmp_path):
    cfg = make(tmp_path)
    ex.precompute(cfg)
    changed = make(tmp_path, approx="[grid]\ncell_size = 0.25")
    with pytest.raises(CacheError, match="--force"):
        ex.precompute(changed)
    grid, info = ex.precompute(changed, force=True)
    assert grid.cells == (14, 14) and not info["reused"]


def test_corrupted_cache_names_field(tmp_path):
    cfg = make(tmp_path)
    ex.precompute(cfg)
    path = cfg.out_dir / "cache" / "force_grid.json"
    doc = json.loads(path.read_text())
    doc["values"] = doc["values"][:10]
    path.write_text(json.dumps(doc))
    with pytest.raises(CacheError, match="values"):
        ex.precompute(cfg)


def test_sample_requires_cache(tmp_path):
    with pytest.raises(ValidationError, match="precompute"):
        ex.run_sampling(make(tmp_path))


def test_sampling_csv_schema_and_determinism(tmp_path):
    cfg = make(tmp_path)
    ex.precompute(cfg)
    ex.run_sampling(cfg)
    first = (cfg.out_dir / "chain_0.csv").read_bytes()
    lines = first.decode().splitlines()
    assert lines[0] == "iter,q_1,q_2,accepted,dH"
    assert len(lines) == 301
    ex.run_sampling(cfg)
    assert (cfg.out_dir / "chain_0.csv").read_bytes() == first
    timing = (cfg.out_dir / "chain_0.timing.csv").read_text().splitlines()
    assert timing[0] == "iter,seconds" and len(timing) == 301
    back = ex.read_chain_csv(cfg.out_dir / "chain_0.csv")
    assert back.samples.shape == (300, 2) and np.all(back.seconds >= 0)


def test_hmc_and_ghmc_share_momenta(tmp_path):
    from gridhmc.hmc import sample

    g = make(tmp_path)
    h = make(tmp_path, kind="hmc", approx="")
    grid, _ = ex.precompute(g)
    model, _ = ex.load_model(g)
    force, _ = ex.providers(g, model, grid)
    a = sample(model, ex.hmc_config(h), q1=ex.initial_point(h, model))
    b = sample(model, ex.hmc_config(g), force, q1=ex.initial_point(g, model))
    np.testing.assert_array_equal(a.momenta, b.momenta)
    assert not np.array_equal(a.samples, b.samples)


def test_multiple_chains_and_manifest_integrity(tmp_path):
    cfg = make(tmp_path, kind="hmc", approx="")
    results = ex.run_sampling(cfg, n_chains=3, threads=2)
    assert len(results) == 3
    assert not np.array_equal(results[0].samples, results[1].samples)
    single = ex.run_sampling(cfg, n_chains=1)[0]
    np.testing.assert_array_equal(single.samples, results[0].samples)
    doc = ex.read_manifest(cfg)
    assert sorted(doc["chains"]) == ["chain_0.csv"]
    assert ex.verify_manifest(cfg) == []
    (cfg.out_dir / "chain_0.csv").write_text("tampered")
    assert ex.verify_manifest(cfg) == ["chain_0.csv"]


def test_compare_and_dataset_mismatch(tmp_path):
    h = make(tmp_path, kind="hmc", approx="")
    g = make(tmp_path)
    ex.precompute(g)
    ex.run_sampling(h)
    ex.run_sampling(g)
    reports, table = ex.compare([h, g])
    assert [r.label for r in reports] == ["hmc", "ghmc"]
    assert "hmc" in table and "ghmc" in table
    other = make(tmp_path, kind="hmc", approx="", name="other.ini", data="n = 80\nseed = 5")
    other.out_dir = tmp_path / "other_out"
    ex.run_sampling(other)
    with pytest.raises(ValidationError, match="different datasets"):
        ex.compare([h, other])
    with pytest.raises(ValidationError):
        ex.compare([h])


def test_dataset_from_csv(tmp_path):
    ds = generate_synthetic("banana", 60, 8)
    write_dataset_csv(ds, tmp_path / "banana.csv")
    cfg = make(
        tmp_path, kind="hmc", approx="", model="banana", data="dataset = banana.csv", eps=0.1, steps=10,
        domain="mode = manual\nlo = -4, -4\nhi = 4, 4",
    )
    _, loaded = ex.load_model(cfg)
    assert loaded.digest() == ds.digest()


def test_domain_modes(tmp_path):
    lap = make(tmp_path, kind="ghmc", domain="mode = laplace\np = 0.999", name="lap.ini")
    model, _ = ex.load_model(lap)
    box = ex.resolve_domain(lap, model)
    assert box.provenance.startswith("laplace")
    traj = make(tmp_path, kind="ghmc", domain="mode = trajectory\nburn_in_iters = 100", name="traj.ini")
    box2 = ex.resolve_domain(traj, model)
    assert box2.provenance.startswith("trajectory")
    assert ex.resolve_domain(traj, model).to_dict() == box2.to_dict()


def test_sparse_precompute_and_fallback_rate(tmp_path):
    gp = make(
        tmp_path, kind="sghmc", approx="[sparse]\ndepth = 4", model="gp", data="n = 30\nseed = 3",
        eps=0.2, steps=10, domain="mode = manual\nlo = -1.6, -1.6, -1.2\nhi = 1.6, 1.6, 0.4",
    )
    interp, info = ex.precompute(gp)
    assert info["evaluations"] == interp.n_points
    ex.run_sampling(gp)
    stats = ex.read_manifest(gp)["chain_stats"][0]
    assert 0.0 <= stats["fallback_rate"] <= 1.0


def test_kl_report_for_grid(tmp_path):
    rep = ex.kl_report(make(tmp_path, kind="ghmc-complete"))
    assert rep.holds
