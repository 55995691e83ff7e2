"""Experiment configuration files.

Configs are INI files read with :mod:`configparser`.  Example::

    [model]
    name = logistic
    n = 100
    seed = 1
    true_beta = -1, 1

    [sampler]
    kind = ghmc

    [hmc]
    step_size = 0.25
    n_steps = 6
    iterations = 3200
    burn_in = 800
    seed = 101
    initial = mode

    [domain]
    mode = manual
    lo = -3, -0.5
    hi = 0.5, 3

    [grid]
    cell_size = 0.1

    [output]
    dir = runs/logistic_ghmc

Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError

SAMPLERS = ("hmc", "ghmc", "sghmc", "ghmc-complete", "sghmc-complete")
DOMAIN_MODES = ("manual", "laplace", "trajectory")


def _floats(text):
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected a comma-separated list of numbers, got {text!r}") from exc


@dataclass
class ExperimentConfig:
    path: Path
    model: str
    dataset: Path | None = None
    n: int = 100
    data_seed: int = 0
    truth: dict = field(default_factory=dict)
    model_options: dict = field(default_factory=dict)
    sampler: str = "hmc"
    step_size: float = 0.1
    n_steps: int = 10
    iterations: int = 3200
    burn_in: int = 800
    seed: int = 0
    mass_diag: list | None = None
    initial: str | list = "zero"
    domain_mode: str = "manual"
    lo: list | None = None
    hi: list | None = None
    coverage: float = 0.999
    padding: float = 0.1
    domain_burn_in: int = 500
    cell_size: list | None = None
    sparse_depth: int = 6
    sparse_tolerance: float | None = None
    sparse_mode: str = "potential"
    out_dir: Path = Path("runs")
    raw: dict = field(default_factory=dict)

    @property
    def uses_grid(self):
        return self.sampler.startswith("ghmc")

    @property
    def uses_sparse(self):
        return self.sampler.startswith("sghmc")

    @property
    def complete(self):
        return self.sampler.endswith("-complete")

    def digest(self):
        """Hash of the parsed sections, independent of comments and key order."""
        h = hashlib.sha256()
        for sec in sorted(self.raw):
            for key in sorted(self.raw[sec]):
                h.update(f"{sec}.{key}={self.raw[sec][key]}\n".encode())
        return h.hexdigest()

    def precompute_key(self):
        """Sections that determine a cache's content, used for fingerprints."""
        keep = {"domain": self.raw.get("domain", {})}
        if self.uses_grid:
            keep["grid"] = self.raw.get("grid", {})
            keep["complete"] = self.complete
        if self.uses_sparse:
            keep["sparse"] = self.raw.get("sparse", {})
        if self.domain_mode == "trajectory":
            keep["hmc"] = {k: v for k, v in self.raw.get("hmc", {}).items() if k in ("step_size", "n_steps", "seed", "mass_diag", "initial")}
        return repr(sorted((k, sorted(v.items()) if isinstance(v, dict) else v) for k, v in keep.items()))


def load_config(path, out_dir=None):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    raw = {sec: dict(parser[sec]) for sec in parser.sections()}
    base = path.parent

    def get(sec, key, default=None, conv=str):
        if sec in raw and key in raw[sec]:
            try:
                return conv(raw[sec][key])
            except ValueError as exc:
                raise ValidationError(f"{path}: [{sec}] {key} = {raw[sec][key]!r} is invalid") from exc
        return default

    if "model" not in raw or "name" not in raw["model"]:
        raise ValidationError(f"{path}: missing [model] name")
    cfg = ExperimentConfig(path=path, model=raw["model"]["name"].strip(), raw=raw)
    ds = get("model", "dataset")
    if ds:
        cfg.dataset = (base / ds).resolve()
        if not cfg.dataset.exists():
            raise ValidationError(f"{path}: dataset {cfg.dataset} does not exist")
    cfg.n = get("model", "n", cfg.n, int)
    cfg.data_seed = get("model", "seed", cfg.data_seed, int)
    for key, val in raw["model"].items():
        if key.startswith("true_"):
            nums = _floats(val)
            cfg.truth[key[5:]] = nums if len(nums) > 1 else nums[0]
        elif key in ("sigma_y", "sigma_beta"):
            cfg.model_options[key] = float(val)

    cfg.sampler = get("sampler", "kind", cfg.sampler).strip().lower()
    if cfg.sampler not in SAMPLERS:
        raise ValidationError(f"{path}: sampler kind must be one of {SAMPLERS}")

    cfg.step_size = get("hmc", "step_size", cfg.step_size, float)
    cfg.n_steps = get("hmc", "n_steps", cfg.n_steps, int)
    cfg.iterations = get("hmc", "iterations", cfg.iterations, int)
    cfg.burn_in = get("hmc", "burn_in", cfg.burn_in, int)
    cfg.seed = get("hmc", "seed", cfg.seed, int)
    cfg.mass_diag = get("hmc", "mass_diag", None, _floats)
    init = get("hmc", "initial", "zero").strip()
    cfg.initial = init if init in ("zero", "mode") else _floats(init)

    cfg.domain_mode = get("domain", "mode", cfg.domain_mode).strip()
    if cfg.domain_mode not in DOMAIN_MODES:
        raise ValidationError(f"{path}: domain mode must be one of {DOMAIN_MODES}")
    cfg.lo = get("domain", "lo", None, _floats)
    cfg.hi = get("domain", "hi", None, _floats)
    cfg.coverage = get("domain", "p", cfg.coverage, float)
    cfg.padding = get("domain", "padding", cfg.padding, float)
    cfg.domain_burn_in = get("domain", "burn_in_iters", cfg.domain_burn_in, int)
    if cfg.domain_mode == "manual" and (cfg.lo is None or cfg.hi is None):
        if cfg.uses_grid or cfg.uses_sparse:
            raise ValidationError(f"{path}: manual domain needs [domain] lo and hi")

    cfg.cell_size = get("grid", "cell_size", None, _floats)
    if cfg.uses_grid and cfg.cell_size is None:
        raise ValidationError(f"{path}: sampler {cfg.sampler} needs a [grid] section with cell_size")
    if cfg.uses_sparse and "sparse" not in raw:
        raise ValidationError(f"{path}: sampler {cfg.sampler} needs a [sparse] section")
    cfg.sparse_depth = get("sparse", "depth", cfg.sparse_depth, int)
    cfg.sparse_tolerance = get("sparse", "tolerance", None, float)
    cfg.sparse_mode = get("sparse", "mode", cfg.sparse_mode).strip()
    if cfg.sparse_mode not in ("potential", "force"):
        raise ValidationError(f"{path}: [sparse] mode must be potential or force")
    if cfg.sampler == "sghmc-complete" and cfg.sparse_mode != "potential":
        raise ValidationError(f"{path}: sghmc-complete needs a potential interpolant")

    if out_dir is not None:
        cfg.out_dir = Path(out_dir)
    else:
        cfg.out_dir = (base / get("output", "dir", "runs/" + path.stem)).resolve()
    return cfg
