#!/usr/bin/env python3
"""
Configuration management for delaymp
"""
import os
from pathlib import Path

import yaml

from absde import RegressionBasis
from core import DEFAULT_SEED, DEFAULT_TOLERANCES, RunConfig
from errors import ConfigError
from lq import LqParams

SEED_ENV = "DELAYMP_SEED"

EXAMPLE_STANZAS = {
    "core": """\
core:
  T: 1.0
  delta: 0.5
  steps_per_delay: 8      # h = delta / steps_per_delay
  n_paths: 10000
  seed: 20240101          # overridden by DELAYMP_SEED and --seed
  degree: 2               # regression basis degree in (x, x_delta)
  threads: 1              # never changes results
  output_dir: output
  tolerances:
    k_vanish: 0.02
    adjoint: 0.01
    margin: 1.0e-9
    stderr_multiple: 3.0
""",
    "sdde": """\
sdde:
  problem: lq             # lq | smooth | exp_martingale
  paths_written: 20       # paths listed in the simulate CSV
  moment_p: 2.0
""",
    "absde": """\
absde:
  spec: block_recursion   # block_recursion | constant_martingale
  ridge: 1.0e-8
  cond_limit: 1.0e10
  ridge_enabled: true
""",
    "adjoint": """\
adjoint:
  problem: lq
  tau: 0.25               # spike used for the cross-term identity
  eps_steps: 4
  replacement: 1.0
""",
    "variation": """\
variation:
  problem: smooth
  tau: 0.25
  replacement: 1.0
  eps_steps: [1, 2, 4, 8]   # epsilons as multiples of h
  p: 1
""",
    "mp": """\
mp:
  problem: lq
  adjoints: exact         # exact (lq only) | solved
  v_grid: [-3.0, -2.0, -1.5, -1.0, 1.0, 1.5, 2.0, 3.0]
  tau_stride: 1           # scan every tau_stride-th node of [0, T]
  include_boundary: true
  tol: null               # null: stderr_multiple standard errors
""",
    "lq": """\
lq:
  M: 2.0
  Mbar: 2.0
  C: 0.5
  D: 0.3
  Dbar: 0.2
  N: 1.0
  Nbar: 1.0
  x0: 0.0
  v0: -1.0
""",
    "output": """\
output:
  format: csv             # csv | json | yaml for report files
""",
}


def load_config(config_file="config.yaml"):
    """Load configuration from YAML file"""
    config_path = Path(config_file)
    if not config_path.exists():
        return {}

    with open(config_path, "r") as f:
        try:
            config = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(str(config_file), f"not valid YAML ({e})") from e
    if config is None:
        return {}
    if not isinstance(config, dict):
        raise ConfigError(str(config_file), "top level must be a mapping")
    return config


def example_stanza(key):
    """Example YAML for the section a dotted key belongs to"""
    section = str(key).split(".")[0]
    return EXAMPLE_STANZAS.get(section, "".join(EXAMPLE_STANZAS.values()))


def get_section(config, name):
    section = config.get(name, {})
    if section is None:
        return {}
    if not isinstance(section, dict):
        raise ConfigError(name, "must be a mapping")
    return section


def _value(section, name, key, default, kind):
    value = section.get(key, default)
    if value is None:
        return None
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}.{key}", f"expected true/false, got {value!r}")
        return value
    try:
        if kind is int and float(value) != int(value):
            raise ValueError
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(
            f"{name}.{key}", f"expected {kind.__name__}, got {value!r}"
        ) from None


def _float_list(section, name, key, default, kind=float):
    values = section.get(key, default)
    if not isinstance(values, (list, tuple)):
        raise ConfigError(f"{name}.{key}", f"expected a list, got {values!r}")
    return [_value({key: v}, name, key, None, kind) for v in values]


def get_seed(config, seed_arg=None):
    """--seed, then DELAYMP_SEED, then core.seed, then the default"""
    if seed_arg is not None:
        return int(seed_arg)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(SEED_ENV, f"expected an integer, got {env!r}") from None
    seed = _value(get_section(config, "core"), "core", "seed", DEFAULT_SEED, int)
    if seed < 0:
        raise ConfigError("core.seed", "must be non-negative")
    return seed


def get_run_config(config, seed=None, threads=None, out=None):
    core = get_section(config, "core")
    tolerances = core.get("tolerances", {}) or {}
    if not isinstance(tolerances, dict):
        raise ConfigError("core.tolerances", "must be a mapping")
    unknown = sorted(set(tolerances) - set(DEFAULT_TOLERANCES))
    if unknown:
        raise ConfigError(f"core.tolerances.{unknown[0]}", "unknown tolerance")
    merged = dict(DEFAULT_TOLERANCES)
    for key in tolerances:
        merged[key] = _value(tolerances, "core.tolerances", key, None, float)

    if threads is None:
        threads = _value(core, "core", "threads", 1, int)
    return RunConfig(
        T=_value(core, "core", "T", 1.0, float),
        delta=_value(core, "core", "delta", 0.5, float),
        steps_per_delay=_value(core, "core", "steps_per_delay", 8, int),
        n_paths=_value(core, "core", "n_paths", 10000, int),
        seed=get_seed(config, seed),
        degree=_value(core, "core", "degree", 2, int),
        threads=int(threads),
        tolerances=merged,
        output_dir=out or core.get("output_dir", "output"),
    )


def get_sdde_settings(config):
    sdde = get_section(config, "sdde")
    settings = {
        "problem": str(sdde.get("problem", "lq")),
        "paths_written": _value(sdde, "sdde", "paths_written", 20, int),
        "moment_p": _value(sdde, "sdde", "moment_p", 2.0, float),
    }
    if settings["moment_p"] < 2:
        raise ConfigError("sdde.moment_p", "must be at least 2")
    return settings


def get_basis(config, run):
    absde = get_section(config, "absde")
    return RegressionBasis(
        degree=run.degree,
        ridge=_value(absde, "absde", "ridge", 1e-8, float),
        cond_limit=_value(absde, "absde", "cond_limit", 1e10, float),
        ridge_enabled=_value(absde, "absde", "ridge_enabled", True, bool),
    )


def get_absde_spec_name(config):
    return str(get_section(config, "absde").get("spec", "block_recursion"))


def get_lq_params(config, run):
    lq = get_section(config, "lq")
    kwargs = {
        key: _value(lq, "lq", key, default, float)
        for key, default in (
            ("M", 2.0),
            ("Mbar", 2.0),
            ("C", 0.5),
            ("D", 0.3),
            ("Dbar", 0.2),
            ("N", 1.0),
            ("Nbar", 1.0),
            ("x0", 0.0),
            ("v0", -1.0),
        )
    }
    return LqParams(T=run.T, delta=run.delta, **kwargs)


def get_adjoint_settings(config):
    adjoint = get_section(config, "adjoint")
    return {
        "problem": str(adjoint.get("problem", "lq")),
        "tau": _value(adjoint, "adjoint", "tau", 0.25, float),
        "eps_steps": _value(adjoint, "adjoint", "eps_steps", 4, int),
        "replacement": _value(adjoint, "adjoint", "replacement", 1.0, float),
    }


def get_variation_settings(config):
    variation = get_section(config, "variation")
    return {
        "problem": str(variation.get("problem", "smooth")),
        "tau": _value(variation, "variation", "tau", 0.25, float),
        "replacement": _value(variation, "variation", "replacement", 1.0, float),
        "eps_steps": _float_list(
            variation, "variation", "eps_steps", [1, 2, 4, 8], int
        ),
        "p": _value(variation, "variation", "p", 1, int),
    }


def get_mp_settings(config):
    mp = get_section(config, "mp")
    settings = {
        "problem": str(mp.get("problem", "lq")),
        "adjoints": str(mp.get("adjoints", "exact")),
        "v_grid": _float_list(
            mp, "mp", "v_grid", [-3.0, -2.0, -1.5, -1.0, 1.0, 1.5, 2.0, 3.0]
        ),
        "tau_stride": _value(mp, "mp", "tau_stride", 1, int),
        "include_boundary": _value(mp, "mp", "include_boundary", True, bool),
        "tol": _value(mp, "mp", "tol", None, float),
    }
    if settings["adjoints"] not in ("exact", "solved"):
        raise ConfigError("mp.adjoints", "expected 'exact' or 'solved'")
    if settings["adjoints"] == "exact" and settings["problem"] != "lq":
        raise ConfigError("mp.adjoints", "exact adjoints exist for the lq problem only")
    if settings["tau_stride"] < 1:
        raise ConfigError("mp.tau_stride", "must be at least 1")
    return settings


def get_output_format(config, format_arg=None):
    """Get report format from config or argument"""
    if format_arg:
        return format_arg
    fmt = str(get_section(config, "output").get("format", "csv"))
    if fmt not in ("csv", "json", "yaml"):
        raise ConfigError("output.format", f"unsupported format {fmt!r}")
    return fmt
