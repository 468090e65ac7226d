"""Pipeline configuration: one structured file (YAML or JSON) plus dotted overrides.

Schema (all keys optional; defaults shown by :func:`default_config`)::

    seed: 0                  # master seed; stage seeds derive from it
    output: run              # output directory
    scene:
      cube: null             # path stem of a cube pair (stem.json + stem.raw); null -> synthetic
      labels: null           # label CSV (required with a user cube)
      synthetic: {rows, cols, bands, classes, regions, pixel_noise}
    design: {q, p, K, W}     # K/W null -> L/q and K/q
    noise: {kind, snr_db}    # kind in none|gaussian|poisson
    fusion: {lambda1, lambda2, rho, beta, max_iters, rel_tol, alpha_schedule, alpha0, restart,
             wavelet_levels}
    classifier: {hidden, epochs, learning_rate, batch_size, train_rate}
"""
from __future__ import annotations

import copy
import hashlib
import json
import re
from pathlib import Path

import yaml

from .datamodel import ConfigurationError

# YAML 1.1 reads exponent floats without a dot ("1e-6") as strings
_EXP_FLOAT = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+")

# offsets from the master seed for each random stage
SEED_OFFSETS = {"scene": 0, "design": 0, "noise": 1000, "split": 2000, "init": 3000, "train": 4000, "solver": 5000}


def default_config() -> dict:
    return {
        "seed": 0,
        "output": "run",
        "scene": {
            "cube": None,
            "labels": None,
            "synthetic": {
                "rows": 64,
                "cols": 64,
                "bands": 16,
                "classes": 4,
                "regions": 16,
                "pixel_noise": 0.03,
            },
        },
        "design": {"q": 2, "p": 2, "K": None, "W": None},
        "noise": {"kind": "none", "snr_db": None},
        "fusion": {
            "lambda1": None,
            "lambda2": 5e-4,
            "rho": 1.0,
            "beta": None,
            "max_iters": 200,
            "rel_tol": 1e-4,
            "alpha_schedule": "harmonic",
            "alpha0": None,
            "restart": True,
            "wavelet_levels": 2,
        },
        "classifier": {
            "hidden": [10] * 10,
            "epochs": 300,
            "learning_rate": 1e-2,
            "batch_size": 64,
            "train_rate": 0.1,
        },
    }


def _merge(base: dict, extra: dict, prefix: str = "") -> dict:
    for key, val in extra.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown configuration key '{name}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigurationError(f"'{name}' must be a mapping")
            _merge(base[key], val, name + ".")
        else:
            base[key] = val
    return base


def _coerce(val):
    if isinstance(val, str):
        return float(val) if _EXP_FLOAT.fullmatch(val.strip()) else val
    if isinstance(val, dict):
        return {k: _coerce(v) for k, v in val.items()}
    if isinstance(val, list):
        return [_coerce(v) for v in val]
    return val


def parse_override(text: str) -> dict:
    """``a.b.c=value`` -> nested dict; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigurationError(f"override '{text}' must look like key.path=value")
    key, raw = text.split("=", 1)
    return nested_override(key.strip(), _coerce(yaml.safe_load(raw)))


def nested_override(key: str, value) -> dict:
    """``("a.b", v)`` -> ``{"a": {"b": v}}``."""
    out: dict = {}
    cur = out
    parts = key.split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return out


def load_config(path=None, overrides=()) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: cannot parse configuration ({exc})") from exc
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
        _merge(cfg, _coerce(loaded))
    for ov in overrides:
        _merge(cfg, parse_override(ov) if isinstance(ov, str) else ov)
    validate(cfg)
    return cfg


def _positive_int(cfg, dotted):
    v = _get(cfg, dotted)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigurationError(f"'{dotted}' must be a positive integer, got {v!r}")


def _get(cfg, dotted):
    cur = cfg
    for p in dotted.split("."):
        cur = cur[p]
    return cur


def validate(cfg: dict) -> None:
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ConfigurationError(f"'seed' must be a non-negative integer, got {cfg['seed']!r}")
    for key in ("design.q", "design.p", "classifier.epochs", "classifier.batch_size", "fusion.max_iters"):
        _positive_int(cfg, key)
    for key in ("design.K", "design.W"):
        if _get(cfg, key) is not None:
            _positive_int(cfg, key)
    for key in ("rows", "cols", "bands", "classes", "regions"):
        _positive_int(cfg, f"scene.synthetic.{key}")
    noise_sd = cfg["scene"]["synthetic"]["pixel_noise"]
    if isinstance(noise_sd, bool) or not isinstance(noise_sd, (int, float)) or not noise_sd >= 0:
        raise ConfigurationError(f"'scene.synthetic.pixel_noise' must be a non-negative number, got {noise_sd!r}")
    if cfg["noise"]["kind"] not in ("none", "gaussian", "poisson"):
        raise ConfigurationError(f"'noise.kind' must be none, gaussian or poisson, got {cfg['noise']['kind']!r}")
    if cfg["noise"]["kind"] != "none" and not isinstance(cfg["noise"]["snr_db"], (int, float)):
        raise ConfigurationError("'noise.snr_db' is required for gaussian/poisson noise")
    rate = cfg["classifier"]["train_rate"]
    if not isinstance(rate, (int, float)) or not 0 < rate < 1:
        raise ConfigurationError(f"'classifier.train_rate' must lie in (0, 1), got {rate!r}")
    hidden = cfg["classifier"]["hidden"]
    if not isinstance(hidden, list) or not all(isinstance(h, int) and h >= 1 for h in hidden):
        raise ConfigurationError(f"'classifier.hidden' must be a list of positive integers, got {hidden!r}")
    if cfg["scene"]["cube"] is not None and cfg["scene"]["labels"] is None:
        raise ConfigurationError("'scene.labels' is required when 'scene.cube' is given")
    # the solver config validates its own numeric ranges
    fusion_config(cfg)


def fusion_config(cfg: dict):
    from .solver import FusionConfig

    f = cfg["fusion"]
    for key in ("lambda1", "lambda2", "rho", "beta", "rel_tol", "alpha0"):
        v = f[key]
        if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise ConfigurationError(f"'fusion.{key}' must be a number, got {v!r}")
    if not isinstance(f["restart"], bool):
        raise ConfigurationError(f"'fusion.restart' must be true or false, got {f['restart']!r}")
    lv = f["wavelet_levels"]
    if isinstance(lv, bool) or not isinstance(lv, int) or lv < 0:
        raise ConfigurationError(f"'fusion.wavelet_levels' must be a non-negative integer, got {lv!r}")
    try:
        return FusionConfig(
            lambda1=f["lambda1"],
            lambda2=float(f["lambda2"]),
            rho=float(f["rho"]),
            beta=f["beta"],
            max_iters=int(f["max_iters"]),
            rel_tol=float(f["rel_tol"]),
            alpha_schedule=f["alpha_schedule"],
            alpha0=f["alpha0"],
            restart=f["restart"],
            wavelet_levels=int(f["wavelet_levels"]),
            seed=stage_seed(cfg, "solver"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"fusion: {exc}") from exc


def stage_seed(cfg: dict, stage: str) -> int:
    return int(cfg["seed"]) + SEED_OFFSETS[stage]


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def with_overrides(cfg: dict, *overrides) -> dict:
    out = copy.deepcopy(cfg)
    for ov in overrides:
        _merge(out, parse_override(ov) if isinstance(ov, str) else ov)
    validate(out)
    return out
