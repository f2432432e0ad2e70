"""Run configuration.

A run is described by one YAML document. Every key is optional; anything
omitted takes the built-in default below, and unknown keys are rejected.
Precedence is built-in defaults < config file < command-line flags.

Layout (desk-scale defaults shown)::

    seed: 0
    flow:
      method: hs            # hs | flo-dir
      alpha: 10.0           # Horn-Schunck smoothness weight (0-255 intensities)
      iters: 200
    patches:
      appearance: {scales: [15, 18, 20], stride: 5, size: 15, sample_cap: 6000}
      motion:     {size: 15, stride: 5, sample_cap: 6000}
      joint:      {size: 15, stride: 5, sample_cap: 6000}
      test:       {size: 15, stride: 15}
    sdae:
      common: {learning_rate: 0.1, momentum: 0.9, batch_size: 32, ...}
      A: {layer_dims: [225, 256, 128, 64, 32]}
      M: {layer_dims: [450, 256, 128, 64, 32]}
      J: {layer_dims: [675, 512, 256, 128, 64], learning_rate: 0.03}
    ocsvm:
      common: {nu: 0.1, rbf_sigma: null, tolerance: 1.0e-6, max_passes: 200, max_train: 1500}
      A: {}
      M: {}
      J: {}
    fusion: {subspace_dim: 16, lambda_s: 0.1, trace_norm: mean, score_mode: zscore, center: false}
    detect: {eta: null, eta_quantile: 0.99, write_masks: false}
    eval: {overlap: 0.4, nu_grid: [0.01, 0.05, 0.1, 0.2, 0.3]}
    synth: {train_clips: 4, test_clips: 4, frames: 40, width: 60, height: 60, anomaly_rate: 0.4}

Per-pipeline ``sdae`` and ``ocsvm`` sections override the ``common`` block.
"""

import copy
from pathlib import Path

import yaml

from .errors import ConfigError, DomainError
from .ingest import PatchKind, PatchSpec
from .ocsvm import OcsvmConfig
from .sdae import SdaeConfig

PIPE_KEYS = ("A", "M", "J")

_SDAE_COMMON = {
    "noise_variance": 0.0003,
    "sparsity_target": 0.05,
    "sparsity_weight": 0.1,
    "lambda_pre": 1e-4,
    "lambda_fine": 1e-4,
    "learning_rate": 0.1,
    "momentum": 0.9,
    "batch_size": 32,
    "pretrain_epochs": 15,
    "finetune_epochs": 15,
}

DEFAULTS = {
    "seed": 0,
    "flow": {"method": "hs", "alpha": 10.0, "iters": 200},
    "patches": {
        "appearance": {"scales": [15, 18, 20], "stride": 5, "size": 15, "sample_cap": 6000},
        "motion": {"size": 15, "stride": 5, "sample_cap": 6000},
        "joint": {"size": 15, "stride": 5, "sample_cap": 6000},
        "test": {"size": 15, "stride": 15},
    },
    "sdae": {
        "common": _SDAE_COMMON,
        "A": {"layer_dims": [225, 256, 128, 64, 32]},
        "M": {"layer_dims": [450, 256, 128, 64, 32]},
        "J": {"layer_dims": [675, 512, 256, 128, 64], "learning_rate": 0.03},
    },
    "ocsvm": {
        "common": {"nu": 0.1, "rbf_sigma": None, "tolerance": 1e-6, "max_passes": 200, "max_train": 1500},
        "A": {},
        "M": {},
        "J": {},
    },
    "fusion": {"subspace_dim": 16, "lambda_s": 0.1, "trace_norm": "mean", "score_mode": "zscore", "center": False},
    "detect": {"eta": None, "eta_quantile": 0.99, "write_masks": False},
    "eval": {"overlap": 0.4, "nu_grid": [0.01, 0.05, 0.1, 0.2, 0.3]},
    "synth": {
        "train_clips": 4,
        "test_clips": 4,
        "frames": 40,
        "width": 60,
        "height": 60,
        "anomaly_rate": 0.4,
    },
}

# widths and optimiser settings of the published architecture
PAPER_ARCH = {
    "sdae": {
        "common": {"learning_rate": 0.01, "batch_size": 256, "momentum": 0.9, "noise_variance": 0.0003},
        "A": {"layer_dims": [225, 1024, 512, 256, 128]},
        "M": {"layer_dims": [450, 1024, 512, 256, 128]},
        "J": {"layer_dims": [675, 2048, 1024, 512, 256], "learning_rate": 0.01},
    },
    "fusion": {"lambda_s": 0.1},
}

# keys whose value may be null in addition to their default type
_NULLABLE = {("ocsvm", "common", "rbf_sigma"), ("ocsvm", "rbf_sigma"), ("detect", "eta")}
# per-pipeline sections accept any key of the matching ``common`` block
_OPEN_SECTIONS = {"sdae", "ocsvm"}


def _check_value(path, default, value):
    if value is None:
        if path in _NULLABLE or path[:1] + path[2:] in _NULLABLE or default is None:
            return value
        raise ConfigError(f"{'.'.join(path)} may not be null")
    if default is None:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{'.'.join(path)} must be a number or null, got {value!r}")
        return float(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{'.'.join(path)} must be true/false, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{'.'.join(path)} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{'.'.join(path)} must be an integer, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{'.'.join(path)} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{'.'.join(path)} must be a list, got {value!r}")
        return list(value)
    return value


def merge(base, override, path=()):
    """Recursively overlay ``override`` on ``base``; unknown keys and type
    mismatches raise :class:`ConfigError`."""
    if not isinstance(override, dict):
        raise ConfigError(f"{'.'.join(path) or 'config'} must be a mapping, got {type(override).__name__}")
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = path + (str(key),)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(here)!r}")
        default = base[key]
        if isinstance(default, dict):
            if len(path) == 1 and path[0] in _OPEN_SECTIONS and key in PIPE_KEYS:
                allowed = {**base["common"], **default}
                out[key] = _merge_pipe(allowed, default, value, here)
            else:
                out[key] = merge(default, value or {}, here)
        else:
            out[key] = _check_value(here, default, value)
    return out


def _merge_pipe(allowed, current, value, path):
    if value is None:
        return copy.deepcopy(current)
    if not isinstance(value, dict):
        raise ConfigError(f"{'.'.join(path)} must be a mapping")
    out = copy.deepcopy(current)
    for key, v in value.items():
        if key not in allowed:
            raise ConfigError(f"unknown config key {'.'.join(path + (str(key),))!r}")
        out[key] = _check_value(path + (str(key),), allowed[key], v)
    return out


def build(file_path=None, paper_arch=False, overrides=None):
    """Resolve the run configuration as a plain nested dict."""
    cfg = copy.deepcopy(DEFAULTS)
    if paper_arch:
        cfg = merge(cfg, PAPER_ARCH)
    if file_path is not None:
        cfg = merge(cfg, load_yaml(file_path))
    if overrides:
        cfg = merge(cfg, overrides)
    validate(cfg)
    return cfg


def load_yaml(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def validate(cfg):
    if cfg["flow"]["method"] not in ("hs", "flo-dir"):
        raise ConfigError(f"flow.method must be 'hs' or 'flo-dir', got {cfg['flow']['method']!r}")
    # constructing the typed configs runs their own checks
    for k in PIPE_KEYS:
        sdae_config(cfg, k)
        ocsvm_config(cfg, k)
    p = cfg["patches"]
    if not p["motion"]["size"] == p["joint"]["size"] == p["appearance"]["size"]:
        raise ConfigError("patches.appearance.size, motion.size and joint.size must agree")
    dims = {k: sdae_config(cfg, k).layer_dims[0] for k in PIPE_KEYS}
    specs = patch_specs(cfg)
    expect = {"A": specs["A"].dim, "M": specs["M"].dim, "J": specs["J"].dim}
    for k in PIPE_KEYS:
        if dims[k] != expect[k]:
            raise ConfigError(f"sdae.{k}.layer_dims[0] is {dims[k]} but {k} patches have dim {expect[k]}")
    q = cfg["detect"]["eta_quantile"]
    if not 0.0 < q <= 1.0:
        raise ConfigError(f"detect.eta_quantile must lie in (0, 1], got {q}")
    if cfg["fusion"]["trace_norm"] not in ("mean", "share", "none"):
        raise ConfigError(f"fusion.trace_norm must be mean, share or none, got {cfg['fusion']['trace_norm']!r}")
    if cfg["fusion"]["score_mode"] not in ("zscore", "raw"):
        raise ConfigError(f"fusion.score_mode must be zscore or raw, got {cfg['fusion']['score_mode']!r}")
    if cfg["fusion"]["subspace_dim"] < 1:
        raise ConfigError("fusion.subspace_dim must be >= 1")
    rate = cfg["synth"]["anomaly_rate"]
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"synth.anomaly_rate must lie in [0, 1], got {rate}")


def sdae_config(cfg, key):
    section = {**cfg["sdae"]["common"], **cfg["sdae"][key]}
    try:
        return SdaeConfig(seed=cfg["seed"], **section)
    except (TypeError, DomainError) as exc:
        raise ConfigError(f"sdae.{key}: {exc}") from None


def ocsvm_config(cfg, key):
    section = {**cfg["ocsvm"]["common"], **cfg["ocsvm"][key]}
    section.pop("max_train", None)
    try:
        return OcsvmConfig(**section)
    except DomainError as exc:
        raise ConfigError(f"ocsvm.{key}: {exc}") from None


def ocsvm_max_train(cfg, key):
    return int({**cfg["ocsvm"]["common"], **cfg["ocsvm"][key]}["max_train"])


def patch_specs(cfg):
    p = cfg["patches"]
    app, mot, joint, test = p["appearance"], p["motion"], p["joint"], p["test"]
    try:
        return {
            "A": PatchSpec(tuple(app["scales"]), app["stride"], app["size"], app["size"], 1),
            "M": PatchSpec((mot["size"],), mot["stride"], mot["size"], mot["size"], 2),
            "J": PatchSpec((joint["size"],), joint["stride"], joint["size"], joint["size"], 3),
            "test": PatchSpec((test["size"],), test["stride"], app["size"], app["size"], 1),
        }
    except DomainError as exc:
        raise ConfigError(f"patches: {exc}") from None


def kind_of(key):
    return PatchKind(key)


def dump(cfg):
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)
