"""Experiment configuration: flat key = value text files.

Schema (one `key = value` per line, `#` starts a comment, unknown keys
are rejected):

    task        superres | ct | lipschitz_sweep          (required)
    model       titan | siren | deep_decoder             (required)
    image       file path, or builtin:phantom|camera|astronaut  (required)
    outdir      output directory (env TITAN_OUTDIR overrides)
    image_size  ground-truth side length (source must be a multiple)
    factor      superres downsampling factor        [4]
    angles      ct projection count m               [30]
    noise_sigma ct measurement noise sigma          [2.0]
    epochs      training iterations                 [5000 superres, 10000 ct]
    optimizer   adam | adabreg | linbreg            [adabreg for titan superres, else adam]
    lr          learning rate                       [1e-3]
    lr_schedule constant | cosine                   [cosine for ct, else constant]
    lr_min      schedule floor                      [0.0]
    lam         Bregman soft threshold              [1e-3]
    r0          Bregman initial nonzero fraction    [0.1]
    tau         linbreg dual step size              [0.05]
    seed        master seed; fully determines a run [0]
    depth       layers (titan/deep_decoder) or sine layers (siren)
    channels    titan/deep_decoder channel width    [100]
    width       siren width                         [256]
    omega0      siren first-layer frequency         [30.0]
    out_channels output channels                    [derived from the image]
    base_size   deep decoder base raster side n0    [8]
    freeze_norm_stats  reuse training-batch normalization at eval [false]
    nonlinearity relu | softplus                    [relu]
    save_images  write reconstruction images        [true]
    r0_list     sweep fractions, comma separated    [0.01,0.1,1.0]
    sweep_seeds seeds per sweep cell                [5]
    lipschitz_grid  Jacobian grid side              [256]
    workers     parallel sweep workers              [1]
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

TASKS = ("superres", "ct", "lipschitz_sweep")
MODELS = ("titan", "siren", "deep_decoder")
OPTIMIZERS = ("adam", "adabreg", "linbreg")

OUTDIR_ENV = "TITAN_OUTDIR"


class ConfigError(ValueError):
    """Invalid or missing configuration; the CLI maps this to exit code 2."""


@dataclass
class ExperimentConfig:
    task: str = ""
    model: str = ""
    image: str = ""
    outdir: str = ""
    image_size: int | None = None
    factor: int = 4
    angles: int = 30
    noise_sigma: float = 2.0
    epochs: int | None = None
    optimizer: str | None = None
    lr: float = 1e-3
    lr_schedule: str | None = None
    lr_min: float = 0.0
    lam: float = 1e-3
    r0: float = 0.1
    tau: float = 0.05
    seed: int = 0
    depth: int | None = None
    channels: int = 100
    width: int = 256
    omega0: float = 30.0
    out_channels: int | None = None
    base_size: int = 8
    freeze_norm_stats: bool = False
    nonlinearity: str = "relu"
    save_images: bool = True
    r0_list: tuple = (0.01, 0.1, 1.0)
    sweep_seeds: int = 5
    lipschitz_grid: int = 256
    workers: int = 1


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    ftype = _FIELD_TYPES[key]
    try:
        if key == "r0_list":
            vals = tuple(float(v) for v in raw.split(",") if v.strip())
            if not vals:
                raise ValueError("empty list")
            return vals
        if ftype in ("int", "int | None"):
            return int(raw)
        if ftype in ("float", "float | None"):
            return float(raw)
        if ftype == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc


def parse_config_text(text: str) -> dict:
    """Parse flat key = value text into a raw settings dict."""
    settings = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        settings[key] = _parse_value(key, raw)
    return settings


def apply_overrides(settings: dict, overrides: list[str]) -> dict:
    """Apply CLI `key=value` override strings on top of parsed settings."""
    out = dict(settings)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown override key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def _default_depth(model: str) -> int:
    return {"titan": 10, "siren": 2, "deep_decoder": 4}[model]


def resolve_config(settings: dict) -> ExperimentConfig:
    """Fill per-task defaults, validate, and freeze an ExperimentConfig."""
    cfg = ExperimentConfig()
    for key, value in settings.items():
        cfg = replace(cfg, **{key: value})
    for key in ("task", "model", "image"):
        if not getattr(cfg, key):
            raise ConfigError(f"missing required key {key!r}")
    if cfg.task not in TASKS:
        raise ConfigError(f"unknown task {cfg.task!r}; choose from {TASKS}")
    if cfg.model not in MODELS:
        raise ConfigError(f"unknown model {cfg.model!r}; choose from {MODELS}")
    if cfg.task == "lipschitz_sweep" and cfg.model != "titan":
        raise ConfigError("lipschitz_sweep sweeps the titan model only")

    if cfg.depth is None:
        cfg = replace(cfg, depth=_default_depth(cfg.model))
    if cfg.epochs is None:
        cfg = replace(cfg, epochs=10000 if cfg.task == "ct" else 5000)
    if cfg.optimizer is None:
        default_opt = (
            "adabreg"
            if cfg.model == "titan" and cfg.task in ("superres", "lipschitz_sweep")
            else "adam"
        )
        cfg = replace(cfg, optimizer=default_opt)
    if cfg.lr_schedule is None:
        cfg = replace(cfg, lr_schedule="cosine" if cfg.task == "ct" else "constant")

    env_outdir = os.environ.get(OUTDIR_ENV)
    if env_outdir:
        cfg = replace(cfg, outdir=env_outdir)
    if not cfg.outdir:
        cfg = replace(
            cfg, outdir=os.path.join("titan_out", f"{cfg.task}-{cfg.model}-seed{cfg.seed}")
        )

    if cfg.optimizer not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")
    if cfg.lr_schedule not in ("constant", "cosine"):
        raise ConfigError(f"unknown lr_schedule {cfg.lr_schedule!r}")
    if cfg.nonlinearity not in ("relu", "softplus"):
        raise ConfigError(f"unknown nonlinearity {cfg.nonlinearity!r}")
    for key in ("factor", "angles", "epochs", "depth", "channels", "width",
                "base_size", "sweep_seeds", "lipschitz_grid", "workers"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key} must be >= 1")
    if cfg.lr <= 0 or cfg.lam <= 0 or cfg.tau <= 0:
        raise ConfigError("lr, lam and tau must be positive")
    if not 0.0 < cfg.r0 <= 1.0:
        raise ConfigError("r0 must be in (0, 1]")
    if any(not 0.0 < r <= 1.0 for r in cfg.r0_list):
        raise ConfigError("every r0_list entry must be in (0, 1]")
    if cfg.noise_sigma < 0:
        raise ConfigError("noise_sigma must be nonnegative")
    if cfg.seed < 0:
        raise ConfigError("seed must be nonnegative")
    if not cfg.image.startswith("builtin:") and not os.path.exists(cfg.image):
        raise ConfigError(f"image file does not exist: {cfg.image}")
    return cfg


def load_config(path: str, overrides: list[str] | None = None,
                force_task: str | None = None) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file does not exist: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        settings = parse_config_text(fh.read())
    if overrides:
        settings = apply_overrides(settings, overrides)
    if force_task is not None:
        settings["task"] = force_task
    return resolve_config(settings)


def config_echo(cfg: ExperimentConfig) -> dict:
    """Fully-resolved settings as a plain dict for reports and checkpoints."""
    echo = {}
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = list(value)
        echo[f.name] = value
    return echo
