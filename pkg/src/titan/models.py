"""Image representations: TITAN, SIREN, and the raster deep decoder.

TITAN evaluates an image at arbitrary coordinates by running deep-decoder
style channel mixing on a constant base vector while injecting spatial
detail through per-layer sinusoidal residuals sin(alpha_i (W_i x + v_i))/d.
SIREN is the classic sinusoidal coordinate MLP baseline; the deep decoder
is the raster baseline whose layers upsample a small random base image.

Models are parameter containers (dicts of float64 arrays). Each forward
binds the parameters as leaves on a fresh tape, so training loops can run
`autodiff.backward` and feed the name-keyed gradients to `titan.optim`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import autodiff as ad
from ._rng import STREAM_MODEL_INIT, generator

NORM_EPS = 1e-5  # matches common batch-norm practice


# ---------------------------------------------------------------------------
# TITAN
# ---------------------------------------------------------------------------

def default_alpha_schedule(depth: int) -> list[float]:
    """Frequency scale per layer: alpha_i = 4(i+1), rising with depth."""
    return [4.0 * (i + 1) for i in range(depth)]


@dataclass
class TitanConfig:
    depth: int = 10
    channels: int = 100
    out_channels: int = 3
    alpha: Sequence[float] | None = None  # None -> default_alpha_schedule
    seed: int = 0
    nonlinearity: str = "relu"  # "softplus" gives a differentiable variant
    norm_eps: float = NORM_EPS


class TitanModel:
    """Parameter container for the grid-free sinusoidal-residual decoder."""

    kind = "titan"
    normalized = True  # has channel_norm layers

    def __init__(self, config: TitanConfig, params: dict, fixed: dict):
        self.config = config
        self.params = params          # trainable, insertion-ordered
        self.fixed = fixed            # b0 only; never receives gradients
        self.alpha = (
            list(config.alpha)
            if config.alpha is not None
            else default_alpha_schedule(config.depth)
        )
        if len(self.alpha) != config.depth:
            raise ValueError(
                f"alpha schedule has {len(self.alpha)} entries for depth {config.depth}"
            )

    def forward(self, coords, tape, **kw):
        return titan_forward(self, coords, tape, **kw)

    def sparse_param_names(self) -> set[str]:
        """Weight matrices eligible for Bregman sparsification.

        Normalization affines and residual biases stay dense: zeroing a
        scale kills the channel with no gradient path back.
        """
        return {n for n in self.params if n.split("_")[0] in ("C", "W", "head")}

    def param_counts(self) -> tuple[int, int]:
        trainable = sum(v.size for v in self.params.values())
        frozen = sum(v.size for v in self.fixed.values())
        return trainable, frozen


def titan_init(config: TitanConfig) -> TitanModel:
    """Build a TITAN model with seeded uniform(-1/sqrt(fan_in)) weights.

    The base vector b0 is drawn once from uniform(-1, 1) and frozen.
    Draw order is fixed (b0, then per layer C, W, v, then the head) so a
    seed pins every parameter bit-for-bit.
    """
    d, k, out = config.depth, config.channels, config.out_channels
    if d < 1 or k < 1 or out < 1:
        raise ValueError("depth, channels and out_channels must be >= 1")
    rng = generator(config.seed, STREAM_MODEL_INIT)
    fixed = {"b0": rng.uniform(-1.0, 1.0, size=k)}
    params: dict[str, np.ndarray] = {}
    for i in range(d):
        bound = 1.0 / np.sqrt(k)
        params[f"C_{i}"] = rng.uniform(-bound, bound, size=(k, k))
        rbound = 1.0 / np.sqrt(2.0)
        params[f"W_{i}"] = rng.uniform(-rbound, rbound, size=(k, 2))
        params[f"v_{i}"] = rng.uniform(-rbound, rbound, size=k)
        params[f"gamma_{i}"] = np.ones(k)
        params[f"beta_{i}"] = np.zeros(k)
    params["head"] = rng.uniform(-1.0 / np.sqrt(k), 1.0 / np.sqrt(k), size=(out, k))
    return TitanModel(config, params, fixed)


def titan_residual(model: TitanModel, i: int, coords: np.ndarray) -> np.ndarray:
    """Spatial residual of layer i: sin(alpha_i (W_i x + v_i)) / depth."""
    coords = np.asarray(coords, dtype=np.float64)
    w = model.params[f"W_{i}"]
    v = model.params[f"v_{i}"]
    pre = model.alpha[i] * (coords @ w.T + v)
    return np.sin(pre) / model.config.depth


def _bind(tape, arrays: dict, trainable: bool) -> dict:
    if tape is None:
        return {name: ad.Var(arr) for name, arr in arrays.items()}
    return {
        name: tape.leaf(arr, name=name, trainable=trainable)
        for name, arr in arrays.items()
    }


def _as_coord_var(coords, tape):
    if isinstance(coords, ad.Var):
        x = coords
    else:
        arr = np.asarray(coords, dtype=np.float64)
        x = tape.constant(arr) if tape is not None else ad.Var(arr)
    if x.value.ndim != 2 or x.value.shape[1] != 2:
        raise ad.ShapeMismatchError("coords", f"expected Nx2 coordinates, got {x.value.shape}")
    if x.value.shape[0] == 0:
        raise ad.ShapeMismatchError("coords", "empty coordinate batch (N == 0)")
    return x


def titan_forward(model: TitanModel, coords, tape, *, norm_stats=None,
                  trainable: bool = True, want_stats: bool = False):
    """Evaluate the model at an Nx2 coordinate batch.

    Normalization statistics come from this batch unless `norm_stats`
    (a per-layer list of (mu, var)) pins them, in which case the rows are
    independent of each other. With a tape the parameters are bound as
    named trainable leaves; with ``tape=None`` evaluation is eager and
    keeps no graph.
    """
    cfg = model.config
    x = _as_coord_var(coords, tape)
    n = x.value.shape[0]
    p = _bind(tape, model.params, trainable)
    nonlin = ad.softplus if cfg.nonlinearity == "softplus" else ad.relu
    base = np.broadcast_to(model.fixed["b0"], (n, cfg.channels)).copy()
    h = tape.constant(base) if tape is not None else ad.Var(base)
    stats_out = []
    for i in range(cfg.depth):
        mixed = ad.matmul(h, ad.transpose(p[f"C_{i}"], tape), tape)
        wa = ad.scale(p[f"W_{i}"], model.alpha[i], tape)
        va = ad.scale(p[f"v_{i}"], model.alpha[i], tape)
        pre = ad.broadcast_add(ad.matmul(x, ad.transpose(wa, tape), tape), va, tape)
        res = ad.scale(ad.sin(pre, tape), 1.0 / cfg.depth, tape)
        z = nonlin(ad.add(mixed, res, tape), tape)
        if norm_stats is not None:
            frozen = norm_stats[i]
        elif tape is None:
            frozen = (z.value.mean(axis=0), z.value.var(axis=0))
        else:
            frozen = None
        h = ad.channel_norm(z, p[f"gamma_{i}"], p[f"beta_{i}"],
                            eps=cfg.norm_eps, frozen=frozen, tape=tape)
        if want_stats:
            if frozen is not None:
                stats_out.append(frozen)
            else:
                stats_out.append(tape.nodes[h.index].attrs["_stats"])
    out = ad.sigmoid(ad.matmul(h, ad.transpose(p["head"], tape), tape), tape)
    if want_stats:
        return out, stats_out
    return out


# ---------------------------------------------------------------------------
# SIREN
# ---------------------------------------------------------------------------

@dataclass
class SirenConfig:
    hidden_layers: int = 2   # number of sine layers (first included)
    width: int = 256
    out_channels: int = 3
    omega0: float = 30.0
    seed: int = 0


class SirenModel:
    """Sinusoidal coordinate MLP: sin(omega0 (W0 x + b0)), then sine layers."""

    kind = "siren"
    normalized = False

    def __init__(self, config: SirenConfig, params: dict):
        self.config = config
        self.params = params
        self.fixed: dict[str, np.ndarray] = {}

    def forward(self, coords, tape, **kw):
        return siren_forward(self, coords, tape, **kw)

    def sparse_param_names(self) -> set[str]:
        return {n for n in self.params if n.startswith("W")}

    def param_counts(self) -> tuple[int, int]:
        return sum(v.size for v in self.params.values()), 0


def siren_init(config: SirenConfig) -> SirenModel:
    """First layer uniform(-1/fan_in, 1/fan_in) with the omega0 scale applied
    inside the sine; deeper weights uniform(+-sqrt(6/fan_in)/omega0); biases
    follow the uniform(+-1/sqrt(fan_in)) default rule."""
    d, w, out = config.hidden_layers, config.width, config.out_channels
    if d < 1 or w < 1 or out < 1:
        raise ValueError("hidden_layers, width and out_channels must be >= 1")
    rng = generator(config.seed, STREAM_MODEL_INIT)
    params: dict[str, np.ndarray] = {}
    params["W_0"] = rng.uniform(-1.0 / 2.0, 1.0 / 2.0, size=(2, w))
    params["b_0"] = rng.uniform(-1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0), size=w)
    for i in range(1, d):
        bound = np.sqrt(6.0 / w) / config.omega0
        params[f"W_{i}"] = rng.uniform(-bound, bound, size=(w, w))
        params[f"b_{i}"] = rng.uniform(-1.0 / np.sqrt(w), 1.0 / np.sqrt(w), size=w)
    hbound = np.sqrt(6.0 / w) / config.omega0
    params["W_head"] = rng.uniform(-hbound, hbound, size=(w, out))
    params["b_head"] = rng.uniform(-1.0 / np.sqrt(w), 1.0 / np.sqrt(w), size=out)
    return SirenModel(config, params)


def siren_forward(model: SirenModel, coords, tape, *, trainable: bool = True,
                  norm_stats=None, want_stats: bool = False):
    """Linear head output; training compares it unclamped, evaluation clamps
    to [0, 1] (see `clamp_unit`). norm_stats/want_stats exist for interface
    uniformity; SIREN has no normalization layers."""
    cfg = model.config
    x = _as_coord_var(coords, tape)
    p = _bind(tape, model.params, trainable)
    h = ad.sin(ad.scale(ad.broadcast_add(ad.matmul(x, p["W_0"], tape), p["b_0"], tape),
                        cfg.omega0, tape), tape)
    for i in range(1, cfg.hidden_layers):
        h = ad.sin(ad.broadcast_add(ad.matmul(h, p[f"W_{i}"], tape), p[f"b_{i}"], tape), tape)
    out = ad.broadcast_add(ad.matmul(h, p["W_head"], tape), p["b_head"], tape)
    if want_stats:
        return out, []
    return out


def clamp_unit(values: np.ndarray) -> np.ndarray:
    """Evaluation-time clamp for linear-head models."""
    return np.clip(values, 0.0, 1.0)


# ---------------------------------------------------------------------------
# deep decoder
# ---------------------------------------------------------------------------

@dataclass
class DeepDecoderConfig:
    base_size: int = 8       # n0; output raster is n0 * 2**depth
    depth: int = 4
    channels: int = 64
    out_channels: int = 1
    seed: int = 0
    norm_eps: float = NORM_EPS


class DeepDecoderModel:
    """Raster baseline: fixed random base image, upsample + mix per layer."""

    kind = "deep_decoder"
    normalized = True

    def __init__(self, config: DeepDecoderConfig, params: dict, fixed: dict):
        self.config = config
        self.params = params
        self.fixed = fixed

    @property
    def output_size(self) -> int:
        return self.config.base_size * (2 ** self.config.depth)

    def forward(self, tape, **kw):
        return deep_decoder_forward(self, tape, **kw)

    def sparse_param_names(self) -> set[str]:
        return {n for n in self.params if n.split("_")[0] in ("C", "head")}

    def param_counts(self) -> tuple[int, int]:
        trainable = sum(v.size for v in self.params.values())
        frozen = sum(v.size for v in self.fixed.values())
        return trainable, frozen


def deep_decoder_init(config: DeepDecoderConfig) -> DeepDecoderModel:
    n0, d, k, out = config.base_size, config.depth, config.channels, config.out_channels
    if n0 < 1 or d < 1 or k < 1 or out < 1:
        raise ValueError("base_size, depth, channels, out_channels must be >= 1")
    rng = generator(config.seed, STREAM_MODEL_INIT)
    fixed = {"b0": rng.uniform(-1.0, 1.0, size=(n0 * n0, k))}
    params: dict[str, np.ndarray] = {}
    for i in range(d):
        bound = 1.0 / np.sqrt(k)
        params[f"C_{i}"] = rng.uniform(-bound, bound, size=(k, k))
        params[f"gamma_{i}"] = np.ones(k)
        params[f"beta_{i}"] = np.zeros(k)
    params["head"] = rng.uniform(-1.0 / np.sqrt(k), 1.0 / np.sqrt(k), size=(k, out))
    return DeepDecoderModel(config, params, fixed)


def deep_decoder_forward(model: DeepDecoderModel, tape, *, norm_stats=None,
                         trainable: bool = True, want_stats: bool = False):
    """Returns the raster flattened row-major as (n_d*n_d, out_channels)."""
    cfg = model.config
    p = _bind(tape, model.params, trainable)
    b0 = model.fixed["b0"]
    h = tape.constant(b0) if tape is not None else ad.Var(b0)
    size = cfg.base_size
    stats_out = []
    for i in range(cfg.depth):
        up = ad.bilinear_upsample(h, size, size, tape)
        size *= 2
        z = ad.relu(ad.matmul(up, p[f"C_{i}"], tape), tape)
        if norm_stats is not None:
            frozen = norm_stats[i]
        elif tape is None:
            frozen = (z.value.mean(axis=0), z.value.var(axis=0))
        else:
            frozen = None
        h = ad.channel_norm(z, p[f"gamma_{i}"], p[f"beta_{i}"],
                            eps=cfg.norm_eps, frozen=frozen, tape=tape)
        if want_stats:
            stats_out.append(frozen if frozen is not None
                             else tape.nodes[h.index].attrs["_stats"])
    out = ad.sigmoid(ad.matmul(h, p["head"], tape), tape)
    if want_stats:
        return out, stats_out
    return out


# ---------------------------------------------------------------------------
# factory helpers
# ---------------------------------------------------------------------------

MODEL_KINDS = ("titan", "siren", "deep_decoder")


def build_model(kind: str, **kwargs):
    if kind == "titan":
        return titan_init(TitanConfig(**kwargs))
    if kind == "siren":
        return siren_init(SirenConfig(**kwargs))
    if kind == "deep_decoder":
        return deep_decoder_init(DeepDecoderConfig(**kwargs))
    raise ValueError(f"unknown model kind {kind!r}")


def config_dict(model) -> dict:
    d = asdict(model.config)
    if isinstance(model, TitanModel):
        d["alpha"] = list(model.alpha)
    return d
