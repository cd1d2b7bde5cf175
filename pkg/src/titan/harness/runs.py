"""Experiment runners: super-resolution, computed tomography, Lipschitz sweep.

Every run is fully determined by its resolved config (including the
seed): model init, sparsity masks, and measurement noise draw from
separate Philox streams keyed by the seed, and reports serialize with
full float precision, so identical configs produce identical bytes.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .. import autodiff as ad
from ..metrics import lipschitz_estimate, quality_report
from ..models import build_model, clamp_unit
from ..operators import NoiseSpec, RadonOperator, add_noise, box_downsample, coord_grid
from ..optim import (
    AdamState,
    CosineSchedule,
    NonFiniteGradientError,
    adabreg_step,
    adam_step,
    bregman_nonzero_count,
    cosine_lr,
    dense_count,
    linbreg_step,
    nonzero_count,
    sparse_init,
)
from .checkpoint import save_checkpoint
from .config import ConfigError, ExperimentConfig, config_echo
from .imageio import resolve_image, save_image


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, epoch: int, detail: str):
        super().__init__(f"diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


@dataclass
class RunReport:
    config: dict
    loss_curve: list
    psnr_db: float
    ssim: float
    identical: bool
    dense_params: int
    nonzero_params: int
    wall_clock: float          # informative only; never serialized to files
    lipschitz: float | None = None


# ---------------------------------------------------------------------------
# model construction and training
# ---------------------------------------------------------------------------

def _build_model_for(cfg: ExperimentConfig, channels: int):
    if cfg.model == "titan":
        return build_model(
            "titan",
            depth=cfg.depth,
            channels=cfg.channels,
            out_channels=channels,
            seed=cfg.seed,
            nonlinearity=cfg.nonlinearity,
        )
    if cfg.model == "siren":
        return build_model(
            "siren",
            hidden_layers=cfg.depth,
            width=cfg.width,
            out_channels=channels,
            omega0=cfg.omega0,
            seed=cfg.seed,
        )
    return build_model(
        "deep_decoder",
        base_size=cfg.base_size,
        depth=cfg.depth,
        channels=cfg.channels,
        out_channels=channels,
        seed=cfg.seed,
    )


def make_optimizer(cfg: ExperimentConfig, model):
    """Build optimizer state and a step(grads, lr) closure for a model."""
    if cfg.optimizer == "adam":
        state = AdamState(lr=cfg.lr)

        def step(grads, lr):
            state.lr = lr
            adam_step(state, model.params, grads)

        return state, step

    dense = set(model.params) - model.sparse_param_names()
    state = sparse_init(model.params, cfg.r0, cfg.lam, cfg.seed, dense_names=dense)
    if cfg.optimizer == "adabreg":
        state.adam.lr = cfg.lr

        def step(grads, lr):
            state.adam.lr = lr
            adabreg_step(state, model.params, grads)

        return state, step

    def step(grads, lr):
        # scale the dual step with the schedule, anchored at the base lr
        linbreg_step(state, model.params, grads, tau=cfg.tau * (lr / cfg.lr))

    return state, step


def train(model, build_loss, cfg: ExperimentConfig, *, on_step=None,
          log=None) -> tuple[list, object]:
    """Run the configured optimizer; returns (loss curve, optimizer state)."""
    schedule = (
        CosineSchedule(cfg.lr, cfg.lr_min, cfg.epochs)
        if cfg.lr_schedule == "cosine"
        else None
    )
    state, step = make_optimizer(cfg, model)
    losses = []
    report_every = max(1, cfg.epochs // 10)
    for t in range(cfg.epochs):
        lr_t = cosine_lr(schedule, t) if schedule else cfg.lr
        tape = ad.Tape()
        loss = build_loss(tape)
        value = float(loss.value)
        if not math.isfinite(value):
            raise DivergenceError(t, f"loss = {value}")
        grads = ad.backward(tape)
        try:
            step(grads, lr_t)
        except NonFiniteGradientError as exc:
            raise DivergenceError(t, str(exc)) from exc
        losses.append(value)
        if on_step is not None:
            on_step(t, model, state)
        if log is not None and (t % report_every == 0 or t == cfg.epochs - 1):
            log(f"epoch {t}: loss {value:.6g}")
    return losses, state


def superres_loss_builder(model, train_coords, target_rows, cfg: ExperimentConfig):
    """Squared error against low-resolution pixels.

    Coordinate models regress the pixel values at the low-resolution
    pixel centers; the raster deep decoder renders full resolution and is
    compared after box downsampling.
    """
    if model.kind == "deep_decoder":
        size = model.output_size

        def build_loss(tape):
            pred = model.forward(tape)
            low = ad.downsample_box(pred, size, size, cfg.factor, tape)
            return ad.sum_of_squares(ad.sub(low, tape.constant(target_rows), tape), tape)

        return build_loss

    def build_loss(tape):
        pred = model.forward(train_coords, tape)
        return ad.sum_of_squares(ad.sub(pred, tape.constant(target_rows), tape), tape)

    return build_loss


def ct_loss_builder(model, grid, sino, op: RadonOperator):
    """Frobenius loss between projected model output and the sinogram."""
    if model.kind == "deep_decoder":

        def build_loss(tape):
            pred = model.forward(tape)
            proj = ad.radon_apply(pred, op, tape)
            return ad.sum_of_squares(ad.sub(proj, tape.constant(sino), tape), tape)

        return build_loss

    def build_loss(tape):
        pred = model.forward(grid, tape)
        proj = ad.radon_apply(pred, op, tape)
        return ad.sum_of_squares(ad.sub(proj, tape.constant(sino), tape), tape)

    return build_loss


def reconstruct(model, cfg: ExperimentConfig, size: int, channels: int,
                train_coords=None) -> np.ndarray:
    """Render the trained model on the full-resolution grid.

    Channel statistics are recomputed over the evaluation grid unless
    `freeze_norm_stats` pins them to the training coordinates. Linear-head
    models are clamped to [0, 1] at evaluation.
    """
    if model.kind == "deep_decoder":
        rows = model.forward(None, trainable=False).value
    else:
        stats = None
        if cfg.freeze_norm_stats and getattr(model, "normalized", False):
            _, stats = model.forward(train_coords, None, trainable=False, want_stats=True)
        rows = model.forward(
            coord_grid(size, size), None, trainable=False, norm_stats=stats
        ).value
        if model.kind == "siren":
            rows = clamp_unit(rows)
    img = rows.reshape(size, size, channels)
    return img[:, :, 0] if channels == 1 else img


def _counts(model, state) -> tuple[int, int]:
    dense = dense_count(model.params)
    if hasattr(state, "dual"):
        return dense, bregman_nonzero_count(state)
    return dense, nonzero_count(model.params)


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------

def _load_ground_truth(cfg: ExperimentConfig) -> tuple[np.ndarray, int, int]:
    gt = resolve_image(cfg.image, cfg.image_size)
    size = gt.shape[0]
    channels = 1 if gt.ndim == 2 else gt.shape[2]
    if cfg.out_channels is not None and cfg.out_channels != channels:
        raise ConfigError(
            f"out_channels = {cfg.out_channels} but the image has {channels} channel(s)"
        )
    return gt, size, channels


def _check_raster_size(cfg: ExperimentConfig, size: int):
    if cfg.model == "deep_decoder" and cfg.base_size * 2 ** cfg.depth != size:
        raise ConfigError(
            f"deep_decoder renders {cfg.base_size * 2 ** cfg.depth} pixels per side "
            f"(base_size * 2^depth) but the target is {size}"
        )


def run_superres(cfg: ExperimentConfig, *, write: bool = True, log=None,
                 keep_model: bool = False):
    """Fit the low-resolution image, evaluate at full resolution."""
    start = time.perf_counter()
    gt, size, channels = _load_ground_truth(cfg)
    if size % cfg.factor:
        raise ConfigError(f"factor {cfg.factor} does not divide image size {size}")
    _check_raster_size(cfg, size)
    low = box_downsample(gt, cfg.factor)
    n_low = size // cfg.factor
    target_rows = low.reshape(n_low * n_low, channels)
    train_coords = coord_grid(n_low, n_low)
    model = _build_model_for(cfg, channels)
    build_loss = superres_loss_builder(model, train_coords, target_rows, cfg)
    losses, state = train(model, build_loss, cfg, log=log)
    recon = reconstruct(model, cfg, size, channels, train_coords)
    quality = quality_report(gt, recon)
    dense, nonzero = _counts(model, state)
    report = RunReport(
        config=config_echo(cfg),
        loss_curve=losses,
        psnr_db=quality.psnr_db,
        ssim=quality.ssim,
        identical=quality.identical,
        dense_params=dense,
        nonzero_params=nonzero,
        wall_clock=time.perf_counter() - start,
    )
    if write:
        _write_run_outputs(cfg, report, model, state, recon)
    if keep_model:
        return report, model, state
    return report


def run_ct(cfg: ExperimentConfig, *, write: bool = True, log=None,
           keep_model: bool = False):
    """Reconstruct from noisy projections of the ground-truth image."""
    start = time.perf_counter()
    gt, size, channels = _load_ground_truth(cfg)
    if channels != 1:
        raise ConfigError("ct reconstruction needs a grayscale ground truth")
    _check_raster_size(cfg, size)
    op = RadonOperator(size, cfg.angles)
    sino = add_noise(op.apply(gt), NoiseSpec(cfg.noise_sigma, cfg.seed))
    grid = coord_grid(size, size)
    model = _build_model_for(cfg, channels)
    build_loss = ct_loss_builder(model, grid, sino, op)
    losses, state = train(model, build_loss, cfg, log=log)
    recon = reconstruct(model, cfg, size, channels, grid)
    quality = quality_report(gt, recon)
    dense, nonzero = _counts(model, state)
    report = RunReport(
        config=config_echo(cfg),
        loss_curve=losses,
        psnr_db=quality.psnr_db,
        ssim=quality.ssim,
        identical=quality.identical,
        dense_params=dense,
        nonzero_params=nonzero,
        wall_clock=time.perf_counter() - start,
    )
    if write:
        _write_run_outputs(cfg, report, model, state, recon)
    if keep_model:
        return report, model, state
    return report


def _sweep_cell(payload):
    """One (r0, seed) cell: train with AdaBreg, estimate the Lipschitz constant."""
    settings, r0, seed = payload
    cfg = ExperimentConfig(**settings)
    cfg = replace(cfg, task="superres", optimizer="adabreg", r0=r0, seed=seed)
    report, model, state = run_superres(cfg, write=False, keep_model=True)
    grid = cfg.lipschitz_grid
    report.lipschitz = lipschitz_estimate(model, grid, grid).constant
    return report


def _limit_worker_threads():
    os.environ["OMP_NUM_THREADS"] = "1"
    os.environ["OPENBLAS_NUM_THREADS"] = "1"


def run_lipschitz_sweep(cfg: ExperimentConfig, *, write: bool = True, log=None):
    """Train one model per (r0, seed) cell and aggregate Lipschitz constants.

    Returns (csv_text, reports). Cells run independently, optionally in
    parallel; aggregation order follows the configured r0 list, so the
    CSV is deterministic regardless of scheduling.
    """
    start = time.perf_counter()
    settings = config_echo(cfg)
    settings["r0_list"] = tuple(settings["r0_list"])
    payloads = [
        (settings, r0, cfg.seed + i)
        for r0 in cfg.r0_list
        for i in range(cfg.sweep_seeds)
    ]
    if cfg.workers > 1:
        import multiprocessing as mp

        with ProcessPoolExecutor(
            max_workers=cfg.workers,
            mp_context=mp.get_context("spawn"),
            initializer=_limit_worker_threads,
        ) as pool:
            reports = list(pool.map(_sweep_cell, payloads))
    else:
        reports = [_sweep_cell(p) for p in payloads]
        if log is not None:
            for (_, r0, seed), rep in zip(payloads, reports):
                log(f"r0={r0} seed={seed}: L={rep.lipschitz:.6g}")

    lines = ["r0,mean_lipschitz,stderr_lipschitz,mean_nonzero_fraction"]
    n = cfg.sweep_seeds
    for j, r0 in enumerate(cfg.r0_list):
        cell = reports[j * n : (j + 1) * n]
        values = np.array([r.lipschitz for r in cell])
        fracs = np.array([r.nonzero_params / r.dense_params for r in cell])
        stderr = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        lines.append(f"{r0},{float(values.mean())},{stderr},{float(fracs.mean())}")
    csv_text = "\n".join(lines) + "\n"
    if write:
        os.makedirs(cfg.outdir, exist_ok=True)
        with open(os.path.join(cfg.outdir, "lipschitz.csv"), "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        with open(os.path.join(cfg.outdir, "sweep_report.txt"), "w", encoding="utf-8") as fh:
            fh.write(_sweep_report_text(cfg, payloads, reports))
    if log is not None:
        log(f"sweep finished in {time.perf_counter() - start:.1f}s")
    return csv_text, reports


def run_experiment(cfg: ExperimentConfig, *, write: bool = True, log=None):
    if cfg.task == "superres":
        return run_superres(cfg, write=write, log=log)
    if cfg.task == "ct":
        return run_ct(cfg, write=write, log=log)
    return run_lipschitz_sweep(cfg, write=write, log=log)


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------

def _format_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def config_block(config: dict) -> str:
    lines = ["[config]"]
    for key in sorted(config):
        lines.append(f"{key} = {_format_value(config[key])}")
    return "\n".join(lines) + "\n"


def metrics_block(report: RunReport) -> str:
    lines = [
        "[metrics]",
        f"psnr_db = {report.psnr_db!r}",
        f"ssim = {report.ssim!r}",
        f"identical = {_format_value(report.identical)}",
        f"dense_params = {report.dense_params}",
        f"nonzero_params = {report.nonzero_params}",
    ]
    return "\n".join(lines) + "\n"


def report_text(report: RunReport) -> str:
    """Deterministic report body; wall-clock intentionally excluded."""
    parts = [config_block(report.config), metrics_block(report)]
    training = [
        "[training]",
        f"epochs_run = {len(report.loss_curve)}",
        f"initial_loss = {report.loss_curve[0]!r}" if report.loss_curve else "initial_loss = nan",
        f"final_loss = {report.loss_curve[-1]!r}" if report.loss_curve else "final_loss = nan",
    ]
    parts.append("\n".join(training) + "\n")
    if report.lipschitz is not None:
        parts.append(f"[lipschitz]\nconstant = {report.lipschitz!r}\n")
    return "\n".join(parts)


def loss_csv_text(report: RunReport) -> str:
    lines = ["epoch,loss"]
    lines.extend(f"{i},{v!r}" for i, v in enumerate(report.loss_curve))
    return "\n".join(lines) + "\n"


def _sweep_report_text(cfg, payloads, reports) -> str:
    lines = [config_block(config_echo(cfg)), "[cells]"]
    for (_, r0, seed), rep in zip(payloads, reports):
        frac = rep.nonzero_params / rep.dense_params
        lines.append(
            f"r0={r0} seed={seed} lipschitz={rep.lipschitz!r} "
            f"psnr_db={rep.psnr_db!r} nonzero_fraction={frac!r}"
        )
    return "\n".join(lines) + "\n"


def _optimizer_tensors(state) -> dict:
    tensors = {}
    if hasattr(state, "dual"):
        for name, arr in state.dual.items():
            tensors[f"dual/{name}"] = arr
        inner = state.adam
    else:
        inner = state
    for name, arr in inner.m.items():
        tensors[f"adam_m/{name}"] = arr
    for name, arr in inner.v.items():
        tensors[f"adam_v/{name}"] = arr
    return tensors


def _write_run_outputs(cfg: ExperimentConfig, report: RunReport, model, state, recon):
    os.makedirs(cfg.outdir, exist_ok=True)
    with open(os.path.join(cfg.outdir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report_text(report))
    with open(os.path.join(cfg.outdir, "loss.csv"), "w", encoding="utf-8") as fh:
        fh.write(loss_csv_text(report))
    save_checkpoint(
        os.path.join(cfg.outdir, "checkpoint.tck"),
        model,
        config_echo(cfg),
        extra_tensors=_optimizer_tensors(state),
    )
    if cfg.save_images:
        name = "recon.pgm" if recon.ndim == 2 else "recon.png"
        save_image(recon, os.path.join(cfg.outdir, name))


def regenerate_metrics(checkpoint_path: str) -> str:
    """Recompute [config] and [metrics] from a checkpoint.

    Bit-identical to the corresponding sections of the original report:
    evaluation is deterministic and the nonzero count of the thresholded
    parameters equals the dual-based count recorded at save time.
    """
    from .checkpoint import load_checkpoint

    model, experiment, _ = load_checkpoint(checkpoint_path)
    settings = dict(experiment)
    settings["r0_list"] = tuple(settings["r0_list"])
    cfg = ExperimentConfig(**settings)
    gt, size, channels = _load_ground_truth(cfg)
    if cfg.task == "superres":
        n_low = size // cfg.factor
        train_coords = coord_grid(n_low, n_low)
    else:
        train_coords = coord_grid(size, size)
    recon = reconstruct(model, cfg, size, channels, train_coords)
    quality = quality_report(gt, recon)
    lines = [
        config_block(experiment),
        "[metrics]",
        f"psnr_db = {quality.psnr_db!r}",
        f"ssim = {quality.ssim!r}",
        f"identical = {_format_value(quality.identical)}",
        f"dense_params = {dense_count(model.params)}",
        f"nonzero_params = {nonzero_count(model.params)}",
    ]
    return "\n".join(lines) + "\n"
