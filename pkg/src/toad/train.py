"""Seed-deterministic training loop.

One optimizer step per mini-batch; the learning rate is read off the
schedule at the fractional epoch of each step. Frozen tensors are never in
the optimizer's view, and their checksum is logged every epoch so a run
can prove they stayed put.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .config import RunConfig
from .data import Dataset, full_shot_samples, make_batch
from .errors import DataError
from .model import ClassifierMatrix, ModelParams, forward
from .optim import OptimState, adamw_step, lr_at, total_loss

log = logging.getLogger("toad.train")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float
    frozen_checksum: str


@dataclass
class TrainResult:
    params: ModelParams
    optim: OptimState
    history: list[EpochStats]
    iterations_per_epoch: int


def build_params(cfg: RunConfig, dataset: Dataset,
                 classifier: ClassifierMatrix) -> ModelParams:
    model_cfg = cfg.model_config(dataset.dim, dataset.classes)
    return ModelParams(model_cfg, classifier, np.random.default_rng([cfg.seed, 0]))


def train(params: ModelParams, cfg: RunConfig, dataset: Dataset,
          samples: list | None = None, on_epoch=None,
          start_epoch: int = 0, optim: OptimState | None = None) -> TrainResult:
    cfg.validate()
    if dataset.dim != params.cfg.feature_dim:
        raise DataError(
            f"dataset dim {dataset.dim} != model dim {params.cfg.feature_dim}")
    if dataset.classes != params.cfg.classes:
        raise DataError(
            f"dataset has {dataset.classes} classes, model has {params.cfg.classes}")
    if samples is None:
        samples = full_shot_samples(dataset, cfg.rate)
    if not samples:
        raise DataError("no training samples")
    if optim is None:
        optim = cfg.optim_state()
    loss_cfg = cfg.loss_config()
    batch = cfg.batch_size
    iterations = -(-len(samples) // batch)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    history: list[EpochStats] = []
    if start_epoch:
        for _ in range(start_epoch):  # keep shuffles aligned on resume
            shuffle_rng.permutation(len(samples))
    for epoch in range(start_epoch, cfg.epochs):
        order = shuffle_rng.permutation(len(samples))
        losses = []
        lr = lr_at(float(epoch), optim)
        for it in range(iterations):
            chosen = [samples[i] for i in order[it * batch:(it + 1) * batch]]
            wb = make_batch(dataset, chosen, params.cfg.window, cfg.rate,
                            cfg.horizon, params.cfg.future_enabled)
            lr = lr_at(epoch + it / iterations, optim)
            params.zero_grads()
            with tc.GradTape() as tape:
                z, z_future = forward(params, wb.x)
                loss = total_loss(
                    z, z_future, wb.y,
                    wb.y_future if z_future is not None else None, loss_cfg)
            tape.backward(loss)
            adamw_step(params.trainable(), optim, lr)
            losses.append(loss.item())
        stats = EpochStats(epoch, float(np.mean(losses)), lr,
                           params.frozen_checksum())
        history.append(stats)
        log.info("epoch %d loss %.6f lr %.3e frozen %s",
                 epoch, stats.mean_loss, stats.lr, stats.frozen_checksum[:12])
        if on_epoch is not None:
            on_epoch(epoch, params, optim, stats)
    return TrainResult(params, optim, history, iterations)
