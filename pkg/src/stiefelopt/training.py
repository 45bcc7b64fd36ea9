"""Seeded end-to-end training runs.

Every random draw in a run derives from (seed, stream tag, ...), so a
config replays exactly: stream 0 initializes weights, stream 1 shuffles
batches per epoch, stream 3 generates synthetic data; the optimizer owns
stream 2 for per-step section sampling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict

import numpy as np

from . import data as data_mod
from .network import (
    ModelParams,
    TransformerConfig,
    init_params,
    model_backward,
    model_forward,
    sample_losses,
)
from .optimizers import STIEFEL, Hyperparameters, make_optimizer, optimizer_step
from .stiefel import StiefelPoint

__all__ = ["RunConfig", "EpochRow", "TrainResult", "load_dataset",
           "load_eval_dataset", "evaluate_model", "run_training"]

_INIT_STREAM = 0
_SHUFFLE_STREAM = 1
_DATA_STREAM = 3
_EVAL_STREAM = 4

PRECISIONS = {"single": np.float32, "double": np.float64}


@dataclass
class RunConfig:
    """Everything one training run depends on."""

    optimizer: str = "adam"
    constrain: bool = True
    eta: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.99
    delta: float = 3e-7
    alpha: float = 0.5
    epochs: int = 50
    batch_size: int = 256
    seed: int = 1
    precision: str = "single"
    dataset: str = "synthetic"     # "synthetic" or "mnist"
    subset: int = 2048             # samples drawn from either source
    mnist_images: str = ""
    mnist_labels: str = ""
    token_dim: int = 49
    seq_len: int = 16
    n_heads: int = 7
    n_layers: int = 2
    n_classes: int = 10
    output_dir: str = "runs"
    evaluate: bool = False         # held-out evaluation after training
    eval_images: str = ""
    eval_labels: str = ""

    def validate(self) -> None:
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.dataset not in ("synthetic", "mnist"):
            raise ValueError("dataset must be 'synthetic' or 'mnist'")
        if self.epochs < 0 or self.batch_size < 1 or self.subset < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and subset >= 1 required")
        Hyperparameters(eta=self.eta, beta1=self.beta1, beta2=self.beta2,
                        delta=self.delta, alpha=self.alpha)

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def transformer_config(self) -> TransformerConfig:
        return TransformerConfig(
            token_dim=self.token_dim,
            seq_len=self.seq_len,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            n_classes=self.n_classes,
            constrain_projections=self.constrain,
        )

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRow:
    epoch: int
    mean_train_loss: float
    max_orth_drift: float
    wall_seconds: float


@dataclass
class TrainResult:
    config: RunConfig
    rows: list[EpochRow]
    params: ModelParams
    kinds: list[str]
    update_seconds: float = 0.0
    steps: int = 0


def load_dataset(config: RunConfig) -> list[data_mod.PatchedSample]:
    """Materialize the run's dataset at the run's precision."""
    if config.dataset == "mnist":
        if not config.mnist_images or not config.mnist_labels:
            raise ValueError("mnist dataset needs --mnist-images and --mnist-labels")
        samples = data_mod.load_idx(config.mnist_images, config.mnist_labels,
                                    dtype=config.dtype)
        if config.token_dim != data_mod.TOKEN_DIM or config.seq_len != data_mod.SEQ_LEN:
            raise ValueError("mnist runs require the 49x16 patch geometry")
        return [data_mod.patchify(s) for s in samples[: config.subset]]
    rng = np.random.default_rng([config.seed, _DATA_STREAM])
    return data_mod.synth_dataset(
        config.subset, rng,
        token_dim=config.token_dim, seq_len=config.seq_len,
        n_classes=config.n_classes, dtype=config.dtype,
    )


def load_eval_dataset(config: RunConfig) -> list[data_mod.PatchedSample]:
    """Held-out samples for post-training evaluation.

    For mnist runs these come from a separate IDX pair; for synthetic runs a
    fresh draw shares the training split's class means.
    """
    if config.dataset == "mnist":
        if not config.eval_images or not config.eval_labels:
            raise ValueError("evaluation needs --eval-images and --eval-labels")
        samples = data_mod.load_idx(config.eval_images, config.eval_labels,
                                    dtype=config.dtype)
        return [data_mod.patchify(s) for s in samples[: config.subset]]
    means = data_mod.synth_class_means(
        np.random.default_rng([config.seed, _DATA_STREAM]),
        token_dim=config.token_dim, seq_len=config.seq_len,
        n_classes=config.n_classes)
    return data_mod.synth_dataset(
        config.subset, np.random.default_rng([config.seed, _EVAL_STREAM]),
        token_dim=config.token_dim, seq_len=config.seq_len,
        n_classes=config.n_classes, dtype=config.dtype, means=means)


def evaluate_model(params: ModelParams, config: RunConfig,
                   dataset: list[data_mod.PatchedSample]) -> tuple[float, float]:
    """Mean loss and argmax accuracy of the model on a dataset."""
    tcfg = config.transformer_config()
    loss_sum = 0.0
    hits = 0
    for start in range(0, len(dataset), config.batch_size):
        tokens, targets = data_mod.stack_samples(dataset[start:start + config.batch_size])
        preds, _ = model_forward(tokens.astype(config.dtype, copy=False), params, tcfg)
        loss_sum += float(sample_losses(preds, targets.astype(config.dtype)).sum())
        hits += int((preds.argmax(axis=1) == targets.argmax(axis=1)).sum())
    n = max(len(dataset), 1)
    return loss_sum / n, hits / n


def max_orth_drift(weights: list[np.ndarray], kinds: list[str]) -> float:
    """Largest orthonormality defect across the constrained weights."""
    drift = 0.0
    for w, kind in zip(weights, kinds):
        if kind == STIEFEL:
            drift = max(drift, StiefelPoint(matrix=w).orth_defect())
    return drift


def run_training(config: RunConfig,
                 dataset: list[data_mod.PatchedSample] | None = None) -> TrainResult:
    """Train a model per the config; the dataset may be shared by callers."""
    config.validate()
    tcfg = config.transformer_config()
    dtype = config.dtype
    if dataset is None:
        dataset = load_dataset(config)

    hp = Hyperparameters(eta=config.eta, beta1=config.beta1, beta2=config.beta2,
                         delta=config.delta, alpha=config.alpha)
    optimizer = make_optimizer(config.optimizer, hp)

    params = init_params(tcfg, np.random.default_rng([config.seed, _INIT_STREAM]),
                         dtype=dtype)
    weights = params.to_arrays()
    kinds = params.kinds(tcfg)
    caches = [optimizer.init_cache(w.size, dtype) for w in weights]

    rows: list[EpochRow] = []
    update_seconds = 0.0
    t = 0
    for epoch in range(1, config.epochs + 1):
        epoch_start = time.perf_counter()
        loss_sum = 0.0
        n_seen = 0
        shuffle_rng = np.random.default_rng([config.seed, _SHUFFLE_STREAM, epoch])
        for tokens, targets in data_mod.batches(dataset, config.batch_size, shuffle_rng):
            xb = tokens.astype(dtype, copy=False)
            tb = targets.astype(dtype, copy=False)
            preds, tape = model_forward(xb, params, tcfg)
            loss_sum += float(sample_losses(preds, tb).sum())
            n_seen += xb.shape[0]
            grads = model_backward(tape, params, xb, tb)
            t += 1
            tic = time.perf_counter()
            weights, caches = optimizer_step(
                optimizer, weights, kinds, grads.to_arrays(), caches, t, config.seed
            )
            update_seconds += time.perf_counter() - tic
            params.set_arrays(weights)
            weights = params.to_arrays()
        rows.append(EpochRow(
            epoch=epoch,
            mean_train_loss=loss_sum / max(n_seen, 1),
            max_orth_drift=max_orth_drift(weights, kinds),
            wall_seconds=time.perf_counter() - epoch_start,
        ))
    return TrainResult(config=config, rows=rows, params=params, kinds=kinds,
                       update_seconds=update_seconds, steps=t)
