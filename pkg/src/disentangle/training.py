"""Optimizers and training loops.

Parameters live in a plain ``dict[str, ndarray]`` and are updated in place.
Each step wraps them as autodiff leaves, builds the loss graph, runs the
backward sweep and hands the gradients to an optimizer.

Random numbers come from NumPy's PCG64 generator (``numpy.random.default_rng``);
runs are deterministic given the seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .architectures import ModelSpec, forward, init_params

log = logging.getLogger(__name__)

__all__ = [
    "NonFiniteGradientError",
    "OptimizerConfig",
    "Optimizer",
    "TrainConfig",
    "TrainReport",
    "make_optimizer",
    "loss_and_grads",
    "train",
    "train_stream",
    "two_phase_train",
]


class NonFiniteGradientError(FloatingPointError):
    """A gradient entry was NaN or infinite."""


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adamw"
    lr: float = 1e-3
    weight_decay: float = 0.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


class Optimizer:
    """SGD, Adam (L2 folded into the gradient) or AdamW (decoupled decay).

    Moment estimates are created lazily with the shape of each parameter.
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: Mapping) -> None:
        cfg = self.config
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = cfg.betas
        for name, g in grads.items():
            w = params[name]
            if cfg.kind == "sgd":
                if cfg.weight_decay:
                    g = g + cfg.weight_decay * w
                w -= cfg.lr * g
                continue
            if cfg.kind == "adam" and cfg.weight_decay:
                g = g + cfg.weight_decay * w
            if name not in self.m:
                self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if cfg.kind == "adamw" and cfg.weight_decay:
                w -= cfg.lr * cfg.weight_decay * w
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            w -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)


def make_optimizer(config: OptimizerConfig) -> Optimizer:
    return Optimizer(config)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    epochs: int = 100
    early_stop: float | None = None
    loss: str = "xent"
    l1: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("xent", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class TrainReport:
    loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    probes: dict = field(default_factory=dict)
    epochs_run: int = 0
    stopped_early: bool = False
    failed: bool = False
    message: str = ""
    phase_boundary: int | None = None

    def to_dict(self):
        return {
            "loss": list(self.loss), "val_acc": list(self.val_acc),
            "probes": {k: list(v) for k, v in self.probes.items()},
            "epochs_run": self.epochs_run, "stopped_early": self.stopped_early,
            "failed": self.failed, "message": self.message,
            "phase_boundary": self.phase_boundary,
        }


LossFn = Callable[[ad.Node, np.ndarray], ad.Node]


def _default_loss(kind: str) -> LossFn:
    if kind == "xent":
        return ad.softmax_cross_entropy
    return ad.mse


def loss_and_grads(spec: ModelSpec, params: dict, X, y, loss: str | LossFn = "xent",
                   l1: float = 0.0):
    """One forward/backward pass. Returns ``(loss_value, grads)``.

    ``loss`` may be ``"xent"``, ``"mse"`` or a callable ``(output_node, y) -> node``.
    The L1 penalty covers weight matrices only (names not starting with ``b``).
    """
    nodes = {k: ad.parameter(v) for k, v in params.items()}
    out = forward(spec, nodes, X)
    fn = _default_loss(loss) if isinstance(loss, str) else loss
    total = fn(out, y)
    if l1:
        total = ad.add(total, ad.l1_penalty([n for k, n in nodes.items() if not k.startswith("b")], l1))
    ad.backward(total)
    grads = {k: (n.grad if n.grad is not None else np.zeros_like(n.value)) for k, n in nodes.items()}
    return float(total.value[0, 0]), grads


def accuracy(spec: ModelSpec, params: Mapping, X, y) -> float:
    logits = forward(spec, params, X).value
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(y)))


def _run_epochs(spec, params, X, y, cfg, optimizer, rng, report, *, loss, X_val=None, y_val=None,
                probes=None, epochs=None):
    n = len(X)
    epochs = cfg.epochs if epochs is None else epochs
    bs = min(cfg.batch_size, n)
    for _ in range(epochs):
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            value, grads = loss_and_grads(spec, params, X[idx], y[idx], loss, cfg.l1)
            if not math.isfinite(value):
                report.failed = True
                report.message = f"loss diverged at epoch {report.epochs_run + 1}"
                log.warning(report.message)
                return False
            try:
                optimizer.step(params, grads)
            except NonFiniteGradientError as exc:
                report.failed = True
                report.message = str(exc)
                log.warning(report.message)
                return False
            total += value * len(idx)
            count += len(idx)
        report.epochs_run += 1
        report.loss.append(total / count)
        if probes:
            for name, fn in probes.items():
                report.probes.setdefault(name, []).append(float(fn(params)))
        if X_val is not None and spec.head == "classifier":
            acc = accuracy(spec, params, X_val, y_val)
            report.val_acc.append(acc)
            if cfg.early_stop is not None and acc >= cfg.early_stop:
                report.stopped_early = True
                return False
    return True


def train(spec: ModelSpec, dataset, train_config: TrainConfig, optimizer_config: OptimizerConfig,
          seed: int | None = None, params: dict | None = None, probes: Mapping | None = None,
          loss: str | LossFn | None = None):
    """Mini-batch training on a fixed dataset.

    ``dataset`` needs ``X_train``/``y_train`` and optionally ``X_val``/``y_val``.
    Batches are reshuffled every epoch; validation accuracy (classifiers only)
    is measured at each epoch end and training stops once it reaches
    ``train_config.early_stop``. A diverging loss marks the report as failed
    and returns the parameters as they were at that point.
    """
    seed = train_config.seed if seed is None else seed
    params = init_params(spec, seed) if params is None else params
    rng = np.random.default_rng(seed + 1_000_003)
    report = TrainReport()
    _run_epochs(spec, params, np.asarray(dataset.X_train), np.asarray(dataset.y_train), train_config,
                make_optimizer(optimizer_config), rng, report,
                loss=loss or train_config.loss,
                X_val=getattr(dataset, "X_val", None), y_val=getattr(dataset, "y_val", None),
                probes=probes)
    return params, report


def train_stream(spec: ModelSpec, sampler: Callable, iterations: int, batch_size: int,
                 optimizer_config: OptimizerConfig, seed: int = 0, params: dict | None = None,
                 loss: str | LossFn = "mse", record_every: int = 100):
    """Train on freshly sampled batches: ``sampler(rng, batch_size) -> (X, y)``.

    One iteration is one optimizer step. The loss is recorded every
    ``record_every`` steps.
    """
    params = init_params(spec, seed) if params is None else params
    rng = np.random.default_rng(seed + 2_000_003)
    opt = make_optimizer(optimizer_config)
    report = TrainReport()
    for it in range(iterations):
        X, y = sampler(rng, batch_size)
        value, grads = loss_and_grads(spec, params, X, y, loss)
        if not math.isfinite(value):
            report.failed = True
            report.message = f"loss diverged at iteration {it}"
            break
        opt.step(params, grads)
        if (it + 1) % record_every == 0:
            report.loss.append(value)
        report.epochs_run = it + 1
    return params, report


@dataclass
class Phase:
    X: np.ndarray
    y: np.ndarray
    train_config: TrainConfig
    optimizer_config: OptimizerConfig


def two_phase_train(spec: ModelSpec, phase1: Phase, phase2: Phase, probes: Mapping,
                    seed: int = 0, params: dict | None = None, loss: str | LossFn = "mse"):
    """Train on phase 1, then continue on phase 2 with a fresh optimizer.

    Every probe ``fn(params) -> float`` is evaluated after each epoch of both
    phases; ``report.phase_boundary`` is the number of phase-1 epochs.
    """
    params = init_params(spec, seed) if params is None else params
    rng = np.random.default_rng(seed + 3_000_017)
    report = TrainReport()
    ok = _run_epochs(spec, params, phase1.X, phase1.y, phase1.train_config,
                     make_optimizer(phase1.optimizer_config), rng, report, loss=loss, probes=probes)
    report.phase_boundary = report.epochs_run
    if ok:
        _run_epochs(spec, params, phase2.X, phase2.y, phase2.train_config,
                    make_optimizer(phase2.optimizer_config), rng, report, loss=loss, probes=probes)
    return params, report
