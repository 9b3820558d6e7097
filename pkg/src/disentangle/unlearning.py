"""Unlearning benchmarks.

Superposition unlearning: two rank-1 bilinear tasks share an embedding; a
model trained on both is then trained on task B only, and we watch how much of
each task's projection survives.

Entangled unlearning: ``y = f12 + f23`` on a three-block Gaussian input. We
label hidden neurons by which blocks they couple, prune by f12 importance,
fine-tune on f23 alone and attack with an ascent/descent objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .architectures import (MULTIPLICATIVE, ModelSpec, extract_bilinear_interaction,
                            make_spec, predict, probe_interaction_score)
from .tasks import ArrayDataset, EntangledDataset, SuperpositionTasks, gen_entangled, gen_superposition
from .training import (OptimizerConfig, Phase, TrainConfig, make_optimizer, loss_and_grads, train,
                       two_phase_train)

__all__ = [
    "ScorePair",
    "NeuronRoles",
    "ParetoCurve",
    "SelectivityCell",
    "pearson",
    "superposition_spec",
    "score_tasks",
    "distortion_target",
    "distortion",
    "SuperpositionConfig",
    "SuperpositionRun",
    "run_superposition",
    "entangled_spec",
    "EntangledConfig",
    "pretrain_entangled",
    "block_norms",
    "interaction_scores",
    "classify_neurons",
    "prune_sweep",
    "gradient_unlearn",
    "attack_loss",
    "AttackResult",
    "selectivity",
    "selectivity_sweep",
]

ROLES = ("dead", "pure_f12", "pure_f23", "mixed")


def pearson(x, y) -> float:
    """Pearson correlation; 0 when either input is constant."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch {x.shape} vs {y.shape}")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0.0:
        return 0.0
    return float(xc @ yc / denom)


# superposition unlearning


@dataclass(frozen=True)
class ScorePair:
    score_A: float
    score_B: float


def superposition_spec(family: str, d: int = 32, hidden: int = 128) -> ModelSpec:
    """Scalar-output model on ``[e_a; e_b]``; bilinear reads the halves separately."""
    return make_spec(family, "pair", hidden=hidden, out_dim=1, head="scalar",
                     input_dim=2 * d, split=d, init="kaiming")


def score_tasks(spec: ModelSpec, params, tasks: SuperpositionTasks, route: str = "auto") -> ScorePair:
    """Projection strength of each planted task in the model.

    Bilinear models use ``u_k^T M v_k`` with the extracted interaction
    matrix; every other family is probed with ``[u_k; v_k]``. ``route`` may
    force ``"extract"`` or ``"probe"``.
    """
    if route == "auto":
        route = "extract" if spec.family == "bilinear" else "probe"
    if route == "extract":
        M = extract_bilinear_interaction(spec, params)
        return ScorePair(float(tasks.u1 @ M @ tasks.v1), float(tasks.u2 @ M @ tasks.v2))
    if route == "probe":
        return ScorePair(probe_interaction_score(spec, params, tasks.u1, tasks.v1),
                         probe_interaction_score(spec, params, tasks.u2, tasks.v2))
    raise ValueError(f"unknown route {route!r}")


def distortion_target(tasks: SuperpositionTasks) -> float:
    """Task-B score of a model that still holds ``M_A + M_B``: ``lam (1 + (u2.u1)(v2.v1))``."""
    return tasks.lam * (1.0 + tasks.overlap())


def distortion(score_b_end: float, tasks: SuperpositionTasks) -> float:
    return abs(score_b_end - distortion_target(tasks))


@dataclass(frozen=True)
class SuperpositionConfig:
    d: int = 32
    hidden: int = 128
    n_tokens: int = 500
    n_samples: int = 8000
    batch_size: int = 256
    lam: float = 60.0
    phase1_lr: float = 5e-3
    phase2_lr: float = 1e-2
    phase1_epochs: dict = field(default_factory=lambda: {"bilinear": 300, "default": 600})
    phase2_epochs: dict = field(default_factory=lambda: {"bilinear": 200, "default": 300})

    def epochs(self, family: str) -> tuple[int, int]:
        return (self.phase1_epochs.get(family, self.phase1_epochs["default"]),
                self.phase2_epochs.get(family, self.phase2_epochs["default"]))


@dataclass
class SuperpositionRun:
    family: str
    alpha: float
    seed: int
    score_A: np.ndarray
    score_B: np.ndarray
    phase_boundary: int
    target_B: float
    failed: bool = False

    @property
    def phase1_end(self) -> ScorePair:
        i = self.phase_boundary - 1
        return ScorePair(float(self.score_A[i]), float(self.score_B[i]))

    @property
    def final(self) -> ScorePair:
        return ScorePair(float(self.score_A[-1]), float(self.score_B[-1]))

    @property
    def distortion(self) -> float:
        return abs(self.final.score_B - self.target_B)


def run_superposition(family: str, alpha: float, seed: int = 0,
                      config: SuperpositionConfig | None = None) -> SuperpositionRun:
    """Phase 1: Adam on ``M_A + M_B`` targets. Phase 2: SGD on ``M_B`` only.

    Scores are sampled after every epoch of both phases.
    """
    cfg = config or SuperpositionConfig()
    tasks = gen_superposition(d=cfg.d, n_tokens=cfg.n_tokens, alpha=alpha, lam=cfg.lam,
                              n_samples=cfg.n_samples, seed=seed)
    spec = superposition_spec(family, cfg.d, cfg.hidden)
    e1, e2 = cfg.epochs(family)
    probes = {
        "score_A": lambda p: score_tasks(spec, p, tasks).score_A,
        "score_B": lambda p: score_tasks(spec, p, tasks).score_B,
    }
    phase1 = Phase(tasks.X, tasks.y_phase1, TrainConfig(cfg.batch_size, e1, loss="mse"),
                   OptimizerConfig("adam", cfg.phase1_lr))
    phase2 = Phase(tasks.X, tasks.y_phase2, TrainConfig(cfg.batch_size, e2, loss="mse"),
                   OptimizerConfig("sgd", cfg.phase2_lr))
    _, report = two_phase_train(spec, phase1, phase2, probes, seed=seed, loss="mse")
    return SuperpositionRun(family=family, alpha=alpha, seed=seed,
                            score_A=np.array(report.probes.get("score_A", [])),
                            score_B=np.array(report.probes.get("score_B", [])),
                            phase_boundary=report.phase_boundary or 0,
                            target_B=distortion_target(tasks), failed=report.failed)


# entangled unlearning


def entangled_spec(family: str, d: int = 16, hidden: int = 64) -> ModelSpec:
    """Scalar-output model on the full ``[x1; x2; x3]`` vector (both bilinear projections see all of it)."""
    return make_spec(family, "vector", hidden=hidden, out_dim=1, head="scalar", input_dim=3 * d)


@dataclass(frozen=True)
class EntangledConfig:
    d: int = 16
    hidden: int = 64
    n_train: int = 8000
    n_val: int = 1000
    batch_size: int = 256
    lr: float = 2e-3
    l1: float = 2e-4
    epochs: int = 30
    unlearn_lr: float = 2e-3
    unlearn_steps: int = 500
    attack_lr: float = 2e-2
    attack_steps: int = 50
    forget_weight: float = 0.5
    eps: float = 1e-3


def pretrain_entangled(family: str, data: EntangledDataset, seed: int = 0,
                       config: EntangledConfig | None = None):
    """Adam with an L1 penalty on ``y = f12 + f23``. Returns ``(spec, params, report)``."""
    cfg = config or EntangledConfig()
    spec = entangled_spec(family, data.d, cfg.hidden)
    ds = ArrayDataset(data.X_train, data.y_train, None, None)
    params, report = train(spec, ds, TrainConfig(cfg.batch_size, cfg.epochs, loss="mse", l1=cfg.l1, seed=seed),
                           OptimizerConfig("adam", cfg.lr), seed=seed)
    return spec, params, report


def _weight_blocks(spec: ModelSpec, params):
    d = spec.input_dim // 3
    if spec.input_dim != 3 * d or spec.input_mode != "raw-vector":
        raise ValueError("entangled analysis needs a raw-vector model over three equal blocks")
    mats = [params["W1"], params["W2"]] if spec.family in MULTIPLICATIVE else [params["W"]]
    return [np.stack([np.linalg.norm(np.asarray(W)[k * d:(k + 1) * d], axis=0) for k in range(3)])
            for W in mats]


def block_norms(spec: ModelSpec, params) -> np.ndarray:
    """Per-neuron weight norms on each input block.

    Shape ``(P, 3, m)``: ``P = 2`` projections for multiplicative families,
    ``1`` for pointwise ones.
    """
    return np.stack(_weight_blocks(spec, params))


def interaction_scores(spec: ModelSpec, params) -> tuple[np.ndarray, np.ndarray]:
    """``(S12, S23)`` per neuron.

    Two projections: ``|u1||v2| + |u2||v1|`` and ``|u2||v3| + |u3||v2|``.
    One projection: the bridge products ``|w1||w2|`` and ``|w2||w3|``.
    """
    B = block_norms(spec, params)
    if B.shape[0] == 2:
        u, v = B
        return u[0] * v[1] + u[1] * v[0], u[1] * v[2] + u[2] * v[1]
    w = B[0]
    return w[0] * w[1], w[1] * w[2]


@dataclass
class NeuronRoles:
    labels: np.ndarray
    S12: np.ndarray
    S23: np.ndarray
    norms: np.ndarray

    def fraction(self, role: str) -> float:
        return float(np.mean(self.labels == role))

    def counts(self) -> dict:
        return {r: int(np.sum(self.labels == r)) for r in ROLES}


def classify_neurons(spec: ModelSpec, params, dead_factor: float = 0.05,
                     dominance: float = 5.0) -> NeuronRoles:
    """Label each hidden unit dead, pure_f12, pure_f23 or mixed.

    dead: every block norm is below ``dead_factor`` times the median block
    norm of the layer. pure_f12: ``S12 >= dominance * S23`` and every x3
    block norm is at most ``1/dominance`` of the neuron's largest block norm;
    pure_f23 mirrors this with x1. A pure label needs a positive score;
    everything else is mixed.
    """
    B = block_norms(spec, params)
    S12, S23 = interaction_scores(spec, params)
    m = B.shape[2]
    tau_dead = dead_factor * np.median(B)
    peak = B.max(axis=(0, 1))
    off = peak / dominance
    labels = np.full(m, "mixed", dtype=object)
    dead = (B <= tau_dead).all(axis=(0, 1))
    pure12 = (S12 > 0) & (S12 >= dominance * S23) & (B[:, 2, :] <= off).all(axis=0)
    pure23 = (S23 > 0) & (S23 >= dominance * S12) & (B[:, 0, :] <= off).all(axis=0)
    labels[pure12] = "pure_f12"
    labels[pure23 & ~pure12] = "pure_f23"
    labels[dead] = "dead"
    return NeuronRoles(labels=labels.astype(str), S12=S12, S23=S23, norms=B)


@dataclass
class ParetoCurve:
    pruned: np.ndarray
    ret_f12: np.ndarray
    ret_f23: np.ndarray
    order: np.ndarray

    def has_point(self, max_f12: float, min_f23: float) -> bool:
        return bool(np.any((self.ret_f12 <= max_f12) & (self.ret_f23 >= min_f23)))


def prune_sweep(spec: ModelSpec, params, X, f12, f23) -> ParetoCurve:
    """Zero neurons one at a time by descending f12 importance (``S12``).

    A neuron is removed by zeroing its read-out row. Retention is the Pearson
    correlation with each component divided by its value before pruning.
    """
    S12, _ = interaction_scores(spec, params)
    order = np.argsort(-S12, kind="stable")
    p = {k: np.array(v, copy=True) for k, v in params.items()}
    y0 = predict(spec, p, X)[:, 0]
    base12, base23 = pearson(y0, f12), pearson(y0, f23)
    r12, r23 = [1.0], [1.0]
    for h in order:
        p["W_out"][h] = 0.0
        y = predict(spec, p, X)[:, 0]
        r12.append(pearson(y, f12) / base12 if base12 else 0.0)
        r23.append(pearson(y, f23) / base23 if base23 else 0.0)
    return ParetoCurve(pruned=np.arange(len(order) + 1), ret_f12=np.array(r12),
                       ret_f23=np.array(r23), order=order)


def gradient_unlearn(spec: ModelSpec, params, data: EntangledDataset, steps: int = 500,
                     optimizer: OptimizerConfig | None = None, batch_size: int = 256,
                     seed: int = 0):
    """Fine-tune on f23-only targets; correlations on the validation set after each step.

    Returns ``(params, corr)`` with ``corr`` of shape ``(steps + 1, 2)``
    holding ``(corr_f12, corr_f23)``; row 0 is the starting model.
    """
    optimizer = optimizer or OptimizerConfig("adam", 2e-3)
    p = {k: np.array(v, copy=True) for k, v in params.items()}
    opt = make_optimizer(optimizer)
    rng = np.random.default_rng(seed + 4_000_037)
    n = len(data.X_train)

    def corr():
        y = predict(spec, p, data.X_val)[:, 0]
        return pearson(y, data.f12_val), pearson(y, data.f23_val)

    out = [corr()]
    perm, pos = rng.permutation(n), 0
    for _ in range(steps):
        if pos + batch_size > n:
            perm, pos = rng.permutation(n), 0
        idx = perm[pos:pos + batch_size]
        pos += batch_size
        _, grads = loss_and_grads(spec, p, data.X_train[idx], data.f23_train[idx], "mse")
        opt.step(p, grads)
        out.append(corr())
    return p, np.array(out)


def attack_loss(forget_weight: float = 0.5):
    """``MSE(y_hat, f23) - w * MSE(y_hat, f12)``; targets are columns ``[f12, f23]``."""

    def fn(out, targets):
        targets = np.asarray(targets)
        keep = ad.mse(out, targets[:, 1])
        forget = ad.mse(out, targets[:, 0])
        return ad.sub(keep, ad.scale(forget, forget_weight))

    return fn


@dataclass(frozen=True)
class SelectivityCell:
    family: str
    rank: int
    seed: int
    delta_f12: float
    delta_f23: float
    ratio: float
    flagged: bool
    diverged: bool = False
    steps_run: int = 0


@dataclass(frozen=True)
class AttackResult:
    delta_f12: float
    delta_f23: float
    ratio: float
    flagged: bool
    diverged: bool
    steps_run: int


def selectivity(spec: ModelSpec, params, data: EntangledDataset, steps: int = 50,
                lr: float = 2e-2, forget_weight: float = 0.5, eps: float = 1e-3,
                batch_size: int = 256, seed: int = 0) -> AttackResult:
    """Run the ascent/descent attack and measure the damage to each component.

    Deltas are drops in validation correlation. The ratio is
    ``delta_f12 / delta_f23``; when ``delta_f23 < eps`` the denominator is
    clamped to ``eps`` and the result is flagged. The ascent term is
    unbounded, so a step that produces non-finite values ends the attack and
    the damage is measured on the last finite parameters (``diverged``).
    """
    p = {k: np.array(v, copy=True) for k, v in params.items()}

    def corr():
        with np.errstate(over="ignore", invalid="ignore"):
            y = predict(spec, p, data.X_val)[:, 0]
        if not np.all(np.isfinite(y)):
            return None
        return pearson(y, data.f12_val), pearson(y, data.f23_val)

    c12, c23 = corr()
    opt = make_optimizer(OptimizerConfig("sgd", lr))
    rng = np.random.default_rng(seed + 5_000_011)
    targets = np.stack([data.f12_train, data.f23_train], axis=1)
    fn = attack_loss(forget_weight)
    n = len(data.X_train)
    after, diverged, done = (c12, c23), False, 0
    for _ in range(steps):
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        backup = {k: v.copy() for k, v in p.items()}
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = loss_and_grads(spec, p, data.X_train[idx], targets[idx], fn)
                if not np.isfinite(value):
                    raise FloatingPointError
                opt.step(p, grads)
                now = corr()
            if now is None or not all(np.all(np.isfinite(v)) for v in p.values()):
                raise FloatingPointError
        except FloatingPointError:
            p = backup
            diverged = True
            break
        after = now
        done += 1
    d12, d23 = c12 - after[0], c23 - after[1]
    flagged = d23 < eps
    return AttackResult(d12, d23, d12 / (eps if flagged else d23), bool(flagged), diverged, done)


def selectivity_sweep(ranks=(1, 2, 4), seeds=(0, 1, 2), families=("bilinear", "relu"),
                      config: EntangledConfig | None = None) -> list[SelectivityCell]:
    cfg = config or EntangledConfig()
    cells = []
    for rank in ranks:
        for seed in seeds:
            data = gen_entangled(d=cfg.d, rank=rank, n_train=cfg.n_train, n_val=cfg.n_val, seed=seed)
            for family in families:
                spec, params, _ = pretrain_entangled(family, data, seed, cfg)
                r = selectivity(spec, params, data, cfg.attack_steps, cfg.attack_lr,
                                cfg.forget_weight, cfg.eps, cfg.batch_size, seed)
                cells.append(SelectivityCell(family, rank, seed, r.delta_f12, r.delta_f23, r.ratio,
                                             r.flagged, r.diverged, r.steps_run))
    return cells
