"""Seeded generators for the synthetic tasks.

Every generator is a pure function of its arguments: the same seed gives the
same arrays. Token tasks return integer pair arrays of shape ``(n, 2)``;
vector tasks return float arrays whose columns are the concatenated inputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ArrayDataset",
    "ModArithDataset",
    "CyclicDataset",
    "QuaternionBatch",
    "SL2Batch",
    "SuperpositionTasks",
    "EntangledDataset",
    "is_prime",
    "gen_mod_arith",
    "gen_cyclic",
    "hamilton_product",
    "gen_quaternion_batch",
    "gen_sl2_batch",
    "gen_superposition",
    "gen_entangled",
    "export_csv",
]


@dataclass
class ArrayDataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray | None = None
    y_val: np.ndarray | None = None


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


@dataclass
class ModArithDataset(ArrayDataset):
    p: int = 0
    op: str = "add"
    pairs: np.ndarray = field(default=None, repr=False)
    labels: np.ndarray = field(default=None, repr=False)
    train_idx: np.ndarray = field(default=None, repr=False)
    val_idx: np.ndarray = field(default=None, repr=False)


def gen_mod_arith(p: int, op: str = "add", train_fraction: float = 0.9, seed: int = 0) -> ModArithDataset:
    """All ``p*p`` pairs labelled ``(a op b) mod p``, shuffled and split."""
    if not is_prime(p):
        raise ValueError(f"modulus {p} is not prime")
    if op not in ("add", "mul"):
        raise ValueError(f"op must be 'add' or 'mul', got {op!r}")
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError("train_fraction must lie in (0, 1]")
    a, b = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    pairs = np.stack([a.ravel(), b.ravel()], axis=1)
    labels = (pairs[:, 0] + pairs[:, 1]) % p if op == "add" else (pairs[:, 0] * pairs[:, 1]) % p
    perm = np.random.default_rng(seed).permutation(p * p)
    n_train = int(round(train_fraction * p * p))
    tr, va = perm[:n_train], perm[n_train:]
    return ModArithDataset(
        X_train=pairs[tr], y_train=labels[tr], X_val=pairs[va], y_val=labels[va],
        p=p, op=op, pairs=pairs, labels=labels, train_idx=tr, val_idx=va,
    )


@dataclass
class CyclicDataset(ArrayDataset):
    p: int = 0
    phi_token: int = 0


def gen_cyclic(p: int) -> CyclicDataset:
    """Successor map ``a -> (a + 1) mod p`` with function id 0.

    The function identifier gets its own embedding row, index ``p``, so the
    vocabulary size is ``p + 1``. All ``p`` examples are training data; the
    evaluation is extrapolation to iterates.
    """
    a = np.arange(p)
    X = np.stack([a, np.full(p, p)], axis=1)
    y = (a + 1) % p
    return CyclicDataset(X_train=X, y_train=y, X_val=X, y_val=y, p=p, phi_token=p)


def hamilton_product(q1, q2) -> np.ndarray:
    """Quaternion product in (w, x, y, z) order; broadcasts over leading axes."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    w1, x1, y1, z1 = np.moveaxis(q1, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(q2, -1, 0)
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def quaternion_euler_step(q, omega, dt):
    """``q + (0.5 * q ⊗ (0, omega)) * dt``."""
    q = np.asarray(q, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    pure = np.concatenate([np.zeros(omega.shape[:-1] + (1,)), omega], axis=-1)
    return q + 0.5 * hamilton_product(q, pure) * dt


@dataclass
class QuaternionBatch:
    q: np.ndarray
    omega: np.ndarray
    q_next: np.ndarray

    @property
    def X(self):
        return np.concatenate([self.q, self.omega], axis=1)

    @property
    def increment(self):
        return self.q_next - self.q


def gen_quaternion_batch(batch: int, dt: float = 0.1, seed=0, omega_scale: float = 1.0) -> QuaternionBatch:
    """Unit quaternions uniform on S^3 and angular velocities ``omega_scale * N(0, 1)^3``.

    ``seed`` may be an int or a ``numpy.random.Generator`` (for streaming).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q = rng.standard_normal((batch, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    omega = omega_scale * rng.standard_normal((batch, 3))
    return QuaternionBatch(q=q, omega=omega, q_next=quaternion_euler_step(q, omega, dt))


def traceless(G) -> np.ndarray:
    """Remove half the trace from each diagonal entry; the result has trace exactly 0."""
    G = np.array(G, dtype=np.float64)
    half = 0.5 * (G[..., 0, 0] - G[..., 1, 1])
    G[..., 0, 0] = half
    G[..., 1, 1] = -half
    return G


@dataclass
class SL2Batch:
    x: np.ndarray
    G: np.ndarray
    x_next: np.ndarray

    @property
    def X(self):
        return np.concatenate([self.x, self.G.reshape(-1, 4)], axis=1)

    @property
    def increment(self):
        return self.x_next - self.x


def gen_sl2_batch(batch: int, dt: float = 0.1, seed=0) -> SL2Batch:
    """Traceless generators (N(0,1) entries, trace removed) and states ``x ~ N(0, I_2)``.

    Targets follow the first-order rule ``x + G x dt``. Generator flattening is
    row-major ``[g11, g12, g21, g22]``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    G = traceless(rng.standard_normal((batch, 2, 2)))
    x = rng.standard_normal((batch, 2))
    x_next = x + np.einsum("nij,nj->ni", G, x) * dt
    return SL2Batch(x=x, G=G, x_next=x_next)


@dataclass
class SuperpositionTasks:
    """Two rank-1 bilinear tasks on a shared unit-norm token embedding.

    Phase-1 targets are ``e_a^T (M_A + M_B) e_b``; phase-2 targets keep only
    ``M_B``. ``X`` holds the raw model input ``[e_a; e_b]``.
    """

    d: int
    alpha: float
    lam: float
    u1: np.ndarray
    u_perp: np.ndarray
    v1: np.ndarray
    v_perp: np.ndarray
    u2: np.ndarray
    v2: np.ndarray
    E: np.ndarray
    pairs: np.ndarray
    X: np.ndarray
    y_phase1: np.ndarray
    y_phase2: np.ndarray

    @property
    def M_A(self):
        return self.lam * np.outer(self.u1, self.v1)

    @property
    def M_B(self):
        return self.lam * np.outer(self.u2, self.v2)

    def overlap(self) -> float:
        """``(u2.u1)(v2.v1)``: how much of task B projects onto task A's direction."""
        return float((self.u2 @ self.u1) * (self.v2 @ self.v1))


def _orthonormal_pair(rng, d):
    while True:
        Q, R = np.linalg.qr(rng.standard_normal((d, d)))
        if np.min(np.abs(np.diag(R)[:2])) > 1e-8:
            return Q[:, 0].copy(), Q[:, 1].copy()


def gen_superposition(d: int = 32, n_tokens: int = 500, alpha: float = 0.0, lam: float = 60.0,
                      n_samples: int = 8000, seed: int = 0) -> SuperpositionTasks:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if d < 2:
        raise ValueError("need d >= 2 for two orthonormal directions")
    rng = np.random.default_rng(seed)
    u1, u_perp = _orthonormal_pair(rng, d)
    v1, v_perp = _orthonormal_pair(rng, d)
    u2 = alpha * u1 + (1.0 - alpha) * u_perp
    v2 = alpha * v1 + (1.0 - alpha) * v_perp
    u2 /= np.linalg.norm(u2)
    v2 /= np.linalg.norm(v2)
    if alpha == 1.0:
        u2, v2 = u1.copy(), v1.copy()
    E = rng.standard_normal((n_tokens, d))
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    pairs = rng.integers(0, n_tokens, size=(n_samples, 2))
    ea, eb = E[pairs[:, 0]], E[pairs[:, 1]]
    yA = lam * (ea @ u1) * (eb @ v1)
    yB = lam * (ea @ u2) * (eb @ v2)
    return SuperpositionTasks(
        d=d, alpha=alpha, lam=lam, u1=u1, u_perp=u_perp, v1=v1, v_perp=v_perp,
        u2=u2, v2=v2, E=E, pairs=pairs, X=np.concatenate([ea, eb], axis=1),
        y_phase1=yA + yB, y_phase2=yB,
    )


@dataclass
class EntangledDataset:
    """``y = x1^T A12 x2 + x2^T A23 x3`` with rank-r planted factors."""

    d: int
    rank: int
    A12: np.ndarray
    A23: np.ndarray
    X_train: np.ndarray
    f12_train: np.ndarray
    f23_train: np.ndarray
    X_val: np.ndarray
    f12_val: np.ndarray
    f23_val: np.ndarray

    @property
    def y_train(self):
        return self.f12_train + self.f23_train

    @property
    def y_val(self):
        return self.f12_val + self.f23_val


def entangled_components(X, A12, A23):
    d = A12.shape[0]
    x1, x2, x3 = X[:, :d], X[:, d:2 * d], X[:, 2 * d:]
    f12 = np.einsum("ni,ij,nj->n", x1, A12, x2)
    f23 = np.einsum("ni,ij,nj->n", x2, A23, x3)
    return f12, f23


def gen_entangled(d: int = 16, rank: int = 1, n_train: int = 8000, n_val: int = 1000,
                  seed: int = 0) -> EntangledDataset:
    if rank < 1:
        raise ValueError("rank must be >= 1")
    rng = np.random.default_rng(seed)
    u12, v12 = rng.standard_normal((d, rank)), rng.standard_normal((d, rank))
    u23, v23 = rng.standard_normal((d, rank)), rng.standard_normal((d, rank))
    A12, A23 = u12 @ v12.T, u23 @ v23.T
    X_train = rng.standard_normal((n_train, 3 * d))
    X_val = rng.standard_normal((n_val, 3 * d))
    f12_t, f23_t = entangled_components(X_train, A12, A23)
    f12_v, f23_v = entangled_components(X_val, A12, A23)
    return EntangledDataset(d=d, rank=rank, A12=A12, A23=A23,
                            X_train=X_train, f12_train=f12_t, f23_train=f23_t,
                            X_val=X_val, f12_val=f12_v, f23_val=f23_v)


def export_csv(path, columns: dict) -> None:
    """Write equal-length columns to CSV; floats use ``repr`` for exact round-trips."""
    names = list(columns)
    cols = [np.asarray(columns[n]).ravel() for n in names]
    if len({len(c) for c in cols}) > 1:
        raise ValueError("columns differ in length")
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else int(x) for x in row])
