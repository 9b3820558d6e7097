"""Fourier entropy and singular-value analysis of interaction matrices.

DFT convention: unnormalized forward transform ``F[u, a] = exp(-2πi ua/p)``
and ``M_hat = F M F^*``. Parseval then reads
``sum |M_hat|^2 = p^2 * sum |M|^2``. Entropies use the natural log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConvergenceError",
    "SVDResult",
    "dft_matrix",
    "dft2",
    "power_spectrum",
    "fourier_entropy",
    "center",
    "svd",
    "sv_decay",
    "rank_for_energy",
]


class ConvergenceError(ArithmeticError):
    pass


def dft_matrix(p: int) -> np.ndarray:
    k = np.arange(p)
    # reduce the exponent mod p first so large p keeps full phase accuracy
    return np.exp(-2j * np.pi * (np.outer(k, k) % p) / p)


def dft2(M) -> np.ndarray:
    """Two-sided DFT ``F M F^*`` by explicit matrix products."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"dft2 needs a square matrix, got shape {M.shape}")
    F = dft_matrix(M.shape[0])
    return F @ M @ F.conj().T


def power_spectrum(M) -> np.ndarray:
    """Normalized power ``|M_hat|^2 / sum |M_hat|^2`` (sums to one)."""
    power = np.abs(dft2(M)) ** 2
    total = power.sum()
    if not total > 0:
        raise ValueError("power spectrum undefined for an all-zero matrix")
    return power / total


def _shannon(P):
    P = P[P > 0]
    return float(-(P * np.log(P)).sum())


def fourier_entropy(M) -> float:
    """Shannon entropy (nats) of the normalized 2D power spectrum of ``M``."""
    return _shannon(power_spectrum(M))


def center(M) -> np.ndarray:
    """Remove row and column means: ``M - rowmean - colmean + grandmean``."""
    M = np.asarray(M, dtype=np.float64)
    return M - M.mean(axis=1, keepdims=True) - M.mean(axis=0, keepdims=True) + M.mean()


@dataclass
class SVDResult:
    s: np.ndarray
    U: np.ndarray | None = None
    Vt: np.ndarray | None = None
    sweeps: int = 0


def _round_robin(n):
    """Pairings for a cyclic tournament over ``n`` (even) columns: n-1 rounds of n/2 pairs."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((p, q))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def svd(M, compute_vectors: bool = False, tol: float = 1e-12, max_sweeps: int = 60) -> SVDResult:
    """Singular values by one-sided (Hestenes) Jacobi rotations.

    Columns are orthogonalized pairwise; each round of a round-robin
    tournament rotates ``n/2`` disjoint column pairs at once. Iteration stops
    once every pair satisfies ``|a_p . a_q| <= tol * |a_p| |a_q|``.
    """
    A = np.array(M, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("svd needs a 2D matrix")
    transposed = A.shape[1] > A.shape[0]
    if transposed:
        A = A.T.copy()
    m, n = A.shape
    pad = n % 2
    if pad:
        A = np.concatenate([A, np.zeros((m, 1))], axis=1)
    N = A.shape[1]
    V = np.eye(N)
    rounds = _round_robin(N) if N > 1 else []
    scale = np.abs(A).max() if A.size else 0.0
    tiny = (np.finfo(float).tiny / np.finfo(float).eps) * max(1.0, scale * scale)
    sweeps = 0
    converged = N <= 1 or scale == 0.0
    while not converged:
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"Jacobi SVD did not converge in {max_sweeps} sweeps "
                                   f"(shape {M.shape}, tol {tol})")
        sweeps += 1
        rotated = False
        for p, q in rounds:
            ap, aq = A[:, p], A[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (np.abs(gamma) > tiny)
            if not active.any():
                continue
            rotated = True
            zeta = np.where(active, (beta - alpha) / (2.0 * np.where(active, gamma, 1.0)), 0.0)
            t = np.where(active, np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta)), 0.0)
            t = np.where(active & (zeta == 0.0), 1.0, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            A[:, p], A[:, q] = c * ap - s * aq, s * ap + c * aq
            vp, vq = V[:, p], V[:, q]
            V[:, p], V[:, q] = c * vp - s * vq, s * vp + c * vq
        converged = not rotated
    sigma = np.linalg.norm(A, axis=0)
    order = np.argsort(-sigma, kind="stable")[:n]
    sigma = sigma[order]
    if not compute_vectors:
        return SVDResult(s=sigma, sweeps=sweeps)
    Vk = V[:n, order] if not pad else V[:n, order]
    safe = np.where(sigma > 0, sigma, 1.0)
    U = A[:, order] / safe
    # complete columns for zero singular values with an orthonormal basis
    zero = sigma <= sigma[0] * 1e-15 if sigma.size and sigma[0] > 0 else np.ones_like(sigma, bool)
    if zero.any():
        U = _complete_basis(U, ~zero)
    if transposed:
        return SVDResult(s=sigma, U=Vk, Vt=U.T, sweeps=sweeps)
    return SVDResult(s=sigma, U=U, Vt=Vk.T, sweeps=sweeps)


def _complete_basis(U, keep):
    Q = U[:, keep]
    m = U.shape[0]
    out = U.copy()
    basis = list(Q.T)
    j = 0
    for col in np.flatnonzero(~keep):
        while True:
            e = np.zeros(m)
            e[j % m] = 1.0
            j += 1
            for b in basis:
                e -= (b @ e) * b
            nrm = np.linalg.norm(e)
            if nrm > 1e-8:
                e /= nrm
                break
        basis.append(e)
        out[:, col] = e
    return out


def sv_decay(result: SVDResult) -> np.ndarray:
    """``sigma_i / sigma_1`` (zeros if the matrix is zero)."""
    s = np.asarray(result.s)
    if s.size == 0 or s[0] == 0:
        return np.zeros_like(s)
    return s / s[0]


def rank_for_energy(result: SVDResult, tau: float = 0.9) -> int:
    """Smallest k with ``sum_{i<=k} sigma_i^2 >= tau * sum sigma^2``."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    e = np.asarray(result.s) ** 2
    total = e.sum()
    if total == 0:
        return 0
    frac = np.cumsum(e) / total
    return int(np.searchsorted(frac, tau - 1e-12) + 1)
