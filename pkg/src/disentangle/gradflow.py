"""Numerical check of factorized gradient flow on ``L = 0.5 * ||U V^T - Q*||_F^2``.

The target ``Q* = sum_i s_i u_i v_i^T`` has orthonormal frames. Along the flow
we track the modal coefficients ``c_i = u_i^T Q v_i``, the cross terms
``chi_ij = u_i^T Q v_j`` (i != j) and the overlaps ``a_i = |U^T u_i|``,
``b_i = |V^T v_i|``. With modal structure each ``c_i`` obeys the scalar ODE
``dc_i/dt = -(a_i^2 + b_i^2)(c_i - s_i)``, which is co-integrated alongside
the matrix flow so the two can be compared.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "FlowTarget",
    "FlowState",
    "Trajectory",
    "make_target",
    "aligned_init",
    "random_init",
    "flow_rhs",
    "flow_loss",
    "integrate",
    "unlearn_mode",
    "default_t_end",
]


@dataclass(frozen=True)
class FlowTarget:
    u: np.ndarray  # n x r, orthonormal columns
    v: np.ndarray
    s: np.ndarray

    @property
    def Q(self):
        return (self.u * self.s) @ self.v.T

    def with_spectrum(self, s):
        return replace(self, s=np.asarray(s, dtype=np.float64))


@dataclass
class FlowState:
    U: np.ndarray
    V: np.ndarray
    target: FlowTarget
    t: float = 0.0
    h: float = 1e-2


def make_target(n: int, spectrum, seed: int = 0, symmetric: bool = False) -> FlowTarget:
    s = np.asarray(spectrum, dtype=np.float64)
    r = s.size
    if r > n:
        raise ValueError("rank exceeds dimension")
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.standard_normal((n, r)))
    v = u.copy() if symmetric else np.linalg.qr(rng.standard_normal((n, r)))[0]
    return FlowTarget(u=u, v=v, s=s)


def aligned_init(target: FlowTarget, eps: float = 1e-3, h: float = 1e-2) -> FlowState:
    """``U_0 = eps * [u_1..u_r]``, ``V_0 = eps * [v_1..v_r]``: balanced and in the modal span."""
    return FlowState(U=eps * target.u.copy(), V=eps * target.v.copy(), target=target, h=h)


def random_init(target: FlowTarget, eps: float = 1e-3, seed: int = 0, h: float = 1e-2) -> FlowState:
    """``U_0 = eps R``, ``V_0 = eps R'`` with ``R, R'`` having i.i.d. N(0, 1/n) entries."""
    n, r = target.u.shape
    rng = np.random.default_rng(seed)
    R1 = rng.standard_normal((n, r)) / np.sqrt(n)
    R2 = R1.copy() if np.array_equal(target.u, target.v) else rng.standard_normal((n, r)) / np.sqrt(n)
    return FlowState(U=eps * R1, V=eps * R2, target=target, h=h)


def flow_rhs(U, V, Qstar):
    """``(dU, dV) = (-(Q - Q*) V, -(Q - Q*)^T U)`` with ``Q = U V^T``."""
    R = U @ V.T - Qstar
    return -R @ V, -R.T @ U


def flow_loss(U, V, Qstar) -> float:
    R = U @ V.T - Qstar
    return 0.5 * float(np.sum(R * R))


def default_t_end(s) -> float:
    """``50 / min gap`` between distinct nonzero singular values (50 if there is one mode)."""
    vals = np.unique(np.asarray(s, dtype=np.float64))
    gaps = np.diff(vals[vals > 0]) if vals.size else np.array([])
    return 50.0 / gaps.min() if gaps.size else 50.0


@dataclass
class Trajectory:
    t: list = field(default_factory=list)
    c: list = field(default_factory=list)
    c_scalar: list = field(default_factory=list)
    cross: list = field(default_factory=list)
    a: list = field(default_factory=list)
    b: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    balance_drift: list = field(default_factory=list)
    retries: int = 0

    def arrays(self):
        return {k: np.asarray(getattr(self, k)) for k in
                ("t", "c", "c_scalar", "cross", "a", "b", "loss", "balance_drift")}

    @property
    def max_cross(self) -> np.ndarray:
        """Largest |chi_ij| at each recorded time."""
        return np.asarray(self.cross)

    def cross_ratio(self) -> float:
        c = np.abs(np.asarray(self.c)).max()
        return float(np.max(self.cross) / c) if c > 0 else 0.0


def _modal(U, V, target):
    C = target.u.T @ (U @ V.T) @ target.v
    off = C - np.diag(np.diag(C))
    a = np.linalg.norm(U.T @ target.u, axis=0)
    b = np.linalg.norm(V.T @ target.v, axis=0)
    return np.diag(C).copy(), float(np.abs(off).max()) if off.size else 0.0, a, b


def _rk4(U, V, cs, Qstar, target, h):
    """One RK4 step of the matrix flow plus (if ``cs`` is given) the scalar modal ODEs."""

    def f(U_, V_, c_):
        dU, dV = flow_rhs(U_, V_, Qstar)
        if c_ is None:
            return dU, dV, 0.0
        a = np.linalg.norm(U_.T @ target.u, axis=0)
        b = np.linalg.norm(V_.T @ target.v, axis=0)
        return dU, dV, -(a * a + b * b) * (c_ - target.s)

    def shift(k, w):
        return None if cs is None else cs + w * k[2]

    k1 = f(U, V, cs)
    k2 = f(U + 0.5 * h * k1[0], V + 0.5 * h * k1[1], shift(k1, 0.5 * h))
    k3 = f(U + 0.5 * h * k2[0], V + 0.5 * h * k2[1], shift(k2, 0.5 * h))
    k4 = f(U + h * k3[0], V + h * k3[1], shift(k3, h))
    w = h / 6.0
    cn = None if cs is None else cs + w * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return (U + w * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            V + w * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]), cn)


def _stability_cap(U, V, safety):
    # linearized rates are bounded by |U|_2^2 + |V|_2^2; RK4 is stable for h*rate below ~2.78
    rate = np.linalg.norm(U, 2) ** 2 + np.linalg.norm(V, 2) ** 2
    return safety * 2.78 / rate if rate > 0 else np.inf


def integrate(state: FlowState, t_end: float | None = None, record_every: int = 10,
              stiff_cap: bool = False, safety: float = 0.9, h_max: float = 1.0,
              stop=None, max_retries: int = 30, loss_tol: float = 1e-10,
              track_scalar: bool = True):
    """Integrate the flow with classical RK4 from ``state.t`` to ``t_end``.

    The step is ``state.h``; with ``stiff_cap=True`` it is instead the RK4
    linear-stability limit (times ``safety``, at most ``h_max``), refreshed
    every 50 steps, which lets slow algebraic decays run to large times.
    A step that raises the loss by more than ``loss_tol`` is retried with half
    the step, at most ``max_retries`` times. ``stop(c, t)`` ends integration
    once it returns True. ``track_scalar`` co-integrates the scalar modal ODEs
    into ``trajectory.c_scalar``.

    Returns ``(final_state, trajectory)``; the input state is not modified.
    """
    target = state.target
    Qstar = target.Q
    t_end = default_t_end(target.s) if t_end is None else t_end
    U, V, t, h = state.U.copy(), state.V.copy(), state.t, state.h
    bal0 = U.T @ U - V.T @ V
    c, cross, a, b = _modal(U, V, target)
    cs = c.copy() if track_scalar else None
    traj = Trajectory()

    def record():
        traj.t.append(t)
        traj.c.append(c.copy())
        if track_scalar:
            traj.c_scalar.append(cs.copy())
        traj.cross.append(cross)
        traj.a.append(a)
        traj.b.append(b)
        traj.loss.append(loss)
        traj.balance_drift.append(float(np.abs((U.T @ U - V.T @ V) - bal0).max()))

    loss = flow_loss(U, V, Qstar)
    record()
    if stop is not None and stop(c, t):
        return FlowState(U=U, V=V, target=target, t=t, h=state.h), traj
    steps = 0
    if stiff_cap:
        h = min(h_max, _stability_cap(U, V, safety))
    while t < t_end - 1e-12:
        step = min(h, t_end - t)
        for _ in range(max_retries + 1):
            Un, Vn, cn = _rk4(U, V, cs, Qstar, target, step)
            new_loss = flow_loss(Un, Vn, Qstar)
            if new_loss <= loss + loss_tol:
                break
            step *= 0.5
            h = step
            traj.retries += 1
        else:
            raise ArithmeticError(f"step size collapsed to {step:.3g} at t={t:.4g}")
        U, V, cs, loss = Un, Vn, cn, new_loss
        t += step
        steps += 1
        if stiff_cap and steps % 50 == 0:
            h = min(h_max, _stability_cap(U, V, safety))
        last = t >= t_end - 1e-12
        done = False
        if stop is not None or steps % record_every == 0 or last:
            c, cross, a, b = _modal(U, V, target)
            done = stop is not None and stop(c, t)
        if steps % record_every == 0 or last or done:
            record()
        if done:
            break
    final = FlowState(U=U, V=V, target=target, t=t, h=state.h)
    return final, traj


def unlearn_mode(state: FlowState, k: int, tol: float = 1e-4, max_time: float = 1e5,
                 record_every: int = 50):
    """Zero ``s_k`` and resume the flow until it re-converges.

    Re-convergence means ``|c_k| < tol`` and ``|c_i - s_i| < tol`` for the
    other modes. A zeroed mode decays only algebraically (``c_k ~ 1/2t``), so
    this phase steps at the RK4 stability limit. Returns ``(state, trajectory)``.
    """
    s_new = state.target.s.copy()
    if not 0 <= k < s_new.size:
        raise IndexError(f"mode {k} out of range")
    s_new[k] = 0.0
    target = state.target.with_spectrum(s_new)
    start = FlowState(U=state.U, V=state.V, target=target, t=state.t, h=state.h)

    def converged(c, t):
        return bool(np.abs(c - s_new).max() < tol)

    return integrate(start, t_end=state.t + max_time, record_every=record_every,
                     stiff_cap=True, stop=converged, track_scalar=False)
