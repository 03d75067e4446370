"""Runge-Kutta discrete operational calculus.

Sequences live in a :class:`StageSequence`: ``stages[n]`` is the stage vector
``U_n`` (shape ``(m, d)``) and ``steps[n]`` the step value ``u_n``. The
symbol ``delta(z)/k`` plays the role of the Laplace variable; ``F(d^k)`` is
evaluated by scaled FFT on the circle ``|z| = lam``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import zlin
from .tableau import ButcherTableau, SingularityError

__all__ = [
    "CqContext",
    "StageSequence",
    "Resolvent",
    "TransferFunctionError",
    "delta",
    "delta_batch",
    "stage_times",
    "sample_stages",
    "post_process_steps",
    "discrete_antiderivative",
    "discrete_derivative",
    "stiffly_accurate_derivative",
    "apply_transfer_function",
    "transfer_function_stages",
    "ztransform",
]

CONTOUR_EPS = 1e-24  # lam^N = 1e-12: aliasing vs. lam^{-n} roundoff growth
OVERSAMPLING = 2
REALITY_TOL = 1e-10


class TransferFunctionError(ValueError):
    """The transfer function cannot be evaluated on the contour spectrum."""

    def __init__(self, msg: str, frequency_index: int | None = None):
        super().__init__(msg)
        self.frequency_index = frequency_index


def default_transform_length(n_steps: int) -> int:
    return zlin.next_power_of_two(OVERSAMPLING * (n_steps + 1))


def default_radius(N: int, eps: float = CONTOUR_EPS) -> float:
    return eps ** (1.0 / (2 * N))


@dataclass(frozen=True)
class CqContext:
    """Step size, horizon and contour parameters for one convolution quadrature run."""

    tableau: ButcherTableau
    k: float
    n_steps: int
    N: int | None = None
    lam: float | None = None
    eps: float = CONTOUR_EPS

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"step size must be positive, got {self.k}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        N = default_transform_length(self.n_steps) if self.N is None else int(self.N)
        if N < self.n_steps + 1:
            raise ValueError(f"transform length N={N} is shorter than n_steps+1={self.n_steps + 1}")
        if not zlin.is_power_of_two(N):
            raise ValueError(f"transform length must be a power of two, got {N}")
        lam = default_radius(N, self.eps) if self.lam is None else float(self.lam)
        if not 0 < lam < 1:
            raise ValueError(f"contour radius must lie in (0, 1), got {lam}")
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "lam", lam)

    @property
    def times(self) -> np.ndarray:
        return self.k * np.arange(self.n_steps + 1)


@dataclass
class StageSequence:
    """``n_steps`` stage vectors (``m x d`` each) and ``n_steps + 1`` step values."""

    stages: np.ndarray
    steps: np.ndarray = field(default=None)

    def __post_init__(self):
        st = np.asarray(self.stages)
        if st.ndim == 2:  # scalar state, shape (n, m)
            st = st[:, :, None]
        if st.ndim != 3:
            raise ValueError(f"stages must have shape (n_steps, m, d), got {st.shape}")
        self.stages = st
        if self.steps is None:
            self.steps = np.zeros((st.shape[0] + 1, st.shape[2]), dtype=st.dtype)
        else:
            sp = np.asarray(self.steps)
            if sp.ndim == 1:
                sp = sp[:, None]
            if sp.shape != (st.shape[0] + 1, st.shape[2]):
                raise ValueError(f"steps must have shape {(st.shape[0] + 1, st.shape[2])}, got {sp.shape}")
            self.steps = sp

    @property
    def n_steps(self) -> int:
        return self.stages.shape[0]

    @property
    def m(self) -> int:
        return self.stages.shape[1]

    @property
    def d(self) -> int:
        return self.stages.shape[2]

    @classmethod
    def zeros(cls, n_steps: int, m: int, d: int = 1) -> StageSequence:
        return cls(np.zeros((n_steps, m, d)))


class Resolvent:
    """Transfer function ``s -> 1/(s - pole)``.

    Recognized by :func:`apply_transfer_function`, which can then fall back to
    a linear solve where the symbol is too close to defective to diagonalize.
    """

    def __init__(self, pole: complex):
        self.pole = complex(pole)

    def __call__(self, s):
        return 1.0 / (s - self.pole)

    def __repr__(self):
        return f"Resolvent({self.pole!r})"


def delta(t: ButcherTableau, z: complex) -> np.ndarray:
    """``delta(z) = Q^{-1} - z/(1 - r(inf) z) Q^{-1} 1 b^T Q^{-1}``."""
    denom = 1.0 - t.r_inf * z
    if abs(denom) < 1e-14:
        raise SingularityError(f"delta has a pole at z={z} (z = 1/r(inf))")
    Qi = t.Qinv
    return Qi - (z / denom) * np.outer(Qi.sum(axis=1), t.bQinv)


def delta_batch(t: ButcherTableau, z: np.ndarray) -> np.ndarray:
    """``delta`` at every point of ``z``; returns shape ``z.shape + (m, m)``."""
    z = np.asarray(z, dtype=complex)
    denom = 1.0 - t.r_inf * z
    if np.any(np.abs(denom) < 1e-14):
        raise SingularityError("delta has a pole on the requested points")
    Qi = t.Qinv
    rank1 = np.outer(Qi.sum(axis=1), t.bQinv)
    return Qi - (z / denom)[..., None, None] * rank1


def stage_times(t: ButcherTableau, k: float, n_steps: int) -> np.ndarray:
    """``t_n + k c`` for ``n < n_steps``, shape ``(n_steps, m)``."""
    return k * (np.arange(n_steps)[:, None] + t.c[None, :])


def sample_stages(t: ButcherTableau, k: float, n_steps: int, f: Callable) -> StageSequence:
    """Stage samples ``f(t_n + k c)`` of a time function (scalar or vector valued)."""
    tt = stage_times(t, k, n_steps)
    vals = np.array([[np.atleast_1d(f(s)) for s in row] for row in tt])
    return StageSequence(vals)


def post_process_steps(t: ButcherTableau, stages: np.ndarray, u0=None) -> np.ndarray:
    """Step values from stages via ``u_{n+1} = r(inf) u_n + b^T Q^{-1} U_n``."""
    n, m, d = stages.shape
    proj = np.einsum("j,njd->nd", t.bQinv, stages)
    out = np.zeros((n + 1, d), dtype=np.result_type(stages, float))
    if u0 is not None:
        out[0] = u0
    r = t.r_inf
    if r == 0.0:
        out[1:] = proj
        return out
    for i in range(n):
        out[i + 1] = r * out[i] + proj[i]
    return out


def discrete_antiderivative(ctx: CqContext, u: StageSequence) -> StageSequence:
    """``(d^k)^{-1} U``: ``X_n = 1 x_n + k Q U_n``, ``x_{n+1} = x_n + k b^T U_n``, ``x_0 = 0``."""
    t, k = ctx.tableau, ctx.k
    U = u.stages
    kQU = k * np.einsum("ij,njd->nid", t.Q, U)
    incr = k * np.einsum("j,njd->nd", t.b, U)
    x = np.zeros((u.n_steps + 1, u.d), dtype=np.result_type(U, float))
    x[1:] = np.cumsum(incr, axis=0)
    X = x[:-1, None, :] + kQU
    return StageSequence(X, x)


def discrete_derivative(ctx: CqContext, u: StageSequence) -> StageSequence:
    """``d^k U``: ``V_n = k^{-1} Q^{-1} (U_n - 1 u_n)`` with ``u_n`` rebuilt from the stages.

    The returned step values are ``v_{n+1} = r(inf) v_n + b^T Q^{-1} V_n``.
    """
    t, k = ctx.tableau, ctx.k
    U = u.stages
    un = post_process_steps(t, U)
    V = np.einsum("ij,njd->nid", t.Qinv, U - un[:-1, None, :]) / k
    return StageSequence(V, post_process_steps(t, V))


def stiffly_accurate_derivative(ctx: CqContext, f: Callable) -> StageSequence:
    """``d^k`` of stage samples of ``f`` using ``G_n = k^{-1} Q^{-1} (F(t_n + kc) - 1 F(t_n))``.

    Valid only for stiffly accurate methods; agrees with
    :func:`discrete_derivative` when ``f(0) = 0``.
    """
    t, k = ctx.tableau, ctx.k
    if not t.stiffly_accurate:
        raise ValueError(f"{t.name} is not stiffly accurate; use discrete_derivative")
    Fs = sample_stages(t, k, ctx.n_steps, f).stages
    Fn = np.array([np.atleast_1d(f(s)) for s in ctx.times[:-1]])
    G = np.einsum("ij,njd->nid", t.Qinv, Fs - Fn[:, None, :]) / k
    return StageSequence(G, post_process_steps(t, G))


def ztransform(seq: np.ndarray, z) -> np.ndarray:
    """Truncated ``sum_n seq[n] z^n`` for each ``z`` (sequence index on axis 0)."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    powers = z[:, None] ** np.arange(seq.shape[0])[None, :]
    return np.tensordot(powers, seq, axes=(1, 0))


def _eval_F(F: Callable, s: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(F(s), dtype=complex)
        if out.shape == s.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([complex(F(v)) for v in s.ravel()]).reshape(s.shape)


def transfer_function_stages(ctx: CqContext, F: Callable, g: StageSequence) -> np.ndarray:
    """Complex stages of ``F(d^k) g`` before the real part is taken.

    ``V_n = lam^{-n} N^{-1} sum_l F(delta(lam zeta^l)/k) g^(lam zeta^l) zeta^{-ln}``,
    with the matrix function applied through an eigendecomposition of
    ``delta`` (one per frequency). All frequencies are processed as one
    batch, so results do not depend on any scheduling.
    """
    t, k, N, lam = ctx.tableau, ctx.k, ctx.N, ctx.lam
    n = g.n_steps
    if n > ctx.n_steps:
        raise ValueError(f"sequence has {n} steps but context allows {ctx.n_steps}")
    if N < n + 1:
        raise ValueError(f"transform length N={N} is shorter than n_steps+1={n + 1}")
    m, d = g.m, g.d
    if m != t.m:
        raise ValueError(f"sequence has {m} stages, tableau {t.name} has {t.m}")

    scale = lam ** np.arange(n)
    padded = np.zeros((N, m, d), dtype=complex)
    padded[:n] = g.stages * scale[:, None, None]
    # ghat_l = sum_j lam^j g_j zeta^{jl}
    ghat = N * zlin.fft(padded, "inverse", axis=0)

    zeta = np.exp(2j * np.pi * np.arange(N) / N)
    D = delta_batch(t, lam * zeta) / k
    w, Vec = np.linalg.eig(D)
    Vec = Vec / np.linalg.norm(Vec, axis=1, keepdims=True)
    cond = np.linalg.cond(Vec)

    Fw = _eval_F(F, w)
    bad = ~np.isfinite(Fw).all(axis=1)
    if bad.any():
        l = int(np.flatnonzero(bad)[0])
        raise TransferFunctionError(f"transfer function is singular on the spectrum at frequency index {l}", l)

    defective = ~(cond <= zlin.DEFECTIVE_COND)
    ok = ~defective
    Vhat = np.empty_like(ghat)
    if ok.any():
        coeffs = np.linalg.solve(Vec[ok], ghat[ok])
        Vhat[ok] = Vec[ok] @ (Fw[ok][:, :, None] * coeffs)
    for l in np.flatnonzero(defective):
        if not isinstance(F, Resolvent):
            raise zlin.DefectiveMatrixError(
                f"delta(z)/k is defective at frequency index {l} and F is not a resolvent", float(cond[l])
            )
        Vhat[l] = zlin.solve(D[l] - F.pole * np.eye(m), ghat[l])

    V = zlin.fft(Vhat, "forward", axis=0)[:n] / N
    return V / scale[:, None, None]


def apply_transfer_function(ctx: CqContext, F: Callable, g: StageSequence, real: bool | None = None) -> StageSequence:
    """Convolution quadrature ``F(d^k) g`` for a scalar transfer function ``F``.

    ``F`` acts componentwise on vector-valued ``g``. For real input the
    imaginary residue is checked (relative to the output size) and dropped;
    pass ``real=False`` to keep complex output for complex-symmetric data.
    """
    V = transfer_function_stages(ctx, F, g)
    if real is None:
        real = not np.iscomplexobj(g.stages)
    if real:
        size = max(float(np.max(np.abs(V), initial=0.0)), 1.0)
        resid = float(np.max(np.abs(V.imag), initial=0.0))
        if resid > REALITY_TOL * size:
            raise TransferFunctionError(
                f"output of real data has imaginary residue {resid:.3g} (F not real-symmetric?)"
            )
        V = V.real
    return StageSequence(V, post_process_steps(ctx.tableau, V))
