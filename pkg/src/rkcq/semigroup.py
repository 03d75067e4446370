"""Finite-dimensional constrained evolution problems and their RK discretization.

The abstract problem is ``u' = A_star u + F``, ``B u = Xi``, ``u(0) = u0``,
with ``A = A_star`` restricted to ``ker B`` and a lifting ``E`` (right inverse
of ``B`` with ``A_star E = E``). Stages are split as ``U = Y + Z`` with
``Y = E Xi(t_n + kc)`` and ``Z`` in ``(ker B)^m``, so the constraint holds
exactly. The evolution equation is imposed on ``ker B`` (tested against an
orthonormal basis ``P`` of it); in the finite-difference testbed that is the
interior grid, while the boundary slots carry the trace.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.special import gammainc

from .opcalc import (
    CqContext,
    StageSequence,
    discrete_antiderivative,
    discrete_derivative,
    post_process_steps,
    stage_times,
)
from .report import ConvergenceReport
from .tableau import ButcherTableau, SingularityError, builtin_tableau, stability_function

__all__ = [
    "ConstrainedOperator",
    "EvolutionProblem",
    "ExactSolution",
    "heat_fd_testbed",
    "manufactured_heat_problem",
    "boundary_driven_heat_problem",
    "rk_step_constrained",
    "direct_step_update",
    "tracked_quantity",
    "measure_theorem_rates",
    "stage_defect",
    "defect_convergence",
    "quadrature_convergence",
    "random_dissipative",
    "stability_matrix",
    "contraction_diagnostics",
    "ContractionReport",
]

QUANTITIES = ("step", "integrated", "differentiated", "strong")
REFERENCE_METHOD = "radau_iia_5"
REFERENCE_REFINEMENT = 8
RICHARDSON_MARGIN = 100.0
STAGE_COND_CAP = 1e13


@dataclass(frozen=True, eq=False)
class ConstrainedOperator:
    """The triple ``(A_star, B, E)`` plus an orthonormal basis ``P`` of ``ker B``.

    ``weight`` scales the Euclidean norm on ``ker B`` coordinates (``sqrt(h)``
    for grid functions).
    """

    a_star: np.ndarray
    constraint: np.ndarray
    lifting: np.ndarray
    kernel_basis: np.ndarray
    weight: float = 1.0
    dissipative: bool = False
    label: str = ""

    @property
    def d(self) -> int:
        return self.a_star.shape[0]

    @property
    def d_c(self) -> int:
        return self.constraint.shape[0]

    @property
    def A(self) -> np.ndarray:
        """``A_star`` restricted to ``ker B``, in ``P`` coordinates."""
        P = self.kernel_basis
        return P.T @ self.a_star @ P

    def norm(self, v: np.ndarray) -> np.ndarray:
        """Weighted norm of the ``ker B`` component; vectorized over leading axes."""
        return self.weight * np.linalg.norm(np.asarray(v) @ self.kernel_basis, axis=-1)

    def invariant_residuals(self) -> dict:
        B, E, P = self.constraint, self.lifting, self.kernel_basis
        out = {
            "BE_minus_I": float(np.max(np.abs(B @ E - np.eye(self.d_c)), initial=0.0)),
            "lifting_in_ker_I_minus_A_star": float(
                np.max(np.abs(E - self.a_star @ E), initial=0.0)
            ),
            "B_P": float(np.max(np.abs(B @ P), initial=0.0)),
        }
        Asym = 0.5 * (self.A + self.A.T)
        out["max_eig_sym_A"] = float(np.max(np.linalg.eigvalsh(Asym))) if Asym.size else 0.0
        return out

    @classmethod
    def unconstrained(cls, a_star, label: str = "") -> ConstrainedOperator:
        a_star = np.atleast_2d(np.asarray(a_star, dtype=float))
        d = a_star.shape[0]
        sym = 0.5 * (a_star + a_star.T)
        return cls(
            a_star=a_star,
            constraint=np.zeros((0, d)),
            lifting=np.zeros((d, 0)),
            kernel_basis=np.eye(d),
            dissipative=bool(np.max(np.linalg.eigvalsh(sym)) <= 1e-12),
            label=label,
        )


def heat_fd_testbed(n_grid: int) -> ConstrainedOperator:
    """Three-point Laplacian on ``[0, 1]`` with Dirichlet trace as the constraint.

    State layout: ``[u(0), u(x_1), ..., u(x_n), u(1)]``, ``h = 1/(n+1)``. On the
    two boundary slots ``A_star`` is the identity, so ``(I - A_star) E = 0``
    holds row by row once the interior of ``E xi`` solves ``(I - Delta_h) v = 0``.
    """
    if n_grid < 3:
        raise ValueError("n_grid must be at least 3")
    n = n_grid
    d = n + 2
    h = 1.0 / (n + 1)
    A = np.zeros((d, d))
    i = np.arange(1, n + 1)
    A[i, i - 1] = 1.0 / h**2
    A[i, i] = -2.0 / h**2
    A[i, i + 1] = 1.0 / h**2
    A[0, 0] = 1.0
    A[-1, -1] = 1.0

    B = np.zeros((2, d))
    B[0, 0] = 1.0
    B[1, -1] = 1.0

    # interior of E xi: (I - Delta_h) v = boundary coupling
    main = np.full(n, 1.0 + 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    E = np.zeros((d, 2))
    E[0, 0] = 1.0
    E[-1, 1] = 1.0
    rhs = np.zeros((n, 2))
    rhs[0, 0] = 1.0 / h**2
    rhs[-1, 1] = 1.0 / h**2
    banded = np.vstack([np.r_[0.0, off], main, np.r_[off, 0.0]])
    E[1:-1] = sla.solve_banded((1, 1), banded, rhs)

    P = np.zeros((d, n))
    P[i, i - 1] = 1.0
    return ConstrainedOperator(A, B, E, P, weight=math.sqrt(h), dissipative=True, label=f"heat_fd(n_grid={n})")


@dataclass
class ExactSolution:
    """Closed forms of ``u``, its antiderivative from 0 and its derivative, on the state grid."""

    u: Callable
    integral: Callable
    derivative: Callable


@dataclass
class EvolutionProblem:
    op: ConstrainedOperator
    F: Callable
    Xi: Callable
    T: float
    u0: np.ndarray | None = None
    exact: ExactSolution | None = None
    label: str = ""
    zero_forcing: bool = False

    def initial(self) -> np.ndarray:
        return np.zeros(self.op.d) if self.u0 is None else np.asarray(self.u0, dtype=float)


def _eta(t):
    return t**9 * np.exp(-t)


def _eta_dot(t):
    return (9 * t**8 - t**9) * np.exp(-t)


def _eta_int(t):
    # int_0^t s^9 e^{-s} ds = 9! P(10, t); the expanded finite sum cancels badly near 0
    return math.factorial(9) * gammainc(10, t)


def manufactured_heat_problem(n_grid: int, T: float = 1.0) -> EvolutionProblem:
    """``u(x, t) = sin(pi x) eta(t) + x^2 eta(t)``, ``eta = t^9 e^{-t}``, on the FD testbed.

    ``F = u' - A_star u`` is formed with the discrete operator, so grid samples
    of ``u`` solve the semi-discrete problem exactly; ``Xi = (0, eta)``.
    """
    op = heat_fd_testbed(n_grid)
    x = np.linspace(0.0, 1.0, n_grid + 2)
    profile = np.sin(np.pi * x) + x**2
    profile[0] = 0.0  # sin(0) + 0

    A_prof = op.a_star @ profile

    def u(t):
        return profile * _eta(t)

    def F(t):
        return profile * _eta_dot(t) - A_prof * _eta(t)

    def Xi(t):
        return np.array([0.0, _eta(t)])

    exact = ExactSolution(
        u=u,
        integral=lambda t: profile * _eta_int(t),
        derivative=lambda t: profile * _eta_dot(t),
    )
    return EvolutionProblem(op, F, Xi, T, exact=exact, label=f"manufactured heat, n_grid={n_grid}")


def boundary_driven_heat_problem(n_grid: int, T: float = 1.0) -> EvolutionProblem:
    """Zero forcing, ``Xi = (0, eta)``: no closed-form solution, needs a reference run."""
    op = heat_fd_testbed(n_grid)
    zero = np.zeros(op.d)
    return EvolutionProblem(
        op,
        F=lambda t: zero,
        Xi=lambda t: np.array([0.0, _eta(t)]),
        T=T,
        label=f"boundary-driven heat, n_grid={n_grid}",
        zero_forcing=True,
    )


def _sample(f: Callable, times: np.ndarray, width: int) -> np.ndarray:
    out = np.empty(times.shape + (width,))
    for idx in np.ndindex(times.shape):
        out[idx] = f(times[idx])
    return out


def rk_step_constrained(prob: EvolutionProblem, t: ButcherTableau, k: float, n_steps: int) -> StageSequence:
    """RK approximation with exactly enforced side constraint.

    Per step: ``Y_n = E Xi(t_n + kc)``, then on ``ker B``
    ``(I - k Q (x) A) Z_n = 1 u_n - Y_n + k Q (A_star Y_n + F(t_n + kc))``,
    ``U_n = Y_n + Z_n`` and ``u_{n+1} = r(inf) u_n + b^T Q^{-1} U_n``.
    The stage matrix is factorized once.
    """
    op = prob.op
    P, E = op.kernel_basis, op.lifting
    m, d = t.m, op.d
    dk = P.shape[1]
    M = np.eye(m * dk) - k * np.kron(t.Q, op.A)
    cond = np.linalg.cond(M, 1)
    if not cond < STAGE_COND_CAP:
        raise SingularityError(
            f"stage matrix I - kQ(x)A is singular for k={k} (cond~{cond:.3g}); try a smaller step size"
        )
    lu = sla.lu_factor(M)

    tt = stage_times(t, k, n_steps)
    Fs = _sample(prob.F, tt, d)
    Ys = _sample(prob.Xi, tt, op.d_c) @ E.T if op.d_c else np.zeros((n_steps, m, d))
    AY = Ys @ op.a_star.T

    U = np.empty((n_steps, m, d))
    u = np.empty((n_steps + 1, d))
    u[0] = prob.initial()
    bQ, r = t.bQinv, t.r_inf
    kQ = k * t.Q
    for n in range(n_steps):
        rhs = (u[n][None, :] - Ys[n] + kQ @ (AY[n] + Fs[n])) @ P
        z = sla.lu_solve(lu, rhs.reshape(-1)).reshape(m, dk)
        U[n] = Ys[n] + z @ P.T
        u[n + 1] = r * u[n] + bQ @ U[n]
    return StageSequence(U, u)


def direct_step_update(prob: EvolutionProblem, t: ButcherTableau, k: float, seq: StageSequence) -> np.ndarray:
    """Step values from ``u_{n+1} = u_n + k (b^T (x) A_star) U_n + k b^T F(t_n + kc)``."""
    n_steps = seq.n_steps
    Fs = _sample(prob.F, stage_times(t, k, n_steps), prob.op.d)
    AU = seq.stages @ prob.op.a_star.T
    incr = k * np.einsum("j,njd->nd", t.b, AU + Fs)
    out = np.empty_like(seq.steps)
    out[0] = seq.steps[0]
    out[1:] = out[0] + np.cumsum(incr, axis=0)
    return out


def tracked_quantity(prob: EvolutionProblem, t: ButcherTableau, k: float, seq: StageSequence, quantity: str) -> np.ndarray:
    """Step-indexed sequence ``(n_steps + 1, d)`` of the requested quantity.

    step: ``u_n``; integrated: ``x_{n+1} = r(inf) x_n + b^T Q^{-1} X_n`` with
    ``X = (d^k)^{-1} U``; differentiated: ``v_n = e_m^T V_{n-1}`` with
    ``V = d^k U``; strong: ``A_star u_n`` recovered as ``v_n - F(t_n)``.
    """
    if quantity == "step":
        return seq.steps
    ctx = CqContext(t, k, seq.n_steps)
    if quantity == "integrated":
        X = discrete_antiderivative(ctx, StageSequence(seq.stages)).stages
        return post_process_steps(t, X)
    if quantity not in ("differentiated", "strong"):
        raise ValueError(f"unknown quantity {quantity!r}; choose from {QUANTITIES}")
    if not t.stiffly_accurate:
        raise ValueError(f"{quantity} estimate needs a stiffly accurate method, {t.name} is not")
    V = discrete_derivative(ctx, StageSequence(seq.stages)).stages
    v = np.zeros_like(seq.steps)
    v[1:] = V[:, -1, :]
    if quantity == "differentiated":
        return v
    times = k * np.arange(seq.n_steps + 1)
    return v - _sample(prob.F, times, prob.op.d)


def _exact_quantity(prob: EvolutionProblem, times: np.ndarray, quantity: str) -> np.ndarray:
    ex = prob.exact
    d = prob.op.d
    if quantity == "step":
        return _sample(ex.u, times, d)
    if quantity == "integrated":
        return _sample(ex.integral, times, d)
    du = _sample(ex.derivative, times, d)
    if quantity == "differentiated":
        return du
    return du - _sample(prob.F, times, d)


def _n_steps(T: float, k: float) -> int:
    n = round(T / k)
    if n < 1 or abs(n * k - T) > 1e-9 * T:
        raise ValueError(f"step size {k} does not divide T={T}")
    return n


def _run_quantity(prob, t, k, quantity):
    n = _n_steps(prob.T, k)
    seq = rk_step_constrained(prob, t, k, n)
    return tracked_quantity(prob, t, k, seq, quantity)


def _map_levels(fn: Callable, ks, workers: int) -> list:
    if workers and workers > 1 and len(ks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, ks))
    return [fn(k) for k in ks]


def measure_theorem_rates(
    prob: EvolutionProblem | Callable[[float], EvolutionProblem],
    t: ButcherTableau,
    ks,
    quantity: str,
    reference: str = "auto",
    workers: int = 0,
) -> ConvergenceReport:
    """Errors and EOC of one tracked quantity over a list of step sizes.

    ``prob`` may be a factory ``k -> EvolutionProblem`` (e.g. grid tied to the
    step size). With ``reference="auto"`` the reference is the closed-form
    solution when the problem carries one; with ``"numerical"`` (or without a
    closed form) it is a radau_iia_5 run at ``k/8`` of the finest level
    (per level for factories), checked against the same run at twice that
    step: if the two disagree by more than 1/100 of the finest error, the
    report is marked invalid. ``workers > 1`` runs levels on a thread pool.
    Error: max over steps of the weighted
    ``ker B`` norm.
    """
    if quantity not in QUANTITIES:
        raise ValueError(f"unknown quantity {quantity!r}; choose from {QUANTITIES}")
    if reference not in ("auto", "numerical"):
        raise ValueError("reference must be 'auto' or 'numerical'")
    if quantity in ("differentiated", "strong") and not t.stiffly_accurate:
        raise ValueError(f"{quantity} estimate needs a stiffly accurate method, {t.name} is not")
    ks = [float(k) for k in ks]
    per_level = not isinstance(prob, EvolutionProblem)
    factory = prob if per_level else (lambda k, p=prob: p)
    ref_t = builtin_tableau(REFERENCE_METHOD)

    def reference_run(p: EvolutionProblem, k_ref: float):
        fine = _run_quantity(p, ref_t, k_ref, quantity)
        coarse = _run_quantity(p, ref_t, 2 * k_ref, quantity)
        return k_ref, fine, float(np.max(p.op.norm(fine[::2] - coarse)))

    shared = None
    if not per_level and (prob.exact is None or reference == "numerical"):
        shared = reference_run(prob, ks[-1] / REFERENCE_REFINEMENT)

    def level(k: float):
        p = factory(k)
        approx = _run_quantity(p, t, k, quantity)
        gap = None
        if p.exact is not None and reference == "auto":
            ref = _exact_quantity(p, k * np.arange(approx.shape[0]), quantity)
        else:
            k_ref, fine, gap = shared if shared is not None else reference_run(p, k / REFERENCE_REFINEMENT)
            ref = fine[:: round(k / k_ref)][: approx.shape[0]]
        return (k, float(np.max(p.op.norm(approx - ref)))), gap

    results = _map_levels(level, ks, workers)
    levels = [lv for lv, _ in results]
    richardson = [g for _, g in results if g is not None]

    finest = levels[-1][1]
    valid = not richardson or max(richardson) <= finest / RICHARDSON_MARGIN
    first = factory(ks[0])
    return ConvergenceReport.from_levels(
        levels,
        quantity=quantity,
        method=t.name,
        valid=valid,
        metadata={
            "experiment": "semigroup",
            "problem": first.label,
            "reference": "closed form" if first.exact is not None and reference == "auto" else f"{REFERENCE_METHOD} at k/{REFERENCE_REFINEMENT}",
            "richardson_gap": max(richardson) if richardson else None,
            "norm": "max_n sqrt(h) |u_n|_2 over ker B coordinates",
        },
    )


def stage_defect(t: ButcherTableau, y: Callable, y_dot: Callable, t0: float, k: float) -> np.ndarray:
    """``D^k(y; t0) = y(t0 + kc) - y(t0) 1 - k Q y'(t0 + kc)``, shape ``(m, d)``."""
    tc = t0 + k * t.c
    Y = np.array([np.atleast_1d(y(s)) for s in tc])
    Yd = np.array([np.atleast_1d(y_dot(s)) for s in tc])
    return Y - np.atleast_1d(y(t0))[None, :] - k * (t.Q @ Yd)


def defect_convergence(t: ButcherTableau, y: Callable, y_dot: Callable, t0: float, ks) -> ConvergenceReport:
    levels = [(k, float(np.max(np.abs(stage_defect(t, y, y_dot, t0, k))))) for k in ks]
    return ConvergenceReport.from_levels(levels, quantity="defect", method=t.name, metadata={"t0": t0})


def quadrature_convergence(t: ButcherTableau, f: Callable, antiderivative: Callable, T: float, ks) -> ConvergenceReport:
    """Step error of the discrete antiderivative of stage samples of ``f`` on ``[0, T]``."""
    levels = []
    for k in ks:
        n = _n_steps(T, k)
        ctx = CqContext(t, k, n)
        tt = stage_times(t, k, n)
        X = discrete_antiderivative(ctx, StageSequence(np.vectorize(f)(tt)))
        times = k * np.arange(n + 1)
        exact = np.vectorize(antiderivative)(times)
        levels.append((k, float(np.max(np.abs(X.steps[:, 0] - exact)))))
    return ConvergenceReport.from_levels(levels, quantity="antiderivative", method=t.name, metadata={"T": T})


def random_dissipative(rng: np.random.Generator, dim: int, skew_only: bool = False) -> np.ndarray:
    """Random ``A`` with ``x^T (A + A^T) x <= 0``: skew part plus negative semidefinite part.

    Magnitudes are spread over several decades so ``kA`` probes both the
    non-stiff and the stiff end of the stability region.
    """
    G = rng.standard_normal((dim, dim))
    S = 0.5 * (G - G.T) * 10 ** rng.uniform(-1, 2)
    if skew_only:
        return S
    H = rng.standard_normal((dim, rng.integers(1, dim + 1)))
    N = -(H @ H.T) * 10 ** rng.uniform(-1, 2)
    return S + N


def stability_matrix(t: ButcherTableau, Z: np.ndarray) -> np.ndarray:
    """``r(Z) = I + (b^T (x) Z)(I - Q (x) Z)^{-1} (1 (x) I)``."""
    Z = np.atleast_2d(np.asarray(Z))
    d = Z.shape[0]
    m = t.m
    M = np.eye(m * d) - np.kron(t.Q, Z)
    Y = np.linalg.solve(M, np.kron(np.ones((m, 1)), np.eye(d)))
    return np.eye(d) + np.kron(t.b[None, :], Z) @ Y


def _spectral_norms(mats: np.ndarray) -> np.ndarray:
    # largest singular value via the Gram matrix; clip tiny negative roundoff
    gram = np.conj(np.swapaxes(mats, -1, -2)) @ mats
    return np.sqrt(np.maximum(np.linalg.eigvalsh(gram)[..., -1], 0.0))


@dataclass
class ContractionReport:
    method: str
    rows: list = field(default_factory=list)  # (k, max ||r(kA)||, max_n ||r(kA)^n||)

    @property
    def max_norm(self) -> float:
        return max(r[1] for r in self.rows)

    @property
    def max_power_norm(self) -> float:
        return max(r[2] for r in self.rows)


def contraction_diagnostics(
    t: ButcherTableau,
    matrices: list[np.ndarray],
    ks,
    T: float = 10.0,
) -> ContractionReport:
    """``||r(kA)||_2`` and ``max_{nk <= T} ||r(kA)^n||_2`` over a set of dissipative matrices."""
    rep = ContractionReport(method=t.name)
    by_dim: dict[int, list[np.ndarray]] = {}
    for A in matrices:
        by_dim.setdefault(A.shape[0], []).append(A)
    for k in ks:
        max_r = 0.0
        max_pow = 0.0
        n_max = int(math.floor(T / k + 1e-9))
        for group in by_dim.values():
            R = np.array([stability_matrix(t, k * A) for A in group])
            max_r = max(max_r, float(_spectral_norms(R).max()))
            Pw = R.copy()
            best = _spectral_norms(Pw)
            for _ in range(1, n_max):
                Pw = Pw @ R
                best = np.maximum(best, _spectral_norms(Pw))
            max_pow = max(max_pow, float(best.max()))
        rep.rows.append((float(k), max_r, max_pow))
    return rep


def scalar_step_factor(t: ButcherTableau, a: complex, k: float) -> complex:
    return stability_function(t, k * a)
