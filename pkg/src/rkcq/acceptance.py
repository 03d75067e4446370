"""Acceptance checks: ten numbered criteria, each with a tolerance and a time budget.

Every check returns a :class:`CriterionResult`; a check whose numbers are in
tolerance but which overruns its budget is reported as failed.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .heat_sphere import HeatExperimentConfig, run_heat_convergence
from .opcalc import (
    CqContext,
    Resolvent,
    StageSequence,
    apply_transfer_function,
    delta,
    delta_batch,
    discrete_antiderivative,
    discrete_derivative,
    sample_stages,
    stiffly_accurate_derivative,
)
from .report import emit_report
from .semigroup import (
    EvolutionProblem,
    boundary_driven_heat_problem,
    contraction_diagnostics,
    defect_convergence,
    manufactured_heat_problem,
    measure_theorem_rates,
    quadrature_convergence,
    random_dissipative,
)
from .tableau import BUILTIN_NAMES, builtin_tableau, order_failures, validate_order_conditions

__all__ = ["CriterionResult", "CRITERIA", "run_all", "format_result"]

RADAU = ("radau_iia_1", "radau_iia_2", "radau_iia_3", "radau_iia_5")
SEED = 20240607


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    elapsed: float
    budget: float

    def to_dict(self) -> dict:
        return dict(vars(self))


def format_result(r: CriterionResult) -> str:
    tag = "PASS" if r.passed else "FAIL"
    return f"[{tag}] {r.number:2d} {r.title}: {r.detail} ({r.elapsed:.2f}s / {r.budget:g}s)"


def _criterion(number: int, title: str, budget: float):
    def wrap(fn: Callable[..., tuple[bool, str]]):
        def run(**kw) -> CriterionResult:
            t0 = time.perf_counter()
            ok, detail = fn(**kw)
            elapsed = time.perf_counter() - t0
            if elapsed >= budget:
                ok = False
                detail += "; over time budget"
            return CriterionResult(number, title, bool(ok), detail, elapsed, budget)

        run.number = number
        run.title = title
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return wrap


@_criterion(1, "order conditions", 1.0)
def order_conditions():
    worst = 0.0
    bad = []
    for name in RADAU:
        res = validate_order_conditions(builtin_tableau(name))
        worst = max(worst, max(r.residual for r in res))
        bad += [f"{name}:{r.label}" for r in order_failures(res, 1e-10)]
    return not bad, f"max residual {worst:.2e}" + (f", failing {bad}" if bad else "")


@_criterion(2, "delta regression and spectrum", 5.0)
def delta_spectrum():
    rng = np.random.default_rng(SEED)
    be = builtin_tableau("radau_iia_1")
    z = rng.uniform(-1, 1, 100) + 1j * rng.uniform(-1, 1, 100)
    be_err = max(abs(delta(be, zz)[0, 0] - (1 - zz)) for zz in z)
    radius = 0.95 * np.sqrt(rng.uniform(0, 1, 1000))
    zs = radius * np.exp(2j * np.pi * rng.uniform(0, 1, 1000))
    mins = {}
    for name in BUILTIN_NAMES:
        mins[name] = float(np.linalg.eigvals(delta_batch(builtin_tableau(name), zs)).real.min())
    low = min(mins, key=mins.get)
    ok = be_err <= 1e-14 and mins[low] > 0
    return ok, f"backward Euler error {be_err:.1e}, min Re spectrum {mins[low]:.3e} ({low})"


@_criterion(3, "operational-calculus pairing", 5.0)
def opcalc_pairing():
    rng = np.random.default_rng(SEED)
    k = 0.1
    worst_pair = 0.0
    for name in BUILTIN_NAMES:
        t = builtin_tableau(name)
        ctx = CqContext(t, k, 100)
        U = rng.standard_normal((100, t.m, 1))
        back = discrete_derivative(ctx, discrete_antiderivative(ctx, StageSequence(U))).stages
        worst_pair = max(worst_pair, float(np.max(np.abs(back - U)) / np.max(np.abs(U))))
    # stiffly accurate shortcut vs the general recurrence, f(0) = 0
    f = lambda s: np.sin(3 * s) + s**2 * np.exp(-s)
    worst_short = 0.0
    for name in BUILTIN_NAMES:
        t = builtin_tableau(name)
        if not t.stiffly_accurate:
            continue
        ctx = CqContext(t, k, 100)
        a = stiffly_accurate_derivative(ctx, f).stages
        b = discrete_derivative(ctx, sample_stages(t, k, 100, f)).stages
        worst_short = max(worst_short, float(np.max(np.abs(a - b)) / np.max(np.abs(b))))
    ok = worst_pair <= 1e-12 and worst_short <= 1e-12
    return ok, f"pairing {worst_pair:.1e}, shortcut {worst_short:.1e}"


def _rk_linear_stages(t, A: np.ndarray, k: float, G: np.ndarray) -> np.ndarray:
    """Stages of ``y' = A y + g``, ``y(0) = 0``: ``(I - kQ (x) A) Y_n = 1 y_n + k (Q (x) I) G_n``."""
    n, m, d = G.shape
    M = np.eye(m * d, dtype=complex) - k * np.kron(t.Q, A)
    Minv = np.linalg.inv(M)
    Y = np.empty(G.shape, dtype=complex)
    y = np.zeros(d, dtype=complex)
    for i in range(n):
        rhs = np.tile(y, m) + k * np.kron(t.Q, np.eye(d)) @ G[i].reshape(-1)
        Y[i] = (Minv @ rhs).reshape(m, d)
        y = y + k * t.b @ (Y[i] @ A.T + G[i])
    return Y


@_criterion(4, "CQ / RK stepping equivalence", 10.0)
def cq_equivalence():
    rng = np.random.default_rng(SEED)
    t = builtin_tableau("radau_iia_3")
    k, n = 0.05, 200
    g = lambda s: np.sin(2 * s) + s * np.exp(-s)
    G = sample_stages(t, k, n, g)
    ctx = CqContext(t, k, n)
    worst = 0.0
    for _ in range(20):
        a = -(10 ** rng.uniform(-2, 2)) + 1j * rng.normal(scale=5)
        cq = apply_transfer_function(ctx, Resolvent(a), G, real=False).stages
        rk = _rk_linear_stages(t, np.array([[a]]), k, G.stages.astype(complex))
        worst = max(worst, float(np.max(np.abs(cq - rk))))
    # 8x8 case: decouple in the eigenbasis, one CQ run per eigenvalue
    A = random_dissipative(rng, 8)
    lam, V = np.linalg.eig(A)
    Gv = sample_stages(t, k, n, lambda s: g(s) * np.linspace(1, 2, 8)).stages
    rk = _rk_linear_stages(t, A, k, Gv.astype(complex)) @ np.linalg.inv(V).T
    Gw = Gv @ np.linalg.inv(V).T
    for j, a in enumerate(lam):
        cq = apply_transfer_function(ctx, Resolvent(a), StageSequence(Gw[:, :, j : j + 1]), real=False).stages
        worst = max(worst, float(np.max(np.abs(cq[:, :, 0] - rk[:, :, j]))))
    return worst <= 1e-7, f"max stage difference {worst:.2e}"


@_criterion(5, "contraction of r(kA)", 10.0)
def contraction():
    rng = np.random.default_rng(SEED)
    mats = [random_dissipative(rng, int(rng.integers(1, 11)), skew_only=(i % 10 == 0)) for i in range(100)]
    ks = (0.01, 0.1, 1.0, 10.0)
    worst_r = worst_pow = 0.0
    for name in RADAU:
        rep = contraction_diagnostics(builtin_tableau(name), mats, ks, T=10.0)
        worst_r = max(worst_r, rep.max_norm)
        worst_pow = max(worst_pow, rep.max_power_norm)
    ok = worst_r <= 1 + 1e-10 and worst_pow <= 1 + 1e-9
    return ok, f"max ||r(kA)|| - 1 = {worst_r - 1:.1e}, max ||r(kA)^n|| - 1 = {worst_pow - 1:.1e}"


def _quad_f(s):
    return math.exp(-s) * math.sin(3 * s)


def _quad_F(s):
    return (3 - math.exp(-s) * (math.sin(3 * s) + 3 * math.cos(3 * s))) / 10


@_criterion(6, "quadrature order of the discrete antiderivative", 5.0)
def quadrature_order():
    parts = []
    ok = True
    for name, ks in (("radau_iia_2", [1 / 2**j for j in range(2, 7)]), ("radau_iia_3", [1 / 2**j for j in range(1, 6)])):
        t = builtin_tableau(name)
        rep = quadrature_convergence(t, _quad_f, _quad_F, 2.0, ks)
        med = rep.median_eoc()
        ok &= abs(med - t.p) <= 0.2
        parts.append(f"{name} EOC {med:.2f} (p={t.p})")
    return ok, ", ".join(parts)


@_criterion(7, "stage defect order", 1.0)
def defect_order():
    parts = []
    ok = True
    ks = [0.2 / 2**j for j in range(5)]
    for name in ("radau_iia_2", "radau_iia_3"):
        t = builtin_tableau(name)
        rep = defect_convergence(t, np.sin, np.cos, 0.5, ks)
        med = rep.median_eoc()
        ok &= abs(med - (t.q + 1)) <= 0.1
        parts.append(f"{name} EOC {med:.2f} (q+1={t.q + 1})")
    return ok, ", ".join(parts)


@_criterion(8, "heat-sphere convergence rates", 60.0)
def heat_rates():
    parts = []
    ok = True
    for name, lo, hi in (("radau_iia_3", 3.1, 4.2), ("radau_iia_5", 5.0, 6.3)):
        rep = run_heat_convergence(HeatExperimentConfig(n=2, T=6.0, tableau=builtin_tableau(name)))
        med = rep.median_eoc()
        enough = len(rep.usable_eoc()) >= 2
        ok &= enough and lo <= med <= hi
        parts.append(f"{name} median EOC {med:.2f} in [{lo}, {hi}]" + (f" (flagged {rep.flagged})" if rep.flagged else ""))
    return ok, ", ".join(parts)


@_criterion(9, "semigroup testbed, nonstiff", 30.0)
def semigroup_nonstiff():
    t = builtin_tableau("radau_iia_2")
    ks = [1 / 16, 1 / 32, 1 / 64, 1 / 128]
    step = measure_theorem_rates(manufactured_heat_problem(20, 1.0), t, ks, "step")
    med = step.median_eoc()
    free = boundary_driven_heat_problem(20, 1.0)
    diff = measure_theorem_rates(free, t, ks, "differentiated")
    strong = measure_theorem_rates(free, t, ks, "strong")
    same = np.array_equal(diff.errors, strong.errors)
    ok = abs(med - t.p) <= 0.3 and same and diff.valid
    return ok, f"step EOC {med:.2f} (p={t.p}), strong == differentiated with F=0: {same}"


@_criterion(10, "semigroup testbed, stiff", 60.0)
def semigroup_stiff(out_dir: str | Path | None = None):
    out = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="rkcq-stiff-"))
    ks = [1 / 16, 1 / 32, 1 / 64, 1 / 128]

    def factory(k: float) -> EvolutionProblem:
        return manufactured_heat_problem(math.ceil(1 / k), 1.0)

    ok = True
    bad = []
    for name in ("radau_iia_2", "radau_iia_3"):
        t = builtin_tableau(name)
        for quantity in ("step", "integrated", "differentiated", "strong"):
            rep = measure_theorem_rates(factory, t, ks, quantity)
            rep.metadata["grid"] = "ceil(1/k)"
            emit_report(rep, out / f"{name}_{quantity}.csv")
            med = rep.median_eoc()
            if not (rep.monotone() and med >= t.q and rep.valid):
                ok = False
                bad.append(f"{name}/{quantity} EOC {med:.2f}")
    detail = "all quantities monotone with EOC >= q" if ok else "failing " + ", ".join(bad)
    return ok, f"{detail}; reports in {out}"


CRITERIA = (
    order_conditions,
    delta_spectrum,
    opcalc_pairing,
    cq_equivalence,
    contraction,
    quadrature_order,
    defect_order,
    heat_rates,
    semigroup_nonstiff,
    semigroup_stiff,
)


def run_all(out_dir=None, echo: Callable[[str], None] | None = print) -> list[CriterionResult]:
    results = []
    for crit in CRITERIA:
        r = crit(out_dir=out_dir) if crit is semigroup_stiff else crit()
        if echo is not None:
            echo(format_result(r))
        results.append(r)
    return results
