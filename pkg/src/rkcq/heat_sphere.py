"""Heat conduction exterior to the unit sphere, reduced to one spherical harmonic.

For boundary data ``g(x, t) = psi(t) Y_n^m(x)`` the single-layer equation
``V(sqrt(s)) lambda = g`` becomes scalar: ``V`` acts on degree-``n``
harmonics by multiplication with ``mu_n(sqrt(s))``, where
``mu_n(s) = -s j_n(is) h_n^(1)(is)``. The density is therefore
``1/mu_n(sqrt(d^k))`` applied to stage samples of ``psi``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .opcalc import CqContext, StageSequence, apply_transfer_function, sample_stages
from .report import ConvergenceReport
from .tableau import ButcherTableau, builtin_tableau

__all__ = [
    "SphereSymbol",
    "HeatExperimentConfig",
    "spherical_bessel_j",
    "spherical_hankel_h1",
    "mu_n",
    "default_psi",
    "vanishing_order",
    "solve_heat_density",
    "run_heat_convergence",
]

MAX_DEGREE = 10
ROUNDOFF_FLOOR = 1e-11


def _hankel_terms(n: int):
    # coefficients (n+k)! / (k! (n-k)! 2^k) of the finite sum in h_n
    return [math.factorial(n + k) / (math.factorial(k) * math.factorial(n - k) * 2**k) for k in range(n + 1)]


def _check_degree(n: int):
    if not 0 <= n <= MAX_DEGREE:
        raise ValueError(f"degree must be in [0, {MAX_DEGREE}], got {n}")


def spherical_hankel_h1(n: int, z):
    """``h_n^(1)(z) = (-i)^{n+1} e^{iz}/z sum_k (n+k)!/(k!(n-k)!) (i/(2z))^k``."""
    _check_degree(n)
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise ZeroDivisionError("h_n^(1) has a pole at z = 0")
    acc = np.zeros_like(z)
    w = 1j / z
    for k, a in reversed(list(enumerate(_hankel_terms(n)))):
        acc = acc * w + a
    out = (-1j) ** (n + 1) * np.exp(1j * z) / z * acc
    return out[()] if out.ndim == 0 else out


def _hankel_h2(n: int, z):
    acc = np.zeros_like(z)
    w = -1j / z
    for a in reversed(_hankel_terms(n)):
        acc = acc * w + a
    return (1j) ** (n + 1) * np.exp(-1j * z) / z * acc


def _j_series(n: int, z, terms: int = 80):
    # j_n(z) = z^n sum_k (-z^2/2)^k / (k! (2n+2k+1)!!)
    dfact = math.prod(range(1, 2 * n + 2, 2))
    term = np.ones_like(z) / dfact
    acc = term.copy()
    x = -(z * z) / 2
    for k in range(1, terms):
        term = term * x / (k * (2 * n + 2 * k + 1))
        acc = acc + term
    return z**n * acc


def spherical_bessel_j(n: int, z):
    """Spherical Bessel function of the first kind for complex ``z``.

    Power series for ``|z| < n + 4`` (no cancellation issue there), otherwise
    ``(h_n^(1) + h_n^(2)) / 2`` from the closed-form Hankel sums.
    """
    _check_degree(n)
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < n + 4
    if small.any():
        out[small] = _j_series(n, z[small])
    big = ~small
    if big.any():
        zb = z[big]
        out[big] = 0.5 * (spherical_hankel_h1(n, zb) + _hankel_h2(n, zb))
    return out[()] if out.ndim == 0 else out


def mu_n(n: int, s):
    """Eigenvalue ``-s j_n(is) h_n^(1)(is)`` of the single-layer operator on degree-``n`` harmonics."""
    s = np.asarray(s, dtype=complex)
    if np.any(s == 0):
        raise ZeroDivisionError("mu_n is evaluated at s = 0; use the limit 1/(2n+1)")
    out = -s * spherical_bessel_j(n, 1j * s) * spherical_hankel_h1(n, 1j * s)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class SphereSymbol:
    """Transfer function ``s -> 1/mu_n(sqrt(s))`` of the degree-``n`` density equation."""

    n: int

    def __post_init__(self):
        _check_degree(self.n)

    def forward(self, s):
        """``mu_n(sqrt(s))`` (principal square root)."""
        return mu_n(self.n, np.sqrt(np.asarray(s, dtype=complex)))

    def __call__(self, s):
        return 1.0 / self.forward(s)


def default_psi(t):
    """``t^12 e^{-2t}``: twelve vanishing derivatives at ``t = 0``."""
    t = np.asarray(t, dtype=float)
    return t**12 * np.exp(-2.0 * t)


def vanishing_order(f: Callable, h: float = 1e-2, levels: int = 4) -> float:
    """Estimate the order of the zero of ``f`` at ``t = 0`` from ``f(h)/f(h/2)``."""
    hs = h / 2.0 ** np.arange(levels + 1)
    vals = np.abs(np.array([float(f(x)) for x in hs]))
    if np.all(vals == 0):
        return math.inf
    vals = np.maximum(vals, np.finfo(float).tiny)
    return float(np.min(np.log2(vals[:-1] / vals[1:])))


@dataclass
class HeatExperimentConfig:
    n: int = 2
    psi: Callable = default_psi
    T: float = 6.0
    tableau: ButcherTableau = field(default_factory=lambda: builtin_tableau("radau_iia_3"))
    ks: list = field(default_factory=lambda: [6.0 / 32, 6.0 / 64, 6.0 / 128, 6.0 / 256])
    reference_factor: int = 4

    def __post_init__(self):
        _check_degree(self.n)
        ks = list(self.ks)
        if any(b >= a for a, b in zip(ks, ks[1:])):
            raise ValueError("step sizes must be strictly decreasing")
        need = self.tableau.p + 3
        order = vanishing_order(self.psi)
        if order < need - 0.5:
            raise ValueError(
                f"psi vanishes only to order ~{order:.1f} at t=0; {self.tableau.name} needs {need}"
            )


def _n_steps(T: float, k: float) -> int:
    n = round(T / k)
    if abs(n * k - T) > 1e-9 * T:
        raise ValueError(f"step size {k} does not divide T={T}")
    return n


def solve_heat_density(cfg: HeatExperimentConfig, k: float) -> StageSequence:
    """Stage and step values of the discrete density ``Lambda^k`` on ``[0, T]``."""
    n_steps = _n_steps(cfg.T, k)
    ctx = CqContext(cfg.tableau, k, n_steps)
    g = sample_stages(cfg.tableau, k, n_steps, cfg.psi)
    return apply_transfer_function(ctx, SphereSymbol(cfg.n), g)


def _level_error(cfg: HeatExperimentConfig, k: float) -> tuple[float, float]:
    coarse = solve_heat_density(cfg, k).steps[:, 0]
    fine = solve_heat_density(cfg, k / cfg.reference_factor).steps[:, 0]
    return k, float(np.max(np.abs(coarse - fine[:: cfg.reference_factor])))


def run_heat_convergence(cfg: HeatExperimentConfig, workers: int = 0) -> ConvergenceReport:
    """Error of each level against the same method at ``k / reference_factor``.

    Levels whose error is below the roundoff floor are flagged and left out of
    the EOC median. ``workers > 1`` runs levels on a thread pool.
    """
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            levels = list(pool.map(lambda k: _level_error(cfg, k), cfg.ks))
    else:
        levels = [_level_error(cfg, k) for k in cfg.ks]
    return ConvergenceReport.from_levels(
        levels,
        quantity="density",
        method=cfg.tableau.name,
        floor=ROUNDOFF_FLOOR,
        metadata={
            "experiment": "heat-sphere",
            "degree": cfg.n,
            "T": cfg.T,
            "reference_factor": cfg.reference_factor,
            "psi": getattr(cfg.psi, "__name__", repr(cfg.psi)),
            "error": "max over common step times of |lambda^k_n - lambda^{k/4}_n|",
        },
    )
