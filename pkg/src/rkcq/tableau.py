"""Runge-Kutta methods as data: Butcher tableaux, stability function, order checks.

Only fully implicit methods with an invertible coefficient matrix are
supported, since everything downstream (discrete derivative symbol,
convolution quadrature) needs ``Q^{-1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ButcherTableau",
    "MethodClassReport",
    "OrderResidual",
    "SingularityError",
    "BUILTIN_NAMES",
    "builtin_tableau",
    "validate_order_conditions",
    "order_failures",
    "stability_function",
    "r_infinity",
    "stability_polynomials",
    "classify_method",
]

ORDER_TOL = 1e-10
ALGEBRAIC_TOL = 1e-12
COND_CAP = 1e12


class SingularityError(ArithmeticError):
    """A linear solve hit a (numerically) singular matrix."""


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    """Coefficients ``(Q, b, c)`` of an implicit RK method with declared orders.

    ``q`` is the stage order and ``p`` the classical order.
    """

    name: str
    Q: np.ndarray
    b: np.ndarray
    c: np.ndarray
    q: int
    p: int
    _Qinv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float).reshape(-1)
        m = b.size
        if Q.shape != (m, m) or c.size != m:
            raise ValueError(f"inconsistent tableau shapes: Q{Q.shape}, b({b.size}), c({c.size})")
        if self.q < 1 or self.p < 1:
            raise ValueError("declared orders must be positive")
        cond = np.linalg.cond(Q)
        if not np.isfinite(cond) or cond > COND_CAP:
            raise SingularityError(f"coefficient matrix of {self.name!r} is singular (cond={cond:.3g})")
        if np.max(np.abs(Q.sum(axis=1) - c)) > ALGEBRAIC_TOL:
            raise ValueError(f"row sums of Q do not match c for {self.name!r}")
        for arr in (Q, b, c):
            arr.setflags(write=False)
        Qinv = np.linalg.inv(Q)
        Qinv.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "_Qinv", Qinv)

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def Qinv(self) -> np.ndarray:
        return self._Qinv

    @property
    def bQinv(self) -> np.ndarray:
        """The row vector ``b^T Q^{-1}``."""
        return self.b @ self._Qinv

    @property
    def r_inf(self) -> float:
        return r_infinity(self)

    @property
    def stiffly_accurate(self) -> bool:
        e_m = np.zeros(self.m)
        e_m[-1] = 1.0
        return bool(np.max(np.abs(self.bQinv - e_m)) <= ALGEBRAIC_TOL)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "m": self.m,
            "Q": self.Q.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "q": self.q,
            "p": self.p,
        }


# Radau IIA coefficients for m = 3, 5. Construction: c are the zeros of
# d^{m-1}/dx^{m-1} [x^{m-1} (x-1)^m] on [0, 1]; Q_ij = int_0^{c_i} L_j,
# b_j = int_0^1 L_j with L_j the Lagrange basis on c (50-digit mpmath,
# rounded to double). tests/test_tableau.py rebuilds them independently.
_RADAU3_C = [0.1550510257216822, 0.6449489742783178, 1.0]
_RADAU3_B = [0.37640306270046725, 0.5124858261884216, 0.1111111111111111]
_RADAU3_Q = [
    [0.1968154772236604, -0.06553542585019839, 0.02377097434822015],
    [0.3944243147390873, 0.2920734116652285, -0.04154875212599793],
    [0.37640306270046725, 0.5124858261884216, 0.1111111111111111],
]

_RADAU5_C = [0.05710419611451768, 0.2768430136381238, 0.5835904323689168, 0.8602401356562195, 1.0]
_RADAU5_B = [0.14371356079122594, 0.28135601514946207, 0.31182652297574126, 0.22310390108357075, 0.04]
_RADAU5_Q = [
    [0.07299886431790333, -0.02673533110794557, 0.018676929763984353, -0.01287910609330644, 0.005042839233882015],
    [0.15377523147918246, 0.14621486784749352, -0.03644456890512809, 0.02123306311930472, -0.007935579902728777],
    [0.14006304568480987, 0.29896712949128346, 0.16758507013524895, -0.03396910168661774, 0.010944288744192253],
    [0.14489430810953477, 0.2765000687601592, 0.32579792291042103, 0.12875675325490976, -0.015708917378805327],
    [0.14371356079122594, 0.28135601514946207, 0.31182652297574126, 0.22310390108357075, 0.04],
]

_S3 = math.sqrt(3.0)


def _make(name: str) -> ButcherTableau:
    if name == "radau_iia_1":
        return ButcherTableau(name, [[1.0]], [1.0], [1.0], q=1, p=1)
    if name == "radau_iia_2":
        return ButcherTableau(
            name, [[5 / 12, -1 / 12], [3 / 4, 1 / 4]], [3 / 4, 1 / 4], [1 / 3, 1.0], q=2, p=3
        )
    if name == "radau_iia_3":
        return ButcherTableau(name, _RADAU3_Q, _RADAU3_B, _RADAU3_C, q=3, p=5)
    if name == "radau_iia_5":
        return ButcherTableau(name, _RADAU5_Q, _RADAU5_B, _RADAU5_C, q=5, p=9)
    if name == "gauss_1":
        return ButcherTableau(name, [[0.5]], [1.0], [0.5], q=1, p=2)
    if name == "gauss_2":
        return ButcherTableau(
            name,
            [[0.25, 0.25 - _S3 / 6], [0.25 + _S3 / 6, 0.25]],
            [0.5, 0.5],
            [0.5 - _S3 / 6, 0.5 + _S3 / 6],
            q=2,
            p=4,
        )
    if name == "lobatto_iiic_2":
        return ButcherTableau(name, [[0.5, -0.5], [0.5, 0.5]], [0.5, 0.5], [0.0, 1.0], q=1, p=2)
    raise KeyError(f"unknown method {name!r}; choose one of {', '.join(BUILTIN_NAMES)}")


BUILTIN_NAMES = (
    "radau_iia_1",
    "radau_iia_2",
    "radau_iia_3",
    "radau_iia_5",
    "gauss_1",
    "gauss_2",
    "lobatto_iiic_2",
)

_CACHE: dict[str, ButcherTableau] = {}


def builtin_tableau(name: str) -> ButcherTableau:
    """Return one of the built-in methods listed in ``BUILTIN_NAMES``."""
    if name not in _CACHE:
        _CACHE[name] = _make(name)
    return _CACHE[name]


@dataclass(frozen=True)
class OrderResidual:
    kind: str  # "stage" or "order"
    j: int
    ell: int
    residual: float

    @property
    def label(self) -> str:
        if self.kind == "stage":
            return f"c^{self.ell} = {self.ell} Q c^{self.ell - 1}"
        return f"b^T Q^{self.j} c^{self.ell} = {self.ell}!/{self.j + self.ell + 1}!"


def validate_order_conditions(t: ButcherTableau, q: int | None = None, p: int | None = None) -> list[OrderResidual]:
    """Residuals of the stage-order and simplified order conditions.

    Stage conditions ``c^l = l Q c^{l-1}`` for ``1 <= l <= q``;
    quadrature conditions ``b^T Q^j c^l = l!/(j+l+1)!`` for ``0 <= j+l <= p-1``.
    Defaults to the declared orders of ``t``.
    """
    q = t.q if q is None else q
    p = t.p if p is None else p
    out = []
    for ell in range(1, q + 1):
        res = t.c**ell - ell * (t.Q @ t.c ** (ell - 1))
        out.append(OrderResidual("stage", 0, ell, float(np.max(np.abs(res)))))
    for total in range(p):
        for j in range(total + 1):
            ell = total - j
            lhs = t.b @ np.linalg.matrix_power(t.Q, j) @ t.c**ell
            rhs = math.factorial(ell) / math.factorial(j + ell + 1)
            out.append(OrderResidual("order", j, ell, float(abs(lhs - rhs))))
    return out


def order_failures(residuals: list[OrderResidual], tol: float = ORDER_TOL) -> list[OrderResidual]:
    return [r for r in residuals if not r.residual <= tol]


def stability_function(t: ButcherTableau, z: complex) -> complex:
    """``r(z) = 1 + z b^T (I - zQ)^{-1} 1``."""
    if z == 0:
        return 1.0 + 0.0j
    M = np.eye(t.m) - z * t.Q
    if np.linalg.cond(M) > COND_CAP:
        raise SingularityError(f"I - zQ is singular at z={z} (pole of r)")
    y = np.linalg.solve(M, np.ones(t.m, dtype=complex))
    return complex(1.0 + z * (t.b @ y))


def r_infinity(t: ButcherTableau) -> float:
    """``r(inf) = 1 - b^T Q^{-1} 1``."""
    return float(1.0 - t.bQinv.sum())


def stability_polynomials(t: ButcherTableau) -> tuple[np.ndarray, np.ndarray]:
    """Numerator and denominator of ``r`` as ascending coefficient arrays.

    ``den(z) = det(I - zQ)``, ``num(z) = det(I - zQ + z 1 b^T)``.
    """
    # np.poly gives det(lambda I - M) descending in lambda, which is
    # det(I - zM) ascending in z
    den = np.poly(t.Q)
    num = np.poly(t.Q - np.outer(np.ones(t.m), t.b))
    return np.real(num), np.real(den)


@dataclass(frozen=True)
class MethodClassReport:
    a_stable: bool
    max_abs_r_imag: float
    poles_in_right_half_plane: bool
    assumption_1_3: bool
    stiffly_accurate: bool
    r_at_infinity: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def imag_axis_grid(t_min: float = 1e-3, t_max: float = 1e6, n: int = 400) -> np.ndarray:
    """Symmetric log grid on the imaginary axis, including ``t = 0``."""
    pos = np.logspace(np.log10(t_min), np.log10(t_max), n)
    return np.concatenate([-pos[::-1], [0.0], pos])


def _imag_axis_defect(t: ButcherTableau):
    """Coefficients of ``E(y) = |den(iy)|^2 - |num(iy)|^2`` in powers of ``y``.

    ``|r(iy)| < 1`` for ``y != 0`` iff ``E(y) > 0`` there.
    """
    num, den = stability_polynomials(t)
    P = np.polynomial.Polynomial
    powers = 1j ** np.arange(t.m + 1)
    pn, pd = num * powers, den * powers
    E = P(pd) * P(np.conj(pd)) - P(pn) * P(np.conj(pn))
    return np.real(E.coef)


def classify_method(t: ButcherTableau, grid: np.ndarray | None = None, tol: float = ALGEBRAIC_TOL) -> MethodClassReport:
    """Sample-based A-stability evidence plus the strict imaginary-axis contraction test.

    Strictness ``|r(it)| < 1`` cannot be resolved by sampling near ``t = 0``
    (the deficit is ``O(t^{2p+2})``), so it is decided on the even polynomial
    ``E(y)``: after stripping its lowest vanishing powers, the remaining
    factor must be positive on the grid.
    """
    grid = imag_axis_grid() if grid is None else np.asarray(grid, dtype=float)
    vals = np.array([abs(stability_function(t, 1j * s)) for s in grid])
    max_r = float(vals.max())
    poles_ok = bool(np.all(np.linalg.eigvals(t.Q).real > 0))
    a_stable = poles_ok and max_r <= 1 + tol

    E = _imag_axis_defect(t)
    scale = max(1.0, float(np.max(np.abs(E))))
    E = np.where(np.abs(E) <= tol * scale, 0.0, E)
    nz = np.flatnonzero(E)
    r_inf = r_infinity(t)
    if nz.size == 0:
        strict = False
    else:
        reduced = np.polynomial.Polynomial(E[nz[0]:])
        t_pos = grid[grid != 0]
        strict = bool(E[nz[0]] > 0 and np.all(reduced(t_pos) > 0))
    assumption_1_3 = a_stable and strict and r_inf < 1
    return MethodClassReport(
        a_stable=a_stable,
        max_abs_r_imag=max_r,
        poles_in_right_half_plane=poles_ok,
        assumption_1_3=assumption_1_3,
        stiffly_accurate=t.stiffly_accurate,
        r_at_infinity=r_inf,
    )
