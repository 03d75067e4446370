"""Small dense complex linear algebra and power-of-two FFTs.

Thin contract layer over LAPACK (via numpy) and numpy.fft: adds the
singularity/defectiveness diagnostics, deterministic eigenvalue ordering and
the power-of-two restriction the convolution quadrature driver relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tableau import SingularityError

__all__ = [
    "ComplexMatrix",
    "EigenDecomposition",
    "DefectiveMatrixError",
    "solve",
    "eig",
    "fft",
    "is_power_of_two",
    "next_power_of_two",
]

SOLVE_RCOND = 1e-14
EIG_RESIDUAL_TOL = 1e-10
DEFECTIVE_COND = 1e8


class DefectiveMatrixError(np.linalg.LinAlgError):
    """Eigenvector matrix too ill-conditioned to diagonalize reliably."""

    def __init__(self, msg: str, cond_estimate: float):
        super().__init__(msg)
        self.cond_estimate = cond_estimate


class ComplexMatrix(np.ndarray):
    """2-D complex array with finite entries.

    A plain ndarray subclass so it drops straight into numpy expressions;
    construction validates shape and finiteness.
    """

    def __new__(cls, data, rows: int | None = None, cols: int | None = None):
        arr = np.asarray(data, dtype=complex)
        if rows is not None and cols is not None:
            if arr.size != rows * cols:
                raise ValueError(f"expected {rows * cols} entries, got {arr.size}")
            arr = arr.reshape(rows, cols)
        if arr.ndim != 2:
            raise ValueError("ComplexMatrix must be two-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("ComplexMatrix entries must be finite")
        return arr.view(cls)

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]


@dataclass(frozen=True)
class EigenDecomposition:
    values: np.ndarray
    vectors: np.ndarray
    cond_estimate: float

    def reconstruct(self) -> np.ndarray:
        V = self.vectors
        return V @ np.diag(self.values) @ np.linalg.inv(V)


def solve(a, rhs):
    """Solve ``a x = rhs`` for square ``a``; ``rhs`` may be a vector or matrix.

    Raises :class:`SingularityError` carrying the smallest pivot magnitude
    (relative to the largest) when ``a`` is singular to working precision.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"solve needs a square matrix, got shape {a.shape}")
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0 or sv[-1] / sv[0] < SOLVE_RCOND:
        err = SingularityError(f"matrix is singular to working precision (pivot ratio {sv[-1] / max(sv[0], 1e-300):.3g})")
        err.pivot = float(sv[-1])
        raise err
    return np.linalg.solve(a, np.asarray(rhs, dtype=complex))


def _order(values: np.ndarray) -> np.ndarray:
    # round before comparing so the order is stable under last-bit noise
    key_re = np.round(values.real, 12)
    key_im = np.round(values.imag, 12)
    return np.lexsort((key_im, key_re))


def eig(a) -> EigenDecomposition:
    """Eigendecomposition of a small dense matrix (``n <= 16``).

    Eigenvalues are sorted by real part, then imaginary part; eigenvectors are
    normalized to unit 2-norm.
    """
    a = np.asarray(a, dtype=complex)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError(f"eig needs a square matrix, got shape {a.shape}")
    if n > 16:
        raise ValueError("eig is intended for matrices with n <= 16")
    try:
        w, V = np.linalg.eig(a)
    except np.linalg.LinAlgError as exc:  # LAPACK QR iteration did not converge
        raise np.linalg.LinAlgError(f"eigenvalue iteration failed to converge: {exc}") from exc
    idx = _order(w)
    w, V = w[idx], V[:, idx]
    V = V / np.linalg.norm(V, axis=0)
    cond = float(np.linalg.cond(V))
    if not np.isfinite(cond) or cond > DEFECTIVE_COND:
        raise DefectiveMatrixError(f"matrix is defective to working precision (cond(V)={cond:.3g})", cond)
    anorm = max(np.linalg.norm(a, 2), 1e-300)
    res = np.linalg.norm(a @ V - V * w, axis=0).max()
    if res > EIG_RESIDUAL_TOL * anorm:
        raise np.linalg.LinAlgError(f"eigenpair residual {res:.3g} exceeds tolerance")
    return EigenDecomposition(values=w, vectors=V, cond_estimate=max(cond, 1.0))


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def next_power_of_two(n: int) -> int:
    return 1 if n <= 1 else 1 << (int(n) - 1).bit_length()


def fft(x, direction: str = "forward", axis: int = 0) -> np.ndarray:
    """DFT along ``axis``: forward ``X_l = sum_j x_j e^{-2 pi i jl/N}``; inverse includes ``1/N``."""
    x = np.asarray(x, dtype=complex)
    N = x.shape[axis]
    if not is_power_of_two(N):
        raise ValueError(f"transform length must be a power of two, got {N}")
    if direction == "forward":
        return np.fft.fft(x, axis=axis)
    if direction == "inverse":
        return np.fft.ifft(x, axis=axis)
    raise ValueError(f"direction must be 'forward' or 'inverse', not {direction!r}")
