"""Factor-once tridiagonal solves for complex Crank-Nicolson systems.

The Crank-Nicolson matrix is 1 + i a H with H real symmetric (or nearly so at
a Robin row), so its Hermitian part is the identity and elimination without
pivoting is stable. The kernels are compiled with numba and flush results
below ``TINY`` to zero inside the recurrences: Gaussian tails decaying through
the subnormal range otherwise slow the sweeps down roughly tenfold.
"""

import numba
import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import splu

from .errors import NumericalBreakdownError

TINY = 1e-250


@numba.njit(cache=True)
def _factor(lower, diag, upper):
    n = diag.size
    piv = np.empty(n, dtype=np.complex128)
    mult = np.empty(max(n - 1, 0), dtype=np.complex128)
    piv[0] = diag[0]
    for i in range(1, n):
        if piv[i - 1] == 0:
            return piv, mult, i
        mult[i - 1] = lower[i - 1] / piv[i - 1]
        piv[i] = diag[i] - mult[i - 1] * upper[i - 1]
    if piv[n - 1] == 0:
        return piv, mult, n
    return piv, mult, 0


@numba.njit(cache=True)
def _solve_vec(mult, inv_piv, upper, b):
    n = b.size
    for i in range(1, n):
        y = b[i] - mult[i - 1] * b[i - 1]
        if abs(y.real) < TINY and abs(y.imag) < TINY:
            y = 0j
        b[i] = y
    b[n - 1] *= inv_piv[n - 1]
    for i in range(n - 2, -1, -1):
        y = (b[i] - upper[i] * b[i + 1]) * inv_piv[i]
        if abs(y.real) < TINY and abs(y.imag) < TINY:
            y = 0j
        b[i] = y


@numba.njit(cache=True)
def _solve(mult, inv_piv, upper, b):
    # b: (n, k), solved in place
    n, k = b.shape
    for i in range(1, n):
        m = mult[i - 1]
        for c in range(k):
            y = b[i, c] - m * b[i - 1, c]
            if abs(y.real) < TINY and abs(y.imag) < TINY:
                y = 0j
            b[i, c] = y
    for c in range(k):
        b[n - 1, c] *= inv_piv[n - 1]
    for i in range(n - 2, -1, -1):
        u = upper[i]
        p = inv_piv[i]
        for c in range(k):
            y = (b[i, c] - u * b[i + 1, c]) * p
            if abs(y.real) < TINY and abs(y.imag) < TINY:
                y = 0j
            b[i, c] = y


class Tridiagonal:
    """Matrix with sub-, main and super-diagonal ``lower, diag, upper``.

    The LU factors are computed once; :meth:`solve` accepts a vector or a
    (n, k) block of right-hand sides.
    """

    def __init__(self, lower, diag, upper):
        self.lower = np.ascontiguousarray(lower, dtype=complex)
        self.diag = np.ascontiguousarray(diag, dtype=complex)
        self.upper = np.ascontiguousarray(upper, dtype=complex)
        n = self.diag.size
        if self.lower.size != n - 1 or self.upper.size != n - 1:
            raise ValueError("off-diagonals must have length n - 1")
        piv, mult, bad = _factor(self.lower, self.diag, self.upper)
        if bad:
            raise NumericalBreakdownError(f"zero pivot at row {bad - 1} in tridiagonal factorization")
        self._mult = mult
        self._inv = 1.0 / piv

    @property
    def n(self):
        return self.diag.size

    def matvec(self, x):
        x = np.asarray(x)
        shape = (-1,) + (1,) * (x.ndim - 1)
        y = self.diag.reshape(shape) * x
        y[:-1] += self.upper.reshape(shape) * x[1:]
        y[1:] += self.lower.reshape(shape) * x[:-1]
        return y

    def solve(self, b):
        x = np.array(b, dtype=complex, order="C")
        if x.ndim == 1 or x.shape[1] == 1:
            _solve_vec(self._mult, self._inv, self.upper, x.reshape(-1))
        else:
            _solve(self._mult, self._inv, self.upper, x)
        if not np.isfinite(x.sum()):
            raise NumericalBreakdownError("tridiagonal solve produced non-finite values")
        return x


class Cyclic:
    """Periodic tridiagonal matrix (corner couplings), sparse LU."""

    def __init__(self, lower, diag, upper):
        n = len(diag)
        self.diag = np.asarray(diag, dtype=complex)
        self.lower = np.asarray(lower, dtype=complex)
        self.upper = np.asarray(upper, dtype=complex)
        mat = diags([self.lower[1:], self.diag, self.upper[:-1]], [-1, 0, 1], shape=(n, n), format="lil")
        mat[0, n - 1] = self.lower[0]
        mat[n - 1, 0] = self.upper[-1]
        self._mat = mat.tocsc()
        self._lu = splu(self._mat)

    def matvec(self, x):
        return self._mat @ x

    def solve(self, b):
        x = self._lu.solve(np.asarray(b, dtype=complex))
        if not np.all(np.isfinite(x)):
            raise NumericalBreakdownError("cyclic solve produced non-finite values")
        return x
