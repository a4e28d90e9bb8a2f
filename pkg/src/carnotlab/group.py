"""Carnot group arithmetic in exponential coordinates of the first kind.

Points are coefficient vectors of their logarithm in the adapted basis, so the
identity is the zero vector, inversion is negation, and dilations act
diagonally.  Products are evaluated through the group's nilpotency step, which
makes every operation here exact up to floating-point roundoff.
"""

from __future__ import annotations

import math

import numpy as np

from .algebra import StratifiedAlgebra

# Taylor coefficients of w / (1 - exp(-w)), the inverse right-trivialized
# derivative of exp; the series stops at the nilpotency step.
_DEXPINV_COEFFS = np.array(
    [1.0, 0.5, 1.0 / 12.0, 0.0, -1.0 / 720.0, 0.0, 1.0 / 30240.0]
)


class CarnotGroup:
    """Group operations on top of a :class:`StratifiedAlgebra`."""

    def __init__(self, algebra: StratifiedAlgebra):
        self.algebra = algebra
        self._c = algebra.constants
        self._c_flat = np.ascontiguousarray(algebra.constants.reshape(algebra.n, -1))
        self._inv_factorial = np.array(
            [1.0 / math.factorial(k) for k in range(algebra.step)]
        )
        self._dexpinv = _DEXPINV_COEFFS[: algebra.step]

    @property
    def n(self) -> int:
        return self.algebra.n

    @property
    def step(self) -> int:
        return self.algebra.step

    @property
    def m1(self) -> int:
        return self.algebra.m1

    @property
    def degrees(self) -> np.ndarray:
        return self.algebra.degrees

    def __repr__(self) -> str:
        return f"<CarnotGroup over {self.algebra!r}>"

    def _point(self, g, label: str = "point") -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if g.shape != (self.n,):
            raise ValueError(f"{label} must have dimension {self.n}, got shape {g.shape}")
        return g

    def identity(self) -> np.ndarray:
        return np.zeros(self.n)

    def inverse(self, g) -> np.ndarray:
        return -self._point(g)

    # -- product ------------------------------------------------------------

    def _ad(self, x) -> np.ndarray:
        # matmul form of algebra.ad, kept local for the hot paths
        return (x @ self._c_flat).reshape(self.n, self.n).T

    def _poly_bracket(self, z, w):
        # bracket of two vector-valued polynomials in t, truncated at the
        # stored degree: coefficients past it vanish by nilpotency
        prod = np.einsum("pi,qj,ijk->pqk", z, w, self._c)
        out = np.zeros_like(w)
        top = w.shape[0] - 1
        for r in range(top + 1):
            for p in range(r + 1):
                out[r] += prod[p, r - p]
        return out

    def _log_product_poly(self, x, y) -> np.ndarray:
        """Polynomial coefficients in t of log(exp(x) exp(t y)).

        The curve solves a polynomial differential equation whose right-hand
        side is a finite dexpinv series, so it can be integrated exactly in
        the coefficient space.  Each sweep below fixes one more bracket
        length; lengths beyond the step vanish, hence ``step`` sweeps suffice.
        """
        s = self.step
        degree = s
        z = np.zeros((degree + 1, self.n))
        z[0] = x
        if degree >= 1:
            z[1] = y
        powers = np.arange(1, degree + 1)[:, None]
        for _ in range(s):
            w = np.zeros_like(z)
            w[0] = y
            rhs = self._dexpinv[0] * w
            for k in range(1, s):
                w = self._poly_bracket(z, w)
                if self._dexpinv[k]:
                    rhs = rhs + self._dexpinv[k] * w
            z_next = np.zeros_like(z)
            z_next[0] = x
            z_next[1:] = rhs[:degree] / powers
            z = z_next
        return z

    def multiply(self, g, h) -> np.ndarray:
        """Exp-coordinates of the product of two group elements."""
        x = self._point(g, "left factor")
        y = self._point(h, "right factor")
        return self._log_product_poly(x, y).sum(axis=0)

    # -- dilations ----------------------------------------------------------

    def dilate(self, tau: float, g) -> np.ndarray:
        """Dilation by ``tau``: coordinate i scales by tau**degree(i)."""
        g = self._point(g)
        return g * float(tau) ** self.degrees

    def dilation_field(self, g) -> np.ndarray:
        """Derivative of ``tau -> dilate(tau, g)`` at ``tau = 1``."""
        g = self._point(g)
        return self.degrees * g

    def dilation_field_coefficients(self, g) -> np.ndarray:
        """Coefficients of the dilation field over the right-invariant frame.

        Solves ``right_jacobian(g) @ p = dilation_field(g)``; the i-th
        coefficient is homogeneous of degree ``degrees[i]`` under dilations.
        """
        g = self._point(g)
        return np.linalg.solve(self.right_jacobian(g), self.dilation_field(g))

    # -- adjoint action and translation differentials -------------------------

    def _ad_powers(self, x) -> np.ndarray:
        pows = np.empty((self.step, self.n, self.n))
        pows[0] = np.eye(self.n)
        if self.step > 1:
            a = self._ad(x)
            pows[1] = a
            for k in range(2, self.step):
                pows[k] = pows[k - 1] @ a
        return pows

    def adjoint(self, g) -> np.ndarray:
        """Conjugation action on the algebra, as a matrix in the adapted basis."""
        x = self._point(g)
        return np.tensordot(self._inv_factorial, self._ad_powers(x), axes=1)

    def left_jacobian(self, g) -> np.ndarray:
        """Differential at the identity of ``h -> g * h``, in exp-coordinates."""
        x = self._point(g)
        return np.tensordot(self._dexpinv, self._ad_powers(x), axes=1)

    def right_jacobian(self, g) -> np.ndarray:
        """Differential at the identity of ``h -> h * g``.

        Computed from the left Jacobian and the adjoint of the inverse; both
        factors are unipotent, so the result is always invertible.
        """
        x = self._point(g)
        pows = self._ad_powers(x)
        left = np.tensordot(self._dexpinv, pows, axes=1)
        signs = (-1.0) ** np.arange(self.step)
        adj_inv = np.tensordot(self._inv_factorial * signs, pows, axes=1)
        return left @ adj_inv

    def frames(self, g) -> tuple[np.ndarray, np.ndarray]:
        """Adjoint matrix and left Jacobian at ``g``, sharing one power table."""
        x = self._point(g)
        pows = self._ad_powers(x)
        adj = np.tensordot(self._inv_factorial, pows, axes=1)
        left = np.tensordot(self._dexpinv, pows, axes=1)
        return adj, left

    # -- covectors and size gauges -------------------------------------------

    def covector_norm(self, lam) -> float:
        """Sum of absolute values of the covector on the adapted basis."""
        lam = self._point(lam, "covector")
        return float(np.abs(lam).sum())

    def covector_pairing(self, lam, g, w) -> float:
        """Value at ``g`` of the right-invariant extension of ``lam`` on tangent ``w``.

        ``w`` is a tangent vector at ``g`` expressed in exp-coordinates.
        """
        lam = self._point(lam, "covector")
        w = self._point(w, "tangent vector")
        return float(lam @ np.linalg.solve(self.right_jacobian(g), w))

    def quasinorm(self, g) -> float:
        """Homogeneous gauge max_i |g_i|^(1/degree(i)); scales linearly under dilations."""
        g = self._point(g)
        return float(np.max(np.abs(g) ** (1.0 / self.degrees)))
