"""Norms on the horizontal stratum and the normal-equation control rule.

A normal curve is driven by the control that the curve's covector selects
through the energy subdifferential.  For a norm ``|.|`` with energy
``E = 0.5 |.|^2``, a functional ``a`` belongs to the subdifferential of ``E``
at ``v`` exactly when ``a(v) = |v|^2`` and the dual norm of ``a`` equals
``|v|``; inverting that relation gives the control as a point of the unit-ball
face exposed by the functional, scaled by its dual norm.
"""

from __future__ import annotations

import itertools

import numpy as np

# functionals smaller than this are treated as zero and map to the zero control
ZERO_FUNCTIONAL_TOL = 1e-14


class NormSpec:
    """A norm on the first stratum, with its dual and control selection."""

    kind = "abstract"

    def __init__(self, dim: int):
        self.dim = int(dim)
        if self.dim < 1:
            raise ValueError("norm dimension must be positive")

    def _vec(self, v, label="vector") -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"{label} must have dimension {self.dim}, got shape {v.shape}")
        return v

    def norm(self, v) -> float:
        raise NotImplementedError

    def norm_rows(self, w: np.ndarray) -> np.ndarray:
        """Norm of each row of a (k, dim) array."""
        raise NotImplementedError

    def dual_norm(self, a) -> float:
        raise NotImplementedError

    def energy(self, v) -> float:
        """Half the squared norm; homogeneous of degree two."""
        return 0.5 * self.norm(v) ** 2

    def control_from_dual(self, eta) -> np.ndarray:
        """The control selected by a functional through the energy subdifferential.

        Non-smooth norms expose a face rather than a point; the selection is
        the arithmetic mean of the face's vertices, which makes the rule
        deterministic.  A functional below ``ZERO_FUNCTIONAL_TOL`` gives the
        zero control.
        """
        raise NotImplementedError

    def to_config(self) -> dict:
        return {"kind": self.kind}

    def __eq__(self, other):
        return isinstance(other, NormSpec) and self.to_config() == other.to_config() \
            and self.dim == other.dim

    def __repr__(self):
        return f"<{type(self).__name__} dim={self.dim}>"


class EuclideanNorm(NormSpec):
    kind = "euclidean"

    def norm(self, v):
        return float(np.linalg.norm(self._vec(v)))

    def norm_rows(self, w):
        return np.linalg.norm(np.asarray(w, dtype=float), axis=1)

    def dual_norm(self, a):
        return float(np.linalg.norm(self._vec(a, "functional")))

    def control_from_dual(self, eta):
        eta = self._vec(eta, "functional")
        if np.abs(eta).max() <= ZERO_FUNCTIONAL_TOL:
            return np.zeros(self.dim)
        return eta.copy()


class L1Norm(NormSpec):
    kind = "l1"

    def norm(self, v):
        return float(np.abs(self._vec(v)).sum())

    def norm_rows(self, w):
        return np.abs(np.asarray(w, dtype=float)).sum(axis=1)

    def dual_norm(self, a):
        return float(np.abs(self._vec(a, "functional")).max())

    def control_from_dual(self, eta):
        eta = self._vec(eta, "functional")
        amax = np.abs(eta).max()
        if amax <= ZERO_FUNCTIONAL_TOL:
            return np.zeros(self.dim)
        # exposed face of the cross-polytope: signed vertices of the maximal entries
        on_face = np.abs(eta) >= amax * (1.0 - 1e-12)
        u = np.where(on_face, np.sign(eta), 0.0) / on_face.sum()
        return amax * u


class LinftyNorm(NormSpec):
    kind = "linfty"

    def norm(self, v):
        return float(np.abs(self._vec(v)).max())

    def norm_rows(self, w):
        return np.abs(np.asarray(w, dtype=float)).max(axis=1)

    def dual_norm(self, a):
        return float(np.abs(self._vec(a, "functional")).sum())

    def control_from_dual(self, eta):
        eta = self._vec(eta, "functional")
        if np.abs(eta).max() <= ZERO_FUNCTIONAL_TOL:
            return np.zeros(self.dim)
        # cube face exposed by eta; zero entries average out over the face vertices
        return self.dual_norm(eta) * np.sign(eta)


class PolyhedralNorm(NormSpec):
    """Norm given as the maximum of finitely many facet functionals.

    The facet set must be symmetric (closed under negation) and span the
    stratum, which makes the maximum a genuine norm.  The unit ball's
    vertices are enumerated once at construction; they realize the dual norm
    and the face selection exactly at these small dimensions.
    """

    kind = "polyhedral"

    def __init__(self, facets):
        facets = np.asarray(facets, dtype=float)
        if facets.ndim != 2 or facets.shape[0] < 2:
            raise ValueError("facets must be a (count, dim) array with count >= 2")
        super().__init__(facets.shape[1])
        self.facets = facets
        self._validate_facets()
        self.vertices = self._ball_vertices()
        if len(self.vertices) == 0:
            raise ValueError("facet set does not bound a polytope")

    def _validate_facets(self):
        for a in self.facets:
            dist = np.abs(self.facets + a).max(axis=1).min()
            if dist > 1e-12:
                raise ValueError("facet set must be symmetric: missing the negation of some facet")
        if np.linalg.matrix_rank(self.facets, tol=1e-10) < self.dim:
            raise ValueError("facet functionals must span the stratum")

    def _ball_vertices(self) -> np.ndarray:
        count = len(self.facets)
        verts = {}
        for combo in itertools.combinations(range(count), self.dim):
            a = self.facets[list(combo)]
            try:
                v = np.linalg.solve(a, np.ones(self.dim))
            except np.linalg.LinAlgError:
                continue
            if not np.isfinite(v).all():
                continue
            if (self.facets @ v <= 1.0 + 1e-9).all():
                # deduplicate on a rounded key but keep the precise solution
                verts.setdefault(tuple(np.round(v, 9)), v)
        if not verts:
            return np.empty((0, self.dim))
        return np.array([verts[key] for key in sorted(verts)])

    def norm(self, v):
        return float(np.max(self.facets @ self._vec(v)))

    def norm_rows(self, w):
        return (np.asarray(w, dtype=float) @ self.facets.T).max(axis=1)

    def dual_norm(self, a):
        return float(np.max(self.vertices @ self._vec(a, "functional")))

    def control_from_dual(self, eta):
        eta = self._vec(eta, "functional")
        if np.abs(eta).max() <= ZERO_FUNCTIONAL_TOL:
            return np.zeros(self.dim)
        values = self.vertices @ eta
        vmax = values.max()
        face = self.vertices[values >= vmax * (1.0 - 1e-12)]
        return vmax * face.mean(axis=0)

    def to_config(self):
        return {"kind": self.kind, "facets": self.facets.tolist()}


_NORM_KINDS = {
    "euclidean": EuclideanNorm,
    "l1": L1Norm,
    "linfty": LinftyNorm,
}


def make_norm(spec, dim: int) -> NormSpec:
    """Build a norm from a kind string or a config mapping."""
    if isinstance(spec, NormSpec):
        if spec.dim != dim:
            raise ValueError(f"norm has dimension {spec.dim}, expected {dim}")
        return spec
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    if kind == "polyhedral":
        norm = PolyhedralNorm(spec["facets"])
        if norm.dim != dim:
            raise ValueError(f"polyhedral facets have dimension {norm.dim}, expected {dim}")
        return norm
    if kind not in _NORM_KINDS:
        known = ", ".join(sorted(_NORM_KINDS) + ["polyhedral"])
        raise ValueError(f"unknown norm kind {kind!r}; expected one of: {known}")
    return _NORM_KINDS[kind](dim)


def in_subdifferential(ns: NormSpec, a, v, tol: float) -> bool:
    """Membership of ``a`` in the subdifferential of the energy at ``v``.

    Uses the dual characterization: ``a(v) = |v|^2`` and ``dual(a) = |v|``,
    each tested within ``tol`` absolutely.
    """
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    a = ns._vec(a, "functional")
    v = ns._vec(v)
    nv = ns.norm(v)
    return abs(float(a @ v) - nv**2) <= tol and abs(ns.dual_norm(a) - nv) <= tol


def subdifferential_brute_check(
    ns: NormSpec, a, v, radius: float = 3.0, grid_step: float = 0.05, slack: float = 1e-9
) -> bool:
    """Check the defining inequality ``a(w - v) <= E(w) - E(v)`` on a grid.

    Independent of the dual characterization; quadratic in the grid size, so
    meant for low dimensions and tests.
    """
    a = ns._vec(a, "functional")
    v = ns._vec(v)
    axis = np.arange(-radius, radius + grid_step / 2, grid_step)
    grids = np.meshgrid(*([axis] * ns.dim), indexing="ij")
    w = np.stack([g.ravel() for g in grids], axis=1)
    energies = 0.5 * ns.norm_rows(w) ** 2
    violations = (w - v) @ a - energies + ns.energy(v)
    return float(violations.max()) <= slack


def extract_control(group, ns: NormSpec, lam, g) -> np.ndarray:
    """Control value selected by the covector ``lam`` at the point ``g``.

    Pushes the covector through the adjoint action, restricts it to the first
    stratum and applies the norm's selection rule.  The result ``u`` always
    satisfies ``eta(u) = |u|^2`` for the restricted functional ``eta``.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (group.n,):
        raise ValueError(f"covector must have dimension {group.n}, got shape {lam.shape}")
    eta = (lam @ group.adjoint(g))[: group.m1]
    return ns.control_from_dual(eta)


def restricted_functional(group, lam, g) -> np.ndarray:
    """First-stratum restriction of the covector pushed to ``g`` by the adjoint."""
    lam = np.asarray(lam, dtype=float)
    return (lam @ group.adjoint(g))[: group.m1]


def rescale_covector(lam, alpha: float) -> np.ndarray:
    """Covector for the same curve traversed ``alpha`` times faster."""
    if not alpha > 0:
        raise ValueError(f"scale factor must be positive, got {alpha}")
    return np.asarray(lam, dtype=float) * float(alpha)
