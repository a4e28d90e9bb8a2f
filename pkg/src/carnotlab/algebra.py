"""Stratified Lie algebras presented by structure constants in an adapted basis."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Group arithmetic downstream evaluates exp-coordinate products by series that
# are tuned for low nilpotency steps; this library is desk scale by design.
MAX_STEP = 6


class AlgebraValidationError(ValueError):
    """An algebra definition violates the stratification axioms."""


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the per-axiom checks, with the first counterexample on failure."""

    checks: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self) -> str:
        lines = []
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            suffix = f"  ({c.detail})" if c.detail else ""
            lines.append(f"  {c.name:<14} {status}{suffix}")
        return "\n".join(lines)


class StratifiedAlgebra:
    """A graded nilpotent Lie algebra in a basis adapted to the grading.

    The first ``strata_dims[0]`` basis vectors span the first stratum, the next
    ``strata_dims[1]`` the second, and so on.  ``constants[i, j, k]`` is the
    coefficient of basis vector ``k`` in the bracket of basis vectors ``i`` and
    ``j``.  Constants are stored dense; dimensions stay small here.
    """

    def __init__(self, strata_dims, constants, name: str = ""):
        self.strata_dims = tuple(int(m) for m in strata_dims)
        if not self.strata_dims or any(m <= 0 for m in self.strata_dims):
            raise ValueError("strata dimensions must be positive integers")
        self.step = len(self.strata_dims)
        if self.step > MAX_STEP:
            raise ValueError(
                f"nilpotency step {self.step} exceeds the supported maximum {MAX_STEP}"
            )
        self.n = int(sum(self.strata_dims))
        self.m1 = self.strata_dims[0]
        self.name = name

        self.constants = np.array(constants, dtype=float)
        if self.constants.shape != (self.n, self.n, self.n):
            raise ValueError(
                f"structure constants must have shape {(self.n,) * 3}, "
                f"got {self.constants.shape}"
            )
        if not np.isfinite(self.constants).all():
            raise ValueError("structure constants must be finite")

        # degree d_i = j  iff  dim(V_1)+...+dim(V_{j-1}) < i <= dim(V_1)+...+dim(V_j)
        self.degrees = np.repeat(np.arange(1, self.step + 1), self.strata_dims)
        self.constants.setflags(write=False)
        self.degrees.setflags(write=False)

    def __repr__(self) -> str:
        label = self.name or "StratifiedAlgebra"
        return f"<{label}: n={self.n}, strata={self.strata_dims}>"

    def stratum_slice(self, j: int) -> slice:
        """Index range of the j-th stratum (1-based)."""
        if not 1 <= j <= self.step:
            raise ValueError(f"stratum index {j} out of range 1..{self.step}")
        start = sum(self.strata_dims[: j - 1])
        return slice(start, start + self.strata_dims[j - 1])

    def _check_vector(self, x, label: str = "vector") -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"{label} must have dimension {self.n}, got shape {x.shape}")
        return x

    def bracket(self, x, y) -> np.ndarray:
        """Lie bracket of two coefficient vectors."""
        x = self._check_vector(x, "first argument")
        y = self._check_vector(y, "second argument")
        return np.einsum("i,j,ijk->k", x, y, self.constants)

    def ad(self, x) -> np.ndarray:
        """Matrix of the adjoint action ``y -> [x, y]``; nilpotent by grading."""
        x = self._check_vector(x)
        return np.einsum("i,ijk->kj", x, self.constants)

    # -- validation ---------------------------------------------------------

    def validate(self, tol: float = 1e-12) -> ValidationReport:
        """Check antisymmetry, Jacobi, grading, generation and nilpotency.

        Failures are reported with the first offending (1-based) index triple.
        """
        checks = (
            self._check_antisymmetry(tol),
            self._check_jacobi(tol),
            self._check_grading(tol),
            self._check_generation(tol),
            self._check_nilpotency(tol),
        )
        return ValidationReport(checks)

    def _check_antisymmetry(self, tol):
        res = np.abs(self.constants + self.constants.transpose(1, 0, 2))
        if res.max() <= tol:
            return CheckResult("antisymmetry", True)
        i, j, k = np.unravel_index(np.argmax(res), res.shape)
        return CheckResult(
            "antisymmetry", False,
            f"c[{i + 1},{j + 1}]^{k + 1} + c[{j + 1},{i + 1}]^{k + 1} = {res[i, j, k]:.3g}",
        )

    def _check_jacobi(self, tol):
        c = self.constants
        # residual of [x_i,[x_j,x_k]] + [x_j,[x_k,x_i]] + [x_k,[x_i,x_j]] per basis triple
        t1 = np.einsum("jkm,iml->ijkl", c, c)
        t2 = np.einsum("kim,jml->ijkl", c, c)
        t3 = np.einsum("ijm,kml->ijkl", c, c)
        res = np.abs(t1 + t2 + t3).max(axis=3)
        if res.max() <= tol:
            return CheckResult("jacobi", True)
        i, j, k = np.unravel_index(np.argmax(res), res.shape)
        return CheckResult(
            "jacobi", False,
            f"residual {res[i, j, k]:.3g} at triple ({i + 1},{j + 1},{k + 1})",
        )

    def _check_grading(self, tol):
        d = self.degrees
        allowed = d[:, None, None] + d[None, :, None] == d[None, None, :]
        bad = np.abs(np.where(allowed, 0.0, self.constants))
        if bad.max() <= tol:
            return CheckResult("grading", True)
        i, j, k = np.unravel_index(np.argmax(bad), bad.shape)
        return CheckResult(
            "grading", False,
            f"c[{i + 1},{j + 1}]^{k + 1} = {self.constants[i, j, k]:.3g} "
            f"but degrees are {d[i]}+{d[j]} -> {d[k]}",
        )

    def _check_generation(self, tol):
        d = self.degrees
        for j in range(1, self.step):
            rows = []
            target = self.stratum_slice(j + 1)
            for i in np.nonzero(d == 1)[0]:
                for b in np.nonzero(d == j)[0]:
                    rows.append(self.constants[i, b, target])
            rank = np.linalg.matrix_rank(np.array(rows), tol=max(tol, 1e-10))
            want = self.strata_dims[j]
            if rank < want:
                return CheckResult(
                    "generation", False,
                    f"brackets of strata 1 and {j} span rank {rank} < dim V_{j + 1} = {want}",
                )
        return CheckResult("generation", True)

    def _check_nilpotency(self, tol):
        d = self.degrees
        deep = d[:, None, None] + d[None, :, None] > self.step
        bad = np.abs(np.where(deep, self.constants, 0.0))
        if bad.max() <= tol:
            return CheckResult("nilpotency", True)
        i, j, k = np.unravel_index(np.argmax(bad), bad.shape)
        return CheckResult(
            "nilpotency", False,
            f"bracket of total degree {d[i] + d[j]} > step at ({i + 1},{j + 1},{k + 1})",
        )

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        """Round-trippable description: strata plus a sparse 1-based bracket table."""
        brackets = {}
        for i, j in itertools.combinations(range(self.n), 2):
            entries = [
                [int(k) + 1, float(self.constants[i, j, k])]
                for k in np.nonzero(self.constants[i, j])[0]
            ]
            if entries:
                brackets[f"{i + 1},{j + 1}"] = entries
        return {"strata": list(self.strata_dims), "brackets": brackets}

    @classmethod
    def from_dict(cls, data: dict, name: str = "", validate: bool = True):
        if "strata" not in data:
            raise ValueError("algebra definition must contain a 'strata' list")
        strata = data["strata"]
        n = int(sum(strata))
        c = np.zeros((n, n, n))
        for key, entries in data.get("brackets", {}).items():
            parts = key.replace(" ", "").split(",")
            if len(parts) != 2:
                raise ValueError(f"bracket key {key!r} is not of the form 'i,j'")
            i, j = int(parts[0]), int(parts[1])
            if not (1 <= i < j <= n):
                raise ValueError(f"bracket key {key!r} must satisfy 1 <= i < j <= {n}")
            for k, coeff in entries:
                k = int(k)
                if not 1 <= k <= n:
                    raise ValueError(f"bracket target {k} out of range in key {key!r}")
                c[i - 1, j - 1, k - 1] = float(coeff)
                c[j - 1, i - 1, k - 1] = -float(coeff)
        algebra = cls(strata, c, name=name)
        if validate:
            report = algebra.validate()
            if not report.ok:
                raise AlgebraValidationError(
                    f"algebra {name or '<unnamed>'} fails validation:\n{report}"
                )
        return algebra

    @classmethod
    def from_file(cls, path, validate: bool = True):
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_dict(data, name=path.stem, validate=validate)


# -- built-in algebras ------------------------------------------------------


def heisenberg_algebra() -> StratifiedAlgebra:
    """Three-dimensional algebra with strata (2, 1) and [x1, x2] = x3."""
    c = np.zeros((3, 3, 3))
    c[0, 1, 2] = 1.0
    c[1, 0, 2] = -1.0
    return StratifiedAlgebra((2, 1), c, name="heisenberg")


def filiform_algebra(step: int) -> StratifiedAlgebra:
    """Filiform algebra of the given step: strata (2, 1, ..., 1).

    Basis x1, y1, ..., y_step with the chain [x1, y_i] = y_{i+1} as the only
    non-trivial brackets.  Step 2 coincides with the Heisenberg algebra.
    """
    if not 2 <= step <= MAX_STEP:
        raise ValueError(f"filiform step must be in 2..{MAX_STEP}, got {step}")
    n = step + 1
    c = np.zeros((n, n, n))
    for i in range(1, step):
        c[0, i, i + 1] = 1.0
        c[i, 0, i + 1] = -1.0
    return StratifiedAlgebra((2,) + (1,) * (step - 1), c, name=f"filiform{step}")


def free_step2_algebra(rank: int = 3) -> StratifiedAlgebra:
    """Free nilpotent algebra of step 2 on ``rank`` generators."""
    if rank < 2:
        raise ValueError("rank must be at least 2")
    pairs = list(itertools.combinations(range(rank), 2))
    n = rank + len(pairs)
    c = np.zeros((n, n, n))
    for k, (i, j) in enumerate(pairs):
        c[i, j, rank + k] = 1.0
        c[j, i, rank + k] = -1.0
    return StratifiedAlgebra((rank, len(pairs)), c, name=f"free-step2-rank{rank}")


BUILTIN_ALGEBRAS = {
    "heisenberg": heisenberg_algebra,
    "filiform2": lambda: filiform_algebra(2),
    "filiform3": lambda: filiform_algebra(3),
    "filiform4": lambda: filiform_algebra(4),
    "filiform5": lambda: filiform_algebra(5),
    "filiform6": lambda: filiform_algebra(6),
    "free-step2-rank3": lambda: free_step2_algebra(3),
}


def builtin_algebra(name: str) -> StratifiedAlgebra:
    try:
        return BUILTIN_ALGEBRAS[name]()
    except KeyError:
        known = ", ".join(sorted(BUILTIN_ALGEBRAS))
        raise ValueError(f"unknown algebra {name!r}; built-ins: {known}") from None


def load_algebra(source) -> StratifiedAlgebra:
    """Resolve a built-in name or a JSON definition file."""
    source = str(source)
    if source in BUILTIN_ALGEBRAS:
        return builtin_algebra(source)
    path = Path(source)
    if path.exists():
        return StratifiedAlgebra.from_file(path)
    raise ValueError(f"{source!r} is neither a built-in algebra nor an existing file")
