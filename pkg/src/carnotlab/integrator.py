"""Normal-curve integration, the end-point map and the energy identity.

The normal flow is an autonomous ODE in exp-coordinates: the velocity at a
point is the left-translation of the control that the covector selects there.
A classical fourth-order one-step scheme is used; the coordinates form a
single global chart, so no structure-preserving stepper is needed and the
order is certified against a closed-form curve in the tests.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .control import NormSpec, extract_control
from .group import CarnotGroup


class IntegrationError(RuntimeError):
    """State became non-finite; carries the last valid time."""

    def __init__(self, message: str, t_last: float, state=None):
        super().__init__(message)
        self.t_last = t_last
        self.state = state


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class ControlSignal:
    """Control values on a uniform grid over [0, 1], piecewise linear in time."""

    values: np.ndarray  # (nodes, dim)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] < 2:
            raise ValueError("a control signal needs at least two grid nodes")

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_nodes)

    def at(self, t: float) -> np.ndarray:
        """Value at time ``t`` by linear interpolation, clamped to [0, 1]."""
        pos = min(max(float(t), 0.0), 1.0) * (self.n_nodes - 1)
        lo = min(int(pos), self.n_nodes - 2)
        frac = pos - lo
        return (1.0 - frac) * self.values[lo] + frac * self.values[lo + 1]

    def l2_norm(self) -> float:
        return float(np.sqrt(np.trapezoid((self.values**2).sum(axis=1), self.grid)))

    def scaled(self, tau: float) -> "ControlSignal":
        return ControlSignal(self.values * float(tau))

    def combined(self, other: "ControlSignal", weight: float) -> "ControlSignal":
        """Signal ``self + weight * other``; grids must match node for node."""
        if other.values.shape != self.values.shape:
            raise ValueError("control signals must share the same grid to be combined")
        return ControlSignal(self.values + float(weight) * other.values)


@dataclass
class GeodesicTrace:
    """Sampled normal curve with its control signal and diagnostics."""

    group: CarnotGroup
    norm: NormSpec
    covector: np.ndarray
    g0: np.ndarray
    h: float
    ts: np.ndarray            # (k+1,)
    points: np.ndarray        # (k+1, n)
    controls: np.ndarray      # (k+1, m1)
    local_errors: np.ndarray | None = None  # (k,) step-doubling estimates, on request

    @property
    def T(self) -> float:
        return float(self.ts[-1])

    def speeds(self) -> np.ndarray:
        return self.norm.norm_rows(self.controls)

    def quasinorms(self) -> np.ndarray:
        return np.array([self.group.quasinorm(g) for g in self.points])

    def control_energy(self) -> float:
        """Trapezoid quadrature of the squared speed over the trace."""
        return float(np.trapezoid(self.speeds() ** 2, self.ts))

    def write_csv(self, path) -> Path:
        path = Path(path)
        n, m1 = self.group.n, self.group.m1
        header = (
            ["t"]
            + [f"g_{i + 1}" for i in range(n)]
            + [f"u_{i + 1}" for i in range(m1)]
            + ["quasinorm", "speed"]
        )
        speeds = self.speeds()
        quasis = self.quasinorms()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(len(self.ts)):
                row = (
                    [self.ts[k]]
                    + list(self.points[k])
                    + list(self.controls[k])
                    + [quasis[k], speeds[k]]
                )
                writer.writerow([_fmt(x) for x in row])
        return path


def _normal_velocity(group: CarnotGroup, ns: NormSpec, lam: np.ndarray, g: np.ndarray):
    adj, left = group.frames(g)
    eta = (lam @ adj)[: group.m1]
    u = ns.control_from_dual(eta)
    return left[:, : group.m1] @ u, u


def _rk4_step(group, ns, lam, g, h):
    k1, u = _normal_velocity(group, ns, lam, g)
    k2, _ = _normal_velocity(group, ns, lam, g + 0.5 * h * k1)
    k3, _ = _normal_velocity(group, ns, lam, g + 0.5 * h * k2)
    k4, _ = _normal_velocity(group, ns, lam, g + h * k3)
    return g + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), u


def integrate_normal(
    group: CarnotGroup,
    ns: NormSpec,
    lam,
    g0,
    T: float,
    h: float,
    estimate_errors: bool = False,
) -> GeodesicTrace:
    """Integrate the normal curve of ``lam`` from ``g0`` over ``[0, T]``.

    The step is snapped to an integer number of steps covering ``T`` exactly.
    With ``estimate_errors`` each step is re-done in two halves and the
    coordinate-wise discrepancy is stored as a local error estimate (the
    returned states remain those of the plain full steps).
    """
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (group.n,):
        raise ValueError(f"covector must have dimension {group.n}")
    g0 = group._point(g0, "initial point")
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    if not 0 < h <= T:
        raise ValueError(f"step must satisfy 0 < h <= T, got h={h}, T={T}")
    steps = max(1, round(T / h))
    h = T / steps

    points = np.empty((steps + 1, group.n))
    controls = np.empty((steps + 1, group.m1))
    errors = np.empty(steps) if estimate_errors else None
    points[0] = g0

    g = g0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            g_next, u = _rk4_step(group, ns, lam, g, h)
            controls[k] = u
            if estimate_errors:
                half, _ = _rk4_step(group, ns, lam, g, 0.5 * h)
                half, _ = _rk4_step(group, ns, lam, half, 0.5 * h)
                errors[k] = float(np.abs(g_next - half).max())
            if not np.isfinite(g_next).all():
                raise IntegrationError(
                    f"state became non-finite after t={k * h:.6g}",
                    t_last=k * h, state=g,
                )
            g = g_next
            points[k + 1] = g
    controls[steps] = extract_control(group, ns, lam, g)

    ts = np.arange(steps + 1) * h
    ts[-1] = T
    return GeodesicTrace(
        group=group, norm=ns, covector=lam, g0=g0, h=h,
        ts=ts, points=points, controls=controls, local_errors=errors,
    )


def end_point(group: CarnotGroup, signal: ControlSignal, g0=None) -> np.ndarray:
    """Time-one point of the curve driven by the signal from ``g0``.

    Steps once per grid interval of the signal with the same one-step scheme
    as the normal flow.
    """
    if signal.dim != group.m1:
        raise ValueError(
            f"control dimension {signal.dim} does not match first stratum {group.m1}"
        )
    g = group.identity() if g0 is None else group._point(g0, "initial point")
    steps = signal.n_nodes - 1
    h = 1.0 / steps
    for k in range(steps):
        t = k * h
        u1 = signal.values[k]
        u2 = signal.at(t + 0.5 * h)
        u3 = signal.values[k + 1]
        k1 = group.left_jacobian(g)[:, : group.m1] @ u1
        k2 = group.left_jacobian(g + 0.5 * h * k1)[:, : group.m1] @ u2
        k3 = group.left_jacobian(g + 0.5 * h * k2)[:, : group.m1] @ u2
        k4 = group.left_jacobian(g + h * k3)[:, : group.m1] @ u3
        g_next = g + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(g_next).all():
            raise IntegrationError(
                f"state became non-finite after t={t:.6g}", t_last=t, state=g
            )
        g = g_next
    return g


def end_point_directional(
    group: CarnotGroup, u: ControlSignal, v: ControlSignal, g0=None
) -> np.ndarray:
    """Directional derivative of the end-point map at ``u`` along ``v``.

    Central finite differences in exp-coordinates; the step scales with the
    signal magnitude to balance truncation against roundoff.
    """
    eps = 1e-5 * (1.0 + u.l2_norm())
    plus = end_point(group, u.combined(v, eps), g0)
    minus = end_point(group, u.combined(v, -eps), g0)
    return (plus - minus) / (2.0 * eps)


def pmp_identity_residual(
    group: CarnotGroup, ns: NormSpec, lam, trace: GeodesicTrace
) -> float:
    """Relative defect of the energy identity along a normal trace.

    The covector applied to the dilation field at the final point must equal
    the squared-speed integral of the control; the comparison is normalized by
    ``max(1, energy)``.  The trace must have been produced with the same
    covector and norm.
    """
    lam = np.asarray(lam, dtype=float)
    if trace.group is not group or not np.array_equal(trace.covector, lam):
        raise ValueError("trace was not produced with this group and covector")
    if trace.norm != ns:
        raise ValueError("trace was not produced with this norm")
    g_end = trace.points[-1]
    lhs = group.covector_pairing(lam, g_end, group.dilation_field(g_end))
    rhs = trace.control_energy()
    return abs(lhs - rhs) / max(1.0, rhs)
