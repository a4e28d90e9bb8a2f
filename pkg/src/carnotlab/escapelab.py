"""Escape-rate experiments, growth-bound tables, worked examples and the CLI.

The central claim under test: a non-constant normal curve leaves every compact
set, with distance from the start growing at least like t**(1/step).  Distances
are measured with the homogeneous quasinorm, a bi-Lipschitz stand-in for the
intrinsic distance; exponents survive that substitution, absolute constants are
reported as empirical proxies only.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .algebra import (
    AlgebraValidationError,
    BUILTIN_ALGEBRAS,
    StratifiedAlgebra,
    builtin_algebra,
    heisenberg_algebra,
    filiform_algebra,
    load_algebra,
)
from .control import NormSpec, make_norm, rescale_covector
from .group import CarnotGroup
from .integrator import (
    GeodesicTrace,
    IntegrationError,
    integrate_normal,
    pmp_identity_residual,
)

# Tolerance on fitted escape exponents; slope estimates on the closed-form
# benchmark stabilize to about +-0.01, so 0.05 leaves room for short windows.
SLOPE_MARGIN = 0.05

# A log-log fit needs a handful of samples to mean anything.
MIN_FIT_SAMPLES = 8


def _fmt(x) -> str:
    return format(float(x), ".17g")


# -- configuration -----------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Batch-run description; loadable from JSON, overridable by CLI flags."""

    algebra: str = "heisenberg"
    norm: object = "euclidean"
    covectors: object = None  # explicit list of vectors, or {"count": .., "seed": ..}
    T: float = 100.0
    h: float = 0.05
    out_dir: str = "carnotlab-out"

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if not 0 < self.h <= self.T:
            raise ValueError(f"step h must satisfy 0 < h <= T, got {self.h}")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**data)

    def build(self) -> tuple[CarnotGroup, NormSpec]:
        group = CarnotGroup(load_algebra(self.algebra))
        return group, make_norm(self.norm, group.m1)

    def resolve_covectors(self, n: int) -> np.ndarray:
        spec = self.covectors
        if spec is None:
            raise ValueError("config specifies no covectors")
        if isinstance(spec, dict):
            if "count" not in spec:
                raise ValueError("covector sampling spec needs a 'count'")
            if spec.get("seed") is None:
                raise ValueError("covector sampling requires a seed")
            return sample_unit_covectors(n, int(spec["count"]), int(spec["seed"]))
        arr = np.asarray(spec, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] != n:
            raise ValueError(f"explicit covectors must be rows of length {n}")
        return arr


def sample_unit_covectors(n: int, count: int, seed: int) -> np.ndarray:
    """Seeded covectors with unit coefficient-sum norm.

    Magnitudes are uniform on the simplex, signs are symmetric coin flips, so
    the samples are uniform on the unit sphere of the sum-of-absolute-values
    norm used to normalize covectors.
    """
    if count < 1:
        raise ValueError("covector count must be positive")
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.ones(n), size=count)
    signs = 2 * rng.integers(0, 2, size=(count, n)) - 1
    return weights * signs


# -- escape experiment --------------------------------------------------------


def fit_escape_window(ts, dists, step: int, t_min: float):
    """Log-log slope of the distance series on the regime window.

    The window starts at ``t_min`` or after the last time the distance dips
    to one, whichever is later, so the distance exceeds one throughout the
    fitted range; returns ``None`` when that window is too short.  Also
    reports the smallest observed ratio distance / t**(1/step) on the window,
    the tightest power-law lower envelope the trace exhibits.
    """
    ts = np.asarray(ts, dtype=float)
    dists = np.asarray(dists, dtype=float)
    mask = ts >= t_min
    t_w, d_w = ts[mask], dists[mask]
    below = np.nonzero(d_w <= 1.0)[0]
    if len(below):
        t_w, d_w = t_w[below[-1] + 1 :], d_w[below[-1] + 1 :]
    if len(t_w) < MIN_FIT_SAMPLES:
        return None
    slope = float(np.polyfit(np.log(t_w), np.log(d_w), 1)[0])
    c_emp = float(np.min(d_w / t_w ** (1.0 / step)))
    return slope, c_emp, (float(t_w[0]), float(t_w[-1]))


def loop_return_ratio(dists):
    """Monitor for returns toward the start after the trace escapes.

    Applicable once the distance has exceeded one; after the trace peaks it
    must not retrace toward its start, so the post-peak minimum distance is
    compared against the peak.  Returns that ratio, or ``None`` when the
    trace never escapes (monitor not applicable).  A loop would drive the
    ratio toward zero; drifting oscillations keep it well above one half.
    """
    dists = np.asarray(dists, dtype=float)
    if dists.max() <= 1.0:
        return None
    peak = int(np.argmax(dists))
    return float(dists[peak:].min() / dists[peak])


LOOP_RETURN_THRESHOLD = 0.5


@dataclass
class EscapeRow:
    cov_idx: int
    covector: np.ndarray
    n_lambda: float
    status: str  # fitted | no-regime | constant | overflow
    slope: float | None = None
    c_emp: float | None = None
    c_emp_scaled: float | None = None
    window: tuple[float, float] | None = None
    return_ratio: float | None = None

    @property
    def loop_ok(self) -> bool:
        return self.return_ratio is None or self.return_ratio >= LOOP_RETURN_THRESHOLD


@dataclass
class EscapeReport:
    algebra_name: str
    step: int
    T: float
    h: float
    rows: list
    series: list  # (ts, dists) per row, parallel to rows

    @property
    def fitted(self) -> list:
        return [r for r in self.rows if r.status == "fitted"]

    @property
    def slope_floor(self) -> float:
        return 1.0 / self.step - SLOPE_MARGIN

    @property
    def min_slope(self) -> float | None:
        fitted = self.fitted
        return min(r.slope for r in fitted) if fitted else None

    @property
    def median_slope(self) -> float | None:
        fitted = self.fitted
        return float(np.median([r.slope for r in fitted])) if fitted else None

    @property
    def min_c_scaled(self) -> float | None:
        fitted = self.fitted
        return min(r.c_emp_scaled for r in fitted) if fitted else None

    def passes(self) -> bool:
        fitted = self.fitted
        if not fitted:
            return False
        return all(r.slope >= self.slope_floor for r in fitted) and all(
            r.loop_ok for r in self.rows
        )

    def summary(self) -> str:
        counts = {}
        for r in self.rows:
            counts[r.status] = counts.get(r.status, 0) + 1
        parts = [
            f"escape[{self.algebra_name}] T={self.T:g} h={self.h:g}: "
            + ", ".join(f"{v} {k}" for k, v in sorted(counts.items()))
        ]
        if self.fitted:
            parts.append(
                f"  slopes: min={self.min_slope:.4f} median={self.median_slope:.4f} "
                f"(floor 1/{self.step}-{SLOPE_MARGIN} = {self.slope_floor:.4f})"
            )
            parts.append(f"  min scaled envelope constant: {self.min_c_scaled:.4f}")
        parts.append(f"  verdict: {'PASS' if self.passes() else 'FAIL'}")
        return "\n".join(parts)


def run_escape(
    group: CarnotGroup,
    ns: NormSpec,
    covectors,
    T: float,
    h: float,
) -> EscapeReport:
    """Integrate each covector's normal curve and fit its escape exponent.

    Covectors whose trace never reaches the regime window are reported but
    carry no slope; integration overflow flags the covector and excludes it
    from aggregates.
    """
    covectors = np.asarray(covectors, dtype=float)
    rows, series = [], []
    for idx, lam in enumerate(covectors):
        n_lam = group.covector_norm(lam)
        if n_lam == 0.0:
            rows.append(EscapeRow(idx, lam, 0.0, "constant"))
            series.append((np.array([0.0]), np.array([0.0])))
            continue
        try:
            trace = integrate_normal(group, ns, lam, group.identity(), T, h)
        except IntegrationError:
            rows.append(EscapeRow(idx, lam, n_lam, "overflow"))
            series.append((np.array([0.0]), np.array([0.0])))
            continue
        dists = trace.quasinorms()
        series.append((trace.ts, dists))
        ret = loop_return_ratio(dists)
        fit = fit_escape_window(trace.ts, dists, group.step, T / 10.0)
        if fit is None:
            rows.append(EscapeRow(idx, lam, n_lam, "no-regime", return_ratio=ret))
            continue
        slope, c_emp, window = fit
        rows.append(
            EscapeRow(
                idx, lam, n_lam, "fitted",
                slope=slope, c_emp=c_emp,
                c_emp_scaled=c_emp * n_lam ** (1.0 / group.step),
                window=window, return_ratio=ret,
            )
        )
    return EscapeReport(
        algebra_name=group.algebra.name or "custom",
        step=group.step, T=float(T), h=float(h), rows=rows, series=series,
    )


def write_escape_series_csv(report: EscapeReport, path, stride: int = 1) -> Path:
    path = Path(path)
    entries = []
    for row, (ts, dists) in zip(report.rows, report.series):
        if row.status in ("constant", "overflow"):
            continue
        for k in range(0, len(ts), max(1, stride)):
            bound = (
                row.c_emp * ts[k] ** (1.0 / report.step)
                if row.c_emp is not None
                else float("nan")
            )
            entries.append((row.cov_idx, ts[k], dists[k], bound))
    entries.sort(key=lambda e: (e[0], e[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cov_idx", "t", "D", "bound_rhs"])
        for cov_idx, t, d, bound in entries:
            writer.writerow([cov_idx, _fmt(t), _fmt(d), _fmt(bound)])
    return path


def write_escape_slopes_csv(report: EscapeReport, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["cov_idx", "n_lambda", "status", "window_t0", "window_t1",
             "slope", "c_emp", "c_emp_scaled", "return_ratio", "loop_ok"]
        )
        for r in report.rows:
            w0, w1 = r.window if r.window else (float("nan"), float("nan"))
            writer.writerow(
                [
                    r.cov_idx, _fmt(r.n_lambda), r.status, _fmt(w0), _fmt(w1),
                    _fmt(r.slope if r.slope is not None else float("nan")),
                    _fmt(r.c_emp if r.c_emp is not None else float("nan")),
                    _fmt(r.c_emp_scaled if r.c_emp_scaled is not None else float("nan")),
                    _fmt(r.return_ratio if r.return_ratio is not None else float("nan")),
                    int(r.loop_ok),
                ]
            )
    return path


# -- growth-bound experiment ---------------------------------------------------


def growth_ratio_series(group: CarnotGroup, lam, trace: GeodesicTrace):
    """Ratio of the covector on the dilation field to its homogeneity bound.

    Evaluated at every positive-time sample of the trace (the start point is
    excluded: both sides vanish there).  Boundedness of this series is the
    testable content of the growth estimate.
    """
    lam = np.asarray(lam, dtype=float)
    n_lam = group.covector_norm(lam)
    ts, ratios = [], []
    for t, g in zip(trace.ts[1:], trace.points[1:]):
        d = group.quasinorm(g)
        if d <= 0.0:
            continue
        value = group.covector_pairing(lam, g, group.dilation_field(g))
        ratios.append(value / (n_lam * max(d, d**group.step)))
        ts.append(t)
    return np.asarray(ts), np.asarray(ratios)


@dataclass
class GrowthRow:
    cov_idx: int
    n_lambda: float
    sup_ratio: float
    sup_ratio_ref: float  # over the reference prefix horizon
    drift: float  # relative gap between the two sups
    doubling_gap: float  # max pointwise change under doubling the covector
    return_ratio: float | None

    @property
    def loop_ok(self) -> bool:
        return self.return_ratio is None or self.return_ratio >= LOOP_RETURN_THRESHOLD


@dataclass
class GrowthReport:
    algebra_name: str
    T: float
    t_ref: float
    h: float
    rows: list
    series: list  # (ts, ratios) per row

    def max_drift(self) -> float:
        return max(r.drift for r in self.rows)

    def max_doubling_gap(self) -> float:
        return max(r.doubling_gap for r in self.rows)

    def passes(self, drift_tol: float = 0.10, doubling_tol: float = 1e-10) -> bool:
        return (
            all(np.isfinite(r.sup_ratio) for r in self.rows)
            and self.max_drift() <= drift_tol
            and self.max_doubling_gap() <= doubling_tol
            and all(r.loop_ok for r in self.rows)
        )

    def summary(self) -> str:
        sups = ", ".join(f"{r.sup_ratio:.4f}" for r in self.rows)
        return (
            f"growth[{self.algebra_name}] T={self.T:g}: sup ratios [{sups}]\n"
            f"  max drift sup({self.t_ref:g})->sup({self.T:g}): {self.max_drift():.4g}, "
            f"max doubling gap: {self.max_doubling_gap():.3g}\n"
            f"  verdict: {'PASS' if self.passes() else 'FAIL'}"
        )


def run_growth_bound(
    group: CarnotGroup,
    ns: NormSpec,
    covectors,
    T: float = 50.0,
    h: float = 0.02,
    t_ref: float = 10.0,
) -> GrowthReport:
    """Tabulate the growth-bound ratio along each covector's normal curve.

    The supremum over the trace is the empirical proxy constant; it is
    compared against the supremum over the prefix horizon ``t_ref`` and
    re-evaluated with the doubled covector at the same points, which must
    leave every ratio unchanged.
    """
    covectors = np.asarray(covectors, dtype=float)
    rows, series = [], []
    for idx, lam in enumerate(covectors):
        trace = integrate_normal(group, ns, lam, group.identity(), T, h)
        ts, ratios = growth_ratio_series(group, lam, trace)
        _, doubled = growth_ratio_series(group, 2.0 * lam, trace)
        sup_full = float(ratios.max())
        sup_ref = float(ratios[ts <= t_ref].max())
        rows.append(
            GrowthRow(
                cov_idx=idx,
                n_lambda=group.covector_norm(lam),
                sup_ratio=sup_full,
                sup_ratio_ref=sup_ref,
                drift=abs(sup_full - sup_ref) / max(abs(sup_full), 1e-300),
                doubling_gap=float(np.abs(doubled - ratios).max()),
                return_ratio=loop_return_ratio(trace.quasinorms()),
            )
        )
        series.append((ts, ratios))
    return GrowthReport(
        algebra_name=group.algebra.name or "custom",
        T=float(T), t_ref=float(t_ref), h=float(h), rows=rows, series=series,
    )


def write_growth_csv(report: GrowthReport, path, stride: int = 1) -> Path:
    path = Path(path)
    entries = []
    for row, (ts, ratios) in zip(report.rows, report.series):
        for k in range(0, len(ts), max(1, stride)):
            entries.append((row.cov_idx, ts[k], ratios[k]))
    entries.sort(key=lambda e: (e[0], e[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cov_idx", "t", "ratio"])
        for cov_idx, t, ratio in entries:
            writer.writerow([cov_idx, _fmt(t), _fmt(ratio)])
    return path


# -- worked examples -----------------------------------------------------------


def heisenberg_winding_curve(n_turns: int, ts) -> np.ndarray:
    """Arc-length lift of a circle of radius 1/(2*pi*n) traversed n times.

    Unit-speed curve from the identity whose time-one point is
    ``(0, 0, 1/(4*pi*n))``: length stays one while the end-point approaches
    the identity as the winding count grows.
    """
    ts = np.asarray(ts, dtype=float)
    w = 2.0 * np.pi * n_turns
    x = (np.cos(w * ts) - 1.0) / w
    y = np.sin(w * ts) / w
    z = (w * ts - np.sin(w * ts)) / (2.0 * w**2)
    return np.stack([x, y, z], axis=1)


def heisenberg_winding_covector(n_turns: int) -> np.ndarray:
    """Covector whose normal curve is the winding circle lift.

    Obtained by differentiating the closed form and matching the control rule
    ``u = (l1 - y*l3, l2 + x*l3)``.
    """
    return np.array([0.0, 1.0, 2.0 * np.pi * n_turns])


@dataclass
class HeisenbergExampleReport:
    n_turns: int
    h: float
    max_deviation: float
    endpoint_closed: np.ndarray
    endpoint_integrated: np.ndarray
    endpoint_error: float
    speed_defect: float
    trace: GeodesicTrace

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_deviation < tol and self.speed_defect < 1e-12

    def summary(self) -> str:
        return (
            f"heisenberg example N={self.n_turns} h={self.h:g}: "
            f"max deviation {self.max_deviation:.3e}, endpoint error "
            f"{self.endpoint_error:.3e}, closed-form speed defect {self.speed_defect:.1e}"
        )


def example_heisenberg(n_turns: int, h: float = 1e-4) -> HeisenbergExampleReport:
    """Integrate the winding-circle covector and compare with the closed form."""
    if n_turns < 1:
        raise ValueError("winding count must be a positive integer")
    group = CarnotGroup(heisenberg_algebra())
    ns = make_norm("euclidean", group.m1)
    lam = heisenberg_winding_covector(n_turns)
    trace = integrate_normal(group, ns, lam, group.identity(), T=1.0, h=h)
    closed = heisenberg_winding_curve(n_turns, trace.ts)
    w = 2.0 * np.pi * n_turns
    speed = np.hypot(-np.sin(w * trace.ts), np.cos(w * trace.ts))
    endpoint_closed = np.array([0.0, 0.0, 1.0 / (4.0 * np.pi * n_turns)])
    return HeisenbergExampleReport(
        n_turns=n_turns,
        h=trace.h,
        max_deviation=float(np.abs(trace.points - closed).max()),
        endpoint_closed=endpoint_closed,
        endpoint_integrated=trace.points[-1].copy(),
        endpoint_error=float(np.abs(trace.points[-1] - endpoint_closed).max()),
        speed_defect=float(np.abs(speed - 1.0).max()),
        trace=trace,
    )


@dataclass
class FiliformScanRow:
    label: str
    covector: np.ndarray
    T: float
    status: str
    slope: float | None = None
    window: tuple[float, float] | None = None
    return_ratio: float | None = None

    @property
    def loop_ok(self) -> bool:
        return self.return_ratio is None or self.return_ratio >= LOOP_RETURN_THRESHOLD


@dataclass
class FiliformExampleReport:
    step: int
    translation_residuals: list  # per central shift tested
    scan_rows: list

    @property
    def max_translation_residual(self) -> float:
        return max(self.translation_residuals)

    def fitted_slopes(self) -> list:
        return [r.slope for r in self.scan_rows if r.status == "fitted"]

    def ok(self, translation_tol: float = 1e-9) -> bool:
        floor = 1.0 / self.step - SLOPE_MARGIN
        slopes = self.fitted_slopes()
        return (
            self.max_translation_residual < translation_tol
            and bool(slopes)
            and all(s >= floor for s in slopes)
            and all(r.loop_ok for r in self.scan_rows)
        )

    def summary(self) -> str:
        lines = [
            f"filiform example step={self.step}: max central-translation residual "
            f"{self.max_translation_residual:.3e}"
        ]
        for r in self.scan_rows:
            if r.status == "fitted":
                lines.append(f"  {r.label}: slope {r.slope:.4f} over {r.window}")
            else:
                lines.append(f"  {r.label}: {r.status}")
        floor = 1.0 / self.step - SLOPE_MARGIN
        lines.append(f"  slope floor: {floor:.4f}; verdict: {'PASS' if self.ok() else 'FAIL'}")
        return "\n".join(lines)


def central_translation_residual(
    group: CarnotGroup,
    ns: NormSpec,
    lam,
    g0,
    shift,
    T: float = 5.0,
    h: float = 2.5e-3,
) -> float:
    """Defect of flow-commutation with left translation by a central element.

    The control rule sees points only through the adjoint action, which is
    blind to the center, so the flow started at ``shift * g0`` must be the
    translate of the flow started at ``g0``, sample for sample.
    """
    base = integrate_normal(group, ns, lam, g0, T, h)
    shifted = integrate_normal(group, ns, lam, group.multiply(shift, g0), T, h)
    worst = 0.0
    for k in range(len(base.ts)):
        expected = group.multiply(shift, base.points[k])
        worst = max(worst, float(np.abs(shifted.points[k] - expected).max()))
    return worst


def example_filiform(
    step: int,
    m_max: int = 3,
    seed: int = 0,
    scan_h: float = 5e-3,
) -> FiliformExampleReport:
    """Central-translation checks plus a slope scan in a filiform group.

    The scan sweeps covectors with a dominant top-stratum component. In step
    two the winding family realizes slopes near one half; in higher steps the
    observed slopes are reported against the 1/step floor without any claim
    that the floor is attained.
    """
    if m_max < 1:
        raise ValueError("m_max must be at least 1")
    algebra = filiform_algebra(step)
    group = CarnotGroup(algebra)
    ns = make_norm("euclidean", group.m1)
    rng = np.random.default_rng(seed)

    lam = sample_unit_covectors(group.n, 1, seed)[0]
    g0 = rng.uniform(-0.5, 0.5, size=group.n)
    top = np.zeros(group.n)
    top[-1] = 1.0
    residuals = [
        central_translation_residual(group, ns, lam, g0, float(m) * top)
        for m in range(1, m_max + 1)
    ]

    scan_rows = []
    if step == 2:
        for k_factor in (2.0 * np.pi, 8.0 * np.pi, 32.0 * np.pi):
            cov = np.array([0.0, 1.0, k_factor])
            horizon = max(50.0, 4.0 * k_factor)
            # two step caps: phase resolution per period, and the cumulative
            # amplitude damping of the scheme over horizon/h oscillations
            h = min(scan_h, 0.25 / k_factor,
                    (0.72 / (horizon * k_factor**6)) ** 0.2)
            scan_rows.append(
                _scan_one(group, ns, cov, horizon, h, f"winding K={k_factor:.4g}")
            )
    else:
        mixes = sample_unit_covectors(group.n, 6, seed + 1)
        for j, mu in enumerate(mixes):
            cov = 0.25 * mu + 0.75 * np.sign(mu[-1] if mu[-1] else 1.0) * top
            cov = cov / group.covector_norm(cov)
            # rescale so the escape regime is reached well inside the horizon
            cov = rescale_covector(cov, 4.0)
            scan_rows.append(
                _scan_one(group, ns, cov, 100.0, scan_h, f"top-weighted #{j}")
            )
    return FiliformExampleReport(
        step=step, translation_residuals=residuals, scan_rows=scan_rows
    )


def _scan_one(group, ns, cov, horizon, h, label) -> FiliformScanRow:
    try:
        trace = integrate_normal(group, ns, cov, group.identity(), horizon, h)
    except IntegrationError:
        return FiliformScanRow(label, cov, horizon, "overflow")
    dists = trace.quasinorms()
    fit = fit_escape_window(trace.ts, dists, group.step, horizon / 10.0)
    ret = loop_return_ratio(dists)
    if fit is None:
        return FiliformScanRow(label, cov, horizon, "no-regime", return_ratio=ret)
    slope, _, window = fit
    return FiliformScanRow(
        label, cov, horizon, "fitted", slope=slope, window=window, return_ratio=ret
    )


# -- PMP identity batch ---------------------------------------------------------


@dataclass
class PmpCheckReport:
    algebra_name: str
    residuals: np.ndarray
    tol: float

    def passes(self) -> bool:
        return bool((self.residuals < self.tol).all())

    def summary(self) -> str:
        return (
            f"pmp-check[{self.algebra_name}]: {len(self.residuals)} covectors, "
            f"max residual {self.residuals.max():.3e} (tol {self.tol:g}): "
            f"{'PASS' if self.passes() else 'FAIL'}"
        )


def run_pmp_check(
    group: CarnotGroup,
    ns: NormSpec,
    covectors,
    T: float = 1.0,
    h: float = 2.5e-4,
    tol: float = 1e-5,
) -> PmpCheckReport:
    """Residual of the energy identity for a batch of covectors."""
    residuals = []
    for lam in np.asarray(covectors, dtype=float):
        trace = integrate_normal(group, ns, lam, group.identity(), T, h)
        residuals.append(pmp_identity_residual(group, ns, lam, trace))
    return PmpCheckReport(
        algebra_name=group.algebra.name or "custom",
        residuals=np.asarray(residuals),
        tol=tol,
    )


# -- plotting (optional artifacts) ----------------------------------------------


def plot_escape(report: EscapeReport, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 5))
    for row, (ts, dists) in zip(report.rows, report.series):
        if row.status in ("constant", "overflow"):
            continue
        mask = (ts > 0) & (dists > 0)
        ax.loglog(ts[mask], dists[mask], lw=0.8, alpha=0.6)
    t_line = np.array([report.T / 10.0, report.T])
    ax.loglog(t_line, t_line ** (1.0 / report.step), "k--", lw=2,
              label=f"slope 1/{report.step}")
    ax.axhline(1.0, color="gray", lw=0.5)
    ax.set_xlabel("t")
    ax.set_ylabel("distance from start (quasinorm)")
    ax.set_title(f"escape rates, {report.algebra_name}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_heisenberg_example(report: HeisenbergExampleReport, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    trace = report.trace
    closed = heisenberg_winding_curve(report.n_turns, trace.ts)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(closed[:, 0], closed[:, 1], "k-", lw=2, label="closed form")
    ax1.plot(trace.points[:, 0], trace.points[:, 1], "r--", lw=1, label="integrated")
    ax1.set_aspect("equal")
    ax1.set_xlabel("x")
    ax1.set_ylabel("y")
    ax1.legend()
    ax2.plot(trace.ts, closed[:, 2], "k-", lw=2)
    ax2.plot(trace.ts, trace.points[:, 2], "r--", lw=1)
    ax2.set_xlabel("t")
    ax2.set_ylabel("z")
    fig.suptitle(f"winding lift, N={report.n_turns}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


# -- CLI -------------------------------------------------------------------------


def _add_common_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON experiment config; flags override its fields")
    p.add_argument("--algebra", help="built-in name or algebra definition file")
    p.add_argument("--norm", choices=["euclidean", "l1", "linfty"],
                   help="first-stratum norm (polyhedral norms go through --config)")
    p.add_argument("--covectors", type=int, metavar="COUNT",
                   help="number of covectors to sample (requires --seed)")
    p.add_argument("--covector", action="append", metavar="C1,..,CN",
                   help="explicit covector, repeatable")
    p.add_argument("--seed", type=int, help="sampling seed")
    p.add_argument("--T", type=float, help="time horizon")
    p.add_argument("--h", type=float, help="integration step")
    p.add_argument("--out-dir", help="artifact directory")


def _config_from_args(args, defaults: dict) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig(**defaults)
    if args.algebra is not None:
        cfg.algebra = args.algebra
    if args.norm is not None:
        cfg.norm = args.norm
    if args.T is not None:
        cfg.T = args.T
    if args.h is not None:
        cfg.h = args.h
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.covector:
        if args.covectors is not None:
            raise ValueError("give either --covector entries or a --covectors count")
        cfg.covectors = [[float(x) for x in entry.split(",")] for entry in args.covector]
    elif args.covectors is not None:
        if args.seed is None:
            raise ValueError("--seed is mandatory when sampling covectors")
        cfg.covectors = {"count": args.covectors, "seed": args.seed}
    elif isinstance(cfg.covectors, dict) and args.seed is not None:
        cfg.covectors = dict(cfg.covectors, seed=args.seed)
    if not 0 < cfg.h <= cfg.T:
        raise ValueError(f"step h must satisfy 0 < h <= T, got h={cfg.h}, T={cfg.T}")
    return cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(args) -> int:
    if args.algebra in BUILTIN_ALGEBRAS:
        algebra = builtin_algebra(args.algebra)
    else:
        algebra = StratifiedAlgebra.from_file(args.algebra, validate=False)
    report = algebra.validate()
    print(f"validate {args.algebra} (n={algebra.n}, strata={algebra.strata_dims}):")
    print(report)
    return 0 if report.ok else 1


def cmd_integrate(args) -> int:
    cfg = _config_from_args(args, {"T": 10.0, "h": 1e-3})
    group, ns = cfg.build()
    covectors = cfg.resolve_covectors(group.n)
    out = _out_dir(cfg)
    g0 = (
        np.array([float(x) for x in args.g0.split(",")])
        if args.g0
        else group.identity()
    )
    code = 0
    for idx, lam in enumerate(covectors):
        trace = integrate_normal(group, ns, lam, g0, cfg.T, cfg.h,
                                 estimate_errors=True)
        path = trace.write_csv(out / f"trace_{idx}.csv")
        speeds = trace.speeds()
        print(
            f"trace {idx}: endpoint quasinorm {group.quasinorm(trace.points[-1]):.6g}, "
            f"speed range {speeds.max() - speeds.min():.3e}, "
            f"max local step error {trace.local_errors.max():.3e} -> {path}"
        )
    return code


def cmd_escape(args) -> int:
    cfg = _config_from_args(args, {})
    group, ns = cfg.build()
    covectors = cfg.resolve_covectors(group.n)
    report = run_escape(group, ns, covectors, cfg.T, cfg.h)
    out = _out_dir(cfg)
    stride = 1 if args.full_series else max(1, len(report.series[0][0]) // 200)
    write_escape_series_csv(report, out / "escape.csv", stride=stride)
    write_escape_slopes_csv(report, out / "escape_slopes.csv")
    if args.plot:
        plot_escape(report, out / "escape.png")
    print(report.summary())
    return 0 if report.passes() else 1


def cmd_growth(args) -> int:
    cfg = _config_from_args(args, {"T": 50.0, "h": 0.02})
    group, ns = cfg.build()
    covectors = cfg.resolve_covectors(group.n)
    report = run_growth_bound(group, ns, covectors, cfg.T, cfg.h,
                              t_ref=min(10.0, cfg.T / 2.0))
    out = _out_dir(cfg)
    write_growth_csv(report, out / "growth.csv")
    print(report.summary())
    # divergence would show as large drift; the CLI gate is deliberately looser
    # than the acceptance study, which uses covectors deep in their regime
    ok = (
        all(np.isfinite(r.sup_ratio) for r in report.rows)
        and report.max_doubling_gap() <= 1e-10
        and report.max_drift() <= args.drift_tol
    )
    return 0 if ok else 1


def cmd_example(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.which == "heisenberg":
        report = example_heisenberg(args.N, h=args.h)
        report.trace.write_csv(out / f"heisenberg_N{args.N}.csv")
        if args.plot:
            plot_heisenberg_example(report, out / f"heisenberg_N{args.N}.png")
        print(report.summary())
        return 0 if report.ok(tol=args.tol) else 1
    report = example_filiform(args.step, m_max=args.m_max, seed=args.seed)
    with open(out / f"filiform{args.step}_scan.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "status", "slope", "window_t0", "window_t1"])
        for r in report.scan_rows:
            w0, w1 = r.window if r.window else (float("nan"), float("nan"))
            writer.writerow([
                r.label, r.status,
                _fmt(r.slope if r.slope is not None else float("nan")),
                _fmt(w0), _fmt(w1),
            ])
    print(report.summary())
    return 0 if report.ok() else 1


def cmd_pmp_check(args) -> int:
    cfg = _config_from_args(args, {"T": 1.0, "h": 2.5e-4})
    group, ns = cfg.build()
    covectors = cfg.resolve_covectors(group.n)
    report = run_pmp_check(group, ns, covectors, cfg.T, cfg.h, tol=args.tol)
    out = _out_dir(cfg)
    with open(out / "pmp_check.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cov_idx", "residual", "ok"])
        for idx, res in enumerate(report.residuals):
            writer.writerow([idx, _fmt(res), int(res < report.tol)])
    print(report.summary())
    return 0 if report.passes() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carnotlab",
        description="Numerical laboratory for normal curves in Carnot groups",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an algebra definition")
    p.add_argument("algebra", help="built-in name or JSON definition file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("integrate", help="integrate normal curves, export traces")
    _add_common_run_flags(p)
    p.add_argument("--g0", help="start point coordinates, comma separated")
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("escape", help="escape-rate experiment")
    _add_common_run_flags(p)
    p.add_argument("--plot", action="store_true", help="write a log-log plot")
    p.add_argument("--full-series", action="store_true",
                   help="write every sample to escape.csv instead of a thinned series")
    p.set_defaults(func=cmd_escape)

    p = sub.add_parser("growth-bound", help="growth-bound ratio tables")
    _add_common_run_flags(p)
    p.add_argument("--drift-tol", type=float, default=0.25,
                   help="allowed relative drift of the sup ratio across horizons")
    p.set_defaults(func=cmd_growth)

    p = sub.add_parser("example", help="reproduce a worked example")
    which = p.add_subparsers(dest="which", required=True)
    ph = which.add_parser("heisenberg", help="winding-circle lift")
    ph.add_argument("--N", type=int, default=1, help="winding count")
    ph.add_argument("--h", type=float, default=1e-4)
    ph.add_argument("--tol", type=float, default=1e-6)
    ph.add_argument("--out-dir", default="carnotlab-out")
    ph.add_argument("--plot", action="store_true")
    ph.set_defaults(func=cmd_example, which="heisenberg")
    pf = which.add_parser("filiform", help="central translation and slope scan")
    pf.add_argument("--step", type=int, default=3, choices=range(2, 7))
    pf.add_argument("--m-max", type=int, default=3)
    pf.add_argument("--seed", type=int, default=0)
    pf.add_argument("--out-dir", default="carnotlab-out")
    pf.set_defaults(func=cmd_example, which="filiform")

    p = sub.add_parser("pmp-check", help="energy-identity residuals")
    _add_common_run_flags(p)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_pmp_check)

    return parser


def cli_main(argv=None) -> int:
    """Entry point; returns 0 on all-pass, 1 on contract violation, 2 on usage error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code else 0
    try:
        return args.func(args)
    except (ValueError, AlgebraValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
