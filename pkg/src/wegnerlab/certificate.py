"""Explicit witness for the Wegner condition of compactly supported covariances.

Given ``C`` with ``supp C`` inside the sup-norm box of radius ``R`` and
``Cbar = int C > 0``, the weight ``f(x) = exp(-b|x|)`` with
``b <= Cbar / (2e R ||C||_1)`` satisfies ``(f * C)(x) >= (Cbar/2) f(x)``.
The measure ``mu = alpha f dx`` with ``alpha`` fixed by
``iint mu mu C = C(0)`` then gives ``mu * C >= C(0) gamma`` on the box of
radius ``1/b`` with ``gamma = alpha Cbar / (2e C(0))``.

All quadrature is composite midpoint with reported error budgets.  ``|x|``
is the sup-norm throughout.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .covariance import (CovarianceError, CovarianceModel, CovarianceSummary,
                         ResolutionError, midpoint_error_proxy, midpoint_nodes,
                         summarize)

_E = math.e


class CertificateError(CovarianceError):
    pass


class IneligibleModel(CertificateError):
    """Compact support or positive mean is missing."""


class UnresolvedQuadrature(CertificateError, ResolutionError):
    pass


@dataclass(frozen=True)
class CertificateGrid:
    """Discretization of the convolution and normalization integrals.

    ``z_step`` resolves ``Lambda_R`` (the support of ``C``), ``x_step`` the
    evaluation points, ``truncation`` bounds the evaluation region.  ``None``
    fields are filled by :func:`default_grid`.
    """

    z_step: Optional[float] = None
    x_step: Optional[float] = None
    truncation: Optional[float] = None
    tail_eps: float = 1e-12

    def resolve(self, model: CovarianceModel, b: float) -> "CertificateGrid":
        R = model.support_radius
        d = model.dimension
        z_step = self.z_step or (R / 512 if d == 1 else R / 8)
        x_step = self.x_step or (R / 256 if d == 1 else R / 4)
        T = self.truncation
        if T is None:
            # in d=2 the normalization integrand decays like exp(-2b|x|) and the
            # ratio check beyond T is certified analytically
            rate = b if d == 1 else 2 * b
            T = max(math.log(1 / self.tail_eps) / rate, 2 * R)
        return CertificateGrid(z_step, x_step, T, self.tail_eps)


def default_grid(model: CovarianceModel, b: float) -> CertificateGrid:
    return CertificateGrid().resolve(model, b)


@dataclass(frozen=True)
class ConvolutionReport:
    z_step: float
    x_step: float
    truncation: float
    min_ratio: float
    argmin: tuple
    threshold: float
    margin: float
    quadrature_error: float
    analytic_bound: float
    tail_certified: bool
    passed: bool


@dataclass(frozen=True)
class Condition4Report:
    double_integral: float
    check_integral: float
    normalization_residual: float
    normalization_tolerance: float
    lower_bound_margin: float
    lower_bound_tolerance: float
    gamma_grid_points: int
    passed: bool


@dataclass(frozen=True)
class WegnerCertificate:
    b: float
    alpha: float
    gamma: float
    box_radius: float
    summary: CovarianceSummary
    grid: CertificateGrid
    convolution_report: ConvolutionReport
    condition4_report: Condition4Report

    @property
    def passed(self) -> bool:
        return self.convolution_report.passed and self.condition4_report.passed

    def to_dict(self) -> dict:
        s = self.summary
        return {
            "b": self.b, "alpha": self.alpha, "gamma": self.gamma,
            "box_radius": self.box_radius,
            "summary": {"C0": s.C0, "Cbar": s.Cbar, "L1": s.L1, "R": s.R,
                        "quadrature_error": s.quadrature_error},
            "convolution_report": _report_dict(self.convolution_report),
            "condition4_report": _report_dict(self.condition4_report),
            "grid": {"z_step": self.grid.z_step, "x_step": self.grid.x_step,
                     "truncation": self.grid.truncation, "tail_eps": self.grid.tail_eps,
                     "summary_step": s.step},
            "passed": self.passed,
        }


def _report_dict(report) -> dict:
    out = asdict(report)
    if "passed" in out:
        out["pass"] = out.pop("passed")
    if "argmin" in out:
        out["argmin"] = list(out["argmin"])
    return out


def choose_decay_rate(summary: CovarianceSummary, factor: float = 1.0) -> float:
    """The largest admissible rate ``Cbar / (2e R L1)``, times ``factor`` in (0, 1]."""
    if not summary.eligible:
        raise IneligibleModel(
            "condition (2) violated: covariance needs compact support and positive integral")
    if not 0 < factor <= 1:
        raise CertificateError("b factor must lie in (0, 1]")
    return factor * summary.Cbar / (2 * _E * summary.R * summary.L1)


def exponent_gap_bound(b: float, R: float) -> float:
    """Sup of ``exp(b|x| - b|y|) - 1`` over ``|x - y| <= R``."""
    return math.expm1(b * R)


def _sup(x):
    return np.abs(x) if x.ndim == 1 else np.max(np.abs(x), axis=-1)


class _ZGrid:
    """Midpoint nodes on ``Lambda_R`` with ``C`` tabulated once (plus a zero pad cell)."""

    def __init__(self, model: CovarianceModel, step: float):
        R = model.support_radius
        nodes, h = midpoint_nodes(R, step)
        ext = np.concatenate([[nodes[0] - h], nodes, [nodes[-1] + h]])
        d = model.dimension
        if d == 1:
            pts = ext
        else:
            pts = np.stack(np.meshgrid(*([ext] * d), indexing="ij"), axis=-1)
        self.d = d
        self.h = h
        self.points = pts
        self.C = np.asarray(model(pts), dtype=float)
        self.shape = self.C.shape


def _ratio_chunk(zg: _ZGrid, b: float, xs):
    """Ratios and per-point midpoint error bounds for a chunk of points ``xs``."""
    d = zg.d
    if d == 1:
        diff = np.abs(xs[:, None] - zg.points[None, :])
        xnorm = np.abs(xs)[:, None]
    else:
        diff = np.max(np.abs(xs[:, None, None, :] - zg.points[None, :, :, :]), axis=-1)
        xnorm = np.max(np.abs(xs), axis=-1)[:, None, None]
    g = np.exp(-b * (diff - xnorm)) * zg.C[None, ...]
    inner = g[(slice(None),) + (slice(1, -1),) * d]
    ratio = np.sum(inner.reshape(len(xs), -1), axis=1) * zg.h ** d
    err = np.zeros(len(xs))
    for axis in range(1, d + 1):
        sd = np.abs(np.diff(g, n=2, axis=axis))
        err += np.sum(sd.reshape(len(xs), -1), axis=1)
    return ratio, 0.5 * zg.h ** d * err


def convolution_ratio(model: CovarianceModel, b: float, x, z_step: float, chunk_elems=4_000_000):
    """``(f*C)(x)/f(x)`` at points ``x`` with midpoint error bounds."""
    zg = _ZGrid(model, z_step)
    return _ratios(zg, b, np.asarray(x, dtype=float), chunk_elems)


def _ratios(zg: _ZGrid, b: float, x, chunk_elems=4_000_000):
    n = len(x)
    per = int(np.prod(zg.shape))
    chunk = max(1, chunk_elems // per)
    ratio = np.empty(n)
    err = np.empty(n)
    for s in range(0, n, chunk):
        ratio[s:s + chunk], err[s:s + chunk] = _ratio_chunk(zg, b, x[s:s + chunk])
    return ratio, err


def _orthant_nodes(T: float, step: float, d: int):
    """Midpoints of cells on ``[0, T]^d``; the integrands are even in each coordinate."""
    n = max(1, int(math.ceil(T / step - 1e-9)))
    h = T / n
    nodes = h * (np.arange(n) + 0.5)
    if d == 1:
        return nodes, h, (n,)
    pts = np.stack(np.meshgrid(*([nodes] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return pts, h, (n,) * d


def _f_sq_tail(b: float, T: float, d: int) -> float:
    """``int_{|x| > T} exp(-2b|x|) dx`` (sup-norm shells have measure ``2d (2rho)^(d-1)``)."""
    if d == 1:
        return math.exp(-2 * b * T) / b
    return 8 * math.exp(-2 * b * T) * (T / (2 * b) + 1 / (4 * b * b))


@dataclass
class _Evaluation:
    grid: CertificateGrid
    zg: _ZGrid
    x: np.ndarray
    shape: tuple
    h: float
    ratio: np.ndarray
    ratio_err: np.ndarray


def _evaluate(model, b, grid: CertificateGrid) -> _Evaluation:
    zg = _ZGrid(model, grid.z_step)
    x, h, shape = _orthant_nodes(grid.truncation, grid.x_step, model.dimension)
    ratio, err = _ratios(zg, b, x)
    return _Evaluation(grid, zg, x, shape, h, ratio, err)


def _convolution_report(model, summary, b, ev: _Evaluation) -> ConvolutionReport:
    # x = 0 is a cell edge of the orthant grid; include it explicitly
    origin = np.zeros((1, model.dimension)) if model.dimension > 1 else np.zeros(1)
    r0, e0 = _ratios(ev.zg, b, origin)
    ratios = np.concatenate([r0, ev.ratio])
    errs = np.concatenate([e0, ev.ratio_err])
    i = int(np.argmin(ratios))
    pts = np.concatenate([origin, ev.x])
    argmin = tuple(np.atleast_1d(pts[i]).tolist())
    threshold = summary.Cbar / 2
    qerr = float(np.max(errs)) + summary.quadrature_error / 2
    if qerr > summary.Cbar / 4:
        raise UnresolvedQuadrature("unresolved margin: convolution quadrature error exceeds C̄/4")
    min_ratio = float(ratios[i])
    margin = min_ratio - threshold
    analytic = summary.Cbar - exponent_gap_bound(b, summary.R) * summary.L1
    return ConvolutionReport(
        z_step=ev.zg.h, x_step=ev.h, truncation=ev.grid.truncation,
        min_ratio=min_ratio, argmin=argmin, threshold=threshold, margin=margin,
        quadrature_error=qerr, analytic_bound=analytic,
        tail_certified=bool(analytic >= threshold), passed=bool(margin >= -qerr))


def convolution_lower_bound(model: CovarianceModel, b: float,
                            grid: Optional[CertificateGrid] = None,
                            summary: Optional[CovarianceSummary] = None) -> ConvolutionReport:
    """Check ``(f*C)(x) >= (Cbar/2) f(x)`` on the evaluation grid.

    A failing check (e.g. ``b`` far above the admissible rate) is reported
    through ``margin`` and ``passed``, not raised.
    """
    summary = summary or summarize(model)
    _require_finite_support(summary)
    grid = (grid or CertificateGrid()).resolve(model, b)
    return _convolution_report(model, summary, b, _evaluate(model, b, grid))


def _require_finite_support(summary):
    if not summary.eligible:
        raise IneligibleModel(
            "condition (2) violated: covariance needs compact support and positive integral")


def _double_integral(ev: _Evaluation, b: float, d: int):
    """``iint f(x) f(y) C(x-y) = int f^2 (x) ratio(x) dx`` and an error bound."""
    fx = np.exp(-b * _sup(ev.x))
    F = (fx * fx * ev.ratio).reshape(ev.shape)
    sym = 2 ** d
    cell = ev.h ** d
    value = sym * cell * float(np.sum(F))
    # mirror padding at the origin, flat padding at the truncation edge
    padded = np.pad(F, 1, mode="symmetric")
    for axis in range(d):
        idx = [slice(None)] * d
        idx[axis] = -1
        src = [slice(None)] * d
        src[axis] = -2
        padded[tuple(idx)] = padded[tuple(src)]
    err = sym * midpoint_error_proxy(padded, ev.h)
    err += sym * cell * float(np.sum(fx * fx * ev.ratio_err))
    rmax = float(np.max(np.abs(ev.ratio)))
    err += rmax * _f_sq_tail(b, ev.grid.truncation, d)
    return value, err


def _check_integral(model, b, ev: _Evaluation):
    """Second route to the double integral.

    d = 1: ``int C(z) A(z) dz`` with the closed-form autocorrelation
    ``A(z) = exp(-b|z|) (1/b + |z|)`` of ``f``.  d = 2: the product trapezoid
    rule on the cell edges of the evaluation grid, whose leading error has the
    opposite sign to the midpoint rule.
    """
    d = model.dimension
    if d == 1:
        zg = ev.zg
        z = zg.points
        A = np.exp(-b * np.abs(z)) * (1 / b + np.abs(z))
        g = zg.C * A
        return float(np.sum(g[1:-1])) * zg.h, midpoint_error_proxy(g, zg.h)
    n = ev.shape[0]
    h = ev.h
    edges = h * np.arange(n + 1)
    pts = np.stack(np.meshgrid(edges, edges, indexing="ij"), axis=-1).reshape(-1, 2)
    r, rerr = _ratios(ev.zg, b, pts)
    f2 = np.exp(-2 * b * _sup(pts))
    w = np.full(n + 1, h)
    w[0] = w[-1] = h / 2
    W = np.outer(w, w).reshape(-1)
    value = 4 * float(np.sum(W * f2 * r))
    F = (f2 * r).reshape(n + 1, n + 1)
    err = 4 * sum(float(np.sum(np.abs(np.diff(F, n=2, axis=a)))) for a in range(2)) * h ** 2
    err += 4 * float(np.sum(W * f2 * rerr))
    err += float(np.max(np.abs(r))) * _f_sq_tail(b, ev.grid.truncation, d)
    return value, err


def compute_normalization(model: CovarianceModel, b: float,
                          grid: Optional[CertificateGrid] = None):
    """``alpha = sqrt(C0) (iint f f C)^(-1/2)``; returns ``(alpha, double_integral, error)``."""
    grid = (grid or CertificateGrid()).resolve(model, b)
    ev = _evaluate(model, b, grid)
    return _normalization(model, b, ev)


def _normalization(model, b, ev):
    I, err = _double_integral(ev, b, model.dimension)
    if I <= err:
        raise UnresolvedQuadrature("normalization unresolved: double integral below its error")
    return math.sqrt(model.C0 / I), I, err


def _gamma_points(radius: float, step: float, d: int):
    """Orthant grid of the open box ``Lambda_radius`` including points next to its boundary."""
    n = max(2, int(math.ceil(radius / step)))
    inner = np.linspace(0.0, radius, n + 1)
    inner[-1] = radius * (1 - 1e-12)
    if d == 1:
        return inner
    return np.stack(np.meshgrid(inner, inner, indexing="ij"), axis=-1).reshape(-1, 2)


def verify_condition4(model: CovarianceModel, cert: WegnerCertificate,
                      grid: Optional[CertificateGrid] = None, rel_tol: float = 1e-6,
                      _ev: Optional[_Evaluation] = None) -> Condition4Report:
    """Normalization ``iint mu mu C = C(0)`` and ``mu*C >= C(0) gamma`` on ``Lambda_{1/b}``."""
    b, alpha, gamma = cert.b, cert.alpha, cert.gamma
    grid = (grid or cert.grid).resolve(model, b)
    ev = _ev or _evaluate(model, b, grid)
    C0 = model.C0
    I, I_err = _double_integral(ev, b, model.dimension)
    Ic, Ic_err = _check_integral(model, b, ev)
    residual = abs(alpha * alpha * Ic - C0)
    norm_tol = max(rel_tol * C0, alpha * alpha * (I_err + Ic_err))

    radius = 1.0 / b
    pts = _gamma_points(radius, grid.x_step, model.dimension)
    r, rerr = _ratios(ev.zg, b, pts)
    mu_conv = alpha * np.exp(-b * _sup(pts)) * r
    margins = mu_conv - C0 * gamma
    i = int(np.argmin(margins))
    lb_margin = float(margins[i])
    lb_tol = alpha * float(np.max(rerr))
    passed = residual <= norm_tol and lb_margin >= -lb_tol
    return Condition4Report(
        double_integral=I, check_integral=Ic, normalization_residual=residual,
        normalization_tolerance=norm_tol, lower_bound_margin=lb_margin,
        lower_bound_tolerance=lb_tol, gamma_grid_points=int(len(pts)), passed=bool(passed))


def build_certificate(model: CovarianceModel, grid: Optional[CertificateGrid] = None,
                      summary: Optional[CovarianceSummary] = None,
                      b_factor: float = 1.0) -> WegnerCertificate:
    """Run the whole construction and both verifications."""
    summary = summary or summarize(model)
    b = choose_decay_rate(summary, b_factor)
    grid = (grid or CertificateGrid()).resolve(model, b)
    ev = _evaluate(model, b, grid)
    conv = _convolution_report(model, summary, b, ev)
    alpha, _, _ = _normalization(model, b, ev)
    gamma = alpha * summary.Cbar / (2 * _E * summary.C0)
    cert = WegnerCertificate(b=b, alpha=alpha, gamma=gamma, box_radius=1.0 / b,
                             summary=summary, grid=grid, convolution_report=conv,
                             condition4_report=None)
    c4 = verify_condition4(model, cert, grid, _ev=ev)
    return WegnerCertificate(b=b, alpha=alpha, gamma=gamma, box_radius=1.0 / b,
                             summary=summary, grid=grid, convolution_report=conv,
                             condition4_report=c4)
