"""Covariance models for homogeneous Gaussian potentials and their scalar functionals.

Three model families are provided:

* :class:`KernelCovariance` -- autocorrelation ``C = w * w~`` of a piecewise
  constant kernel on the line, evaluated in closed form.  ``dimension=2`` gives
  the tensor product ``C(x1) C(x2)``, which is the autocorrelation of ``w (x) w``.
* :class:`GaussHermiteCovariance` -- ``C0 exp(-s/2) (1 - 7s/16 + s^2/32)`` with
  ``s = ||x||^2 / t^2`` (Euclidean norm), not compactly supported.
* :class:`TabulatedCovariance` -- an even profile given by samples, linearly
  interpolated in ``|x|`` (sup-norm) or ``||x||``, zero beyond the last sample.

Points are passed as arrays whose trailing axis has length ``d`` when
``d > 1``; for ``d == 1`` any array of scalars is accepted.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

SUP = "sup"
EUCLIDEAN = "euclidean"

# coefficients of the polynomial factor 1 - 7s/16 + s^2/32
_GH_COEFFS = (1.0, -7.0 / 16.0, 1.0 / 32.0)


class CovarianceError(ValueError):
    """Raised for inadmissible models or unresolved functionals."""


class ResolutionError(CovarianceError):
    """A quantity is not resolved at the requested quadrature resolution."""


@dataclass(frozen=True)
class PiecewiseConstantKernel:
    """Kernel ``w`` taking ``values[i]`` on ``[breakpoints[i], breakpoints[i+1])``."""

    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        if len(bp) != len(vals) + 1:
            raise CovarianceError("need len(breakpoints) == len(values) + 1")
        if any(not math.isfinite(v) for v in bp + vals):
            raise CovarianceError("kernel data must be finite")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise CovarianceError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def indicator_sum(cls, terms: Sequence[tuple]) -> "PiecewiseConstantKernel":
        """Build ``sum_k c_k chi_[a_k, b_k]`` from ``(c_k, a_k, b_k)`` triples."""
        edges = sorted({float(e) for _, a, b in terms for e in (a, b)})
        values = []
        for lo, hi in zip(edges, edges[1:]):
            mid = 0.5 * (lo + hi)
            values.append(sum(c for c, a, b in terms if a <= mid <= b))
        return cls(tuple(edges), tuple(values))

    @property
    def width(self) -> float:
        return self.breakpoints[-1] - self.breakpoints[0]

    @property
    def integral(self) -> float:
        bp = np.asarray(self.breakpoints)
        return float(np.dot(np.diff(bp), self.values))

    @property
    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.values)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        idx = np.searchsorted(self.breakpoints, y, side="right") - 1
        inside = (idx >= 0) & (idx < len(self.values))
        vals = np.asarray(self.values)[np.clip(idx, 0, len(self.values) - 1)]
        return np.where(inside, vals, 0.0)


class CovarianceModel:
    """Common surface of all covariance models (even, ``C(0) > 0``)."""

    kind: str
    dimension: int
    norm_convention: str

    @property
    def support_radius(self) -> float:
        raise NotImplementedError

    @property
    def C0(self) -> float:
        return float(self(np.zeros(self.dimension) if self.dimension > 1 else 0.0))

    @property
    def is_continuous(self) -> bool:
        return True

    def __call__(self, x):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def scaled(self, c: float) -> "CovarianceModel":
        """The model for ``c * C``."""
        raise NotImplementedError

    def default_truncation(self) -> float:
        return self.support_radius

    @property
    def model_id(self) -> str:
        doc = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(doc.encode()).hexdigest()[:16]

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if self.dimension > 1 and (x.ndim == 0 or x.shape[-1] != self.dimension):
            raise CovarianceError(f"points need a trailing axis of length {self.dimension}")
        return x


def _overlap_autocorr(kernel: PiecewiseConstantKernel, x):
    """``int w(y) w(y + x) dy`` for an array of shifts, exact."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(kernel.breakpoints[:-1])
    b = np.asarray(kernel.breakpoints[1:])
    v = np.asarray(kernel.values)
    flat = x.reshape(-1)
    out = np.empty_like(flat)
    # chunk to bound the (n, m, m) temporary
    m = len(v)
    chunk = max(1, 2_000_000 // (m * m))
    vv = v[:, None] * v[None, :]
    for s in range(0, flat.size, chunk):
        xs = flat[s:s + chunk, None, None]
        lo = np.maximum(a[None, :, None], a[None, None, :] - xs)
        hi = np.minimum(b[None, :, None], b[None, None, :] - xs)
        out[s:s + chunk] = np.sum(vv * np.clip(hi - lo, 0.0, None), axis=(1, 2))
    return out.reshape(x.shape)


@dataclass(frozen=True)
class KernelCovariance(CovarianceModel):
    kernel: PiecewiseConstantKernel
    dimension: int = 1
    kind: str = field(default="kernel", init=False)
    norm_convention: str = field(default=SUP, init=False)

    def __post_init__(self):
        if self.kernel.is_zero:
            raise CovarianceError("degenerate kernel")
        if self.dimension not in (1, 2):
            raise CovarianceError("kernel models support dimension 1 or 2")

    @property
    def support_radius(self) -> float:
        return self.kernel.width

    def profile(self, x):
        r = np.asarray(x, dtype=float)
        out = _overlap_autocorr(self.kernel, np.abs(r))
        return np.where(np.abs(r) >= self.support_radius, 0.0, out)

    def __call__(self, x):
        x = self._points(x)
        if self.dimension == 1:
            return self.profile(x)
        return np.prod(self.profile(x), axis=-1)

    def to_dict(self):
        return {"kind": "kernel", "dimension": self.dimension,
                "breakpoints": list(self.kernel.breakpoints),
                "values": list(self.kernel.values)}

    def scaled(self, c):
        root = math.sqrt(c) ** (1.0 / self.dimension)
        k = PiecewiseConstantKernel(self.kernel.breakpoints,
                                    tuple(root * v for v in self.kernel.values))
        return KernelCovariance(k, self.dimension)


@dataclass(frozen=True)
class GaussHermiteCovariance(CovarianceModel):
    C0_value: float = 1.0
    t: float = 1.0
    dimension: int = 1
    kind: str = field(default="gauss-hermite", init=False)
    norm_convention: str = field(default=EUCLIDEAN, init=False)

    def __post_init__(self):
        if not (self.C0_value > 0 and self.t > 0):
            raise CovarianceError("gauss-hermite needs C0 > 0 and t > 0")
        if self.dimension < 1:
            raise CovarianceError("dimension must be positive")

    @property
    def support_radius(self) -> float:
        return math.inf

    @property
    def C0(self) -> float:
        return float(self.C0_value)

    def __call__(self, x):
        x = self._points(x)
        r2 = x * x if self.dimension == 1 else np.sum(x * x, axis=-1)
        s = r2 / self.t ** 2
        c0, c1, c2 = _GH_COEFFS
        return self.C0_value * np.exp(-0.5 * s) * (c0 + c1 * s + c2 * s * s)

    def default_truncation(self) -> float:
        return 8.0 * self.t

    def exact_integral(self) -> float:
        """``int C`` from the Gaussian moments ``E r^2 = d``, ``E r^4 = d(d+2)``."""
        d = self.dimension
        c0, c1, c2 = _GH_COEFFS
        moment = c0 + c1 * d + c2 * d * (d + 2)
        return self.C0_value * self.t ** d * (2 * math.pi) ** (d / 2) * moment

    def tail_bound(self, radius: float) -> float:
        """Upper bound for ``int |C|`` outside the box ``|x| < radius``."""
        d = self.dimension
        a = radius / self.t
        sphere = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
        total = 0.0
        for k, c in enumerate(_GH_COEFFS):
            m = d - 1 + 2 * k
            # int_a^inf r^m e^{-r^2/2} dr
            total += abs(c) * 2 ** ((m - 1) / 2) * special.gamma((m + 1) / 2) * \
                special.gammaincc((m + 1) / 2, a * a / 2)
        return self.C0_value * self.t ** d * sphere * total

    def to_dict(self):
        return {"kind": "gauss-hermite", "dimension": self.dimension,
                "C0": self.C0_value, "t": self.t}

    def scaled(self, c):
        return GaussHermiteCovariance(self.C0_value * c, self.t, self.dimension)


@dataclass(frozen=True)
class TabulatedCovariance(CovarianceModel):
    """Even profile ``g(rho)`` sampled at radii ``0 = r_0 < ... < r_m``.

    The last radius is the support radius; a nonzero final value is a jump
    discontinuity at the support edge, accepted but reported through
    :attr:`is_continuous`.
    """

    radii: tuple
    values: tuple
    dimension: int = 1
    norm: str = SUP
    kind: str = field(default="tabulated", init=False)

    def __post_init__(self):
        r = tuple(float(v) for v in self.radii)
        g = tuple(float(v) for v in self.values)
        if len(r) != len(g) or len(r) < 2:
            raise CovarianceError("tabulated model needs >= 2 (radius, value) samples")
        if r[0] != 0.0 or any(b <= a for a, b in zip(r, r[1:])):
            raise CovarianceError("radii must start at 0 and increase strictly")
        if g[0] <= 0:
            raise CovarianceError("C(0) must be positive")
        if self.norm not in (SUP, EUCLIDEAN):
            raise CovarianceError(f"unknown norm {self.norm!r}")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "values", g)

    @property
    def norm_convention(self) -> str:
        return self.norm

    @property
    def support_radius(self) -> float:
        return self.radii[-1]

    @property
    def is_continuous(self) -> bool:
        return self.values[-1] == 0.0

    @property
    def edge_jump(self) -> float:
        return abs(self.values[-1])

    def __call__(self, x):
        x = self._points(x)
        if self.dimension == 1:
            rho = np.abs(x)
        elif self.norm == SUP:
            rho = np.max(np.abs(x), axis=-1)
        else:
            rho = np.sqrt(np.sum(x * x, axis=-1))
        out = np.interp(rho, self.radii, self.values)
        return np.where(rho >= self.support_radius, 0.0, out)

    def to_dict(self):
        return {"kind": "tabulated", "dimension": self.dimension, "norm": self.norm,
                "samples": [[r, g] for r, g in zip(self.radii, self.values)]}

    def scaled(self, c):
        return TabulatedCovariance(self.radii, tuple(c * g for g in self.values),
                                   self.dimension, self.norm)


def evaluate(model: CovarianceModel, x):
    """``C(x)``; exactly zero outside a finite support."""
    return model(x)


def autocorrelation_from_kernel(w: PiecewiseConstantKernel, dimension: int = 1) -> KernelCovariance:
    return KernelCovariance(w, dimension)


def triangular_model(dimension: int = 1) -> KernelCovariance:
    """Hat function ``max(0, 1 - |x|)``: autocorrelation of ``chi_[-1/2, 1/2]``."""
    return KernelCovariance(PiecewiseConstantKernel((-0.5, 0.5), (1.0,)), dimension)


def example_5b_model() -> KernelCovariance:
    """Autocorrelation of ``w = chi_[-3,3] - 5/4 chi_[-1,1]``; sign-changing, positive mean."""
    w = PiecewiseConstantKernel.indicator_sum([(1.0, -3.0, 3.0), (-1.25, -1.0, 1.0)])
    return KernelCovariance(w, 1)


def model_from_dict(doc: dict) -> CovarianceModel:
    """Build a model from its JSON document (see README for the keys)."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise CovarianceError("covariance document needs a 'kind'")
    kind = doc["kind"]
    allowed = {
        "kernel": {"kind", "dimension", "breakpoints", "values"},
        "gauss-hermite": {"kind", "dimension", "C0", "t"},
        "tabulated": {"kind", "dimension", "samples", "norm"},
    }
    if kind not in allowed:
        raise CovarianceError(f"unknown covariance kind {kind!r}")
    extra = set(doc) - allowed[kind]
    if extra:
        raise CovarianceError(f"unknown keys for {kind}: {sorted(extra)}")
    d = int(doc.get("dimension", 1))
    try:
        if kind == "kernel":
            return KernelCovariance(
                PiecewiseConstantKernel(tuple(doc["breakpoints"]), tuple(doc["values"])), d)
        if kind == "gauss-hermite":
            return GaussHermiteCovariance(float(doc.get("C0", 1.0)), float(doc.get("t", 1.0)), d)
        samples = np.asarray(doc["samples"], dtype=float)
        if samples.ndim != 2 or samples.shape[1] != 2:
            raise CovarianceError("samples must be a list of [radius, value] pairs")
        return TabulatedCovariance(tuple(samples[:, 0]), tuple(samples[:, 1]), d,
                                   doc.get("norm", SUP))
    except KeyError as exc:
        raise CovarianceError(f"missing key {exc.args[0]!r} for {kind}") from None


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureSpec:
    """Uniform midpoint grid: cell size ``step`` over ``[-T, T]^d``.

    ``truncation`` is required for models without compact support; for
    compactly supported models it defaults to the support radius.
    """

    step: float
    truncation: Optional[float] = None

    def __post_init__(self):
        if not self.step > 0:
            raise CovarianceError("quadrature step must be positive")
        if self.truncation is not None and not self.truncation > 0:
            raise CovarianceError("truncation radius must be positive")

    def halved(self) -> "QuadratureSpec":
        return QuadratureSpec(self.step / 2, self.truncation)


def default_quadrature(model: CovarianceModel) -> QuadratureSpec:
    T = model.default_truncation()
    per_axis = 16384 if model.dimension == 1 else 256
    return QuadratureSpec(2 * T / per_axis, T)


def _extent(model: CovarianceModel, grid: QuadratureSpec) -> float:
    if grid.truncation is not None:
        return grid.truncation
    if math.isinf(model.support_radius):
        raise CovarianceError("a truncation radius is required for infinite support")
    return model.support_radius


def midpoint_nodes(T: float, step: float):
    """Midpoints of ``ceil(2T/step)`` equal cells on ``[-T, T]`` and the actual cell size."""
    n = max(1, int(math.ceil(2 * T / step - 1e-9)))
    h = 2 * T / n
    return -T + h * (np.arange(n) + 0.5), h


def _grid_values(model, nodes_1d, pad_cells=1, h=None):
    """Model values on the tensor grid, extended by ``pad_cells`` cells per side."""
    if pad_cells:
        ext = np.arange(1, pad_cells + 1) * h
        nodes_1d = np.concatenate([nodes_1d[0] - ext[::-1], nodes_1d, nodes_1d[-1] + ext])
    if model.dimension == 1:
        return model(nodes_1d)
    mesh = np.stack(np.meshgrid(*([nodes_1d] * model.dimension), indexing="ij"), axis=-1)
    return model(mesh)


def midpoint_error_proxy(values, h: float) -> float:
    """``2 * h^d / 4 * sum |second differences|``.

    ``values`` must include one padding cell per side.  For a function whose
    derivative has bounded variation the midpoint error on a cell of size ``h``
    is at most ``h^2/4`` times that variation; the second differences are the
    discrete estimate of the variation and the factor 2 is a safety margin.
    """
    d = values.ndim
    total = 0.0
    for axis in range(d):
        total += np.sum(np.abs(np.diff(values, n=2, axis=axis)))
    return 0.5 * h ** d * float(total)


@dataclass(frozen=True)
class CovarianceSummary:
    C0: float
    Cbar: float
    L1: float
    R: float
    quadrature_error: float
    step: float
    truncation: float
    dimension: int = 1

    @property
    def eligible(self) -> bool:
        """Compact support and positive mean: the hypotheses of the certificate."""
        return math.isfinite(self.R) and self.Cbar > 0

    def to_dict(self):
        return {"C0": self.C0, "Cbar": self.Cbar, "L1": self.L1, "R": self.R,
                "quadrature_error": self.quadrature_error,
                "grid": {"step": self.step, "truncation": self.truncation},
                "dimension": self.dimension}


def summarize(model: CovarianceModel, grid: Optional[QuadratureSpec] = None) -> CovarianceSummary:
    """``C(0)``, ``int C`` and ``int |C|`` by composite midpoint quadrature."""
    grid = grid or default_quadrature(model)
    T = _extent(model, grid)
    nodes, h = midpoint_nodes(T, grid.step)
    vals = _grid_values(model, nodes, 1, h)
    inner = vals[(slice(1, -1),) * model.dimension]
    cell = h ** model.dimension
    Cbar = float(np.sum(inner)) * cell
    L1 = float(np.sum(np.abs(inner))) * cell
    err = max(midpoint_error_proxy(vals, h), midpoint_error_proxy(np.abs(vals), h))
    if not model.is_continuous and model.dimension == 1:
        err += 2 * h * getattr(model, "edge_jump", 0.0)
    if T < model.support_radius:
        if isinstance(model, GaussHermiteCovariance):
            err += model.tail_bound(T)
        else:
            err = math.inf
    C0 = model.C0
    if not C0 > 0:
        raise CovarianceError("C(0) must be positive")
    if Cbar <= err:
        raise ResolutionError("sign of C̄ not resolved at this resolution")
    return CovarianceSummary(C0=C0, Cbar=Cbar, L1=max(L1, abs(Cbar)), R=model.support_radius,
                             quadrature_error=err, step=h, truncation=T,
                             dimension=model.dimension)


def is_pointwise_nonnegative(model: CovarianceModel, grid: Optional[QuadratureSpec] = None,
                             tol: float = 1e-12) -> bool:
    grid = grid or default_quadrature(model)
    T = _extent(model, grid)
    nodes, h = midpoint_nodes(T, grid.step)
    # include the exact grid of cell edges too, so kinks at lattice points are seen
    edges = np.linspace(-T, T, len(nodes) + 1)
    pts = np.union1d(nodes, edges)
    vals = _grid_values(model, pts, 0)
    return bool(np.min(vals) >= -tol * model.C0)


@dataclass(frozen=True)
class SpectralReport:
    min_coefficient: float
    max_coefficient: float
    tolerance: float
    period: float
    step: float
    passed: bool


def spectral_nonnegativity_check(model: CovarianceModel, grid: QuadratureSpec,
                                 period: Optional[float] = None,
                                 tol: float = 1e-9) -> SpectralReport:
    """Discrete Fourier coefficients of ``C`` sampled on a periodic lattice.

    Coefficients are ``step^d * DFT`` so they approximate the continuum
    Fourier transform.  ``tol`` is relative to ``C(0)``.
    """
    T = _extent(model, grid)
    P = period if period is not None else 2 * T
    if P < 2 * T * (1 - 1e-12):
        raise CovarianceError("period must be at least twice the support/truncation radius")
    n = int(round(P / grid.step))
    k = np.arange(n)
    k = np.where(k <= n // 2, k, k - n) * grid.step
    if model.dimension == 1:
        c = model(k)
    else:
        mesh = np.stack(np.meshgrid(*([k] * model.dimension), indexing="ij"), axis=-1)
        c = model(mesh)
    coeffs = np.real(np.fft.fftn(c)) * grid.step ** model.dimension
    lo = float(np.min(coeffs))
    thr = tol * model.C0
    return SpectralReport(lo, float(np.max(coeffs)), thr, n * grid.step, grid.step, lo >= -thr)
