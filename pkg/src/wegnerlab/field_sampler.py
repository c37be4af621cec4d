"""Stationary Gaussian potentials on the lattice of ``Lambda_L`` by circulant embedding.

Lattice nodes are cell centres ``-L + (k + 1/2) h``, ``k = 0..n-1`` per axis,
so all nodes lie inside the open box.  The covariance is sampled on a torus
of ``M >= n + 2 ceil(pad/h)`` nodes per axis; for ``pad >= R`` the periodized
covariance agrees with ``C`` on every pair of box nodes and the circulant
multipliers are nonnegative up to rounding (restrictions of positive
definite functions to a lattice are positive definite).

Realization ``k`` of a run with master seed ``s`` draws from the stream
``SeedSequence(s, spawn_key=(k,))``, so results never depend on scheduling.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .covariance import CovarianceError, CovarianceModel

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
BOUNDARY_CONDITIONS = (DIRICHLET, NEUMANN)

CLIP_BUDGET = 1e-8


class EmbeddingError(CovarianceError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    d: int
    L: float
    h: float
    boundary_condition: str = DIRICHLET

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("lattices support d = 1 or 2")
        if not (self.h > 0 and self.L > 0):
            raise ValueError("L and h must be positive")
        if self.boundary_condition not in BOUNDARY_CONDITIONS:
            raise ValueError(f"unknown boundary condition {self.boundary_condition!r}")
        n = self.n_per_axis
        if n < 2:
            raise ValueError("lattice needs at least 2 nodes per axis")
        if abs(n * self.h - 2 * self.L) > 1e-9 * 2 * self.L:
            raise ValueError(f"2L = {2 * self.L} is not a multiple of h = {self.h}")

    @property
    def n_per_axis(self) -> int:
        return int(round(2 * self.L / self.h))

    @property
    def shape(self) -> tuple:
        return (self.n_per_axis,) * self.d

    @property
    def size(self) -> int:
        return self.n_per_axis ** self.d

    @property
    def volume(self) -> float:
        return (2 * self.L) ** self.d

    def nodes(self):
        return -self.L + self.h * (np.arange(self.n_per_axis) + 0.5)

    def with_bc(self, bc: str) -> "LatticeSpec":
        return LatticeSpec(self.d, self.L, self.h, bc)

    def same_grid(self, other: "LatticeSpec") -> bool:
        return (self.d, self.n_per_axis) == (other.d, other.n_per_axis) and \
            math.isclose(self.h, other.h, rel_tol=1e-12)

    def to_dict(self):
        return {"d": self.d, "L": self.L, "h": self.h, "n_per_axis": self.n_per_axis,
                "boundary_condition": self.boundary_condition}


@dataclass(frozen=True)
class FieldRealization:
    lattice: LatticeSpec
    values: np.ndarray
    seed: int
    stream: int = 0
    model_id: str = ""

    def __post_init__(self):
        if self.values.shape != self.lattice.shape:
            raise ValueError(f"field shape {self.values.shape} != lattice {self.lattice.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


@dataclass(frozen=True, eq=False)
class EmbeddingOperator:
    lattice: LatticeSpec
    period: int
    multipliers: np.ndarray = field(repr=False)
    clip_mass: float
    model_id: str
    C0: float

    @property
    def sqrt_multipliers(self) -> np.ndarray:
        # torus normalization folded in once
        return np.sqrt(self.multipliers / self.multipliers.size)


def _torus_offsets(M: int, h: float):
    k = np.arange(M)
    return np.where(k <= M // 2, k, k - M) * h


def build_embedding(model: CovarianceModel, lattice: LatticeSpec,
                    pad: Optional[float] = None, fast_len: bool = True) -> EmbeddingOperator:
    """Circulant embedding of ``C`` for the lattice of ``lattice``.

    ``pad`` defaults to the support radius; models without compact support
    need an explicit pad (the periodization then carries the tail of ``C``
    beyond ``pad``).
    """
    if model.dimension != lattice.d:
        raise EmbeddingError("model and lattice dimensions differ")
    R = model.support_radius
    if pad is None:
        if math.isinf(R):
            raise EmbeddingError("a pad is required for covariances without compact support")
        pad = R
    if math.isfinite(R) and pad < R * (1 - 1e-12):
        raise EmbeddingError(f"pad {pad} < support radius {R}: periodization would bias C")
    n = lattice.n_per_axis
    M = n + 2 * int(math.ceil(pad / lattice.h - 1e-9))
    if fast_len:
        M = sfft.next_fast_len(M, real=False)
    off = _torus_offsets(M, lattice.h)
    if lattice.d == 1:
        c = model(off)
    else:
        c = model(np.stack(np.meshgrid(off, off, indexing="ij"), axis=-1))
    lam = np.real(sfft.fftn(c))
    neg = lam < 0
    clip_mass = float(np.sum(-lam[neg])) / lam.size
    C0 = model.C0
    if clip_mass > CLIP_BUDGET * C0:
        raise EmbeddingError(
            f"covariance not embeddable at this resolution (clip mass {clip_mass:.3g}); "
            "try a larger pad or a finer h")
    lam = np.where(neg, 0.0, lam)
    lam.setflags(write=False)
    return EmbeddingOperator(lattice, M, lam, clip_mass, model.model_id, C0)


def stream_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def sample(embedding: EmbeddingOperator, seed: int, stream: int = 0) -> FieldRealization:
    """One realization; deterministic in ``(embedding, seed, stream)``.

    Spectral synthesis with complex white noise ``Z``: the real part of
    ``FFT(sqrt(lambda / N) Z)`` has covariance ``c`` on the torus.
    """
    rng = stream_rng(seed, stream)
    shape = embedding.multipliers.shape
    noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    y = np.real(sfft.fftn(embedding.sqrt_multipliers * noise))
    n = embedding.lattice.n_per_axis
    values = np.ascontiguousarray(y[(slice(0, n),) * embedding.lattice.d])
    return FieldRealization(embedding.lattice, values, int(seed), int(stream), embedding.model_id)


def sample_many(embedding: EmbeddingOperator, seed: int, streams: Sequence[int],
                workers: int = 1) -> np.ndarray:
    """Values of realizations ``streams`` stacked along axis 0."""
    streams = list(streams)
    out = np.empty((len(streams),) + embedding.lattice.shape)

    def fill(i):
        out[i] = sample(embedding, seed, streams[i]).values

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(len(streams))))
    else:
        for i in range(len(streams)):
            fill(i)
    return out


def zero_field(lattice: LatticeSpec) -> FieldRealization:
    """Deterministic ``V = 0`` (free Laplacian) for tests and reference curves."""
    return FieldRealization(lattice, np.zeros(lattice.shape), 0, 0, "zero")


@dataclass(frozen=True)
class CovarianceEstimate:
    lag: tuple
    mean: float
    stderr: float
    n_realizations: int


def _lag_products(values: np.ndarray, lag: tuple) -> np.ndarray:
    """Per-realization averages of ``V(x+u) V(x)`` over admissible ``x``."""
    d = values.ndim - 1
    a = [slice(None)]
    b = [slice(None)]
    for u, n in zip(lag, values.shape[1:]):
        if abs(u) >= n:
            raise ValueError(f"lag {lag} does not fit in the lattice")
        if u >= 0:
            a.append(slice(0, n - u))
            b.append(slice(u, n))
        else:
            a.append(slice(-u, n))
            b.append(slice(0, n + u))
    prod = values[tuple(a)] * values[tuple(b)]
    return prod.reshape(len(values), -1).mean(axis=1) if d else prod


def _as_values(realizations) -> np.ndarray:
    if isinstance(realizations, np.ndarray):
        return realizations
    lat = realizations[0].lattice
    for r in realizations[1:]:
        if not r.lattice.same_grid(lat):
            raise ValueError("realizations live on different lattices")
    return np.stack([r.values for r in realizations])


def empirical_covariance(realizations, lags: Sequence) -> list:
    """Mean of ``V(x+u) V(x)`` per lag with the standard error across realizations.

    ``realizations`` is a list of :class:`FieldRealization` or an array with
    realizations along axis 0.  Lags are integer lattice offsets (int or tuple).
    """
    values = _as_values(realizations)
    K = len(values)
    if K < 2:
        raise ValueError("need at least 2 realizations")
    out = []
    for lag in lags:
        lag = tuple(np.atleast_1d(lag).astype(int).tolist())
        if len(lag) != values.ndim - 1:
            raise ValueError(f"lag {lag} has the wrong dimension")
        per = _lag_products(values, lag)
        se = float(np.std(per, ddof=1) / math.sqrt(K))
        out.append(CovarianceEstimate(lag, float(np.mean(per)), se, K))
    return out


def mean_estimate(realizations):
    """Grand mean of all sampled values and its standard error (per-realization means)."""
    values = _as_values(realizations)
    per = values.reshape(len(values), -1).mean(axis=1)
    return float(per.mean()), float(per.std(ddof=1) / math.sqrt(len(per)))


# ---------------------------------------------------------------------------
# binary export: row-major little-endian float64 plus a JSON sidecar


def save_field(realization: FieldRealization, path) -> tuple:
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(realization.values, dtype="<f8").tobytes(order="C"))
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = {"lattice": realization.lattice.to_dict(), "seed": realization.seed,
            "stream": realization.stream, "model_id": realization.model_id}
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, sidecar


def load_field(path) -> FieldRealization:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    lat = meta["lattice"]
    lattice = LatticeSpec(int(lat["d"]), float(lat["L"]), float(lat["h"]),
                          lat.get("boundary_condition", DIRICHLET))
    values = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(lattice.shape).astype(float)
    return FieldRealization(lattice, values, int(meta["seed"]), int(meta.get("stream", 0)),
                            meta.get("model_id", ""))
