"""Monte Carlo integrated density of states and empirical Wegner constants.

Counts are integers; every per-realization count vector is kept and all
sums are exact integer sums, so curves are bit-identical for any worker
count or scheduling.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .covariance import CovarianceModel
from .field_sampler import (EmbeddingOperator, FieldRealization, LatticeSpec, build_embedding,
                            sample)
from .hamiltonian import assemble, count_below, eigenvalues, laplacian_diagonal, sturm_counts

Z95 = 1.959963984540054


def _fmt(x) -> str:
    return repr(float(x))


@dataclass(frozen=True, eq=False)
class IDSCurve:
    energies: np.ndarray
    lattice: LatticeSpec
    bc: str
    counts: np.ndarray = field(repr=False)   # (n_realizations, n_energies), int64
    master_seed: int
    model_id: str = ""
    n_shifted: int = 0

    @property
    def n_realizations(self) -> int:
        return self.counts.shape[0]

    @property
    def total_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def mean_counts(self) -> np.ndarray:
        return self.total_counts / self.n_realizations

    @property
    def normalized(self) -> np.ndarray:
        return self.mean_counts / self.lattice.volume

    @property
    def stderr(self) -> np.ndarray:
        """Standard error of ``mean_counts`` from exact integer moments."""
        K = self.n_realizations
        if K < 2:
            return np.full(len(self.energies), math.nan)
        s1 = self.counts.sum(axis=0)
        s2 = (self.counts * self.counts).sum(axis=0)
        var = (K * s2 - s1 * s1) / (K * (K - 1))
        return np.sqrt(np.maximum(var, 0) / K)

    @property
    def normalized_stderr(self) -> np.ndarray:
        return self.stderr / self.lattice.volume

    def index_of(self, E: float) -> int:
        j = int(np.argmin(np.abs(self.energies - E)))
        if not math.isclose(self.energies[j], E, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError(f"energy {E} is not on the curve's grid")
        return j

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["E", "mean_count", "normalized", "stderr", "bc", "L", "h", "n_realizations"])
        for E, m, nv, se in zip(self.energies, self.mean_counts, self.normalized, self.stderr):
            w.writerow([_fmt(E), _fmt(m), _fmt(nv), _fmt(se), self.bc, _fmt(self.lattice.L),
                        _fmt(self.lattice.h), self.n_realizations])
        return buf.getvalue()


FieldSource = Callable[[int], FieldRealization]


def _counts_for(lattice, bcs, energies, fields):
    """Count matrix per boundary condition for a list of fields."""
    out = {}
    if lattice.d == 1:
        V = np.stack([f.values for f in fields])
        e2 = 1.0 / lattice.h ** 4
        for bc in bcs:
            diag = laplacian_diagonal(lattice, bc)[None, :] + V
            c, zero = sturm_counts(diag, e2, energies)
            shifted = 0
            if np.any(zero):
                for k in np.nonzero(zero.any(axis=1))[0]:
                    H = assemble(lattice, fields[k], bc)
                    c[k] = count_below(H, energies)
                shifted = int(zero.sum())
            out[bc] = (c, shifted)
    else:
        for bc in bcs:
            rows = []
            shifted = 0
            for f in fields:
                cnt, sh = count_below(assemble(lattice, f, bc), energies, return_shift=True)
                rows.append(cnt)
                shifted += int(np.count_nonzero(sh))
            out[bc] = (np.stack(rows), shifted)
    return out


def estimate_ids_bcs(model: Optional[CovarianceModel], lattice: LatticeSpec, bcs: Sequence[str],
                     energies, n_realizations: int, master_seed: int, pad: Optional[float] = None,
                     workers: int = 1, chunk: int = 64,
                     field_source: Optional[FieldSource] = None,
                     embedding: Optional[EmbeddingOperator] = None) -> dict:
    """IDS curves for several boundary conditions from the same realizations.

    Realization ``k`` uses the stream ``(master_seed, k)``.  ``field_source``
    replaces the sampler (``k -> FieldRealization``), e.g. a zero field.
    """
    if n_realizations < 1:
        raise ValueError("n_realizations must be positive")
    energies = np.asarray(energies, dtype=float)
    if energies.ndim != 1 or np.any(np.diff(energies) < 0):
        raise ValueError("energies must be an ascending 1-D grid")
    if field_source is None:
        emb = embedding or build_embedding(model, lattice, pad)
        field_source = lambda k: sample(emb, master_seed, k)  # noqa: E731
        model_id = emb.model_id
    else:
        model_id = "custom"

    starts = list(range(0, n_realizations, chunk))

    def work(s):
        fields = [field_source(k) for k in range(s, min(s + chunk, n_realizations))]
        return s, _counts_for(lattice, bcs, energies, fields)

    counts = {bc: np.zeros((n_realizations, len(energies)), dtype=np.int64) for bc in bcs}
    shifted = {bc: 0 for bc in bcs}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(s) for s in starts]
    for s, res in results:
        for bc, (c, sh) in res.items():
            counts[bc][s:s + len(c)] = c
            shifted[bc] += sh
    return {bc: IDSCurve(energies, lattice.with_bc(bc), bc, counts[bc], master_seed, model_id,
                         shifted[bc]) for bc in bcs}


def estimate_ids(model, lattice, bc, energies, n_realizations, master_seed, **kw) -> IDSCurve:
    """Monte Carlo estimate of ``E Tr 1(H <= E)`` on the energy grid."""
    return estimate_ids_bcs(model, lattice, [bc], energies, n_realizations, master_seed, **kw)[bc]


def default_energy_grid(model, lattice: LatticeSpec, E_max: float, num: int = 200,
                        master_seed: int = 0, pilot: int = 8, pad=None) -> np.ndarray:
    """``num`` points from the lowest Gershgorin bound over pilot realizations to ``E_max``."""
    emb = build_embedding(model, lattice, pad)
    lo = min(assemble(lattice, sample(emb, master_seed, k), "neumann").gershgorin()[0]
             for k in range(pilot))
    return np.linspace(lo, E_max, num)


def eigenvalue_quantile(model, lattice: LatticeSpec, q: float, n_pilot: int = 20,
                        master_seed: int = 0, bc: Optional[str] = None, pad=None) -> float:
    """Empirical ``q``-quantile of pooled eigenvalues of pilot realizations."""
    emb = build_embedding(model, lattice, pad)
    bc = bc or lattice.boundary_condition
    pooled = np.concatenate([eigenvalues(assemble(lattice, sample(emb, master_seed, k), bc))
                             for k in range(n_pilot)])
    return float(np.quantile(pooled, q))


def centered_windows(center: float, widths: Sequence[float]) -> list:
    return [(center - w / 2, center + w / 2) for w in widths]


def with_points(grid, points) -> np.ndarray:
    """Energy grid with extra points merged in (sorted, duplicates removed)."""
    return np.unique(np.concatenate([np.asarray(grid, float), np.asarray(points, float).ravel()]))


def mesh_refinement(model, lattice: LatticeSpec, bc: str, energies, n_realizations: int,
                    master_seed: int, **kw) -> tuple:
    """Curves at ``h`` and ``h/2`` on the same energy grid, and their sup-norm gap."""
    fine = LatticeSpec(lattice.d, lattice.L, lattice.h / 2, bc)
    a = estimate_ids(model, lattice.with_bc(bc), bc, energies, n_realizations, master_seed, **kw)
    b = estimate_ids(model, fine, bc, energies, n_realizations, master_seed, **kw)
    return a, b, float(np.max(np.abs(a.normalized - b.normalized)))


# ---------------------------------------------------------------------------
# Wegner constants


@dataclass(frozen=True)
class WegnerRow:
    E1: float
    E2: float
    L: float
    c_emp: float
    ci_low: float
    ci_high: float

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)


@dataclass(frozen=True)
class WegnerReport:
    rows: tuple
    window_max: tuple          # ((E1, E2, max_L c_emp, max_L ci_high), ...) sorted by E2
    flagged: tuple             # windows whose c_emp grows significantly with L

    def rows_for(self, E1, E2) -> list:
        return [r for r in self.rows if math.isclose(r.E1, E1) and math.isclose(r.E2, E2)]

    def envelope(self, E: float, upper: bool = False) -> float:
        """Isotone proxy for the Wegner constant at ``E``.

        Running max over windows with ``E2 <= E``; below the first window the
        first window's value is used.
        """
        col = 3 if upper else 2
        vals = [w[col] for w in self.window_max if w[1] <= E + 1e-12]
        return max(vals) if vals else self.window_max[0][col]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["E1", "E2", "L", "c_emp", "ci_low", "ci_high"])
        for r in self.rows:
            w.writerow([_fmt(r.E1), _fmt(r.E2), _fmt(r.L), _fmt(r.c_emp), _fmt(r.ci_low),
                        _fmt(r.ci_high)])
        return buf.getvalue()


def window_constant(curve: IDSCurve, E1: float, E2: float, z: float = Z95) -> WegnerRow:
    """``(N_L(E2) - N_L(E1)) / ((2L)^d (E2 - E1))`` with a normal-approximation CI."""
    if not E2 > E1:
        raise ValueError("windows need E1 < E2")
    lo, hi = curve.energies[0], curve.energies[-1]
    if E1 < lo - 1e-12 or E2 > hi + 1e-12:
        raise ValueError(f"window [{E1}, {E2}] is wider than the energy grid [{lo}, {hi}]")
    j1, j2 = curve.index_of(E1), curve.index_of(E2)
    diff = curve.counts[:, j2] - curve.counts[:, j1]
    K = len(diff)
    scale = curve.lattice.volume * (E2 - E1)
    mean = diff.sum() / K
    se = math.sqrt(float(np.var(diff, ddof=1)) / K) if K > 1 else math.nan
    c = float(mean / scale)
    return WegnerRow(float(E1), float(E2), float(curve.lattice.L), c, c - z * se / scale,
                     c + z * se / scale)


def wegner_report(curves: Sequence[IDSCurve], windows: Sequence[tuple], z: float = Z95) -> WegnerReport:
    """Empirical Wegner constants per window and box size, with an isotone envelope."""
    if not curves:
        raise ValueError("need at least one curve")
    ref = curves[0]
    for c in curves[1:]:
        if c.bc != ref.bc or not math.isclose(c.lattice.h, ref.lattice.h) or \
                c.lattice.d != ref.lattice.d or c.model_id != ref.model_id:
            raise ValueError("curves must share model, boundary condition, dimension and mesh")
    curves = sorted(curves, key=lambda c: c.lattice.L)
    rows = []
    window_max = []
    flagged = []
    for E1, E2 in windows:
        per_L = [window_constant(c, E1, E2, z) for c in curves]
        rows.extend(per_L)
        window_max.append((float(E1), float(E2), max(r.c_emp for r in per_L),
                           max(r.ci_high for r in per_L)))
        cs = [r.c_emp for r in per_L]
        if len(per_L) >= 2 and all(b > a for a, b in zip(cs, cs[1:])) and \
                cs[-1] - cs[0] > per_L[0].half_width + per_L[-1].half_width:
            flagged.append((float(E1), float(E2)))
    window_max.sort(key=lambda w: w[1])
    return WegnerReport(tuple(rows), tuple(window_max), tuple(flagged))


# ---------------------------------------------------------------------------
# Lipschitz probe


@dataclass(frozen=True)
class Slope:
    E1: float
    E2: float
    L: float
    slope: float
    half_width: float
    envelope: float = math.nan
    bounded: bool = True


@dataclass(frozen=True)
class LipschitzReport:
    L_pairs: tuple
    sup_abs_diff: tuple
    sup_rel_diff: tuple
    slopes: tuple

    @property
    def all_bounded(self) -> bool:
        return all(s.bounded for s in self.slopes)


def lipschitz_probe(curves: Sequence[IDSCurve], window: Optional[tuple] = None,
                    report: Optional[WegnerReport] = None, z: float = Z95) -> LipschitzReport:
    """Finite-volume stability of the normalized IDS and difference-quotient slopes.

    Sup differences compare consecutive box sizes on grid energies inside
    ``window`` (whole grid by default); the relative version divides by the
    larger-box value.  Slopes between consecutive grid energies inside the
    window are checked against ``report``'s envelope: bounded iff
    ``slope <= envelope_upper(E2) + half_width``.
    """
    if len(curves) < 2:
        raise ValueError("need curves at two or more box sizes")
    curves = sorted(curves, key=lambda c: c.lattice.L)
    E = curves[0].energies
    for c in curves[1:]:
        if c.energies.shape != E.shape or not np.allclose(c.energies, E, rtol=0, atol=1e-12):
            raise ValueError("curves must share the energy grid")
    lo, hi = window if window is not None else (E[0], E[-1])
    mask = (E >= lo - 1e-12) & (E <= hi + 1e-12)
    pairs, absd, reld = [], [], []
    for a, b in zip(curves, curves[1:]):
        da = np.abs(a.normalized - b.normalized)[mask]
        ref = np.abs(b.normalized)[mask]
        pairs.append((a.lattice.L, b.lattice.L))
        absd.append(float(np.max(da)) if da.size else 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(ref > 0, da / ref, np.where(da > 0, np.inf, 0.0))
        reld.append(float(np.max(rel)) if rel.size else 0.0)
    slopes = []
    idx = np.nonzero(mask)[0]
    for c in curves:
        for j1, j2 in zip(idx, idx[1:]):
            row = window_constant(c, E[j1], E[j2], z)
            if report is not None:
                env = report.envelope(E[j2], upper=True)
                slopes.append(Slope(row.E1, row.E2, row.L, row.c_emp, row.half_width, env,
                                    bool(row.c_emp <= env + row.half_width)))
            else:
                slopes.append(Slope(row.E1, row.E2, row.L, row.c_emp, row.half_width))
    return LipschitzReport(tuple(pairs), tuple(absd), tuple(reld), tuple(slopes))


def free_ids_1d(E, h: float) -> np.ndarray:
    """IDS per unit length of the infinite-lattice operator ``-Δ_h`` in 1-D.

    ``arccos(1 - E h^2 / 2) / (pi h)`` on ``[0, 4/h^2]``; tends to
    ``sqrt(E)/pi`` as ``h -> 0``.
    """
    E = np.asarray(E, dtype=float)
    arg = np.clip(1 - E * h * h / 2, -1, 1)
    return np.where(E <= 0, 0.0, np.arccos(arg) / (math.pi * h))
