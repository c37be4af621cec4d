"""Command line front end.

    wegnerlab certificate CONFIG   build and verify the decay-weight certificate
    wegnerlab ids CONFIG           Monte Carlo IDS curves and Wegner constants
    wegnerlab sample-check CONFIG  empirical covariance of sampled fields
    wegnerlab spectrum CONFIG      eigenvalues of one realization

Exit codes: 0 success, 1 a check failed, 2 model/precondition error,
3 numerical resolution error, 64 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .certificate import CertificateGrid, IneligibleModel, build_certificate
from .config import ConfigError, load_config
from .covariance import (CovarianceError, QuadratureSpec, ResolutionError, model_from_dict,
                         summarize)
from .field_sampler import (EmbeddingError, LatticeSpec, build_embedding, empirical_covariance,
                            load_field, mean_estimate, sample, sample_many, save_field)
from .hamiltonian import DENSE_LIMIT, DenseLimitError, assemble, eigenvalues
from .ids import default_energy_grid, estimate_ids_bcs, mesh_refinement, wegner_report, with_points

log = logging.getLogger("wegnerlab")

EXIT_OK, EXIT_CHECK, EXIT_MODEL, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 3, 64


class UsageError(Exception):
    pass


class ModelError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# output helpers


def json_dumps17(obj, indent=0) -> str:
    """JSON with every float written as 17 significant digits (non-finite -> null)."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {json_dumps17(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(json_dumps17(v, indent + 1) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-" + path.name)
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Run:
    """Tracks emitted files and stage timings; writes the manifest last."""

    def __init__(self, command: str, config, out_dir: Path):
        self.command = command
        self.config = config
        self.out = out_dir
        self.files: list = []
        self.stages: dict = {}
        self.started = _now()
        self._t = time.perf_counter()

    def stage(self, name: str):
        now = time.perf_counter()
        self.stages[name] = round(now - self._t, 6)
        self._t = now

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        _atomic_write(path, text)
        self.files.append(path)
        return path

    def add(self, path: Path):
        self.files.append(Path(path))

    def cleanup(self):
        for p in self.files:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        self.files = []

    def manifest(self, status: int) -> Path:
        doc = {
            "tool": "wegnerlab", "version": __version__, "command": self.command,
            "config": self.config.snapshot(), "started": self.started, "finished": _now(),
            "stages": self.stages, "exit_code": status,
            "outputs": {p.name: _sha256(p) for p in self.files},
        }
        path = self.out / f"manifest_{self.command}.json"
        _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def _model(cfg):
    try:
        return model_from_dict(cfg["covariance"])
    except CovarianceError as exc:
        raise ModelError(f"covariance model: {exc}") from None


def _lattices(cfg, bc="dirichlet"):
    lat = cfg.get("lattice")
    if lat is None:
        raise UsageError("config needs a 'lattice' section for this command")
    try:
        return [LatticeSpec(lat["d"], float(L), float(lat["h"]), bc) for L in cfg.L_values]
    except ValueError as exc:
        raise UsageError(f"lattice: {exc}") from None


def _out_dir(cfg) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def run_certificate(cfg) -> int:
    model = _model(cfg)
    run = Run("certificate", cfg, _out_dir(cfg))
    q = cfg.get("quadrature")
    grid = QuadratureSpec(q["step"], q.get("truncation")) if q and "step" in q else None
    cg = CertificateGrid(**cfg.get("certificate_grid", {}))
    summary = summarize(model, grid)
    run.stage("summary")
    cert = build_certificate(model, cg, summary, cfg.overrides.get("b_factor", 1.0))
    run.stage("certificate")
    run.write("certificate.json", json_dumps17(cert.to_dict()) + "\n")
    run.write("certificate.txt", _certificate_text(cert))
    status = EXIT_OK if cert.passed else EXIT_CHECK
    run.manifest(status)
    print(_certificate_text(cert), end="")
    return status


def _certificate_text(cert) -> str:
    s, cr, c4 = cert.summary, cert.convolution_report, cert.condition4_report
    lines = [
        f"C(0) = {s.C0:.10g}   Cbar = {s.Cbar:.10g}   ||C||_1 = {s.L1:.10g}   R = {s.R:.10g}",
        f"b = {cert.b:.12g}   box radius 1/b = {cert.box_radius:.10g}",
        f"alpha = {cert.alpha:.12g}   gamma = {cert.gamma:.12g}",
        f"convolution bound: min ratio {cr.min_ratio:.10g} vs Cbar/2 = {cr.threshold:.10g} "
        f"(margin {cr.margin:.4g}, quadrature error {cr.quadrature_error:.3g}) "
        f"{'PASS' if cr.passed else 'FAIL'}",
        f"normalization residual {c4.normalization_residual:.3g} "
        f"(tol {c4.normalization_tolerance:.3g}); lower-bound margin on the box "
        f"{c4.lower_bound_margin:.4g} (tol {c4.lower_bound_tolerance:.3g}) "
        f"{'PASS' if c4.passed else 'FAIL'}",
    ]
    return "\n".join(lines) + "\n"


def _energy_grid(cfg, model, lattice, pad):
    spec = cfg.get("energies") or {}
    pts = spec.get("points")
    if pts is not None and "max" not in spec:
        grid = np.asarray(sorted(pts), dtype=float)
    else:
        if "max" not in spec:
            raise UsageError("energies need 'max' or an explicit 'points' list")
        num = spec.get("num", 200)
        if "min" in spec:
            grid = np.linspace(spec["min"], spec["max"], num)
        else:
            grid = default_energy_grid(model, lattice, spec["max"], num, cfg["master_seed"], pad=pad)
        if pts:
            grid = with_points(grid, pts)
    windows = cfg.get("windows")
    if windows:
        grid = with_points(grid, np.ravel(windows))
    if len(grid) < 2:
        raise UsageError("energy grid needs at least 2 points")
    return grid


def _default_windows(grid, stride=10):
    return [(grid[i], grid[min(i + stride, len(grid) - 1)]) for i in range(0, len(grid) - 1, stride)]


def run_ids(cfg) -> int:
    model = _model(cfg)
    lattices = _lattices(cfg)
    pad = cfg.overrides.get("pad")
    run = Run("ids", cfg, _out_dir(cfg))
    try:
        embeddings = [build_embedding(model, lat, pad) for lat in lattices]
        run.stage("embedding")
        grid = _energy_grid(cfg, model, lattices[-1], pad)
        windows = cfg.get("windows") or _default_windows(grid)
        curves = {bc: [] for bc in cfg["bc"]}
        for lat, emb in zip(lattices, embeddings):
            res = estimate_ids_bcs(model, lat, cfg["bc"], grid, cfg["n_realizations"],
                                   cfg["master_seed"], workers=cfg["workers"], embedding=emb)
            for bc, curve in res.items():
                curves[bc].append(curve)
                run.write(f"ids_{bc}_L{_tag(lat.L)}.csv", curve.to_csv())
        run.stage("ids")
        for bc, cs in curves.items():
            rep = wegner_report(cs, windows)
            run.write(f"wegner_{bc}.csv", rep.to_csv())
            for w in rep.flagged:
                log.warning("window %s: c_emp grows with L (%s)", w, bc)
        run.stage("wegner")
        if cfg["mesh_refinement"]:
            for bc in cfg["bc"]:
                lat = lattices[-1]
                _, fine, gap = mesh_refinement(model, lat, bc, grid, cfg["n_realizations"],
                                               cfg["master_seed"], pad=pad, workers=cfg["workers"])
                run.write(f"ids_{bc}_L{_tag(lat.L)}_h{_tag(fine.lattice.h)}.csv", fine.to_csv())
                log.info("mesh refinement %s: sup |N_h - N_h/2| = %.4g", bc, gap)
            run.stage("mesh_refinement")
    except Exception:
        run.cleanup()
        raise
    run.manifest(EXIT_OK)
    return EXIT_OK


def _tag(x: float) -> str:
    return format(float(x), "g")


def run_sample_check(cfg) -> int:
    model = _model(cfg)
    lattice = _lattices(cfg)[0]
    K = cfg["n_realizations"]
    if K < 2:
        raise UsageError("sample-check needs at least 2 realizations")
    if cfg.get("field_file"):
        fr = load_field(cfg["field_file"])
        if fr.model_id != model.model_id:
            raise ModelError(f"field file model_id {fr.model_id} does not match "
                             f"the configured model {model.model_id}")
        if not fr.lattice.same_grid(lattice):
            raise ModelError("field file lattice does not match the configured lattice")
    run = Run("sample-check", cfg, _out_dir(cfg))
    emb = build_embedding(model, lattice, cfg.overrides.get("pad"))
    V = sample_many(emb, cfg["master_seed"], range(K), workers=cfg["workers"])
    run.stage("sampling")
    lags = cfg["lags"] or [0.0, lattice.h, model.support_radius / 2, model.support_radius,
                           2 * model.support_radius]
    offsets = []
    for lag in lags:
        k = round(lag / lattice.h)
        if not math.isclose(k * lattice.h, lag, rel_tol=1e-9, abs_tol=1e-12):
            raise UsageError(f"lag {lag} is not a multiple of h = {lattice.h}")
        offsets.append((k,) + (0,) * (lattice.d - 1))
    ests = empirical_covariance(V, offsets)
    mean, mean_se = mean_estimate(V)
    lines = ["lag,offset,C_model,mean,stderr,z,pass"]
    failed = []
    mz = mean / mean_se if mean_se > 0 else 0.0
    lines.append(f"mean,,{_r(0.0)},{_r(mean)},{_r(mean_se)},{_r(mz)},{abs(mz) <= 3}")
    if abs(mz) > 3:
        failed.append("mean")
    for lag, est in zip(lags, ests):
        pt = np.array(est.lag, dtype=float) * lattice.h
        c = float(model(pt if lattice.d > 1 else pt[0]))
        z = (est.mean - c) / est.stderr if est.stderr > 0 else (0.0 if est.mean == c else math.inf)
        ok = abs(z) <= 3
        if not ok:
            failed.append(lag)
        lines.append(f"{_r(lag)},{est.lag[0]},{_r(c)},{_r(est.mean)},{_r(est.stderr)},{_r(z)},{ok}")
    run.write("sample_check.csv", "\n".join(lines) + "\n")
    for k in range(cfg["dump_fields"]):
        paths = save_field(sample(emb, cfg["master_seed"], k), run.out / f"field_{k}.bin")
        for p in paths:
            run.add(p)
    run.stage("statistics")
    status = EXIT_CHECK if failed else EXIT_OK
    run.manifest(status)
    if failed:
        print(f"lags outside 3 standard errors: {failed}", file=sys.stderr)
    return status


def _r(x) -> str:
    return repr(float(x))


def run_spectrum(cfg, stream: int = 0) -> int:
    model = _model(cfg)
    lattice = _lattices(cfg)[0]
    run = Run("spectrum", cfg, _out_dir(cfg))
    emb = build_embedding(model, lattice, cfg.overrides.get("pad"))
    field = sample(emb, cfg["master_seed"], stream)
    limit = cfg.overrides.get("dense_limit", DENSE_LIMIT)
    for bc in cfg["bc"]:
        ev = eigenvalues(assemble(lattice, field, bc), limit)
        text = "index,eigenvalue\n" + "".join(f"{i},{_r(e)}\n" for i, e in enumerate(ev))
        run.write(f"spectrum_{bc}_stream{stream}.csv", text)
    run.stage("spectrum")
    run.manifest(EXIT_OK)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wegnerlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("certificate", "ids", "sample-check", "spectrum"):
        s = sub.add_parser(name)
        s.add_argument("config", help="experiment config (JSON)")
        s.add_argument("--output-dir")
        s.add_argument("--seed", type=int, help="master seed")
        s.add_argument("--n-realizations", type=int)
        s.add_argument("--workers", type=int)
        if name == "certificate":
            s.add_argument("--b-factor", type=float, help="scale b by a factor in (0, 1]")
        if name == "spectrum":
            s.add_argument("--stream", type=int, default=0, help="realization index")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {"output_dir": args.output_dir, "master_seed": args.seed,
                 "n_realizations": args.n_realizations, "workers": args.workers,
                 "b_factor": getattr(args, "b_factor", None)}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "certificate":
            return run_certificate(cfg)
        if args.command == "ids":
            return run_ids(cfg)
        if args.command == "sample-check":
            return run_sample_check(cfg)
        return run_spectrum(cfg, args.stream)
    except (ConfigError, UsageError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IneligibleModel, ModelError, DenseLimitError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (ResolutionError, EmbeddingError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CovarianceError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
