import math

import numpy as np
import pytest

from wegnerlab.covariance import example_5b_model, triangular_model
from wegnerlab.field_sampler import LatticeSpec, zero_field
from wegnerlab.hamiltonian import free_dirichlet_eigenvalues_1d, free_neumann_eigenvalues_1d
from wegnerlab.ids import (IDSCurve, centered_windows, estimate_ids, estimate_ids_bcs,
                           free_ids_1d, lipschitz_probe, mesh_refinement, wegner_report,
                           window_constant, with_points)


def _free(lattice, bcs, energies, K=3):
    return estimate_ids_bcs(None, lattice, bcs, energies, K, 0,
                            field_source=lambda k: zero_field(lattice))


def test_zero_field_is_free_counting_function():
    lat = LatticeSpec(1, 10.0, 0.25)
    E = np.linspace(-1, 70, 101)
    res = _free(lat, ["dirichlet", "neumann"], E)
    n = lat.n_per_axis
    for bc, ev in (("dirichlet", free_dirichlet_eigenvalues_1d(n, lat.h)),
                   ("neumann", free_neumann_eigenvalues_1d(n, lat.h))):
        expect = np.array([np.sum(ev <= e) for e in E])
        assert np.array_equal(res[bc].mean_counts, expect)
        assert np.all(res[bc].stderr == 0)


def test_free_ids_limit():
    lat = LatticeSpec(1, 200.0, 0.05)
    E = np.linspace(1, 4, 7)
    curve = _free(lat, ["dirichlet"], E, K=1)["dirichlet"]
    assert np.allclose(curve.normalized, free_ids_1d(E, lat.h), atol=5e-3)
    assert np.allclose(free_ids_1d(E, 1e-4), np.sqrt(E) / math.pi, rtol=1e-6)


def test_bracketing_random():
    lat = LatticeSpec(1, 8.0, 0.25)
    res = estimate_ids_bcs(example_5b_model(), lat, ["dirichlet", "neumann"],
                           np.linspace(-10, 60, 50), 20, 1)
    assert np.all(res["dirichlet"].counts <= res["neumann"].counts)
    # same realizations for both conditions: the Neumann excess is at most 2 per box
    assert np.all(res["neumann"].counts - res["dirichlet"].counts <= 2)


def test_bracketing_2d():
    lat = LatticeSpec(2, 2.0, 0.5)
    res = estimate_ids_bcs(triangular_model(2), lat, ["dirichlet", "neumann"],
                           np.linspace(-5, 40, 12), 6, 2)
    assert np.all(res["dirichlet"].counts <= res["neumann"].counts)


def test_determinism_across_workers_and_chunks():
    lat = LatticeSpec(1, 8.0, 0.25)
    E = np.linspace(-5, 40, 30)
    a = estimate_ids(example_5b_model(), lat, "dirichlet", E, 40, 9)
    b = estimate_ids(example_5b_model(), lat, "dirichlet", E, 40, 9, workers=4, chunk=7)
    assert np.array_equal(a.counts, b.counts)
    assert a.to_csv() == b.to_csv()
    c = estimate_ids(example_5b_model(), lat, "dirichlet", E, 40, 10)
    assert not np.array_equal(a.counts, c.counts)


def test_curve_statistics():
    counts = np.array([[0, 1, 3], [0, 2, 5], [1, 2, 4]], dtype=np.int64)
    lat = LatticeSpec(1, 1.0, 0.5)
    c = IDSCurve(np.array([0.0, 1.0, 2.0]), lat, "dirichlet", counts, 0)
    assert np.allclose(c.mean_counts, counts.mean(axis=0))
    assert np.allclose(c.stderr, counts.std(axis=0, ddof=1) / math.sqrt(3))
    assert np.allclose(c.normalized, counts.mean(axis=0) / 2.0)
    lines = c.to_csv().splitlines()
    assert lines[0] == "E,mean_count,normalized,stderr,bc,L,h,n_realizations"
    assert len(lines) == 4


def test_window_constant():
    counts = np.array([[2, 5], [2, 7], [3, 6]], dtype=np.int64)
    lat = LatticeSpec(1, 2.0, 0.5)
    c = IDSCurve(np.array([1.0, 1.5]), lat, "dirichlet", counts, 0)
    row = window_constant(c, 1.0, 1.5, z=2.0)
    diff = np.array([3, 5, 3])
    assert row.c_emp == pytest.approx(diff.mean() / (4 * 0.5))
    se = diff.std(ddof=1) / math.sqrt(3) / 2.0
    assert row.half_width == pytest.approx(2.0 * se)
    with pytest.raises(ValueError):
        window_constant(c, 0.5, 1.5)
    with pytest.raises(ValueError):
        window_constant(c, 1.5, 1.0)


def test_empty_window_gives_zero():
    lat = LatticeSpec(1, 4.0, 0.5)
    E = np.array([-3.0, -2.0, -1.0])
    curve = _free(lat, ["dirichlet"], E)["dirichlet"]
    row = window_constant(curve, -3.0, -1.0)
    assert row.c_emp == 0.0 and row.half_width == 0.0


def test_wegner_report_and_envelope():
    model = example_5b_model()
    E = with_points(np.linspace(10, 16, 13), np.ravel(centered_windows(13.0, [0.5, 1.0])))
    curves = [estimate_ids(model, LatticeSpec(1, L, 0.25), "dirichlet", E, 60, 3)
              for L in (8.0, 16.0)]
    windows = [(10.0, 11.0), (12.5, 13.5), (15.0, 16.0)]
    rep = wegner_report(curves, windows)
    assert len(rep.rows) == 6
    assert all(r.ci_low <= r.c_emp <= r.ci_high for r in rep.rows)
    env = [rep.envelope(e) for e in (9.0, 11.0, 13.5, 16.0)]
    assert env[0] == env[1] and all(b >= a for a, b in zip(env, env[1:]))
    assert rep.to_csv().splitlines()[0] == "E1,E2,L,c_emp,ci_low,ci_high"
    probe = lipschitz_probe(curves, window=(12.5, 13.5), report=rep)
    assert probe.L_pairs == ((8.0, 16.0),)
    assert probe.sup_abs_diff[0] >= 0 and len(probe.slopes) > 0


def test_report_rejects_mixed_curves():
    lat = LatticeSpec(1, 4.0, 0.5)
    E = np.linspace(0, 10, 5)
    a = _free(lat, ["dirichlet"], E)["dirichlet"]
    b = _free(lat, ["neumann"], E)["neumann"]
    with pytest.raises(ValueError):
        wegner_report([a, b], [(0.0, 10.0)])
    with pytest.raises(ValueError):
        lipschitz_probe([a])


def test_mesh_refinement_free():
    lat = LatticeSpec(1, 20.0, 0.25)
    E = np.linspace(0.5, 4, 8)
    src = lambda lat_: (lambda k: zero_field(lat_))  # noqa: E731
    coarse = estimate_ids_bcs(None, lat, ["dirichlet"], E, 1, 0, field_source=src(lat))["dirichlet"]
    fine_lat = LatticeSpec(1, 20.0, 0.125)
    fine = estimate_ids_bcs(None, fine_lat, ["dirichlet"], E, 1, 0,
                            field_source=src(fine_lat))["dirichlet"]
    assert np.max(np.abs(coarse.normalized - fine.normalized)) < 0.05


def test_mesh_refinement_random():
    lat = LatticeSpec(1, 8.0, 0.5)
    a, b, gap = mesh_refinement(example_5b_model(), lat, "neumann", np.linspace(-5, 20, 11), 10, 4)
    assert b.lattice.h == 0.25 and a.lattice.h == 0.5
    assert gap == pytest.approx(np.max(np.abs(a.normalized - b.normalized)))


def test_input_validation():
    lat = LatticeSpec(1, 4.0, 0.5)
    with pytest.raises(ValueError):
        estimate_ids(example_5b_model(), lat, "dirichlet", [1.0, 0.0], 5, 0)
    with pytest.raises(ValueError):
        estimate_ids(example_5b_model(), lat, "dirichlet", [0.0, 1.0], 0, 0)
