import math

import numpy as np
import pytest

from sparsepc.crossval import (CrossValPlan, CrossValidationError, cross_validated_recovery,
                               default_grid, estimate_delta, export_curve, is_u_shaped,
                               load_curve, split)
from sparsepc.pcbasis import total_order_set
from sparsepc.sampling import assemble_measurement, draw_samples


def noisy_problem(seed, n=160, eta=0.02, d=8, s=8):
    basis = total_order_set(3, d)
    samples = draw_samples(d, n, seed)
    m = assemble_measurement(basis, samples)
    rng = np.random.default_rng(100 + seed)
    c = np.zeros(len(basis))
    c[rng.choice(len(basis), s, replace=False)] = rng.normal(size=s)
    return samples, m, m.values @ c + eta * rng.normal(size=n)


def test_plan_validation():
    with pytest.raises(ValueError):
        CrossValPlan(10, 10)
    with pytest.raises(ValueError):
        CrossValPlan(10, 5, delta_grid=(1.0, -1.0))
    plan = CrossValPlan(10, 7, delta_grid=(3.0, 1.0, 2.0))
    assert plan.delta_grid == (1.0, 2.0, 3.0)
    assert CrossValPlan.default(41).n_reconstruction == 30


def test_split_partition():
    s = draw_samples(2, 40, 1)
    u = np.arange(40.0)
    plan = CrossValPlan.default(40, seed=3)
    (yr, ur, ir), (yv, uv, iv) = split(s, u, plan, 0)
    assert len(ir) == 30 and len(iv) == 10
    assert set(ir).isdisjoint(iv) and set(ir) | set(iv) == set(range(40))
    np.testing.assert_array_equal(ur, u[ir])
    np.testing.assert_array_equal(yv, s.points[iv])
    again = split(s, u, plan, 0)
    np.testing.assert_array_equal(again[0][2], ir)
    with pytest.raises(ValueError):
        split(s, u, plan, 4)


def test_replications_differ():
    s = draw_samples(2, 20, 1)
    for seed in range(20):
        plan = CrossValPlan.default(20, seed=seed)
        parts = [tuple(split(s, np.zeros(20), plan, k)[0][2]) for k in range(4)]
        assert len(set(parts)) == 4


def test_default_grid_span():
    u = np.ones(16)
    g = default_grid(u, 12, size=5)
    assert g[0] == pytest.approx(1e-3 * math.sqrt(12))
    assert g[-1] == pytest.approx(math.sqrt(12))
    assert np.all(np.diff(np.log(g)) == pytest.approx(np.log(10) * 3 / 4))


def test_exact_fit_picks_smallest():
    basis = total_order_set(2, 3)
    s = draw_samples(3, 60, 2)
    m = assemble_measurement(basis, s)
    u = m.values @ np.linspace(1, 0.1, len(basis))
    plan = CrossValPlan.default(60, u, seed=1)
    for solver in ("omp", "bpdn"):
        res = estimate_delta(s, u, basis, solver, plan)
        assert res.delta_r_hat == plan.delta_grid[0]
        assert res.chosen_delta == pytest.approx(math.sqrt(60 / 45) * plan.delta_grid[0])


@pytest.mark.parametrize("solver", ["omp", "bpdn"])
def test_planted_noise_level(solver):
    ratios, shapes = [], []
    for seed in range(10 if solver == "omp" else 4):
        s, m, u = noisy_problem(seed)
        plan = CrossValPlan.default(len(u), u, seed=seed)
        res = estimate_delta(s, u, m.basis, solver, plan, matrix=m)
        ratios.append(res.delta_r_hat / (0.02 * math.sqrt(plan.n_reconstruction)))
        shapes.append(is_u_shaped(res))
    assert 0.5 <= np.median(ratios) <= 2.0
    assert all(shapes)


def test_grid_order_invariance():
    s, m, u = noisy_problem(1, n=80, d=4, s=4)
    g = default_grid(u, 60, 8)
    a = estimate_delta(s, u, m.basis, "omp", CrossValPlan(80, 60, 4, tuple(g), 5), matrix=m)
    b = estimate_delta(s, u, m.basis, "omp", CrossValPlan(80, 60, 4, tuple(g[::-1]), 5),
                       matrix=m)
    assert a.delta_r_hat == b.delta_r_hat
    np.testing.assert_array_equal(a.validation_curve, b.validation_curve)


def test_threads_do_not_change_result():
    s, m, u = noisy_problem(2, n=80, d=4, s=4)
    plan = CrossValPlan.default(80, u, seed=2)
    a = estimate_delta(s, u, m.basis, "bpdn", plan, matrix=m)
    b = estimate_delta(s, u, m.basis, "bpdn", plan, matrix=m, threads=4)
    np.testing.assert_array_equal(a.per_replication, b.per_replication)


def test_all_failures_raise():
    s, m, u = noisy_problem(2, n=40, d=4, s=4)
    plan = CrossValPlan.default(40, u, seed=2)
    with pytest.raises(CrossValidationError):
        estimate_delta(s, u, m.basis, "nope", plan, matrix=m)


def test_curve_export(tmp_path):
    s, m, u = noisy_problem(3, n=80, d=4, s=4)
    plan = CrossValPlan.default(80, u, seed=3)
    res, cv = cross_validated_recovery(m, u, "omp", plan)
    assert res.delta == cv.chosen_delta
    export_curve(cv, tmp_path / "curve.csv")
    header = (tmp_path / "curve.csv").read_text().splitlines()[0]
    assert header == "delta_r,mean_delta_v,rep_0,rep_1,rep_2,rep_3"
    grid, mean, reps = load_curve(tmp_path / "curve.csv")
    np.testing.assert_array_equal(grid, cv.grid)
    np.testing.assert_allclose(mean, reps.mean(axis=1))
