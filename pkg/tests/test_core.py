"""Data model: construction, canonicalization, serialization, cost families."""

from __future__ import annotations

import numpy as np
import pytest

import planmds as pm
from planmds.core import MERGE_TOL


def all_costs():
    return [pm.QMDS(), pm.QSammon(), pm.QuadraticIP(), pm.KernelIP(),
            pm.KernelIP(kernel="polynomial", degree=3, offset=0.5),
            pm.Elastic(sigma=0.8, beta=1.3)]


def test_cloud_weights_renormalize_and_drop_zero():
    cloud = pm.PointCloud([[0.0], [1.0], [2.0]], [0.5, 0.5 + 1e-8, 0.0])
    assert cloud.n == 2
    assert abs(cloud.weights.sum() - 1.0) < 1e-12
    assert (cloud.weights > 0).all()


def test_cloud_rejects_bad_weight_sum():
    with pytest.raises(pm.InputError):
        pm.PointCloud([[0.0], [1.0]], [0.5, 0.6])


def test_cloud_rejects_nonfinite():
    with pytest.raises(pm.InputError):
        pm.PointCloud([[np.inf], [1.0]])


def test_cloud_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    w = rng.uniform(0.1, 1, 7)
    cloud = pm.PointCloud(rng.normal(size=(7, 3)), w / w.sum())
    path = tmp_path / "cloud.csv"
    cloud.save_csv(path)
    loaded = pm.PointCloud.load_csv(path)
    assert np.allclose(loaded.points, cloud.points, atol=0)
    assert np.allclose(loaded.weights, cloud.weights, atol=0)


def test_cloud_csv_uniform_weights(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("x1,x2\n0,1\n2,3\n")
    cloud = pm.PointCloud.load_csv(path)
    assert cloud.dim_d == 2
    assert np.allclose(cloud.weights, [0.5, 0.5])


def test_cloud_csv_bad_row_reports_line(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("x1,w\n0,0.5\noops,0.5\n")
    with pytest.raises(pm.InputError, match="3"):
        pm.PointCloud.load_csv(path)


def test_plan_merges_duplicate_atoms():
    plan = pm.EmbeddingPlan([
        (np.array([0.5, 0.25, 0.25]),
         np.array([[1.0], [1.0 + 1e-14], [2.0]])),
    ])
    assert len(plan.row_masses[0]) == 2
    assert abs(plan.row_weight(0) - 1.0) < 1e-12


def test_plan_rejects_bad_total_mass():
    with pytest.raises(pm.InputError):
        pm.EmbeddingPlan([(np.array([0.7]), np.array([[0.0]]))])


def test_plan_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    plan = pm.EmbeddingPlan([
        (np.array([0.25, 0.25]), rng.normal(size=(2, 2))),
        (np.array([0.5]), rng.normal(size=(1, 2))),
    ])
    path = tmp_path / "plan.csv"
    plan.save_csv(path)
    loaded = pm.EmbeddingPlan.load_csv(path)
    assert loaded.n_rows == plan.n_rows
    for a, b in zip(loaded.row_atoms, plan.row_atoms):
        assert np.allclose(a, b, atol=0)


def test_plan_csv_requires_contiguous_indices(tmp_path):
    path = tmp_path / "plan.csv"
    path.write_text("i,mass,y1\n0,0.5,1\n2,0.5,2\n")
    with pytest.raises(pm.InputError):
        pm.EmbeddingPlan.load_csv(path)


def test_perturbation_rows_must_balance():
    with pytest.raises(pm.InputError):
        pm.Perturbation({0: ([0.1, -0.05], np.array([[1.0], [0.0]]))})


def test_evaluate_cost_examples():
    qmds = pm.QMDS()
    assert pm.evaluate_cost(qmds, [0.0], [1.0], [0.0], [1.0]) == 0.0
    assert pm.evaluate_cost(qmds, [0.0], [1.0], [0.0], [0.0]) == 1.0
    qip = pm.QuadraticIP()
    assert pm.evaluate_cost(qip, [1, 0], [1, 0], [1.0], [1.0]) == 0.0
    elastic = pm.Elastic(sigma=1.0, beta=1.0)
    # x = x': first term t * 1, second term 0
    assert pm.evaluate_cost(elastic, [0.0], [0.0], [1.0], [-1.0]) == pytest.approx(4.0)


def test_evaluate_cost_dimension_mismatch():
    with pytest.raises(pm.InputError):
        pm.evaluate_cost(pm.QMDS(), [0.0], [1.0, 2.0], [0.0], [1.0])


def test_profile_derivatives_examples():
    qmds = pm.QMDS()
    assert pm.profile_derivatives(qmds, [0.0], [1.0], 1.0) == (0.0, 0.0, 2.0)
    assert pm.profile_derivatives(qmds, [0.0], [1.0], 0.0) == (1.0, -2.0, 2.0)
    qip = pm.QuadraticIP()
    assert pm.profile_derivatives(qip, [1.0, 0.0], [0.0, 1.0], 0.0) == (0.0, 0.0, 2.0)


def test_profile_derivatives_match_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-5
    for cost in all_costs():
        for _ in range(25):
            x = rng.normal(size=2)
            xp = rng.normal(size=2)
            t = float(rng.uniform(0.05, 4.0))
            v, d1, d2 = pm.profile_derivatives(cost, x, xp, t)
            vp = pm.profile_derivatives(cost, x, xp, t + h)[0]
            vm = pm.profile_derivatives(cost, x, xp, t - h)[0]
            assert d1 == pytest.approx((vp - vm) / (2 * h), abs=1e-5)
            # central second difference; roundoff scales with |v| / h^2
            tol = 1e-4 * (1.0 + abs(v))
            assert d2 == pytest.approx((vp - 2 * v + vm) / h**2, abs=tol)


def test_cost_symmetry_random_tuples():
    rng = np.random.default_rng(3)
    for cost in all_costs():
        for _ in range(200):
            x, xp = rng.normal(size=2), rng.normal(size=2)
            y, yp = rng.normal(size=3), rng.normal(size=3)
            assert pm.evaluate_cost(cost, x, xp, y, yp) == pm.evaluate_cost(cost, xp, x, yp, y)


def test_unique_min_at_zero_flagged_costs():
    rng = np.random.default_rng(4)
    grid = np.arange(0.0, 10.0001, 0.01)
    for cost in all_costs():
        if not cost.unique_min_at_zero:
            continue
        for _ in range(5):
            x = rng.normal(size=2)
            a = cost.base(x, x)
            vals = cost.profile(a, grid)
            assert int(np.argmin(vals)) == 0
            assert (vals[1:] > vals[0]).all()


def test_convex_in_t_flagged_costs():
    rng = np.random.default_rng(5)
    for cost in all_costs():
        if not cost.convex_in_t:
            continue
        for _ in range(50):
            x, xp = rng.normal(size=2), rng.normal(size=2)
            t = float(rng.uniform(0, 5))
            assert pm.profile_derivatives(cost, x, xp, t)[2] >= 0.0


def test_elastic_not_convex_at_coincident_inputs():
    # second derivative beta*a*exp(-t) vanishes when x = x'
    elastic = pm.Elastic()
    assert pm.profile_derivatives(elastic, [1.0, 2.0], [1.0, 2.0], 0.3)[2] == 0.0


def test_center_plan_examples():
    single = pm.EmbeddingPlan([(np.array([1.0]), np.array([[3.0, -1.0]]))])
    centered = pm.center_plan(single)
    assert np.allclose(centered.row_atoms[0], 0.0, atol=1e-15)

    sym = pm.EmbeddingPlan([(np.array([0.5, 0.5]), np.array([[1.0], [-1.0]]))])
    out = pm.center_plan(sym)
    assert np.allclose(np.sort(out.row_atoms[0].ravel()), [-1.0, 1.0])

    skew = pm.EmbeddingPlan([(np.array([0.25, 0.75]), np.array([[0.0], [4.0]]))])
    out = pm.center_plan(skew)
    assert np.allclose(np.sort(out.row_atoms[0].ravel()), [-3.0, 1.0])
    assert abs(out.barycenter()[0]) < 1e-12


def test_center_plan_preserves_n2_energy():
    rng = np.random.default_rng(6)
    cloud = pm.PointCloud(rng.normal(size=(5, 2)))
    rows = [(np.array([w]), rng.normal(size=(1, 2))) for w in cloud.weights]
    plan = pm.EmbeddingPlan(rows)
    for cost in (pm.QMDS(), pm.QSammon(), pm.Elastic()):
        a = pm.stress_plan(plan, cloud, cost)
        b = pm.stress_plan(pm.center_plan(plan), cloud, cost)
        assert b == pytest.approx(a, rel=1e-12)


def test_plan_from_map():
    cloud = pm.PointCloud([[0.0], [1.0]], [0.3, 0.7])
    mapping = pm.DeterministicMap([[5.0], [-5.0]])
    plan = pm.plan_from_map(cloud, mapping)
    assert plan.n_rows == 2
    assert all(len(m) == 1 for m in plan.row_masses)
    assert plan.row_masses[0][0] == pytest.approx(0.3)
    with pytest.raises(pm.InputError):
        pm.plan_from_map(cloud, pm.DeterministicMap([[1.0]]))


def test_make_cost():
    assert isinstance(pm.make_cost("qmds"), pm.QMDS)
    assert isinstance(pm.make_cost("kernel-ip", kernel="polynomial"), pm.KernelIP)
    with pytest.raises(pm.InputError):
        pm.make_cost("nope")


def test_merge_tolerance_is_max_norm():
    atoms = np.array([[0.0, 0.0], [MERGE_TOL / 2, 0.0], [0.0, 10 * MERGE_TOL]])
    plan = pm.EmbeddingPlan([(np.array([0.4, 0.4, 0.2]), atoms)])
    assert len(plan.row_masses[0]) == 2
