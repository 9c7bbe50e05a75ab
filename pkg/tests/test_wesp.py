import numpy as np
import pytest

from greencap import wesp
from greencap.climate import ClusterSpec
from greencap.instance import no_op_plan
from greencap.recourse import RecourseModel
from greencap.wesp import (FEASIBILITY, OPTIMALITY, CgIterationLimitError,
                           MasterInfeasibleError, TooLargeError, WespSolver,
                           check_tightness, corner_scenarios,
                           default_seed_columns, oracle_wesp, run_cg)

from _family import comfortable_instance, tiny_instance


def shell_master(columns_with_values, cluster):
    return wesp.solve_master(columns_with_values, cluster, OPTIMALITY)


def box_cluster(lo, hi, glo, ghi):
    arr = lambda v: np.asarray(v, dtype=float)
    return ClusterSpec(cluster_id=0, probability=1.0,
                       omega=np.full((1, arr(lo).shape[1]), 300.0),
                       xi_lo=arr(lo), xi_hi=arr(hi),
                       gamma_lo=arr(glo), gamma_hi=arr(ghi))


# -- master ------------------------------------------------------------------

def test_master_single_column_forced_dirac():
    cl = box_cluster([[2.0]], [[8.0]], [[4.0]], [[6.0]])
    eta, dist, (alpha, bu, blo) = shell_master([(np.array([[5.0]]), 3.25)], cl)
    assert eta == pytest.approx(3.25)
    assert dist.probs.tolist() == [1.0]


def test_master_two_corner_mixture_hand_lp():
    # Corners at 0 and 10 with values 0 and 1; window pinned at the midpoint 5:
    # the unique feasible mixture is (0.5, 0.5) with value 0.5.
    cl = box_cluster([[0.0]], [[10.0]], [[5.0]], [[5.0]])
    cols = [(np.array([[0.0]]), 0.0), (np.array([[10.0]]), 1.0)]
    eta, dist, _ = shell_master(cols, cl)
    assert eta == pytest.approx(0.5, abs=1e-9)
    assert sorted(dist.probs.tolist()) == pytest.approx([0.5, 0.5], abs=1e-9)


def test_master_infeasible_when_columns_miss_window():
    cl = box_cluster([[0.0]], [[10.0]], [[7.0]], [[8.0]])
    cols = [(np.array([[0.0]]), 1.0), (np.array([[2.0]]), 2.0)]
    with pytest.raises(MasterInfeasibleError):
        shell_master(cols, cl)


def test_master_shadow_price_signs():
    inst, clusters = comfortable_instance(0, sizes=(1, 1, 1, 2))
    cl = clusters[0]
    ws = WespSolver(inst, cl)
    x = no_op_plan(inst)
    cols = default_seed_columns(cl)
    vals = np.array([ws.column_value(x, c, OPTIMALITY) for c in cols])
    eta, dist, (alpha, bu, blo) = ws.solve_master(cols, vals, OPTIMALITY)
    assert (bu >= -1e-9).all()
    assert (blo >= -1e-9).all()


# -- pricing -----------------------------------------------------------------

def test_pricing_flat_objective_returns_all_lower_corner():
    inst, clusters = comfortable_instance(1, sizes=(1, 1, 1, 2))
    cl = clusters[0]
    cl.xi_lo[:] = 0.0
    cl.xi_hi[:] = 0.0  # recourse value is constant (zero) over the box
    cl.gamma_lo[:] = 0.0
    cl.gamma_hi[:] = 0.0
    ws = WespSolver(inst, cl)
    x = no_op_plan(inst)
    zeros = np.zeros_like(cl.xi_lo)
    r, xi = ws.solve_pricing((0.0, zeros, zeros), x, OPTIMALITY)
    assert np.allclose(xi, cl.xi_lo)


def test_pricing_degenerate_box_returns_point():
    inst, clusters = comfortable_instance(2, sizes=(1, 1, 1, 1))
    cl = clusters[0]
    cl.xi_lo[:] = 5.0
    cl.xi_hi[:] = 5.0
    cl.gamma_lo[:] = 5.0
    cl.gamma_hi[:] = 5.0
    ws = WespSolver(inst, cl)
    zeros = np.zeros_like(cl.xi_lo)
    r, xi = ws.solve_pricing((0.0, zeros, zeros), no_op_plan(inst), OPTIMALITY)
    assert np.allclose(xi, 5.0)


@pytest.mark.parametrize("mode", [OPTIMALITY, FEASIBILITY])
def test_pricing_matches_corner_enumeration(mode):
    # |K||T| = 4: compare the MILP maximizer against all 16 corners.
    for seed in (3, 4, 5):
        inst, clusters = tiny_instance(seed, n_clusters=1, sizes=(1, 2, 2, 2))
        cl = clusters[0]
        ws = WespSolver(inst, cl)
        x = no_op_plan(inst)
        cols = default_seed_columns(cl)
        try:
            vals = np.array([ws.column_value(x, c, mode) for c in cols])
        except Exception:
            continue  # optimality mode needs feasible seeds; skip this seed
        eta, dist, shadows = ws.solve_master(cols, vals, mode)
        alpha, bu, blo = shadows
        r_milp, xi_milp = ws.solve_pricing(shadows, x, mode)
        coef = (blo - bu).ravel()
        best = -np.inf
        for corner in corner_scenarios(cl):
            val = ws.column_value(x, corner, mode)
            best = max(best, float(coef @ corner.ravel()) - alpha + val)
        assert r_milp == pytest.approx(best, abs=1e-6 * max(1, abs(best)))
        at_bound = np.isclose(xi_milp, cl.xi_lo) | np.isclose(xi_milp, cl.xi_hi)
        assert at_bound.all()


def test_pricing_returns_box_corners_always():
    for seed in range(6):
        inst, clusters = tiny_instance(seed, n_clusters=1)
        cl = clusters[0]
        ws = WespSolver(inst, cl)
        x = no_op_plan(inst)
        rep = ws.run_cg(x, FEASIBILITY)
        # every priced scenario beyond the seeds must be a corner
        for xi in rep.columns[3:]:
            at_lo = np.isclose(xi, cl.xi_lo)
            at_hi = np.isclose(xi, cl.xi_hi)
            assert (at_lo | at_hi).all()


# -- the CG loop ---------------------------------------------------------------

def test_cg_feasibility_zero_when_plan_serves_all_corners():
    inst, clusters = comfortable_instance(4, tau=0.0)
    rep = run_cg(inst, clusters[0], no_op_plan(inst), FEASIBILITY)
    assert rep.value == pytest.approx(0.0, abs=1e-9)
    assert rep.iterations <= 2


def test_cg_matches_oracle_small():
    for seed in (0, 5, 6):
        inst, clusters = comfortable_instance(seed, sizes=(1, 1, 2, 2))
        cl = clusters[0]
        x = no_op_plan(inst)
        val_o = oracle_wesp(inst, cl, x, OPTIMALITY)
        rep = run_cg(inst, cl, x, OPTIMALITY)
        assert rep.value == pytest.approx(val_o, abs=1e-6 * max(1, abs(val_o)))


def test_cg_warmstart_fixed_point_single_iteration():
    inst, clusters = comfortable_instance(7, sizes=(1, 1, 2, 2))
    cl = clusters[0]
    x = no_op_plan(inst)
    rep1 = run_cg(inst, cl, x, OPTIMALITY)
    rep2 = run_cg(inst, cl, x, OPTIMALITY,
                  initial_columns=list(rep1.columns))
    assert rep2.iterations == 1
    assert rep2.value == pytest.approx(rep1.value, abs=1e-6 * max(1, abs(rep1.value)))


def test_cg_master_objective_monotone_and_support_clean():
    inst, clusters = comfortable_instance(8, sizes=(1, 2, 2, 2))
    cl = clusters[0]
    x = no_op_plan(inst)
    ws = WespSolver(inst, cl)
    # re-run the loop manually to observe master values
    cols = default_seed_columns(cl)
    vals = [ws.column_value(x, c, OPTIMALITY) for c in cols]
    etas = []
    for _ in range(40):
        eta, dist, shadows = ws.solve_master(cols, np.array(vals), OPTIMALITY)
        etas.append(eta)
        r, xi = ws.solve_pricing(shadows, x, OPTIMALITY)
        if r <= 1e-6 * max(1, abs(eta)):
            break
        cols.append(xi)
        vals.append(ws.column_value(x, xi, OPTIMALITY))
    assert all(etas[i + 1] >= etas[i] - 1e-7 for i in range(len(etas) - 1))
    rep = ws.run_cg(x, OPTIMALITY)
    assert rep.distribution.validate(cl) == []
    # zero-probability columns were filtered from the support
    assert (rep.distribution.probs > wesp.PROB_TOL).all()


def test_cg_iteration_limit_raises():
    inst, clusters = comfortable_instance(9, sizes=(1, 1, 2, 2))
    with pytest.raises(CgIterationLimitError):
        run_cg(inst, clusters[0], no_op_plan(inst), OPTIMALITY, iter_limit=0)


# -- oracle ------------------------------------------------------------------

def test_oracle_degenerate_point():
    inst, clusters = comfortable_instance(10, sizes=(1, 1, 1, 1))
    cl = clusters[0]
    cl.xi_lo[:] = 6.0
    cl.xi_hi[:] = 6.0
    cl.gamma_lo[:] = 6.0
    cl.gamma_hi[:] = 6.0
    x = no_op_plan(inst)
    rm = RecourseModel(inst, cl)
    assert oracle_wesp(inst, cl, x, OPTIMALITY) == pytest.approx(
        rm.solve(x, cl.xi_lo).objective, abs=1e-9)


def test_oracle_unconstrained_window_picks_max_corner():
    # Loose moment window: worst case is the Dirac on the best corner.
    inst, clusters = comfortable_instance(11, sizes=(1, 1, 1, 2))
    cl = clusters[0]
    cl.gamma_lo[:] = cl.xi_lo
    cl.gamma_hi[:] = cl.xi_hi
    x = no_op_plan(inst)
    rm = RecourseModel(inst, cl)
    corner_vals = [rm.solve(x, c).objective for c in corner_scenarios(cl)]
    assert oracle_wesp(inst, cl, x, OPTIMALITY) == pytest.approx(
        max(corner_vals), abs=1e-7)


def test_oracle_guard():
    inst, clusters = tiny_instance(0, n_clusters=1)
    cl = clusters[0]
    cl.xi_lo = np.zeros((7, 3))
    cl.xi_hi = np.ones((7, 3))
    cl.gamma_lo = np.zeros((7, 3))
    cl.gamma_hi = np.ones((7, 3))
    with pytest.raises(TooLargeError):
        oracle_wesp(inst, cl, no_op_plan(inst), OPTIMALITY)


# -- tightness ----------------------------------------------------------------

def test_tightness_dirac_at_upper_corner():
    cl = box_cluster([[0.0, 0.0]], [[4.0, 6.0]], [[0.0, 0.0]], [[4.0, 6.0]])
    dist = wesp.DiscreteDistribution(scenarios=[cl.xi_hi.copy()],
                                     probs=np.array([1.0]),
                                     values=np.array([9.0]))
    assert check_tightness(dist, cl) is not None


def test_tightness_on_converged_runs():
    found = 0
    total = 0
    for seed in range(8):
        inst, clusters = tiny_instance(seed, n_clusters=1)
        cl = clusters[0]
        x = no_op_plan(inst)
        ws = WespSolver(inst, cl)
        if ws.run_cg(x, FEASIBILITY).value > 1e-6:
            continue
        rep = ws.run_cg(x, OPTIMALITY)
        total += 1
        if check_tightness(rep.distribution, cl) is not None:
            found += 1
    assert total > 0
    assert found == total


def test_distribution_moment_window_invariant():
    inst, clusters = comfortable_instance(12, sizes=(1, 1, 2, 2))
    cl = clusters[0]
    rep = run_cg(inst, cl, no_op_plan(inst), OPTIMALITY)
    mean = rep.distribution.mean()
    assert (mean >= cl.gamma_lo - 1e-6).all()
    assert (mean <= cl.gamma_hi + 1e-6).all()
    assert rep.distribution.probs.sum() == pytest.approx(1.0, abs=1e-9)
