"""Monte Carlo machinery: path simulation, cost quadrature, saddle
perturbation battery, population sweeps."""
import numpy as np
import pytest

from stackmfg import incentive, leader, rng, sim
from stackmfg.sim import SimConfig


# ------------------------------------------------------------- validation

def test_simconfig_validation():
    for bad in (dict(N=0), dict(n_paths=0), dict(em_substeps=0),
                dict(n_threads=0), dict(disturbance="bang"),
                dict(master_seed=-1)):
        with pytest.raises(ValueError):
            SimConfig(**bad)


def test_saddle_requires_unit_substeps(table1, gains1):
    with pytest.raises(ValueError):
        sim.saddle_check(table1, gains1,
                         SimConfig(n_paths=4, em_substeps=2))


def test_sweep_input_validation(table1, gains1):
    cfg = SimConfig(n_paths=2)
    with pytest.raises(ValueError):
        sim.sweep_mean_field_gap(table1, gains1, [4, 8], cfg)
    with pytest.raises(ValueError):
        sim.sweep_optimality_gap(table1, gains1, [4, 4, 8], cfg)


def test_override_shape_guard(table1, gains1):
    cfg = SimConfig(n_paths=2)
    good = sim.simulate_limit(table1, gains1, cfg)
    with pytest.raises(ValueError, match="override u0"):
        sim.simulate_limit(table1, gains1, cfg,
                           controls_override=(good.u0bar[:, :-1],
                                              good.u1bar, good.v))


def test_w0_increment_shape_guard(table1, gains1):
    with pytest.raises(ValueError, match="w0_increments"):
        sim.simulate_limit(table1, gains1, SimConfig(n_paths=2),
                           w0_increments=np.zeros((2, 10)))


def test_incentive_mode_needs_matrices(square, square_sol):
    with pytest.raises(ValueError):
        sim.simulate_population(square, square_sol.gains, SimConfig(N=2),
                                fgains=square_sol.fg)


# ---------------------------------------------------------------- streams

def test_rng_stream_independence():
    # per-agent rows do not move when the agent list is reordered/extended
    a = rng.brownian_increments(5, 3, [1, 2, 3], 100, 0.01)
    b = rng.brownian_increments(5, 3, [1, 5, 3, 9], 100, 0.01)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[2], b[2])
    assert not np.array_equal(a[1], b[1])


def test_rng_index_bounds():
    with pytest.raises(ValueError):
        rng.stream(1, 2 ** 32, 0)
    with pytest.raises(ValueError):
        rng.stream(1, 0, -1)


# ------------------------------------------------------------ limit paths

def test_same_seed_bitwise_different_seed_not(table1, gains1):
    cfg = SimConfig(n_paths=8, master_seed=11)
    a = sim.simulate_limit(table1, gains1, cfg)
    b = sim.simulate_limit(table1, gains1, cfg)
    assert np.array_equal(a.x0, b.x0) and np.array_equal(a.v, b.v)
    c = sim.simulate_limit(table1, gains1,
                           SimConfig(n_paths=8, master_seed=12))
    assert not np.array_equal(a.x0, c.x0)


def test_thread_count_does_not_change_paths(table1, gains1):
    one = sim.simulate_limit(table1, gains1,
                             SimConfig(n_paths=200, n_threads=1))
    four = sim.simulate_limit(table1, gains1,
                              SimConfig(n_paths=200, n_threads=4))
    assert np.array_equal(one.x0, four.x0)
    assert np.array_equal(one.m, four.m)
    assert np.array_equal(one.u0bar, four.u0bar)


def test_replay_of_recorded_controls_is_bitwise(table1, gains1):
    cfg = SimConfig(n_paths=8, master_seed=11)
    base = sim.simulate_limit(table1, gains1, cfg)
    rep = sim.simulate_limit(
        table1, gains1, cfg,
        controls_override=(base.u0bar, base.u1bar, base.v))
    assert np.array_equal(base.x0, rep.x0)
    assert np.array_equal(base.m, rep.m)


def test_zero_disturbance_mode(table1, gains1):
    cfg = SimConfig(n_paths=4, disturbance="zero")
    b = sim.simulate_limit(table1, gains1, cfg)
    assert np.all(b.v == 0.0)
    w = sim.simulate_limit(table1, gains1, SimConfig(n_paths=4))
    assert not np.array_equal(b.x0, w.x0)


def test_zero_start_stays_at_zero(table1, gains1):
    p = table1.with_updates(xi=0.0, x0init=0.0, C=0.0, D=0.0, Sigma=0.0)
    b = sim.simulate_limit(p, gains1, SimConfig(n_paths=2, master_seed=1))
    for arr in (b.x0, b.m, b.u0bar, b.u1bar, b.v):
        assert np.all(arr == 0.0)
    rep = sim.eval_costs(b, p)
    assert rep.J0_mean == 0.0
    assert rep.V0 is None


def test_strong_self_convergence_in_substeps(table1, gains1):
    # one fine Brownian path per sample, aggregated to coarser substep
    # counts: endpoint errors against s=16 should drop at about order 1
    M, P, s_ref = table1.grid_steps, 64, 16
    fine = np.empty((P, M * s_ref))
    for i in range(P):
        fine[i] = rng.normals(123, i, 0, M * s_ref)
    fine *= np.sqrt(table1.grid().h / s_ref)

    def run(s):
        agg = fine.reshape(P, M * s, s_ref // s).sum(axis=2)
        cfg = SimConfig(n_paths=P, master_seed=123, em_substeps=s)
        return sim.simulate_limit(table1, gains1, cfg, w0_increments=agg)

    ref = run(s_ref)
    errs = {s: float(np.mean(np.abs(run(s).x0[:, -1] - ref.x0[:, -1])))
            for s in (1, 2, 4)}
    assert errs[1] > errs[2] > errs[4] > 0.0
    assert 2.0 <= errs[1] / errs[4] <= 12.0


# ------------------------------------------------------------- population

def test_sigma_zero_single_follower_collapses(table1, gains1):
    # no idiosyncratic noise and N=1: the empirical field is the mean field
    p = table1.with_updates(Sigma=0.0)
    cfg = SimConfig(N=1, n_paths=2, master_seed=42)
    pop = sim.simulate_population(p, gains1, cfg)
    lim = sim.simulate_limit(p, gains1, cfg)
    assert np.abs(pop.xN - pop.m).max() <= 1e-9
    assert np.abs(pop.xN - lim.m).max() <= 1e-9
    assert np.abs(pop.x0 - lim.x0).max() <= 1e-9


def test_population_consistency_and_costs(table1, blocks1, gains1):
    cfg = SimConfig(N=12, n_paths=2, master_seed=9,
                    store_all_followers=True)
    pb = sim.simulate_population(table1, gains1, cfg)
    assert pb.follower_ids == tuple(range(1, 13))
    assert pb.consistency_gap() <= 1e-12
    V0 = leader.leader_value(blocks1, table1)
    rep = sim.eval_costs(pb, table1, V0=V0)
    assert np.isfinite(rep.J0_mean) and rep.J0_stderr > 0.0
    assert rep.V0 == V0
    assert rep.Ji_mean.shape == (12,)
    assert np.all(np.isfinite(rep.Ji_mean))


def test_incentive_mode_runs(square, square_sol):
    cfg = SimConfig(N=8, n_paths=2, master_seed=3,
                    store_all_followers=True)
    pb = sim.simulate_population(square, square_sol.gains, cfg,
                                 fgains=square_sol.fg, inc=square_sol.inc)
    assert pb.xN.shape == (2, square.grid_steps + 1, square.n)
    assert pb.u0i.shape[1] == 8
    for arr in (pb.x0, pb.m, pb.xN, pb.xi, pb.u0i, pb.u1i):
        assert np.all(np.isfinite(arr))
    assert pb.consistency_gap() <= 1e-12


def test_incentive_match_values(gains1, fg1, inc1, square_sol):
    # same quantity as the nodewise matching defect, read off the gains
    assert sim.incentive_match(gains1, fg1) == pytest.approx(inc1.worst,
                                                             rel=1e-9)
    assert sim.incentive_match(square_sol.gains, square_sol.fg) <= 1e-9


# ----------------------------------------------------------------- sweeps

def test_sigma_zero_sweeps_degenerate(table1, gains1):
    p = table1.with_updates(Sigma=0.0)
    cfg = SimConfig(n_paths=4, master_seed=7)
    mf = sim.sweep_mean_field_gap(p, gains1, [4, 8, 16], cfg)
    assert mf.degenerate
    assert np.isnan(mf.slope)
    opt = sim.sweep_optimality_gap(p, gains1, [4, 8, 16], cfg)
    assert not opt.degenerate
    assert all(pt.gap <= 1e-10 for pt in opt.points)


def test_mean_field_gap_decays_like_one_over_N(mf_sweep):
    gaps = [pt.gap for pt in mf_sweep.points]
    # quadrupling N should cut the squared gap by roughly 4
    for a, b in zip(gaps, gaps[1:]):
        assert 2.5 <= a / b <= 6.0
    assert all(pt.stderr > 0.0 for pt in mf_sweep.points)
    assert not mf_sweep.degenerate


def test_optimality_gap_proxy_shrinks(opt_sweep):
    gaps = [pt.gap for pt in opt_sweep.points]
    assert all(g > 0.0 for g in gaps)
    assert gaps[0] > gaps[-1]
    assert "proxy" in opt_sweep.caveat


# ----------------------------------------------------------------- saddle

def test_mini_saddle_battery(table1, gains1):
    sr = sim.saddle_check(table1, gains1,
                          SimConfig(n_paths=200, master_seed=42))
    assert sr.all_ok
    assert len(sr.entries) == 8
    assert np.isfinite(sr.baseline_mean)
    # margins scale like eps^2: eps 0.1 -> 0.5 is a factor 25
    for shape, ratio in sr.u_ratios:
        assert 20.0 <= ratio <= 30.0
