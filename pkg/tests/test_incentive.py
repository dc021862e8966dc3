"""Incentive construction: matching conditions, the (L, Delta, Theta)
sweep, the decoupled (Sigma, Phi, Psi) chain and the follower gains."""
import numpy as np
import pytest

from stackmfg import incentive
from stackmfg.incentive import (DeltaThetaSolution, NewtonOpts,
                                NoIncentiveSolution, RelationViolated)
from stackmfg.model import MatrixTrajectory

TERM = (np.array([[1.0]]), np.array([[-0.01]]),
        np.array([[-0.01]]), np.array([[1e-4]]))     # benchmark blocks at T


def test_newton_opts_defaults():
    o = NewtonOpts()
    assert (o.max_iter, o.newton_tol, o.damping, o.residual_factor,
            o.trust_radius) == (50, 1e-9, 1e-3, 100.0, 10.0)


def test_zeta_eta_reduce_to_leader_gains_at_zero_L(table1, blocks1, gains1):
    L0 = np.zeros((table1.mL, table1.mF))
    for k in (0, 500, 1000):
        z, e = incentive.zeta_eta(table1, L0, *blocks1.blocks_at_node(k))
        assert np.abs(z - gains1.Theta11.values[k]).max() <= 1e-14
        assert np.abs(e - gains1.Theta12.values[k]).max() <= 1e-14


def test_zeta_terminal_hand_value(table1):
    # S0 = 0.6 + 0.25, V = 0.5 - 0.002 + 0.5, X/R1 = 0.695/0.5
    z, e = incentive.zeta_eta(table1, np.array([[1.0]]), *TERM)
    assert z[0, 0] == pytest.approx(-0.998 / 0.85 + 1.39, abs=1e-12)
    x2 = 0.7 * -0.01 + 0.5 * 1e-4
    v2 = 0.5 * -0.01 + 0.2 * 1e-4
    assert e[0, 0] == pytest.approx(-v2 / 0.85 + x2 / 0.5, abs=1e-12)


def test_matching_residual_hand_value(table1):
    # L = 0 kills the R0t path, Ht = D = 0 leaves r = -R1^-1 X
    p = table1.with_updates(Ht=0.0, D=0.0)
    Z = np.zeros((1, 1))
    r1, r2 = incentive.matching_residual(p, Z, *TERM, Z, Z)
    assert r1[0, 0] == pytest.approx(-1.39, abs=1e-12)
    assert r2[0, 0] == pytest.approx(0.0139, abs=1e-12)


def test_cc_coefficients_formula(square, square_sol):
    p = square
    blk = square_sol.blocks.blocks_at_node(0)
    L = square_sol.inc.L.values[0]
    cc = incentive.cc_coefficients(p, p.gamma, L, *blk)
    z, e = incentive.zeta_eta(p, L, *blk)
    SLi = np.linalg.inv(p.R1t + L.T @ p.R0t @ L)
    BL = p.Bt + p.Ht @ L
    A1 = p.At + p.Ft + p.Ht @ e - BL @ SLi @ (L.T @ p.R0t @ e)
    H1 = -BL @ SLi @ BL.T
    A3 = p.C + p.D @ z - p.D @ L @ SLi @ (L.T @ p.R0t @ z)
    assert np.abs(cc.A1 - A1).max() <= 1e-12
    assert np.abs(cc.H1 - H1).max() <= 1e-12
    assert np.abs(cc.A3 - A3).max() <= 1e-12


# ------------------------------------------------------------ square model

def test_square_sweep_clears_matching(square, square_sol):
    inc = square_sol.inc
    assert inc.newton_converged.all()
    assert inc.match_residual.max() <= 1e-9
    assert inc.L.values[-1].ravel() == pytest.approx(
        [-0.8567848, 0.08381711], abs=1e-6)
    assert inc.L.values[0].ravel() == pytest.approx(
        [-0.83059296, -0.00672211], abs=1e-6)
    assert inc.zeta.values[0].ravel() == pytest.approx(
        [-1.06521492, -0.82952629], abs=1e-6)
    assert inc.eta.values[0].ravel() == pytest.approx(
        [0.02186246, 0.26001047], abs=1e-6)


def test_square_stored_L_is_locally_stationary(square, square_sol):
    blocks = square_sol.blocks
    dsol, inc = square_sol.dtheta, square_sol.inc
    for k in (0, 100, 200):
        blk = blocks.fine_blocks(2 * k)
        D, T = dsol.Delta.values[k], dsol.Theta.values[k]
        r1, r2 = incentive.matching_residual(square, inc.L.values[k],
                                             *blk, D, T)
        base = max(np.abs(r1).max(), np.abs(r2).max())
        assert base <= 1e-8
        r1p, r2p = incentive.matching_residual(
            square, inc.L.values[k] + 0.1, *blk, D, T)
        assert max(np.abs(r1p).max(), np.abs(r2p).max()) >= 10.0 * max(
            base, 1e-10)


def test_square_decoupled_chain(square_sol):
    spp = square_sol.spp
    assert spp.theta_psi_gap <= 1e-6
    assert spp.delta_split_gap <= 1e-6
    assert spp.Sigma.values[0, 0, 0] == pytest.approx(1.18466074, abs=1e-6)
    assert spp.Phi.values[0, 0, 0] == pytest.approx(-0.41929027, abs=1e-6)
    assert spp.Psi.values[0, 0, 0] == pytest.approx(-0.15602569, abs=1e-6)


def test_square_follower_gains(square_sol):
    fg = square_sol.fg
    assert fg.Gxi.values[0, 0, 0] == pytest.approx(-0.04733738, abs=1e-6)
    assert fg.Gx0.values[0, 0, 0] == pytest.approx(-0.37117822, abs=1e-6)
    assert fg.Gm.values[0, 0, 0] == pytest.approx(0.02507786, abs=1e-6)


def test_square_mean_reply_matches_team_optimum(square_sol):
    # aggregated best reply equals the leader's own follower gains
    th21 = square_sol.gains.Theta21.values
    th22 = square_sol.gains.Theta22.values
    scale = 1.0 + max(np.abs(th21).max(), np.abs(th22).max())
    assert np.abs(square_sol.fg.Gx0bar.values - th21).max() <= 1e-8 * scale
    assert np.abs(square_sol.fg.Gmbar.values - th22).max() <= 1e-8 * scale


@pytest.mark.parametrize("which", ["square", "benchmark"])
def test_bar_gain_identities(which, square_sol, fg1):
    # Theta = Psi and Delta = Sigma + Phi transfer to the gains
    fg = square_sol.fg if which == "square" else fg1
    scale = 1.0 + np.abs(fg.Gx0bar.values).max()
    assert np.abs(fg.Gx0bar.values - fg.Gx0.values).max() <= 1e-8 * scale
    combined = fg.Gxi.values + fg.Gm.values
    scale = 1.0 + np.abs(fg.Gmbar.values).max()
    assert np.abs(fg.Gmbar.values - combined).max() <= 1e-8 * scale


def test_follower_gain_formula_reproduction(square, square_sol):
    p = square
    inc, spp = square_sol.inc, square_sol.spp
    for k in (0, 137, 200):
        L = inc.L.values[k]
        SLi = np.linalg.inv(p.R1t + L.T @ p.R0t @ L)
        BL = p.Bt + p.Ht @ L
        gx0 = -SLi @ (L.T @ p.R0t @ inc.zeta.values[k]
                      + BL.T @ spp.Psi.values[k])
        gxi = -SLi @ (BL.T @ spp.Sigma.values[k])
        assert np.abs(square_sol.fg.Gx0.values[k] - gx0).max() <= 1e-12
        assert np.abs(square_sol.fg.Gxi.values[k] - gxi).max() <= 1e-12


# --------------------------------------------------------------- benchmark

def test_benchmark_matching_is_overdetermined(table1, inc1):
    # two conditions, one scalar unknown: the sweep reports the defect
    assert not inc1.solved
    assert inc1.worst == pytest.approx(0.9744947255841476, rel=1e-6)
    assert int(inc1.inc.match_residual.argmax()) == 0
    assert int(inc1.inc.newton_converged.sum()) == 111
    assert inc1.inc.L.values[-1, 0, 0] == pytest.approx(
        -4.735791058676894, rel=1e-9)
    assert inc1.inc.L.values[0, 0, 0] == pytest.approx(
        -6.776679162366247, abs=1e-6)
    assert inc1.inc.match_residual[-1] <= 2e-3   # terminal node nearly clears


def test_benchmark_terminal_zeta_eta(inc1):
    assert inc1.inc.zeta.values[-1, 0, 0] == pytest.approx(
        -7.756867218619706, rel=1e-9)
    assert inc1.inc.eta.values[-1, 0, 0] == pytest.approx(
        0.07168631924502059, rel=1e-9)


def test_benchmark_terminal_conditions(table1, inc1, spp1):
    # Gt*Gamma2t = Gt here, so Delta(T) cancels to exactly zero
    assert np.all(inc1.dtheta.Delta.terminal == 0.0)
    assert np.all(inc1.dtheta.Theta.terminal == 0.0)
    assert np.array_equal(spp1.Sigma.terminal, table1.Gt)
    assert np.array_equal(spp1.Phi.terminal, -table1.Gt @ table1.Gamma2t)
    assert np.all(spp1.Psi.terminal == 0.0)


def test_benchmark_decoupled_chain_regressions(spp1, fg1):
    assert spp1.theta_psi_gap <= 1e-6
    assert spp1.delta_split_gap <= 1e-6
    assert spp1.Sigma.values[0, 0, 0] == pytest.approx(2.42426189372857,
                                                       rel=1e-6)
    assert spp1.Phi.values[0, 0, 0] == pytest.approx(-2.4239581292815853,
                                                     rel=1e-6)
    assert spp1.Psi.values[0, 0, 0] == pytest.approx(-1.9104196220148e-4,
                                                     rel=1e-4)
    assert fg1.Gxi.values[0, 0, 0] == pytest.approx(0.2768987256737192,
                                                    rel=1e-6)
    assert fg1.Gx0.values[0, 0, 0] == pytest.approx(2.5346787491820937,
                                                    rel=1e-6)
    assert fg1.Gm.values[0, 0, 0] == pytest.approx(-7.881433268493496,
                                                   rel=1e-6)


def test_no_follower_state_cost(table1, blocks1):
    # Qt = Gt = 0 zeroes the whole (Delta, Theta, Sigma, Phi, Psi) chain;
    # the matching defect survives since it is driven by the leader blocks
    p = table1.with_updates(Qt=0.0, Gt=0.0)
    with pytest.raises(NoIncentiveSolution) as err:
        incentive.solve_cc_incentive(p, blocks1)
    assert err.value.worst_residual == pytest.approx(0.97446, abs=1e-4)
    dtheta, inc = err.value.partial
    assert np.all(dtheta.Delta.values == 0.0)
    assert np.all(dtheta.Theta.values == 0.0)
    spp = incentive.solve_sigma_phi_psi(p, blocks1, dtheta, inc)
    assert np.all(spp.Sigma.values == 0.0)
    assert np.all(spp.Phi.values == 0.0)
    assert np.all(spp.Psi.values == 0.0)


def test_relation_violated_on_tampered_input(table1, blocks1, inc1):
    bad = DeltaThetaSolution(
        inc1.dtheta.grid,
        Delta=MatrixTrajectory(inc1.dtheta.grid,
                               inc1.dtheta.Delta.values + 1.0),
        Theta=inc1.dtheta.Theta,
    )
    with pytest.raises(RelationViolated):
        incentive.solve_sigma_phi_psi(table1, blocks1, bad, inc1.inc)
