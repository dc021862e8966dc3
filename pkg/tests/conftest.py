"""Shared fixtures.

The benchmark pipeline (blocks, gains, incentive sweep, decoupled chain,
Monte Carlo batteries) is solved once per session; the synthetic fixtures
cover the square-matching case (mL = 2n, so the matching conditions are
exactly solvable) and the decoupled limit.
"""
from importlib.resources import files
from types import SimpleNamespace

import pytest

from stackmfg import incentive, leader, sim
from stackmfg.leader import BlockRiccatiSolution
from stackmfg.model import ModelParams, load_config

BENCHMARK_PATH = str(files("stackmfg").joinpath("configs/benchmark.json"))


@pytest.fixture(scope="session")
def benchmark_path() -> str:
    return BENCHMARK_PATH


@pytest.fixture(scope="session")
def table1() -> ModelParams:
    return load_config(BENCHMARK_PATH)


@pytest.fixture(scope="session")
def blocks1(table1) -> BlockRiccatiSolution:
    sol = leader.solve_block_riccati(table1)
    assert isinstance(sol, BlockRiccatiSolution)
    return sol


@pytest.fixture(scope="session")
def gains1(table1, blocks1):
    return leader.leader_gains(blocks1, table1)


@pytest.fixture(scope="session")
def inc1(table1, blocks1):
    """Benchmark incentive sweep with the outcome recorded either way.

    The matching system is overdetermined here (2 conditions, 1 unknown),
    so the sweep is expected to miss the tolerance; the best-effort
    solution still feeds the decoupled chain."""
    try:
        dtheta, inc = incentive.solve_cc_incentive(table1, blocks1)
        return SimpleNamespace(solved=True, dtheta=dtheta, inc=inc,
                               worst=float(inc.match_residual.max()))
    except incentive.NoIncentiveSolution as err:
        dtheta, inc = err.partial
        return SimpleNamespace(solved=False, dtheta=dtheta, inc=inc,
                               worst=err.worst_residual)


@pytest.fixture(scope="session")
def spp1(table1, blocks1, inc1):
    return incentive.solve_sigma_phi_psi(table1, blocks1, inc1.dtheta,
                                         inc1.inc)


@pytest.fixture(scope="session")
def fg1(table1, blocks1, inc1, spp1):
    return incentive.follower_gains(table1, blocks1, inc1.inc, inc1.dtheta,
                                    spp1)


def square_params() -> ModelParams:
    # mL = 2n makes the cleared matching system square and solvable; D and
    # Ht are kept non-parallel so it stays well conditioned
    return ModelParams(
        n=1, mL=2, mF=1, nv=1,
        A=0.1, B=[[0.4, 0.3]], F=0.2, H=0.3, E=0.2, C=0.3, D=[[0.5, -0.25]],
        At=0.1, Bt=0.4, Ft=0.1, Ht=[[0.45, -0.3]], Sigma=0.3,
        Q=0.5, Gamma1=0.5, R0=[[0.5, 0.0], [0.0, 0.4]], R1=0.6, R2=0.5,
        Gamma2=0.1, G=0.4,
        Qt=0.3, Gamma1t=0.5, R0t=[[0.3, 0.0], [0.0, 0.25]], R1t=0.5,
        Gamma2t=0.2, Gt=0.3,
        xi=1.0, x0init=0.8, T=2.0, gamma=10.0, grid_steps=200,
    )


@pytest.fixture(scope="session")
def square() -> ModelParams:
    return square_params()


@pytest.fixture(scope="session")
def square_sol(square):
    blocks = leader.solve_block_riccati(square)
    assert isinstance(blocks, BlockRiccatiSolution)
    gains = leader.leader_gains(blocks, square)
    dtheta, inc = incentive.solve_cc_incentive(square, blocks)
    spp = incentive.solve_sigma_phi_psi(square, blocks, dtheta, inc)
    fg = incentive.follower_gains(square, blocks, inc, dtheta, spp)
    return SimpleNamespace(blocks=blocks, gains=gains, dtheta=dtheta,
                           inc=inc, spp=spp, fg=fg)


@pytest.fixture(scope="session")
def decoupled(table1) -> ModelParams:
    return table1.with_updates(H=0.0, Ht=0.0, Bt=0.0, F=0.0, Ft=0.0,
                               Gamma1=0.0, Gamma2=0.0)


# Monte Carlo batteries shared between the acceptance suite and the module
# tests; common seed so the sweep data is reusable for the ratio checks.

@pytest.fixture(scope="session")
def limit_costs(table1, blocks1, gains1):
    cfg = sim.SimConfig(N=1, n_paths=2000, master_seed=42)
    bundle = sim.simulate_limit(table1, gains1, cfg)
    return sim.eval_costs(bundle, table1,
                          V0=leader.leader_value(blocks1, table1))


@pytest.fixture(scope="session")
def saddle2000(table1, gains1):
    return sim.saddle_check(table1, gains1,
                            sim.SimConfig(N=1, n_paths=2000, master_seed=42))


@pytest.fixture(scope="session")
def mf_sweep(table1, gains1):
    cfg = sim.SimConfig(N=1, n_paths=200, master_seed=42)
    return sim.sweep_mean_field_gap(table1, gains1, [10, 40, 160, 640], cfg)


@pytest.fixture(scope="session")
def opt_sweep(table1, gains1):
    cfg = sim.SimConfig(N=1, n_paths=200, master_seed=42)
    return sim.sweep_optimality_gap(table1, gains1, [10, 40, 160, 640], cfg)
