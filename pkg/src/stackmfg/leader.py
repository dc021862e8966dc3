"""Leader-side solvers: concavity certificate, critical attenuation level,
and the coupled four-block Riccati system with its closed-loop gains.

The four blocks (P1, Pi1, P2, Pi2) are coded directly from the displayed
equations; the same system assembled as a single 2n x 2n Riccati equation is
integrated independently as a transcription cross-check.  Both runs share a
doubled internal grid so downstream consumers get accurate values at the
half-steps of the published grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MatrixTrajectory, ModelParams, TimeGrid
from .odeint import Escape, EscapePolicy, IntegrationResult, OdeProblem, integrate

__all__ = [
    "SingularGain",
    "NotSolvableAtCap",
    "ConcavityCertificate",
    "GammaHatResult",
    "BlockRiccatiSolution",
    "LeaderGains",
    "solve_concavity",
    "estimate_gamma_hat",
    "solve_block_riccati",
    "leader_gains",
    "leader_value",
    "stationarity_residual",
]

COND_CAP = 1e12


class SingularGain(Exception):
    """The control-weight block R0 + D'P1D became numerically singular."""


class NotSolvableAtCap(Exception):
    """No solvable attenuation level found below the bracketing cap."""


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _disturbance_weight(p: ModelParams) -> np.ndarray:
    """E R2^{-1} E', the square completed against the attenuation term."""
    return p.E @ np.linalg.solve(p.R2, p.E.T)


@dataclass(frozen=True)
class ConcavityCertificate:
    gamma: float
    solvable: bool
    K: MatrixTrajectory | None
    escape: Escape | None
    result: IntegrationResult

    @property
    def t_escape(self) -> float | None:
        return None if self.escape is None else self.escape.t_escape


def concavity_problem(p: ModelParams, gamma: float) -> OdeProblem:
    n = p.n
    ERi = _disturbance_weight(p)
    g2 = gamma ** -2
    At_ = p.A.T
    Ct_ = p.C.T

    def rhs(t, state):
        (K,) = state
        return [-(K @ p.A + At_ @ K + Ct_ @ K @ p.C + p.Q + g2 * (K @ ERi @ K))]

    return OdeProblem(
        shapes=((n, n),),
        rhs=rhs,
        boundary=(p.G.copy(),),
        direction="backward",
        poststep=lambda st: [_sym(st[0])],
    )


def solve_concavity(p: ModelParams, gamma: float | None = None,
                    grid: TimeGrid | None = None,
                    escape: EscapePolicy = EscapePolicy()) -> ConcavityCertificate:
    """Backward Riccati certificate for concavity of the soft-constrained cost.

    Solvability over the whole horizon certifies gamma > gamma_hat; a finite
    escape reports where the certificate blows up.
    """
    g = p.gamma if gamma is None else float(gamma)
    grid = p.grid() if grid is None else grid
    res = integrate(concavity_problem(p, g), grid, escape)
    if res.ok:
        return ConcavityCertificate(g, True, res.trajectories[0], None, res)
    return ConcavityCertificate(g, False, None, res.escape, res)


@dataclass(frozen=True)
class GammaHatResult:
    gamma_hat: float
    bracket: tuple[float, float]
    trace: tuple[tuple[float, bool, float], ...]  # (gamma, solvable, t_escape or nan)
    note: str = ""


def estimate_gamma_hat(p: ModelParams, bracket_tol: float = 1e-4,
                       lo_floor: float = 1e-6, hi_cap: float = 1e6,
                       grid: TimeGrid | None = None) -> GammaHatResult:
    """Bisect the attenuation level on solvability of the concavity equation.

    The initial bracket doubles up from gamma=1 until solvable and halves
    down until escape.  If even lo_floor is solvable the critical level is
    reported as 0; if hi_cap is reached without a solvable level the search
    aborts with NotSolvableAtCap.
    """
    grid = p.grid() if grid is None else grid
    trace = []

    def probe(g: float) -> bool:
        cert = solve_concavity(p, g, grid)
        t_esc = np.nan if cert.solvable else cert.escape.t_escape
        trace.append((g, cert.solvable, t_esc))
        return cert.solvable

    hi = 1.0
    while not probe(hi):
        hi *= 2.0
        if hi > hi_cap:
            raise NotSolvableAtCap(f"no solvable gamma found up to {hi_cap:g}")
    lo = hi
    while probe(lo):
        if lo <= lo_floor:
            return GammaHatResult(
                0.0, (0.0, lo), tuple(trace),
                note=f"solvable down to the floor {lo_floor:g}; "
                     "attenuation constraint is never binding",
            )
        lo *= 0.5
    while hi - lo > bracket_tol:
        mid = 0.5 * (lo + hi)
        if probe(mid):
            hi = mid
        else:
            lo = mid
    return GammaHatResult(0.5 * (lo + hi), (lo, hi), tuple(trace))


@dataclass(frozen=True)
class BlockRiccatiSolution:
    """Coupled-block solution published on the model grid.

    fine_* arrays hold the same solution on the internally doubled grid
    (2M+1 nodes) so the incentive solver can read exact block values at the
    half-steps of its own RK4 sweep.
    """

    gamma: float
    grid: TimeGrid
    P1: MatrixTrajectory
    Pi1: MatrixTrajectory
    P2: MatrixTrajectory
    Pi2: MatrixTrajectory
    assembled: MatrixTrajectory
    fine_grid: TimeGrid
    fine_P1: np.ndarray
    fine_Pi1: np.ndarray
    fine_P2: np.ndarray
    fine_Pi2: np.ndarray

    def blocks_at_node(self, k: int):
        return (self.P1.values[k], self.Pi1.values[k],
                self.P2.values[k], self.Pi2.values[k])

    def fine_blocks(self, j: int):
        """Block values at fine node j (fine node 2k is published node k)."""
        return (self.fine_P1[j], self.fine_Pi1[j],
                self.fine_P2[j], self.fine_Pi2[j])


def _gain_solve(S0: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if np.linalg.cond(S0) > COND_CAP:
        raise SingularGain(
            f"R0 + D'P1D has condition number above {COND_CAP:g}"
        )
    return np.linalg.solve(S0, rhs)


def block_riccati_problem(p: ModelParams, gamma: float) -> OdeProblem:
    n = p.n
    ERi = _disturbance_weight(p)
    g2 = gamma ** -2
    AF = p.At + p.Ft          # follower mean drift A~ + F~
    At_, AFt_, Ct_, Ft_ = p.A.T, AF.T, p.C.T, p.F.T
    Bt_, Ht_, D_t = p.B.T, p.H.T, p.D.T
    Btt_, Htt_ = p.Bt.T, p.Ht.T
    QG1 = p.Q @ p.Gamma1
    G1QG1 = p.Gamma1.T @ QG1
    R1inv = np.linalg.inv(p.R1)
    n_ = n

    def rhs(t, state):
        P1, Pi1, P2, Pi2 = state
        DtP1 = D_t @ P1
        CtP1 = Ct_ @ P1
        S0 = p.R0 + DtP1 @ p.D
        U = P1 @ p.B + Pi1 @ p.Ht + CtP1 @ p.D
        V = Bt_ @ P1 + Htt_ @ P2 + DtP1 @ p.C
        W = P1 @ p.H + Pi1 @ p.Bt
        X = Ht_ @ P1 + Btt_ @ P2
        U2 = P2 @ p.B + Pi2 @ p.Ht
        V2 = Bt_ @ Pi1 + Htt_ @ Pi2
        W2 = P2 @ p.H + Pi2 @ p.Bt
        X2 = Ht_ @ Pi1 + Btt_ @ Pi2
        SiVV2 = np.linalg.solve(S0, np.concatenate((V, V2), axis=1))
        SiV, SiV2 = SiVV2[:, :n_], SiVV2[:, n_:]
        RiX = R1inv @ X
        RiX2 = R1inv @ X2
        P1E = g2 * (P1 @ ERi)
        P2E = g2 * (P2 @ ERi)
        dP1 = -(P1 @ p.A + At_ @ P1 + CtP1 @ p.C + p.Q
                + P1E @ P1 - U @ SiV - W @ RiX)
        dPi1 = -(Pi1 @ AF + At_ @ Pi1 + P1 @ p.F - QG1
                 + P1E @ Pi1 - U @ SiV2 - W @ RiX2)
        dP2 = -(P2 @ p.A + AFt_ @ P2 + Ft_ @ P1 - QG1.T
                + P2E @ P1 - U2 @ SiV - W2 @ RiX)
        dPi2 = -(Pi2 @ AF + AFt_ @ Pi2 + P2 @ p.F + Ft_ @ Pi1
                 + G1QG1 + P2E @ Pi1 - U2 @ SiV2 - W2 @ RiX2)
        return [dP1, dPi1, dP2, dPi2]

    GT2 = p.G @ p.Gamma2
    return OdeProblem(
        shapes=((n, n),) * 4,
        rhs=rhs,
        boundary=(p.G.copy(), -GT2, -GT2.T, p.Gamma2.T @ GT2),
        direction="backward",
    )


def assembled_problem(p: ModelParams, gamma: float) -> OdeProblem:
    """The same system written as one 2n x 2n Riccati equation."""
    n = p.n
    g2 = gamma ** -2
    Z = np.zeros((n, n))
    Abar = np.block([[p.A, p.F], [Z, p.At + p.Ft]])
    Bbar = np.block([[p.B, p.H], [p.Ht, p.Bt]])
    Cbar = np.block([[p.C, Z], [Z, Z]])
    Dbar = np.block([[p.D, np.zeros((n, p.mF))],
                     [np.zeros((n, p.mL)), np.zeros((n, p.mF))]])
    QG1 = p.Q @ p.Gamma1
    Qbar = np.block([[p.Q, -QG1], [-QG1.T, p.Gamma1.T @ QG1]])
    Rbar = np.block([[p.R0, np.zeros((p.mL, p.mF))],
                     [np.zeros((p.mF, p.mL)), p.R1]])
    Ebar = np.vstack([p.E, np.zeros((n, p.nv))])
    ERi = Ebar @ np.linalg.solve(p.R2, Ebar.T)
    GT2 = p.G @ p.Gamma2
    Gbar = np.block([[p.G, -GT2], [-GT2.T, p.Gamma2.T @ GT2]])
    Abar_t, Cbar_t, Bbar_t, Dbar_t = Abar.T, Cbar.T, Bbar.T, Dbar.T

    def rhs(t, state):
        (P,) = state
        lhs = Rbar + Dbar_t @ P @ Dbar
        gain = (P @ Bbar + Cbar_t @ P @ Dbar) @ np.linalg.solve(
            lhs, Bbar_t @ P + Dbar_t @ P @ Cbar)
        return [-(P @ Abar + Abar_t @ P + Cbar_t @ P @ Cbar + Qbar
                  + g2 * (P @ ERi @ P) - gain)]

    return OdeProblem(
        shapes=((2 * n, 2 * n),),
        rhs=rhs,
        boundary=(Gbar,),
        direction="backward",
    )


def solve_block_riccati(p: ModelParams, gamma: float | None = None,
                        grid: TimeGrid | None = None,
                        escape: EscapePolicy = EscapePolicy()):
    """Integrate the four coupled blocks; returns the solution or an Escape.

    Solvability below the critical attenuation level is the caller's
    responsibility; a violation that actually destabilizes the system shows
    up here as the returned Escape.
    """
    g = p.gamma if gamma is None else float(gamma)
    grid = p.grid() if grid is None else grid
    fine = grid.refined(2)
    res = integrate(block_riccati_problem(p, g), fine, escape)
    if not res.ok:
        return res.escape
    res_asm = integrate(assembled_problem(p, g), fine, escape)
    if not res_asm.ok:
        return res_asm.escape
    vals = [tr.values for tr in res.trajectories]
    # singularity guard on the gain weight, vectorized over the fine nodes
    S0_all = p.R0 + np.einsum("ij,kjl,lm->kim", p.D.T, vals[0], p.D)
    conds = np.linalg.cond(S0_all)
    if np.max(conds) > COND_CAP:
        k = int(np.argmax(conds))
        raise SingularGain(
            f"R0 + D'P1D has condition number {conds[k]:.3e} at t={fine.nodes[k]:.6g}"
        )
    coarse = [MatrixTrajectory(grid, v[::2].copy()) for v in vals]
    asm = MatrixTrajectory(grid, res_asm.trajectories[0].values[::2].copy())
    return BlockRiccatiSolution(
        gamma=g, grid=grid,
        P1=coarse[0], Pi1=coarse[1], P2=coarse[2], Pi2=coarse[3],
        assembled=asm, fine_grid=fine,
        fine_P1=vals[0], fine_Pi1=vals[1], fine_P2=vals[2], fine_Pi2=vals[3],
    )


@dataclass(frozen=True)
class LeaderGains:
    """Closed-loop feedback gains of the saddle strategies.

    Theta11/Theta12 act on (x0, m) in the leader's own control, Theta21 and
    Theta22 in the per-follower control; Vx/Vm give the worst-case
    disturbance feedback.
    """

    grid: TimeGrid
    Theta11: MatrixTrajectory
    Theta12: MatrixTrajectory
    Theta21: MatrixTrajectory
    Theta22: MatrixTrajectory
    Vx: MatrixTrajectory
    Vm: MatrixTrajectory


def gain_matrices(p: ModelParams, gamma: float, P1, Pi1, P2, Pi2):
    """Pointwise gain formulas from block values at one time."""
    S0 = p.R0 + p.D.T @ P1 @ p.D
    V = p.B.T @ P1 + p.Ht.T @ P2 + p.D.T @ P1 @ p.C
    V2 = p.B.T @ Pi1 + p.Ht.T @ Pi2
    X = p.H.T @ P1 + p.Bt.T @ P2
    X2 = p.H.T @ Pi1 + p.Bt.T @ Pi2
    th11 = -_gain_solve(S0, V)
    th12 = -np.linalg.solve(S0, V2)
    th21 = -np.linalg.solve(p.R1, X)
    th22 = -np.linalg.solve(p.R1, X2)
    g2 = gamma ** -2
    vx = g2 * np.linalg.solve(p.R2, p.E.T @ P1)
    vm = g2 * np.linalg.solve(p.R2, p.E.T @ Pi1)
    return th11, th12, th21, th22, vx, vm


def leader_gains(sol: BlockRiccatiSolution, p: ModelParams) -> LeaderGains:
    M = sol.grid.steps
    out = [np.empty((M + 1, r, c)) for r, c in
           ((p.mL, p.n), (p.mL, p.n), (p.mF, p.n), (p.mF, p.n),
            (p.nv, p.n), (p.nv, p.n))]
    for k in range(M + 1):
        mats = gain_matrices(p, sol.gamma, *sol.blocks_at_node(k))
        for store, m in zip(out, mats):
            store[k] = m
    trajs = [MatrixTrajectory(sol.grid, a) for a in out]
    return LeaderGains(sol.grid, *trajs)


def leader_value(sol: BlockRiccatiSolution, p: ModelParams) -> float:
    """Saddle value of the limit problem from the initial-node blocks."""
    P1, Pi1, P2, Pi2 = sol.blocks_at_node(0)
    xi, x = p.xi, p.x0init
    return float(xi @ P1 @ xi + xi @ (Pi1 + P2.T) @ x + x @ Pi2 @ x)


def stationarity_residual(sol: BlockRiccatiSolution, gains: LeaderGains,
                          p: ModelParams) -> float:
    """Worst nodewise Frobenius defect of the first-order saddle conditions.

    With the costate pair read off the blocks (y = P1 x0 + Pi1 m,
    p = P2 x0 + Pi2 m, z = P1(C x0 + D u0)), each stationarity line is an
    affine identity in (x0, m); the residual is the worst coefficient
    defect over both arguments, all three lines and all nodes.
    """
    g2sq = sol.gamma ** 2
    worst = 0.0
    for k in range(sol.grid.steps + 1):
        P1, Pi1, P2, Pi2 = sol.blocks_at_node(k)
        t11 = gains.Theta11.values[k]
        t12 = gains.Theta12.values[k]
        t21 = gains.Theta21.values[k]
        t22 = gains.Theta22.values[k]
        vx = gains.Vx.values[k]
        vm = gains.Vm.values[k]
        lines = (
            p.B.T @ P1 + p.D.T @ P1 @ (p.C + p.D @ t11) + p.Ht.T @ P2 + p.R0 @ t11,
            p.B.T @ Pi1 + p.D.T @ P1 @ p.D @ t12 + p.Ht.T @ Pi2 + p.R0 @ t12,
            p.H.T @ P1 + p.Bt.T @ P2 + p.R1 @ t21,
            p.H.T @ Pi1 + p.Bt.T @ Pi2 + p.R1 @ t22,
            p.E.T @ P1 - g2sq * p.R2 @ vx,
            p.E.T @ Pi1 - g2sq * p.R2 @ vm,
        )
        for m in lines:
            worst = max(worst, float(np.sqrt(np.sum(m * m))))
    return worst
