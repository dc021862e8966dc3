"""Incentive design: the leader's linear reward-shaping matrix and the
follower-side Riccati chain it induces.

The backward sweep alternates an algebraic solve for the shaping matrix L
(damped Gauss-Newton on the two matching conditions, warm-started node to
node) with an RK4 step of the coupled (Delta, Theta) equations in which L is
held at its nodal value.  The decoupled (Sigma, Phi, Psi) chain is
co-integrated with (Delta, Theta) so that the structural relations
Theta = Psi and Delta = Sigma + Phi are preserved to roundoff by
construction and only genuine transcription errors can break them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .leader import BlockRiccatiSolution
from .model import MatrixTrajectory, ModelParams, TimeGrid

__all__ = [
    "NoIncentiveSolution",
    "RelationViolated",
    "NewtonOpts",
    "IncentiveMatrices",
    "DeltaThetaSolution",
    "CCCoefficients",
    "SigmaPhiPsiSolution",
    "FollowerGains",
    "zeta_eta",
    "matching_residual",
    "cc_coefficients",
    "solve_cc_incentive",
    "solve_sigma_phi_psi",
    "follower_gains",
]


class NoIncentiveSolution(Exception):
    """The matching conditions could not be satisfied to tolerance.

    worst_residual / t_worst locate the offending node; partial carries the
    best-effort sweep so diagnostics can still be produced.
    """

    def __init__(self, worst_residual, t_worst, partial=None):
        super().__init__(
            f"matching residual {worst_residual:.3e} at t={t_worst:.6g} "
            "exceeds tolerance"
        )
        self.worst_residual = worst_residual
        self.t_worst = t_worst
        self.partial = partial


class RelationViolated(Exception):
    """The decoupled chain disagrees with the coupled one beyond tolerance."""


@dataclass(frozen=True)
class NewtonOpts:
    max_iter: int = 50
    newton_tol: float = 1e-9
    damping: float = 1e-3          # initial Levenberg parameter
    residual_factor: float = 100.0  # sweep fails if max residual > factor * tol
    # iterates leaving |x - x0| <= trust_radius * (1 + |x0|) are abandoned
    # as divergent rather than chased down the objective's unbounded tail
    trust_radius: float = 10.0


@dataclass(frozen=True)
class IncentiveMatrices:
    grid: TimeGrid
    L: MatrixTrajectory
    zeta: MatrixTrajectory
    eta: MatrixTrajectory
    match_residual: np.ndarray       # Frobenius norm of both conditions per node
    newton_iters: np.ndarray
    newton_converged: np.ndarray     # False where no stationary point was found


@dataclass(frozen=True)
class DeltaThetaSolution:
    grid: TimeGrid
    Delta: MatrixTrajectory
    Theta: MatrixTrajectory


@dataclass(frozen=True)
class CCCoefficients:
    """Closed-loop coefficient matrices entering the follower-side chain.

    A1/B1/H1 drive the mean-state block, A2/B2/H2 the leader-state block and
    A3/B3/H3 the leader diffusion block.
    """

    A1: np.ndarray
    B1: np.ndarray
    H1: np.ndarray
    A2: np.ndarray
    B2: np.ndarray
    H2: np.ndarray
    A3: np.ndarray
    B3: np.ndarray
    H3: np.ndarray


@dataclass(frozen=True)
class SigmaPhiPsiSolution:
    grid: TimeGrid
    Sigma: MatrixTrajectory
    Phi: MatrixTrajectory
    Psi: MatrixTrajectory
    # worst nodewise defects of Theta = Psi and Delta = Sigma + Phi,
    # relative to 1 + |rhs|
    theta_psi_gap: float
    delta_split_gap: float


@dataclass(frozen=True)
class FollowerGains:
    """Feedback gains of the followers' best replies under the incentive.

    Gx0bar/Gmbar act on (x0, m) in the mean reply; Gxi/Gx0/Gm give the
    individual reply on (own state, x0, m).
    """

    grid: TimeGrid
    Gxi: MatrixTrajectory
    Gx0: MatrixTrajectory
    Gm: MatrixTrajectory
    Gx0bar: MatrixTrajectory
    Gmbar: MatrixTrajectory


def zeta_eta(p: ModelParams, L: np.ndarray, P1, Pi1, P2, Pi2):
    """State and mean feedthrough of the leader's incentive at one node."""
    S0 = p.R0 + p.D.T @ P1 @ p.D
    V = p.B.T @ P1 + p.Ht.T @ P2 + p.D.T @ P1 @ p.C
    V2 = p.B.T @ Pi1 + p.Ht.T @ Pi2
    X = p.H.T @ P1 + p.Bt.T @ P2
    X2 = p.H.T @ Pi1 + p.Bt.T @ Pi2
    zeta = -np.linalg.solve(S0, V) + L @ np.linalg.solve(p.R1, X)
    eta = -np.linalg.solve(S0, V2) + L @ np.linalg.solve(p.R1, X2)
    return zeta, eta


def matching_residual(p: ModelParams, L: np.ndarray, P1, Pi1, P2, Pi2,
                      Delta, Theta):
    """Both incentive matching conditions, evaluated as written.

    Returns the pair of mF x n defect matrices; zeros mean the followers'
    aggregated best reply reproduces the leader's team-optimal follower gain.
    """
    zeta, eta = zeta_eta(p, L, P1, Pi1, P2, Pi2)
    SL = p.R1t + L.T @ p.R0t @ L
    BL = p.Bt + p.Ht @ L
    X = p.H.T @ P1 + p.Bt.T @ P2
    X2 = p.H.T @ Pi1 + p.Bt.T @ Pi2
    LtR0 = L.T @ p.R0t
    r1 = np.linalg.solve(SL, LtR0 @ zeta + BL.T @ Theta) - np.linalg.solve(p.R1, X)
    r2 = np.linalg.solve(SL, LtR0 @ eta + BL.T @ Delta) - np.linalg.solve(p.R1, X2)
    return r1, r2


def cc_coefficients(p: ModelParams, gamma: float, L: np.ndarray,
                    P1, Pi1, P2, Pi2) -> CCCoefficients:
    zeta, eta = zeta_eta(p, L, P1, Pi1, P2, Pi2)
    return _cc_from_zeta_eta(p, gamma, L, zeta, eta, P1, Pi1)


def _cc_from_zeta_eta(p, gamma, L, zeta, eta, P1, Pi1) -> CCCoefficients:
    g2 = gamma ** -2
    ERi = p.E @ np.linalg.solve(p.R2, p.E.T)
    SL = p.R1t + L.T @ p.R0t @ L
    BL = p.Bt + p.Ht @ L          # follower-side input map
    GL = p.H + p.B @ L            # leader-side counterpart
    DL = p.D @ L
    LtR0z = np.linalg.solve(SL, L.T @ p.R0t @ zeta)
    LtR0e = np.linalg.solve(SL, L.T @ p.R0t @ eta)
    SLBL = np.linalg.solve(SL, BL.T)
    A1 = p.At + p.Ft + p.Ht @ eta - BL @ LtR0e
    B1 = p.Ht @ zeta - BL @ LtR0z
    H1 = -BL @ SLBL
    A2 = p.A + g2 * (ERi @ P1) + p.B @ zeta - GL @ LtR0z
    B2 = p.F + g2 * (ERi @ Pi1) + p.B @ eta - GL @ LtR0e
    H2 = -GL @ SLBL
    A3 = p.C + p.D @ zeta - DL @ LtR0z
    B3 = p.D @ eta - DL @ LtR0e
    H3 = -DL @ SLBL
    return CCCoefficients(A1, B1, H1, A2, B2, H2, A3, B3, H3)


def _delta_theta_rhs(p, cc: CCCoefficients, Delta, Theta):
    At_ = p.At.T
    QtG = p.Qt - p.Qt @ p.Gamma1t
    dDelta = -(Delta @ cc.A1 + At_ @ Delta + Delta @ cc.H1 @ Delta
               + Theta @ (cc.B2 + cc.H2 @ Delta) + QtG)
    dTheta = -(Theta @ cc.A2 + At_ @ Theta + Theta @ cc.H2 @ Theta
               + Delta @ (cc.B1 + cc.H1 @ Theta))
    return dDelta, dTheta


def _gauss_newton(fun, L0: np.ndarray, opts: NewtonOpts):
    """Levenberg-damped Gauss-Newton for the small dense matching system.

    The system is generally overdetermined (two matrix conditions, one
    unknown matrix), so convergence means either a residual below newton_tol
    or a stationary point of the least-squares objective.  The objective
    also decays to zero along |L| -> inf without ever admitting a root
    there; runs that exhaust max_iter while still descending that tail are
    reported as not converged so callers can discard them.
    """
    shape = L0.shape
    x = L0.ravel().astype(float).copy()
    anchor = x.copy()
    leash = opts.trust_radius * (1.0 + np.max(np.abs(anchor)))

    def resid(v):
        return fun(v.reshape(shape)).ravel()

    r = resid(x)
    cost = float(r @ r)
    lam = opts.damping
    nvar = x.size
    it = 0
    converged = np.max(np.abs(r)) <= opts.newton_tol
    for it in range(1, opts.max_iter + 1):
        if converged:
            break
        J = np.empty((r.size, nvar))
        for j in range(nvar):
            step = 1e-7 * (1.0 + abs(x[j]))
            xp = x.copy(); xp[j] += step
            xm = x.copy(); xm[j] -= step
            J[:, j] = (resid(xp) - resid(xm)) / (2.0 * step)
        g = J.T @ r
        if np.max(np.abs(g)) <= 1e-14 * (1.0 + cost):
            converged = True           # least-squares stationary point
            break
        JtJ = J.T @ J
        accepted = False
        while lam < 1e10:
            try:
                delta = np.linalg.solve(JtJ + lam * np.eye(nvar), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            rt = resid(x + delta)
            ct = float(rt @ rt)
            if ct < cost:
                gained = cost - ct
                x = x + delta
                r, cost = rt, ct
                lam = max(lam * 0.1, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True           # damping saturated: local minimum
            break
        if np.max(np.abs(x - anchor)) > leash:
            break                      # diverging along the tail
        if gained <= 1e-12 * (1.0 + cost):
            converged = True           # no meaningful descent left
            break
        if np.max(np.abs(delta)) <= 1e-13 * (1.0 + np.max(np.abs(x))):
            converged = True
            break
        if np.max(np.abs(r)) <= opts.newton_tol:
            converged = True
            break
    return x.reshape(shape), np.sqrt(cost), it, converged


def _terminal_candidates(p: ModelParams):
    base = np.eye(p.mL, p.mF)
    yield np.zeros((p.mL, p.mF))
    for c in (-2.0, -1.0, 1.0, 2.0):
        yield c * base


def _cleared_candidate(p, blocks_node, Delta, Theta) -> np.ndarray:
    """Least-squares solution of the matching conditions multiplied through
    by SL = R1t + L'R0tL.

    The cleared system is affine in L (the quadratic SL terms cancel against
    the L'R0tL part of zeta/eta), so this is one lstsq; where an exact
    matching solution exists this IS it, and it seeds the damped iteration
    past any spurious stationary point of the scaled objective.
    """
    P1, Pi1, P2, Pi2 = blocks_node

    def cleared(L):
        SL = p.R1t + L.T @ p.R0t @ L
        r1, r2 = matching_residual(p, L, P1, Pi1, P2, Pi2, Delta, Theta)
        return np.concatenate(((SL @ r1).ravel(), (SL @ r2).ravel()))

    nvar = p.mL * p.mF
    c0 = cleared(np.zeros((p.mL, p.mF)))
    cols = np.empty((c0.size, nvar))
    for idx in range(nvar):
        E = np.zeros((p.mL, p.mF))
        E.flat[idx] = 1.0
        cols[:, idx] = cleared(E) - c0
    sol, *_ = np.linalg.lstsq(cols, -c0, rcond=None)
    return sol.reshape(p.mL, p.mF)


def _prefer(a, b):
    """Pick between (L, resid, iters, converged) trials: converged first,
    then smaller residual."""
    if a is None:
        return b
    if b[3] and not a[3]:
        return b
    if b[3] == a[3] and b[1] < a[1]:
        return b
    return a


def solve_cc_incentive(p: ModelParams, blocks: BlockRiccatiSolution,
                       opts: NewtonOpts = NewtonOpts()):
    """Backward sweep for (L, Delta, Theta) along the leader's block solution.

    At each node L is the local least-squares solution of the two matching
    conditions given the current (Delta, Theta); the RK4 step to the next
    node holds L at that value (zero-order hold, consistent with the O(h)
    coupling error of the half-steps).  Nodes whose least-squares problem
    has no reachable stationary point keep the previous L and are flagged
    in newton_converged.  Raises NoIncentiveSolution if the worst nodal
    residual ends up above residual_factor * newton_tol; the partial sweep
    rides along in the exception for diagnostics.
    """
    grid = blocks.grid
    M = grid.steps
    h = grid.h
    Lsh = (p.mL, p.mF)
    L_store = np.empty((M + 1,) + Lsh)
    z_store = np.empty((M + 1, p.mL, p.n))
    e_store = np.empty((M + 1, p.mL, p.n))
    d_store = np.empty((M + 1, p.n, p.n))
    t_store = np.empty((M + 1, p.n, p.n))
    resid = np.empty(M + 1)
    iters = np.empty(M + 1, dtype=int)
    conv = np.empty(M + 1, dtype=bool)

    GtG2 = p.Gt @ p.Gamma2t
    Delta = p.Gt - GtG2
    Theta = np.zeros((p.n, p.n))

    for k in range(M, -1, -1):
        P1, Pi1, P2, Pi2 = blocks.fine_blocks(2 * k)

        def fun(L, _b=(P1, Pi1, P2, Pi2), _D=Delta, _T=Theta):
            r1, r2 = matching_residual(p, L, *_b, _D, _T)
            return np.concatenate((r1.ravel(), r2.ravel()))

        blocks_node = (P1, Pi1, P2, Pi2)
        if k == M:
            # prefer genuinely stationary candidates: the least-squares
            # objective also drains away along |L| -> inf, and a descent run
            # caught mid-flight on that tail is not a solution
            best = None
            for cand in _terminal_candidates(p):
                best = _prefer(best, _gauss_newton(fun, cand, opts))
            best = _prefer(best, _gauss_newton(
                fun, _cleared_candidate(p, blocks_node, Delta, Theta), opts))
            Lk, rk, it, ck = best
        else:
            warm = L_store[k + 1]
            best = _gauss_newton(fun, warm, opts)
            if not best[3] or best[1] > opts.residual_factor * opts.newton_tol:
                # retry from the cleared-system point: exact where matching
                # is solvable, and a way off spurious minima of the scaled
                # objective
                retry = _gauss_newton(
                    fun, _cleared_candidate(p, blocks_node, Delta, Theta),
                    opts)
                retry = (retry[0], retry[1], retry[2] + best[2], retry[3])
                best = _prefer(best, retry)
            Lk, rk, it, ck = best
            if not ck:
                # the nodal problem lost its stationary point; hold the
                # incoming value and report the defect there instead of
                # following the descent to infinity
                Lk = warm.copy()
                rk = float(np.linalg.norm(fun(Lk)))
        L_store[k] = Lk
        resid[k] = rk
        iters[k] = it
        conv[k] = ck
        zk, ek = zeta_eta(p, Lk, P1, Pi1, P2, Pi2)
        z_store[k], e_store[k] = zk, ek
        d_store[k], t_store[k] = Delta, Theta

        if k == 0:
            break
        # RK4 step to node k-1 with L frozen; block values read off the
        # internally doubled grid so the half-steps are exact samples
        stages = (2 * k, 2 * k - 1, 2 * k - 1, 2 * k - 2)
        weights = (0.0, 0.5, 0.5, 1.0)
        kD = []
        kT = []
        for idx, (j, w) in enumerate(zip(stages, weights)):
            if idx == 0:
                Ds, Ts = Delta, Theta
            else:
                prevD, prevT = kD[idx - 1], kT[idx - 1]
                Ds = Delta - h * w * prevD if idx < 3 else Delta - h * prevD
                Ts = Theta - h * w * prevT if idx < 3 else Theta - h * prevT
            cc = cc_coefficients(p, blocks.gamma, Lk, *blocks.fine_blocks(j))
            dD, dT = _delta_theta_rhs(p, cc, Ds, Ts)
            kD.append(dD)
            kT.append(dT)
        Delta = Delta - (h / 6.0) * (kD[0] + 2.0 * (kD[1] + kD[2]) + kD[3])
        Theta = Theta - (h / 6.0) * (kT[0] + 2.0 * (kT[1] + kT[2]) + kT[3])

    dtheta = DeltaThetaSolution(
        grid,
        Delta=MatrixTrajectory(grid, d_store),
        Theta=MatrixTrajectory(grid, t_store),
    )
    inc = IncentiveMatrices(
        grid,
        L=MatrixTrajectory(grid, L_store),
        zeta=MatrixTrajectory(grid, z_store),
        eta=MatrixTrajectory(grid, e_store),
        match_residual=resid,
        newton_iters=iters,
        newton_converged=conv,
    )
    worst = int(np.argmax(resid))
    if resid[worst] > opts.residual_factor * opts.newton_tol:
        raise NoIncentiveSolution(float(resid[worst]), float(grid.nodes[worst]),
                                  partial=(dtheta, inc))
    return dtheta, inc


def solve_sigma_phi_psi(p: ModelParams, blocks: BlockRiccatiSolution,
                        dtheta: DeltaThetaSolution, inc: IncentiveMatrices,
                        rel_tol: float = 1e-6) -> SigmaPhiPsiSolution:
    """Integrate the decoupled chain and verify it recombines.

    (Delta, Theta) are re-marched alongside (Sigma, Phi, Psi) with the same
    frozen-L stepping, which makes Theta = Psi and Delta = Sigma + Phi exact
    up to roundoff; a violation beyond rel_tol therefore indicates a
    transcription error and raises RelationViolated.
    """
    grid = blocks.grid
    M = grid.steps
    h = grid.h
    n = p.n
    At_ = p.At.T
    QtG1t = p.Qt @ p.Gamma1t

    s_store = np.empty((M + 1, n, n))
    f_store = np.empty((M + 1, n, n))
    p_store = np.empty((M + 1, n, n))

    GtG2 = p.Gt @ p.Gamma2t
    state = [p.Gt.copy(), -GtG2, np.zeros((n, n)),          # Sigma, Phi, Psi
             p.Gt - GtG2, np.zeros((n, n))]                  # Delta, Theta

    def rhs(cc: CCCoefficients, st):
        Sg, Ph, Ps, De, Th = st
        dSg = -(Sg @ p.At + At_ @ Sg + Sg @ cc.H1 @ Sg + p.Qt)
        dPh = -(Ph @ (cc.A1 + cc.H1 @ De) + At_ @ Ph + Sg @ cc.H1 @ Ph
                + Sg @ (cc.A1 - p.At) + Ps @ (cc.B2 + cc.H2 @ De) - QtG1t)
        dPs = -(Ps @ (cc.A2 + cc.H2 @ Th) + At_ @ Ps + Sg @ cc.H1 @ Ps
                + Sg @ cc.B1 + Ph @ (cc.B1 + cc.H1 @ Th))
        dDe, dTh = _delta_theta_rhs(p, cc, De, Th)
        return [dSg, dPh, dPs, dDe, dTh]

    th_gap = 0.0
    sp_gap = 0.0
    for k in range(M, -1, -1):
        s_store[k], f_store[k], p_store[k] = state[0], state[1], state[2]
        De_ref = dtheta.Delta.values[k]
        Th_ref = dtheta.Theta.values[k]
        g1 = np.max(np.abs(state[4] - Th_ref)) / (1.0 + np.max(np.abs(Th_ref)))
        g2 = (np.max(np.abs(state[0] + state[1] - De_ref))
              / (1.0 + np.max(np.abs(De_ref))))
        th_gap = max(th_gap, np.max(np.abs(state[2] - state[4])))
        sp_gap = max(sp_gap, g1, g2)
        if k == 0:
            break
        Lk = inc.L.values[k]
        stages = (2 * k, 2 * k - 1, 2 * k - 1, 2 * k - 2)
        weights = (0.0, 0.5, 0.5, 1.0)
        ks = []
        for idx, (j, w) in enumerate(zip(stages, weights)):
            if idx == 0:
                st = state
            else:
                prev = ks[idx - 1]
                step = h * w if idx < 3 else h
                st = [x - step * d for x, d in zip(state, prev)]
            cc = cc_coefficients(p, blocks.gamma, Lk, *blocks.fine_blocks(j))
            ks.append(rhs(cc, st))
        state = [
            x - (h / 6.0) * (a + 2.0 * (b + c) + d)
            for x, a, b, c, d in zip(state, ks[0], ks[1], ks[2], ks[3])
        ]

    # th_gap compares the co-integrated Psi against the co-integrated Theta;
    # sp_gap additionally ties both back to the stored coupled sweep
    theta_scale = 1.0 + float(np.max(np.abs(dtheta.Theta.values)))
    delta_scale = 1.0 + float(np.max(np.abs(dtheta.Delta.values)))
    if th_gap > rel_tol * theta_scale or sp_gap > rel_tol:
        raise RelationViolated(
            f"decoupled chain defects {th_gap:.3e} / {sp_gap:.3e} "
            f"exceed {rel_tol:g}"
        )
    return SigmaPhiPsiSolution(
        grid,
        Sigma=MatrixTrajectory(grid, s_store),
        Phi=MatrixTrajectory(grid, f_store),
        Psi=MatrixTrajectory(grid, p_store),
        theta_psi_gap=float(th_gap),
        delta_split_gap=float(sp_gap),
    )


def follower_gains(p: ModelParams, blocks: BlockRiccatiSolution,
                   inc: IncentiveMatrices, dtheta: DeltaThetaSolution,
                   spp: SigmaPhiPsiSolution) -> FollowerGains:
    """Nodewise feedback gains of the followers' best replies."""
    grid = blocks.grid
    M = grid.steps
    gxi = np.empty((M + 1, p.mF, p.n))
    gx0 = np.empty((M + 1, p.mF, p.n))
    gm = np.empty((M + 1, p.mF, p.n))
    gx0b = np.empty((M + 1, p.mF, p.n))
    gmb = np.empty((M + 1, p.mF, p.n))
    for k in range(M + 1):
        L = inc.L.values[k]
        SL = p.R1t + L.T @ p.R0t @ L
        BL = p.Bt + p.Ht @ L
        LtR0 = L.T @ p.R0t
        z = inc.zeta.values[k]
        e = inc.eta.values[k]
        gxi[k] = -np.linalg.solve(SL, BL.T @ spp.Sigma.values[k])
        gx0[k] = -np.linalg.solve(SL, LtR0 @ z + BL.T @ spp.Psi.values[k])
        gm[k] = -np.linalg.solve(SL, LtR0 @ e + BL.T @ spp.Phi.values[k])
        gx0b[k] = -np.linalg.solve(SL, LtR0 @ z + BL.T @ dtheta.Theta.values[k])
        gmb[k] = -np.linalg.solve(SL, LtR0 @ e + BL.T @ dtheta.Delta.values[k])
    return FollowerGains(
        grid,
        Gxi=MatrixTrajectory(grid, gxi),
        Gx0=MatrixTrajectory(grid, gx0),
        Gm=MatrixTrajectory(grid, gm),
        Gx0bar=MatrixTrajectory(grid, gx0b),
        Gmbar=MatrixTrajectory(grid, gmb),
    )
