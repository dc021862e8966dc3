"""Fixed-step classical RK4 for stacked matrix ODEs on a shared grid.

Terminal-value Riccati systems are integrated backward on the same uniform
grid the simulator uses, with finite-escape detection instead of adaptive
stepping: a node whose state exceeds the escape threshold (or goes
non-finite) truncates the run and is reported, it is not an error.  The
residual diagnostic differentiates a stored trajectory with fourth-order
finite differences and compares against the right-hand side at the nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import MatrixTrajectory, TimeGrid

__all__ = [
    "NonFiniteRhs",
    "GridMismatch",
    "OdeProblem",
    "EscapePolicy",
    "Escape",
    "IntegrationResult",
    "integrate",
    "residual",
]


class NonFiniteRhs(Exception):
    """The right-hand side returned NaN/inf when evaluated at a clean node."""

    def __init__(self, t, component):
        super().__init__(f"rhs returned non-finite values in component {component} at t={t}")
        self.t = t
        self.component = component


class GridMismatch(Exception):
    """Trajectory and problem were built on different grids."""


@dataclass(frozen=True)
class OdeProblem:
    """Stacked matrix ODE d/dt [X1,...,Xk] = rhs(t, [X1,...,Xk]).

    boundary holds the terminal values for direction="backward" (the usual
    case here) or the initial values for direction="forward".  poststep, if
    given, is applied to the state after every accepted step; the Riccati
    solvers use it to re-symmetrize.
    """

    shapes: tuple[tuple[int, int], ...]
    rhs: Callable[[float, list[np.ndarray]], Sequence[np.ndarray]]
    boundary: tuple[np.ndarray, ...]
    direction: str = "backward"
    poststep: Callable[[list[np.ndarray]], list[np.ndarray]] | None = None

    def __post_init__(self):
        if self.direction not in ("backward", "forward"):
            raise ValueError(f"direction must be backward or forward, got {self.direction}")
        if len(self.boundary) != len(self.shapes):
            raise ValueError("boundary and shapes must have the same length")
        coerced = tuple(np.asarray(b, dtype=float) for b in self.boundary)
        for b, s in zip(coerced, self.shapes):
            if b.shape != tuple(s):
                raise ValueError(f"boundary shape {b.shape} does not match declared {s}")
        object.__setattr__(self, "boundary", coerced)
        object.__setattr__(self, "shapes", tuple(tuple(s) for s in self.shapes))


@dataclass(frozen=True)
class EscapePolicy:
    """Blow-up is declared when any component's Frobenius norm passes threshold."""

    threshold: float = 1e8


@dataclass(frozen=True)
class Escape:
    t_escape: float
    norm: float
    node: int


@dataclass
class IntegrationResult:
    trajectories: list[MatrixTrajectory] | None
    escape: Escape | None
    # node values filled in so far, truncated at the escape node (inclusive);
    # equal to the full trajectory arrays when the run completed
    partial: np.ndarray | None = None
    partial_nodes: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.escape is None


def _frob(a: np.ndarray) -> float:
    v = a.ravel()
    return float(np.sqrt(v @ v))


def integrate(problem: OdeProblem, grid: TimeGrid,
              escape: EscapePolicy = EscapePolicy()) -> IntegrationResult:
    """Run classical RK4 over the grid in the problem's direction.

    Escape is checked at every node: the first node where some component is
    non-finite or exceeds the threshold ends the run.  A non-finite rhs at a
    clean node (first stage) raises NonFiniteRhs instead, since that signals
    broken coefficients rather than finite-time blow-up.
    """
    M = grid.steps
    h = grid.h
    nodes = grid.nodes
    back = problem.direction == "backward"
    ncomp = len(problem.shapes)

    store = [np.empty((M + 1,) + s) for s in problem.shapes]
    order = range(M, -1, -1) if back else range(M + 1)
    start = M if back else 0
    state = [b.copy() for b in problem.boundary]

    def check(node_idx, st):
        worst = 0.0
        for x in st:
            nrm = _frob(x)
            if not np.isfinite(nrm):
                return Escape(float(nodes[node_idx]), float("inf"), node_idx)
            worst = max(worst, nrm)
        if worst > escape.threshold:
            return Escape(float(nodes[node_idx]), worst, node_idx)
        return None

    def eval_clean(t, st):
        # first stage only: the state here is a vetted node value, so a
        # non-finite output means the rhs itself is broken
        out = problem.rhs(t, st)
        for i, a in enumerate(out):
            if not np.isfinite(np.sum(a)):
                raise NonFiniteRhs(t, i)
        return out

    def finish_partial(esc):
        # keep everything from the boundary side up to and including the bad node
        if back:
            sl = slice(esc.node, M + 1)
        else:
            sl = slice(0, esc.node + 1)
        part = [s[sl].copy() for s in store]
        return IntegrationResult(None, esc, part, nodes[sl].copy())

    for k in range(ncomp):
        store[k][start] = state[k]
    esc = check(start, state)
    if esc is not None:
        return finish_partial(esc)

    s = -h if back else h
    half = 0.5 * s
    sixth = s / 6.0
    rhs = problem.rhs
    steps = range(M, 0, -1) if back else range(M)
    for k in steps:
        t = nodes[k]
        k1 = eval_clean(t, state)
        k2 = rhs(t + half, [x + half * d for x, d in zip(state, k1)])
        k3 = rhs(t + half, [x + half * d for x, d in zip(state, k2)])
        k4 = rhs(t + s, [x + s * d for x, d in zip(state, k3)])
        state = [
            x + sixth * (a + 2.0 * (b + c) + d)
            for x, a, b, c, d in zip(state, k1, k2, k3, k4)
        ]
        if problem.poststep is not None:
            state = list(problem.poststep(state))
        tgt = k - 1 if back else k + 1
        for i in range(ncomp):
            store[i][tgt] = state[i]
        esc = check(tgt, state)
        if esc is not None:
            return finish_partial(esc)

    trajs = [MatrixTrajectory(grid, s) for s in store]
    return IntegrationResult(trajs, None)


# fourth-order first-derivative stencils (Fornberg weights / 12h):
# symmetric for interior nodes, minimally biased next to the boundary
_CENTER = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0       # offsets -2..2
_LEFT = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0      # offsets -1..3
_RIGHT = np.array([-1.0, 6.0, -18.0, 10.0, 3.0]) / 12.0      # offsets -3..1


def _fd_derivative(values: np.ndarray, k: int, M: int, h: float) -> np.ndarray:
    if 2 <= k <= M - 2:
        w, off = _CENTER, range(k - 2, k + 3)
    elif k == 1:
        w, off = _LEFT, range(0, 5)
    elif k == M - 1:
        w, off = _RIGHT, range(M - 4, M + 1)
    else:
        raise ValueError("derivative stencil only defined at interior nodes")
    out = np.zeros_like(values[k])
    for c, j in zip(w, off):
        out += c * values[j]
    return out / h


def residual(trajectories: Sequence[MatrixTrajectory], problem: OdeProblem,
             grid: TimeGrid) -> float:
    """Max over interior nodes of |D_h(traj) - rhs| / (1 + |rhs|), Frobenius.

    D_h is a fourth-order finite difference so that the diagnostic measures
    equation error rather than the second-order noise of a plain centered
    difference; a corrupted node still shows up at O(1/h).
    """
    if len(trajectories) != len(problem.shapes):
        raise GridMismatch("trajectory count does not match problem")
    for tr in trajectories:
        if tr.grid.steps != grid.steps or tr.grid.T != grid.T:
            raise GridMismatch("trajectory grid does not match the given grid")
    M = grid.steps
    if M < 4:
        raise GridMismatch("residual needs at least 4 grid steps")
    nodes = grid.nodes
    worst = 0.0
    for k in range(1, M):
        state = [tr.values[k] for tr in trajectories]
        f = [np.asarray(a, dtype=float) for a in problem.rhs(nodes[k], state)]
        num = 0.0
        den = 0.0
        for tr, fk in zip(trajectories, f):
            d = _fd_derivative(tr.values, k, M, grid.h)
            num += float(np.sum((d - fk) ** 2))
            den += float(np.sum(fk * fk))
        r = np.sqrt(num) / (1.0 + np.sqrt(den))
        worst = max(worst, r)
    return worst
