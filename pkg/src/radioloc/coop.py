"""Non-Bayesian cooperative localization.

All solvers keep anchors fixed at their true positions and estimate agent
positions from a ``RangeSet``. Anchor-anchor measurements carry no
information about agents and are ignored everywhere except by the
relative MDS embedding, which treats anchors as free points until the
final alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import DisconnectedGraph, LocalizationError, MissingPosition
from .geomsolve import procrustes_align, trilaterate
from .scenario import NetworkScenario, RangeSet, make_rng

RESOLVED = "resolved"
UNRESOLVED = "unresolved"


@dataclass
class SolverConfig:
    """Iteration controls shared by the cooperative solvers.

    ``initializer`` is one of ``"anchor_centroid"``, ``"random"`` (uniform in
    the anchor bounding box, drawn from ``seed``) or ``"warm"`` (start from
    ``warm_start``, an ``(n_agents, d)`` array or a mapping id -> position).
    ``"classical_mds"`` embeds shortest-path range distances by classical
    MDS and aligns the embedding onto the anchors. ``None`` selects each
    solver's own default.
    """

    max_iterations: int = 5000
    step_tolerance: float = 1e-10
    objective_tolerance: float = 1e-12
    initializer: Optional[str] = None
    seed: int = 0
    warm_start: object = None
    acceleration: str = "nesterov"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.step_tolerance > 0 and self.objective_tolerance > 0):
            raise ValueError("tolerances must be positive")
        if self.initializer not in (None, "anchor_centroid", "random", "warm", "classical_mds"):
            raise ValueError(f"unknown initializer {self.initializer!r}")
        if self.acceleration not in ("none", "nesterov"):
            raise ValueError(f"unknown acceleration {self.acceleration!r}")
        if self.initializer == "warm" and self.warm_start is None:
            raise ValueError("warm initializer needs warm_start positions")


@dataclass
class PositionEstimateSet:
    positions: dict
    status: dict
    objective_value: float
    converged: bool = True
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def resolved_ids(self):
        return sorted(k for k, v in self.status.items() if v == RESOLVED)

    def resolved_fraction(self) -> float:
        if not self.status:
            return 1.0
        return len(self.resolved_ids) / len(self.status)

    def agent_array(self, scenario: NetworkScenario) -> np.ndarray:
        """``(n_agents, d)`` array; unresolved agents are NaN."""
        out = np.full((scenario.n_agents, scenario.dim), np.nan)
        for k, p in self.positions.items():
            if self.status.get(k) == RESOLVED:
                out[k - scenario.n_anchors] = p
        return out


def _full_positions(scenario, positions):
    """Node coordinate array with anchors at truth; NaN where unknown."""
    n, na, d = scenario.n_nodes, scenario.n_anchors, scenario.dim
    full = np.full((n, d), np.nan)
    full[:na] = scenario.anchors
    if isinstance(positions, dict):
        for k, p in positions.items():
            if k >= na:
                full[k] = p
        return full
    p = np.asarray(positions, float)
    if p.shape == (n, d):
        full[na:] = p[na:]
    elif p.shape == (n - na, d):
        full[na:] = p
    else:
        raise ValueError(f"positions must be ({n - na}, {d}) or ({n}, {d})")
    return full


def stress(scenario: NetworkScenario, ranges: RangeSet, positions) -> float:
    """Sum of squared range residuals over every measured edge.

    Anchors always sit at their true positions.

    Raises:
        MissingPosition: an edge endpoint has no (finite) position.
    """
    full = _full_positions(scenario, positions)
    e = ranges.edges
    bad = ~np.isfinite(full[e]).all(axis=(1, 2))
    if np.any(bad):
        i, j = e[np.argmax(bad)]
        raise MissingPosition(f"no position for an endpoint of edge ({i}, {j})")
    d = np.linalg.norm(full[e[:, 0]] - full[e[:, 1]], axis=1)
    return float(np.sum((ranges.values - d) ** 2))


def _usable(scenario, ranges, cooperative=True):
    """Mask of measurements that involve at least one agent."""
    a = scenario.is_anchor(ranges.edges)
    mask = ~(a[:, 0] & a[:, 1])
    if not cooperative:
        mask &= a[:, 0] | a[:, 1]
    return mask


def _initial_agents(scenario, cfg, default="anchor_centroid", ranges=None):
    kind = cfg.initializer or default
    na, d = scenario.n_agents, scenario.dim
    if kind == "classical_mds":
        return classical_mds_init(scenario, ranges)
    if kind == "anchor_centroid":
        return np.tile(scenario.anchors.mean(axis=0), (na, 1))
    if kind == "random":
        lo, hi = scenario.anchors.min(axis=0), scenario.anchors.max(axis=0)
        return make_rng(cfg.seed, 7).uniform(lo, hi, size=(na, d))
    ws = cfg.warm_start
    if isinstance(ws, PositionEstimateSet):
        ws = ws.positions
    if isinstance(ws, dict):
        base = np.tile(scenario.anchors.mean(axis=0), (na, 1))
        for k, p in ws.items():
            if k >= scenario.n_anchors and np.all(np.isfinite(p)):
                base[k - scenario.n_anchors] = p
        return base
    ws = np.asarray(ws, float)
    if ws.shape == (scenario.n_nodes, d):
        ws = ws[scenario.n_anchors:]
    return ws.copy()


def _result(scenario, ranges_used, agents, status=None, converged=True, iterations=0, **info):
    ids = scenario.agent_ids
    if status is None:
        status = {int(k): RESOLVED for k in ids}
    positions = {int(k): np.array(agents[k - scenario.n_anchors]) for k in ids}
    keep = np.array([
        all(n < scenario.n_anchors or status[int(n)] == RESOLVED for n in edge)
        for edge in ranges_used.edges
    ], dtype=bool)
    obj = stress(scenario, ranges_used.select(keep), positions) if keep.size else 0.0
    info["ranges_used"] = ranges_used
    return PositionEstimateSet(positions, status, obj, bool(converged), int(iterations), info)


class _EdgeSystem:
    """Vectorized stress, gradient and ball projections on a fixed edge set."""

    def __init__(self, scenario, ranges):
        self.sc = scenario
        self.e = ranges.edges
        self.r = ranges.values
        n = scenario.n_nodes
        m = len(self.e)
        rows = np.repeat(np.arange(m), 2)
        cols = self.e.ravel()
        vals = np.tile([1.0, -1.0], m)
        self.B = sparse.csr_matrix((vals, (rows, cols)), shape=(m, n))
        self.BT = self.B.T.tocsr()
        self.deg = np.bincount(self.e.ravel(), minlength=n)[scenario.n_anchors:]

    def full(self, agents):
        return np.vstack([self.sc.anchors, agents])

    def stress_grad(self, agents):
        X = self.full(agents)
        diff = X[self.e[:, 0]] - X[self.e[:, 1]]
        d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        res = self.r - d
        f = float(res @ res)
        coef = np.where(d > 0, -2.0 * res / np.where(d > 0, d, 1.0), 0.0)
        g = self.BT @ (coef[:, None] * diff)
        return f, g[self.sc.n_anchors:]

    def violation_grad(self, agents):
        """Convex relaxation ``sum max(0, ||x_i - x_j|| - r)^2`` and its gradient."""
        X = self.full(agents)
        diff = X[self.e[:, 0]] - X[self.e[:, 1]]
        d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        over = np.maximum(d - self.r, 0.0)
        f = float(over @ over)
        coef = np.where(over > 0, 2.0 * over / np.where(d > 0, d, 1.0), 0.0)
        g = self.BT @ (coef[:, None] * diff)
        return f, g[self.sc.n_anchors:]


def _gradient_descent(fg, x0, cfg, precond=None, fixed_step=None):
    """Gradient descent with Armijo backtracking and optional Nesterov momentum.

    Momentum restarts whenever the objective goes up. With ``fixed_step``
    the step is ``fixed_step * precond`` and no line search is done.
    """
    nesterov = cfg.acceleration == "nesterov"
    scale = np.ones((len(x0), 1)) if precond is None else precond[:, None]
    x = np.array(x0, float)
    f, g = fg(x)
    history = [f]
    if not np.any(g):
        return x, 0, True, history
    y, fy, gy = x, f, g
    t = 1.0
    step = 1.0 if fixed_step is None else fixed_step
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        direction = scale * gy
        gd = float(np.sum(gy * direction))
        while True:
            x_new = y - step * direction
            f_new, g_new = fg(x_new)
            if fixed_step is not None or f_new <= fy - 0.5 * step * gd or step < 1e-16:
                break
            step *= 0.5
        moved = float(np.max(np.abs(x_new - x)))
        decrease = f - f_new
        if nesterov and f_new > f:
            # restart momentum from the last iterate
            t = 1.0
            y, fy, gy = x, f, g
            if fixed_step is None:
                step *= 0.5
            if moved < cfg.step_tolerance:
                converged = True
                break
            continue
        if nesterov:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
            fy, gy = fg(y)
        else:
            y, fy, gy = x_new, f_new, g_new
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if fixed_step is None:
            step *= 2.0
        if moved < cfg.step_tolerance:
            converged = True
            break
        if 0 <= decrease <= cfg.objective_tolerance * f and f > 0:
            converged = True
            break
        if f == 0.0:
            converged = True
            break
    return x, it, converged, history


def solve_ls_gradient(scenario: NetworkScenario, ranges: RangeSet,
                      config: Optional[SolverConfig] = None,
                      cooperative: bool = True) -> PositionEstimateSet:
    """Least-squares localization by gradient descent on the range stress.

    With ``cooperative=False`` only agent-anchor measurements enter the
    objective (the classical anchor-only LS).
    """
    cfg = config or SolverConfig()
    used = ranges.select(_usable(scenario, ranges, cooperative))
    system = _EdgeSystem(scenario, used)
    if scenario.n_agents and np.any(system.deg == 0):
        lonely = (np.flatnonzero(system.deg == 0) + scenario.n_anchors).tolist()
        raise LocalizationError(f"agents without usable measurements: {lonely}")
    x0 = _initial_agents(scenario, cfg, ranges=used)
    x, it, conv, hist = _gradient_descent(system.stress_grad, x0, cfg)
    return _result(scenario, used, x, converged=conv, iterations=it, history=hist)


def solve_sequential(scenario: NetworkScenario, ranges: RangeSet,
                     config: Optional[SolverConfig] = None) -> PositionEstimateSet:
    """Sequential multilateration with virtual anchors.

    Each round trilaterates, in ascending id order, every unresolved agent
    with at least ``d + 1`` links to anchors or agents resolved in earlier
    rounds. Promotion happens between rounds. Agents that never gather
    enough references stay unresolved. ``info["round"]`` records the round
    in which each agent was placed and ``info["references"]`` the node ids
    it was placed from.
    """
    cfg = config or SolverConfig(max_iterations=100)
    d = scenario.dim
    na = scenario.n_anchors
    used = ranges.select(_usable(scenario, ranges, True))
    known = {int(i): scenario.positions[i] for i in scenario.anchor_ids}
    links = {int(k): {} for k in scenario.agent_ids}
    for (i, j), r in zip(used.edges, used.values):
        if j >= na:
            links[int(j)][int(i)] = r
        if i >= na:
            links[int(i)][int(j)] = r
    status = {int(k): UNRESOLVED for k in scenario.agent_ids}
    est = np.tile(scenario.anchors.mean(axis=0), (scenario.n_agents, 1))
    placed_round, refs_used = {}, {}
    rnd = 0
    while True:
        rnd += 1
        newly = {}
        for k in sorted(links):
            if status[k] == RESOLVED:
                continue
            refs = sorted(n for n in links[k] if n in known)
            if len(refs) < d + 1:
                continue
            pts = np.array([known[n] for n in refs])
            rr = np.array([links[k][n] for n in refs])
            try:
                rep = trilaterate(pts, rr, max_iter=cfg.max_iterations)
            except LocalizationError:
                continue
            newly[k] = rep.estimate
            refs_used[k] = refs
        if not newly:
            break
        for k, p in newly.items():
            known[k] = p
            status[k] = RESOLVED
            est[k - na] = p
            placed_round[k] = rnd
    res = _result(scenario, used, est, status, True, rnd - 1,
                  round=placed_round, references=refs_used)
    for k, s in status.items():
        if s == UNRESOLVED:
            res.positions[k] = np.full(d, np.nan)
    return res


def _classical_mds(D, d):
    n = len(D)
    J = np.eye(n) - 1.0 / n
    Bm = -0.5 * J @ (D ** 2) @ J
    w, V = np.linalg.eigh(Bm)
    idx = np.argsort(w)[::-1][:d]
    return V[:, idx] * np.sqrt(np.maximum(w[idx], 0.0))


def _geodesic_matrix(n, ranges):
    Delta = np.zeros((n, n))
    e = ranges.edges
    Delta[e[:, 0], e[:, 1]] = Delta[e[:, 1], e[:, 0]] = ranges.values
    return shortest_path(sparse.csr_matrix(Delta), directed=False)


def classical_mds_init(scenario: NetworkScenario, ranges: RangeSet) -> np.ndarray:
    """Agent positions from classical MDS on shortest-path distances.

    The relative embedding is aligned onto the anchors by a similarity
    transform. Raises ``DisconnectedGraph`` when some node is unreachable.
    """
    geo = _geodesic_matrix(scenario.n_nodes, ranges)
    if not np.all(np.isfinite(geo)):
        raise DisconnectedGraph("measurement graph is not connected")
    X = _classical_mds(geo, scenario.dim)
    _, aligned = procrustes_align(X, scenario.anchor_ids, scenario.anchors)
    return aligned[scenario.n_anchors:]


def solve_mds_smacof(scenario: NetworkScenario, ranges: RangeSet,
                     config: Optional[SolverConfig] = None) -> PositionEstimateSet:
    """Weighted SMACOF embedding followed by anchor alignment.

    Every node, anchors included, is a free point of a relative embedding
    fitted to all measured ranges (weight 1 on measured pairs, 0 otherwise).
    Each Guttman transform minimizes the quadratic majorizer of the stress,
    so the stress sequence is non-increasing; this is asserted at every
    step. The default start is classical MDS on shortest-path distances.
    ``info`` carries ``stress_history`` and the fitted ``transform``.

    Raises:
        DisconnectedGraph: the measurement graph is not connected.
    """
    cfg = config or SolverConfig()
    n, d = scenario.n_nodes, scenario.dim
    e, r = ranges.edges, ranges.values
    W = np.zeros((n, n))
    Delta = np.zeros((n, n))
    W[e[:, 0], e[:, 1]] = W[e[:, 1], e[:, 0]] = 1.0
    Delta[e[:, 0], e[:, 1]] = Delta[e[:, 1], e[:, 0]] = r
    ncomp, _ = connected_components(sparse.csr_matrix(W), directed=False)
    if ncomp > 1:
        raise DisconnectedGraph(f"measurement graph has {ncomp} components")

    kind = cfg.initializer
    if kind is None:
        X = _classical_mds(_geodesic_matrix(n, ranges), d)
    else:
        X = np.vstack([scenario.anchors, _initial_agents(scenario, cfg, ranges=ranges)])

    V = np.diag(W.sum(axis=1)) - W
    Vp = np.linalg.pinv(V)
    iu = np.triu_indices(n, k=1)
    wu, du = W[iu], Delta[iu]

    def pair_dist(Y):
        diff = Y[:, None, :] - Y[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    def rel_stress(D):
        return float(np.sum(wu * (du - D[iu]) ** 2))

    D = pair_dist(X)
    s = rel_stress(D)
    history = [s]
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        ratio = np.where(D > 0, W * Delta / np.where(D > 0, D, 1.0), 0.0)
        Bm = -ratio
        Bm[np.diag_indices(n)] = ratio.sum(axis=1)
        X_new = Vp @ (Bm @ X)
        D = pair_dist(X_new)
        s_new = rel_stress(D)
        if s_new > s + 1e-12:
            raise AssertionError(f"SMACOF stress increased: {s} -> {s_new}")
        moved = float(np.max(np.abs(X_new - X)))
        X = X_new
        history.append(s_new)
        done = (s - s_new) <= cfg.objective_tolerance * s or moved < cfg.step_tolerance
        s = s_new
        if done or s == 0.0:
            converged = True
            break

    tf, aligned = procrustes_align(X, scenario.anchor_ids, scenario.anchors)
    used = ranges.select(_usable(scenario, ranges, True))
    return _result(scenario, used, aligned[scenario.n_anchors:], converged=converged,
                   iterations=it, stress_history=history, transform=tf, relative=X)


def solve_pocs(scenario: NetworkScenario, ranges: RangeSet,
               config: Optional[SolverConfig] = None,
               projection: str = "hybrid") -> PositionEstimateSet:
    """Synchronous projections of each agent onto its neighbours' range sets.

    Every agent moves to the average of its projections onto the sets
    centred at its neighbours' previous iterates (anchors at truth):

    * ``"disc"``: balls ``||x - x_j|| <= r_ij``. This is a preconditioned
      gradient step on the convex penalty ``sum max(0, d_ij - r_ij)^2``.
    * ``"sphere"``: circles ``||x - x_j|| = r_ij``, the same step on the
      range stress.
    * ``"hybrid"``: disc projections to convergence, then sphere
      projections started from the disc solution.

    The default start is ``"classical_mds"``: from a collapsed start the
    disc phase stops at the first feasible (contracted) layout. Nesterov momentum with restart is applied when configured.
    """
    if projection not in ("disc", "sphere", "hybrid"):
        raise ValueError(f"unknown projection {projection!r}")
    cfg = config or SolverConfig(max_iterations=20000)
    used = ranges.select(_usable(scenario, ranges, True))
    system = _EdgeSystem(scenario, used)
    if scenario.n_agents and np.any(system.deg == 0):
        lonely = (np.flatnonzero(system.deg == 0) + scenario.n_anchors).tolist()
        raise LocalizationError(f"agents without measurements: {lonely}")
    x = _initial_agents(scenario, cfg, "classical_mds", ranges=used)
    precond = 0.5 / system.deg
    info = {}
    iterations, converged = 0, True
    if projection in ("disc", "hybrid"):
        x, it, conv, hist = _gradient_descent(system.violation_grad, x, cfg,
                                              precond=precond, fixed_step=1.0)
        iterations += it
        converged &= conv
        info["violation_history"] = hist
        info["disc_solution"] = x.copy()
    if projection in ("sphere", "hybrid"):
        x, it, conv, hist = _gradient_descent(system.stress_grad, x, cfg,
                                              precond=precond, fixed_step=1.0)
        iterations += it
        converged &= conv
        info["stress_history"] = hist
    return _result(scenario, used, x, converged=converged, iterations=iterations, **info)


def solve_admm(scenario: NetworkScenario, ranges: RangeSet,
               config: Optional[SolverConfig] = None, penalty: float = 10.0,
               tolerance: float = 1e-6) -> PositionEstimateSet:
    """Edge-consensus ADMM on the range stress.

    Each measured edge owns local copies of its agent endpoints. The local
    step minimizes ``(r - ||u - v||)^2`` plus the augmented coupling to the
    consensus positions in closed form, the consensus step averages the
    copies and the duals ascend on the disagreement. Stops when both the
    primal (copy vs consensus) and dual (consensus change) residuals drop
    below ``tolerance``. ``info["residuals"]`` lists ``(primal, dual)`` per
    iteration.
    """
    if not penalty > 0:
        raise ValueError("penalty must be positive")
    cfg = config or SolverConfig(max_iterations=5000)
    c = float(penalty)
    na, d = scenario.n_anchors, scenario.dim
    used = ranges.select(_usable(scenario, ranges, True))
    e, r = used.edges, used.values
    agent_i = e[:, 0] >= na
    agent_j = e[:, 1] >= na
    z = _initial_agents(scenario, cfg, ranges=used)
    m = len(e)
    if scenario.n_agents == 0 or m == 0:
        return _result(scenario, used, z, residuals=[])

    both = agent_i & agent_j
    one = ~both  # exactly one endpoint is an anchor after _usable
    # orient single-agent edges as (agent, anchor)
    ag = np.where(agent_i, e[:, 0], e[:, 1])
    an = np.where(agent_i, e[:, 1], e[:, 0])

    # copy slots: slot 0 belongs to e[:,0] (or the agent for one-anchor edges), slot 1 to e[:,1]
    owner0 = np.where(both, e[:, 0], ag) - na
    owner1 = e[:, 1] - na
    lam0 = np.zeros((m, d))
    lam1 = np.zeros((m, d))
    counts = np.bincount(owner0, minlength=scenario.n_agents) + \
        np.bincount(owner1[both], minlength=scenario.n_agents)
    if np.any(counts == 0):
        lonely = (np.flatnonzero(counts == 0) + na).tolist()
        raise LocalizationError(f"agents without measurements: {lonely}")
    prev_w = np.zeros((m, d))
    prev_w[:, 0] = 1.0
    anchor_pos = scenario.positions[an]
    residuals = []
    converged = False
    it = 0
    y0 = z[owner0].copy()
    y1 = np.zeros((m, d))
    for it in range(1, cfg.max_iterations + 1):
        a = z[owner0] - lam0 / c
        # two-agent edges
        if np.any(both):
            b = z[owner1[both]] - lam1[both] / c
            g = a[both] - b
            gn = np.linalg.norm(g, axis=1)
            direction = np.where(gn[:, None] > 0, g / np.where(gn > 0, gn, 1.0)[:, None],
                                 prev_w[both])
            t = (r[both] + 0.25 * c * gn) / (1.0 + 0.25 * c)
            w = t[:, None] * direction
            mid = 0.5 * (a[both] + b)
            y0[both] = mid + 0.5 * w
            y1[both] = mid - 0.5 * w
            prev_w[both] = direction
        if np.any(one):
            p = anchor_pos[one]
            g = a[one] - p
            gn = np.linalg.norm(g, axis=1)
            direction = np.where(gn[:, None] > 0, g / np.where(gn > 0, gn, 1.0)[:, None],
                                 prev_w[one])
            t = (r[one] + 0.5 * c * gn) / (1.0 + 0.5 * c)
            y0[one] = p + t[:, None] * direction
            prev_w[one] = direction
        acc = np.zeros_like(z)
        np.add.at(acc, owner0, y0 + lam0 / c)
        np.add.at(acc, owner1[both], y1[both] + lam1[both] / c)
        z_new = acc / counts[:, None]
        r0 = y0 - z_new[owner0]
        r1 = y1[both] - z_new[owner1[both]]
        lam0 += c * r0
        lam1[both] += c * r1
        primal = float(max(np.max(np.linalg.norm(r0, axis=1)),
                           np.max(np.linalg.norm(r1, axis=1)) if len(r1) else 0.0))
        dual = c * float(np.max(np.linalg.norm(z_new - z, axis=1)))
        z = z_new
        residuals.append((primal, dual))
        if primal < tolerance and dual < tolerance:
            converged = True
            break
    return _result(scenario, used, z, converged=converged, iterations=it,
                   residuals=residuals, penalty=c)
