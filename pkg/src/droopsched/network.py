"""Radial distribution network model and DistFlow power-flow solver.

The feeder is a tree rooted at the substation (bus 0), which is modelled
as an infinite bus at fixed voltage.  The nonlinear power flow is solved
with the Backward-Forward Sweep: branch active/reactive flows are
accumulated from the leaves toward the root using the loss terms of the
previous iterate, squared voltage magnitudes are then propagated from
the root toward the leaves, and branch currents are refreshed from the
new flows and sending-end voltages.  All quantities are per-unit on a
common power base.

Sign convention: bus injections are positive for generation and negative
for consumption; the power drawn at the point of common coupling (PCC)
is positive when the feeder imports from the transmission grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Bus",
    "Branch",
    "NetworkModel",
    "PowerFlowSolution",
    "NetworkDataError",
    "PowerFlowError",
    "validate_radial",
    "solve_power_flow",
    "pcc_exchange",
    "load_network",
]


class NetworkDataError(ValueError):
    """Raised for malformed network topology or branch data."""


class PowerFlowError(RuntimeError):
    """Raised when the sweep fails to converge or hits an infeasible state."""


@dataclass
class Bus:
    id: int
    v: float = 1.0
    p_inj: float = 0.0
    q_inj: float = 0.0


@dataclass
class Branch:
    frm: int
    to: int
    r: float
    x: float
    p_flow: float = 0.0
    q_flow: float = 0.0
    i_sq: float = 0.0


@dataclass
class NetworkModel:
    """Radial feeder: buses (0 = substation), branches, and DER host set."""

    buses: list[Bus]
    branches: list[Branch]
    v_sub: float = 1.0
    s_base: float = 1.0e6
    controllable: set[int] = field(default_factory=set)
    _plan: "_SweepPlan | None" = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        """Number of non-substation buses."""
        return len(self.buses) - 1

    def plan(self) -> "_SweepPlan":
        if self._plan is None:
            self._plan = _build_plan(self)
        return self._plan


@dataclass
class PowerFlowSolution:
    """Converged sweep result.  ``v`` covers all buses, index 0 = substation."""

    v: np.ndarray
    p_flow: np.ndarray
    q_flow: np.ndarray
    i_sq: np.ndarray
    p_pcc: float
    converged: bool
    iterations: int


@dataclass
class _SweepPlan:
    """Precomputed tree structure for vectorised sweeps.

    ``desc[e, f] = 1`` iff branch f lies in the subtree hanging from branch
    e (inclusive), so a backward accumulation is a single mat-vec.
    ``paths[j, e] = 1`` iff branch e lies on the root path of bus j+1.
    """

    backward: list[int]
    forward: list[int]
    frm: np.ndarray
    to: np.ndarray
    r: np.ndarray
    x: np.ndarray
    desc: np.ndarray
    paths: np.ndarray
    root_edges: np.ndarray


def _build_plan(model: NetworkModel) -> _SweepPlan:
    backward, forward = validate_radial(model)
    nb = len(model.branches)
    n = model.n
    frm = np.array([b.frm for b in model.branches], dtype=np.intp)
    to = np.array([b.to for b in model.branches], dtype=np.intp)
    r = np.array([b.r for b in model.branches], dtype=float)
    x = np.array([b.x for b in model.branches], dtype=float)

    # root paths, built walking root->leaf so the parent row already exists
    paths = np.zeros((n, nb))
    for e in forward:
        child = int(to[e])
        parent = int(frm[e])
        if parent != 0:
            paths[child - 1] = paths[parent - 1]
        paths[child - 1, e] = 1.0

    # desc[e, f]: f on or below e  <=>  e lies on the root path of f's child
    desc = np.zeros((nb, nb))
    for f in range(nb):
        child = int(to[f])
        desc[:, f] = paths[child - 1, :]
    root_edges = np.flatnonzero(frm == 0)
    return _SweepPlan(backward, forward, frm, to, r, x, desc, paths, root_edges)


def validate_radial(model: NetworkModel) -> tuple[list[int], list[int]]:
    """Check the branch set forms a tree rooted at bus 0 and return sweep orders.

    Returns (backward, forward) lists of branch indices: leaves-to-root and
    root-to-leaves.  Raises NetworkDataError on cycles, disconnected buses,
    duplicate branches, or unknown bus ids.
    """
    ids = [b.id for b in model.buses]
    if sorted(ids) != list(range(len(ids))):
        raise NetworkDataError("bus ids must be 0..n with 0 the substation")
    n_bus = len(ids)
    if len(model.branches) != n_bus - 1:
        raise NetworkDataError(
            "cycle detected or disconnected node: "
            f"expected {n_bus - 1} branches, got {len(model.branches)}"
        )
    seen_pairs = set()
    adj: dict[int, list[tuple[int, int]]] = {i: [] for i in ids}
    for e, br in enumerate(model.branches):
        if br.frm not in adj or br.to not in adj:
            raise NetworkDataError(f"branch ({br.frm},{br.to}) references unknown bus")
        if br.r < 0 or br.x < 0 or (br.r == 0 and br.x == 0):
            raise NetworkDataError(f"branch ({br.frm},{br.to}) needs r,x >= 0, not both zero")
        key = (min(br.frm, br.to), max(br.frm, br.to))
        if key in seen_pairs:
            raise NetworkDataError(f"duplicate branch {key}")
        seen_pairs.add(key)
        adj[br.frm].append((br.to, e))
        adj[br.to].append((br.frm, e))

    # BFS from the substation, orienting parent->child as we go
    depth = {0: 0}
    order: list[int] = []
    queue = [0]
    while queue:
        node = queue.pop(0)
        for other, e in adj[node]:
            if other in depth:
                continue
            depth[other] = depth[node] + 1
            br = model.branches[e]
            if br.frm != node:
                # branch was listed child-first; reorient away from the root
                br.frm, br.to = node, other
            order.append(e)
            queue.append(other)
    if len(depth) != n_bus:
        missing = sorted(set(ids) - set(depth))
        raise NetworkDataError(f"disconnected node {missing[0]}")
    if len(order) != len(model.branches):
        raise NetworkDataError("cycle detected")

    forward = sorted(range(len(model.branches)), key=lambda e: depth[model.branches[e].to])
    backward = list(reversed(forward))
    return backward, forward


def solve_power_flow(
    model: NetworkModel,
    p_inj: np.ndarray,
    q_inj: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 100,
    warm: "PowerFlowSolution | None" = None,
) -> PowerFlowSolution:
    """Backward-Forward Sweep over the DistFlow recursion.

    ``p_inj``/``q_inj`` are indexed over non-substation buses (bus 1..n).
    Converged solutions satisfy the flow, voltage-drop and current
    equations with max residual <= tol.  ``warm`` seeds voltages and
    branch currents from a previous solution; a flat start is used
    otherwise.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    plan = model.plan()
    n = model.n
    p = np.asarray(p_inj, dtype=float)
    q = np.asarray(q_inj, dtype=float)
    if p.shape != (n,) or q.shape != (n,):
        raise ValueError(f"injections must have shape ({n},)")

    r, x = plan.r, plan.x
    rx_sq = r * r + x * x
    to_idx = plan.to - 1  # branch -> child bus row
    v_sub_sq = model.v_sub**2
    if warm is None:
        v_sq = np.full(n, v_sub_sq)
        i_sq = np.zeros(len(r))
    else:
        v_sq = warm.v[1:] ** 2
        i_sq = warm.i_sq.copy()
    # sending-end bus of each branch, as index into [v_sub, v_1..v_n]
    frm_ext = plan.frm.copy()

    P = np.zeros(len(r))
    Q = np.zeros(len(r))
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        # backward: flows from leaves to root with previous-iterate losses
        P = plan.desc @ (-p[to_idx] + r * i_sq)
        Q = plan.desc @ (-q[to_idx] + x * i_sq)
        # forward: squared-voltage drops from the root down
        drop = 2.0 * (r * P + x * Q) - rx_sq * i_sq
        v_sq_new = v_sub_sq - plan.paths @ drop
        if np.any(v_sq_new <= 0.0):
            raise PowerFlowError(
                "negative squared voltage encountered: operating point infeasible"
            )
        v_ext = np.concatenate(([v_sub_sq], v_sq_new))
        i_sq_new = (P * P + Q * Q) / v_ext[frm_ext]
        dv = np.max(np.abs(np.sqrt(v_sq_new) - np.sqrt(v_sq)))
        di = np.max(np.abs(i_sq_new - i_sq)) if len(r) else 0.0
        v_sq = v_sq_new
        i_sq = i_sq_new
        if dv <= tol and di <= 10.0 * tol:
            # verify the DistFlow residuals at the final iterate
            res = _residuals(plan, p, q, P, Q, i_sq, v_sq, v_sub_sq)
            if res <= tol:
                converged = True
                break
    if not converged:
        raise PowerFlowError(f"no convergence within {max_iter} iterations")

    v = np.concatenate(([model.v_sub], np.sqrt(v_sq)))
    p_pcc = float(np.sum(P[plan.root_edges]))
    return PowerFlowSolution(v, P.copy(), Q.copy(), i_sq.copy(), p_pcc, True, iterations)


def _residuals(plan, p, q, P, Q, i_sq, v_sq, v_sub_sq) -> float:
    to_idx = plan.to - 1
    child_sum_P = np.zeros_like(P)
    child_sum_Q = np.zeros_like(Q)
    for e in range(len(P)):
        kids = np.flatnonzero(plan.frm == plan.to[e])
        if len(kids):
            child_sum_P[e] = P[kids].sum()
            child_sum_Q[e] = Q[kids].sum()
    res_a = P - (child_sum_P - p[to_idx] + plan.r * i_sq)
    res_b = Q - (child_sum_Q - q[to_idx] + plan.x * i_sq)
    v_ext = np.concatenate(([v_sub_sq], v_sq))
    res_c = (v_ext[plan.frm] - v_sq[to_idx]) - (
        2.0 * (plan.r * P + plan.x * Q) - (plan.r**2 + plan.x**2) * i_sq
    )
    res_i = i_sq - (P * P + Q * Q) / v_ext[plan.frm]
    return float(
        max(
            np.max(np.abs(res_a)),
            np.max(np.abs(res_b)),
            np.max(np.abs(res_c)),
            np.max(np.abs(res_i)),
        )
    )


def pcc_exchange(sol: PowerFlowSolution) -> float:
    """Signed active power at the PCC; positive = import from the grid."""
    if not sol.converged:
        raise PowerFlowError("power flow did not converge")
    return sol.p_pcc


def load_network(path) -> NetworkModel:
    """Parse a branch table ``from,to,r_pu,x_pu`` (header required, bus 0 implicit)."""
    branches = []
    max_bus = 0
    with open(path) as fh:
        header = fh.readline()
        if not header or header.strip().split(",")[0].lower() not in ("from", "frm"):
            raise NetworkDataError(f"{path}: missing 'from,to,r_pu,x_pu' header")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise NetworkDataError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                frm, to = int(parts[0]), int(parts[1])
                r, x = float(parts[2]), float(parts[3])
            except ValueError as exc:
                raise NetworkDataError(f"{path}:{lineno}: {exc}") from exc
            branches.append(Branch(frm, to, r, x))
            max_bus = max(max_bus, frm, to)
    buses = [Bus(i) for i in range(max_bus + 1)]
    model = NetworkModel(buses, branches)
    validate_radial(model)
    return model
