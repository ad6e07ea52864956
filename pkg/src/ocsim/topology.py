"""Striping matrices and throughput evaluation for direct-connect fabrics.

The throughput metric is the largest uniform scale alpha such that
alpha * demand is routable over direct plus one-transit paths without
exceeding any link capacity. A water-filling heuristic evaluates general
instances; an exact linear program serves as the reference on small ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "canonical_striping",
    "demand_problems",
    "admissible_paths",
    "wcmp_weights",
    "ThroughputResult",
    "evaluate_throughput",
    "throughput_oracle",
    "optimize_striping",
    "TopologyError",
    "Disconnected",
    "TooLarge",
]

ORACLE_MAX_NODES = 4
ORACLE_MAX_LINKS = 24


class TopologyError(Exception):
    pass


class Disconnected(TopologyError):
    def __init__(self, src: int, dst: int):
        super().__init__(f"no admissible path for commodity ({src}, {dst})")
        self.src = src
        self.dst = dst


class TooLarge(TopologyError):
    pass


def canonical_striping(n_abs: int, uplinks_per_ab: int) -> np.ndarray:
    """Uniform mesh striping: every pair gets floor or ceil of u/(n-1) links.

    Remainder links go to the lowest-index pairs whose rows still have
    spare remainder budget; with an odd leftover that cannot be paired the
    row simply stays one link short of its uplink count.
    """
    if n_abs < 2:
        raise ValueError("canonical striping needs at least 2 aggregation blocks")
    if uplinks_per_ab < 0:
        raise ValueError("uplinks_per_ab must be >= 0")
    base, rem = divmod(uplinks_per_ab, n_abs - 1)
    s = np.full((n_abs, n_abs), base, dtype=int)
    np.fill_diagonal(s, 0)
    credit = [rem] * n_abs
    for a in range(n_abs):
        for b in range(a + 1, n_abs):
            if credit[a] > 0 and credit[b] > 0:
                s[a, b] += 1
                s[b, a] += 1
                credit[a] -= 1
                credit[b] -= 1
    return s


def demand_problems(demand: np.ndarray, n_abs: int | None = None) -> list[str]:
    """Static checks on a demand matrix; returns naming problems per cell."""
    problems = []
    d = np.asarray(demand, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        return [f"demand must be square, got shape {d.shape}"]
    if n_abs is not None and d.shape[0] != n_abs:
        problems.append(f"demand is {d.shape[0]}x{d.shape[0]}, fabric has {n_abs} blocks")
    if not np.all(np.isfinite(d)):
        i, j = np.argwhere(~np.isfinite(d))[0]
        problems.append(f"[{i}][{j}]: non-finite value")
    for i, j in np.argwhere(d < 0):
        problems.append(f"[{i}][{j}]: negative value")
    for i in np.argwhere(np.diagonal(d) != 0).ravel():
        problems.append(f"[{i}][{i}]: diagonal must be zero")
    return problems


def _striping_array(striping) -> np.ndarray:
    s = getattr(striping, "S", striping)
    return np.asarray(s, dtype=int)


def _capacity(striping: np.ndarray, rate_gbps) -> np.ndarray:
    rate = np.asarray(rate_gbps, dtype=float)
    return striping * rate


def admissible_paths(striping, src: int, dst: int) -> list[tuple[int, ...]]:
    """Direct plus one-transit paths from src to dst over present links."""
    s = _striping_array(striping)
    n = s.shape[0]
    paths: list[tuple[int, ...]] = []
    if s[src, dst] > 0:
        paths.append((src, dst))
    for v in range(n):
        if v not in (src, dst) and s[src, v] > 0 and s[v, dst] > 0:
            paths.append((src, v, dst))
    return paths


def wcmp_weights(
    striping,
    demand: np.ndarray,
    policy: str = "wcmp",
    rate_gbps=100.0,
) -> dict[tuple[int, int], list[tuple[tuple[int, ...], float]]]:
    """Per-commodity path weights.

    wcmp weights are proportional to each path's bottleneck capacity. ecmp
    puts everything on the direct path when one exists, otherwise splits
    equally over the transit paths.

    Raises:
        Disconnected: a commodity with demand has no admissible path.
    """
    if policy not in ("wcmp", "ecmp"):
        raise ValueError(f"unknown routing policy {policy!r}")
    s = _striping_array(striping)
    d = np.asarray(demand, dtype=float)
    cap = _capacity(s, rate_gbps)
    weights: dict[tuple[int, int], list[tuple[tuple[int, ...], float]]] = {}
    n = s.shape[0]
    for src in range(n):
        for dst in range(n):
            if src == dst or d[src, dst] <= 0:
                continue
            paths = admissible_paths(s, src, dst)
            if not paths:
                raise Disconnected(src, dst)
            if policy == "ecmp":
                if (src, dst) in paths:
                    chosen = [(src, dst)]
                else:
                    chosen = paths
                w = 1.0 / len(chosen)
                weights[(src, dst)] = [(p, w) for p in chosen]
            else:
                bottleneck = [
                    min(cap[p[k], p[k + 1]] for k in range(len(p) - 1)) for p in paths
                ]
                total = sum(bottleneck)
                weights[(src, dst)] = [
                    (p, b / total) for p, b in zip(paths, bottleneck)
                ]
    return weights


@dataclass
class ThroughputResult:
    """Feasible throughput certificate: the scale and its routing."""

    alpha: float
    link_loads: dict[tuple[int, int], float] = field(default_factory=dict)
    path_flows: dict[tuple[int, ...], float] = field(default_factory=dict)
    policy: str = "wcmp"
    probes: int = 0


class _RoutingInstance:
    """Edge/path bookkeeping shared by the heuristic's inner loops."""

    def __init__(self, s: np.ndarray, demand: np.ndarray, rate_gbps, policy: str):
        self.policy = policy
        cap = _capacity(s, rate_gbps)
        d = np.asarray(demand, dtype=float)
        n = s.shape[0]
        self.edge_ids: dict[tuple[int, int], int] = {}
        caps: list[float] = []
        for a in range(n):
            for b in range(n):
                if a != b and s[a, b] > 0:
                    self.edge_ids[(a, b)] = len(caps)
                    caps.append(float(cap[a, b]))
        self.caps = caps
        self.commodities: list[tuple[int, int, float]] = []
        self.paths: list[list[list[int]]] = []  # per commodity: paths as edge-id lists
        self.path_nodes: list[list[tuple[int, ...]]] = []
        self.disconnected = False
        for src in range(n):
            for dst in range(n):
                if src == dst or d[src, dst] <= 0:
                    continue
                node_paths = admissible_paths(s, src, dst)
                if not node_paths:
                    self.disconnected = True
                    continue
                if policy == "ecmp" and (src, dst) in node_paths:
                    node_paths = [(src, dst)]
                self.commodities.append((src, dst, float(d[src, dst])))
                self.paths.append(
                    [
                        [self.edge_ids[(p[k], p[k + 1])] for k in range(len(p) - 1)]
                        for p in node_paths
                    ]
                )
                self.path_nodes.append(node_paths)
        # Initial split: bottleneck-proportional (wcmp) or equal (ecmp).
        self.init_weights: list[list[float]] = []
        for edge_paths in self.paths:
            if policy == "ecmp":
                w = [1.0 / len(edge_paths)] * len(edge_paths)
            else:
                bn = [min(self.caps[e] for e in p) for p in edge_paths]
                tot = sum(bn)
                w = [b / tot for b in bn]
            self.init_weights.append(w)
        # Dense layout for the price-directed stage.
        flat_paths = [p for paths in self.paths for p in paths]
        self.n_paths = len(flat_paths)
        n_edges = len(caps)
        self.inc = np.zeros((self.n_paths, max(n_edges, 1)))
        for j, p in enumerate(flat_paths):
            for e in p:
                self.inc[j, e] = 1.0
        self.caps_np = np.asarray(caps if caps else [1.0])
        starts = [0]
        for paths in self.paths:
            starts.append(starts[-1] + len(paths))
        self.starts = np.asarray(starts)
        self.dem = np.asarray([c[2] for c in self.commodities])
        k = len(self.commodities)
        width = max((len(p) for p in self.paths), default=1)
        self.pad_idx = np.zeros((k, width), dtype=int)
        self.pad_inf = np.full((k, width), np.inf)
        for ci in range(k):
            lo, hi = starts[ci], starts[ci + 1]
            for j in range(width):
                self.pad_idx[ci, j] = lo + min(j, hi - lo - 1)
                if j < hi - lo:
                    self.pad_inf[ci, j] = 0.0

    def _eval(self, flows: np.ndarray):
        loads = flows @ self.inc
        util = float((loads / self.caps_np).max()) if len(self.caps) else 0.0
        return util, loads

    def _init_flows(self, alpha: float) -> np.ndarray:
        flows = np.zeros(self.n_paths)
        for ci, ((_, _, dem), w) in enumerate(zip(self.commodities, self.init_weights)):
            lo = self.starts[ci]
            for j, wk in enumerate(w):
                flows[lo + j] = alpha * dem * wk
        return flows

    def _best_response_sweeps(self, alpha, flows: np.ndarray, loads, sweeps: int, best):
        """Per-commodity water-filling: each commodity re-spreads its flow
        across its paths to the lowest congestion the rest allows.

        Each rebalance weakly lowers the global peak utilization, so the
        best iterate only improves.
        """
        ncaps = self.caps
        loads = list(loads)
        flows = flows.copy()
        for _ in range(sweeps):
            for ci, ((_, _, dem), paths) in enumerate(
                zip(self.commodities, self.paths)
            ):
                need = alpha * dem
                lo_ix = self.starts[ci]
                for j, p in enumerate(paths):
                    fk = flows[lo_ix + j]
                    for e in p:
                        loads[e] -= fk
                # Lowest congestion any single path could absorb it all at.
                hi = min(
                    max((loads[e] + need) / ncaps[e] for e in p) for p in paths
                )
                lo = 0.0
                for _ in range(30):
                    mid = 0.5 * (lo + hi)
                    avail = sum(
                        max(0.0, min(mid * ncaps[e] - loads[e] for e in p))
                        for p in paths
                    )
                    if avail >= need:
                        hi = mid
                    else:
                        lo = mid
                avail = [
                    max(0.0, min(hi * ncaps[e] - loads[e] for e in p)) for p in paths
                ]
                total = sum(avail)
                scale = need / total if total > 0 else 0.0
                for j, (p, a) in enumerate(zip(paths, avail)):
                    fk = a * scale
                    flows[lo_ix + j] = fk
                    for e in p:
                        loads[e] += fk
            util = max(
                (loads[e] / ncaps[e] for e in range(len(ncaps))), default=0.0
            )
            if util < best[0] - 1e-15:
                best = (util, flows.copy())
        return best

    def _price_directed(self, alpha: float, rounds: int, eta: float = 0.5):
        """Congestion-priced rebalancing, averaged over rounds.

        Links are priced by their utilization; every round each commodity
        routes entirely on its cheapest path and the running average of
        those routings is kept as the candidate split. The averaging is
        what steers the mixture toward the coordinated optimum rather than
        a selfish equilibrium.
        """
        prices = np.full(len(self.caps_np), 1.0 / len(self.caps_np))
        dem = alpha * self.dem
        sum_flows = np.zeros(self.n_paths)
        best_util, best_flows = math.inf, None
        for t in range(1, rounds + 1):
            cost = self.inc @ (prices / self.caps_np)
            choice = np.argmin(cost[self.pad_idx] + self.pad_inf, axis=1)
            flows = np.zeros(self.n_paths)
            flows[self.pad_idx[np.arange(len(dem)), choice]] = dem
            loads = flows @ self.inc
            sum_flows += flows
            if t % 16 == 0 or t == rounds:
                avg = sum_flows / t
                util, _ = self._eval(avg)
                if util < best_util:
                    best_util, best_flows = util, avg
            util_vec = loads / self.caps_np
            peak = util_vec.max()
            if peak > 0:
                prices = prices * np.exp(eta * (util_vec / peak))
                prices /= prices.sum()
        return best_util, best_flows

    def route(self, alpha: float, sweeps: int = 8, price_rounds: int = 256):
        """Water-fill a routing of alpha * demand; return the best found.

        Runs local per-commodity rebalancing, then the price-directed
        averaged stage to escape selfish equilibria, then polishes that
        point locally again. Returns (max_util, loads, flows) of the best
        explicit routing encountered; the routing always carries the full
        scaled demand, so max_util <= 1 certifies feasibility.
        """
        flows0 = self._init_flows(alpha)
        util0, loads0 = self._eval(flows0)
        best = (util0, flows0)
        if self.policy == "ecmp" or not self.caps:
            loads = flows0 @ self.inc
            return best[0], list(loads), best[1]
        best = self._best_response_sweeps(alpha, best[1], best[1] @ self.inc, sweeps, best)
        if alpha > 0 and price_rounds > 0:
            mw_util, mw_flows = self._price_directed(alpha, price_rounds)
            if mw_util < best[0]:
                best = (mw_util, mw_flows)
            polished = self._best_response_sweeps(
                alpha, mw_flows, mw_flows @ self.inc, sweeps, (mw_util, mw_flows)
            )
            if polished[0] < best[0]:
                best = polished
        util, flows = best
        loads = flows @ self.inc
        return util, list(loads), flows


def evaluate_throughput(
    striping,
    demand: np.ndarray,
    policy: str = "wcmp",
    rate_gbps=100.0,
    *,
    sweeps: int = 8,
    price_rounds: int = 256,
    bisect_iters: int = 14,
) -> ThroughputResult:
    """Largest uniform demand scale routable under the policy.

    Runs a bisection over alpha; each probe water-fills a concrete routing
    of alpha * demand and accepts alpha when no link exceeds its capacity.
    The returned result carries that feasible routing, so the scale is
    always achievable. Zero demand returns the +inf sentinel.
    """
    s = _striping_array(striping)
    d = np.asarray(demand, dtype=float)
    if d.shape != s.shape:
        raise ValueError(f"demand shape {d.shape} does not match striping {s.shape}")
    if not np.any(d > 0):
        return ThroughputResult(alpha=math.inf, policy=policy)
    inst = _RoutingInstance(s, d, rate_gbps, policy)
    if inst.disconnected or not inst.commodities:
        return ThroughputResult(alpha=0.0, policy=policy)

    probes = 0

    def probe(alpha):
        nonlocal probes
        probes += 1
        return inst.route(alpha, sweeps=sweeps, price_rounds=price_rounds)

    util0, _, _ = probe(1.0)
    if util0 <= 0:
        return ThroughputResult(alpha=math.inf, policy=policy)
    est = 1.0 / util0

    lo = est * (1.0 - 3e-4)
    hi = est * (1.0 + 3e-4)
    lo_result = None
    for _ in range(80):
        util, loads, flows = probe(lo)
        if util <= 1.0 + 1e-9:
            lo_result = (util, loads, flows)
            break
        lo *= 0.999
    if lo_result is None:
        lo = 0.0
        lo_result = (0.0, [0.0] * len(inst.caps), np.zeros(inst.n_paths))
    for _ in range(80):
        util, _, _ = probe(hi)
        if util > 1.0 + 1e-9:
            break
        hi *= 1.001

    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        util, loads, flows = probe(mid)
        if util <= 1.0 + 1e-9:
            lo, lo_result = mid, (util, loads, flows)
        else:
            hi = mid

    _, loads, flows = lo_result
    link_loads = {edge: loads[e] for edge, e in inst.edge_ids.items()}
    path_flows: dict[tuple[int, ...], float] = {}
    for ci, nodes in enumerate(inst.path_nodes):
        lo_ix = inst.starts[ci]
        for j, p in enumerate(nodes):
            path_flows[p] = float(flows[lo_ix + j])
    return ThroughputResult(
        alpha=lo, link_loads=link_loads, path_flows=path_flows, policy=policy,
        probes=probes,
    )


def throughput_oracle(striping, demand: np.ndarray, rate_gbps=100.0) -> float:
    """Exact optimum of the throughput scale on small instances.

    Solves max alpha subject to alpha * demand being routable on direct and
    one-transit paths as a linear program. Restricted to tiny fabrics so it
    stays an oracle, not a production path.

    Raises:
        TooLarge: instance exceeds the oracle's size limits.
    """
    s = _striping_array(striping)
    d = np.asarray(demand, dtype=float)
    n = s.shape[0]
    if n > ORACLE_MAX_NODES:
        raise TooLarge(f"{n} blocks exceeds oracle limit {ORACLE_MAX_NODES}")
    if s.sum() // 2 > ORACLE_MAX_LINKS:
        raise TooLarge(f"{s.sum() // 2} links exceeds oracle limit {ORACLE_MAX_LINKS}")
    if not np.any(d > 0):
        return math.inf

    cap = _capacity(s, rate_gbps)
    edges = [(a, b) for a in range(n) for b in range(n) if a != b and s[a, b] > 0]
    edge_id = {e: i for i, e in enumerate(edges)}
    commodities = []
    paths_per_commodity = []
    for src in range(n):
        for dst in range(n):
            if src == dst or d[src, dst] <= 0:
                continue
            paths = admissible_paths(s, src, dst)
            commodities.append((src, dst))
            paths_per_commodity.append(paths)

    n_paths = sum(len(p) for p in paths_per_commodity)
    n_vars = n_paths + 1  # path flows plus alpha
    c = np.zeros(n_vars)
    c[-1] = -1.0

    a_ub = np.zeros((len(edges), n_vars))
    b_ub = np.array([cap[e] for e in edges], dtype=float)
    a_eq = np.zeros((len(commodities), n_vars))
    b_eq = np.zeros(len(commodities))

    col = 0
    for ci, ((src, dst), paths) in enumerate(zip(commodities, paths_per_commodity)):
        for p in paths:
            for k in range(len(p) - 1):
                a_ub[edge_id[(p[k], p[k + 1])], col] = 1.0
            a_eq[ci, col] = 1.0
            col += 1
        a_eq[ci, -1] = -float(d[src, dst])

    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=[(0, None)] * n_vars,
        method="highs",
    )
    if res.status == 3:
        return math.inf
    if res.status != 0:
        raise TopologyError(f"oracle LP failed: {res.message}")
    return float(res.x[-1])


def optimize_striping(
    demand: np.ndarray,
    n_abs: int,
    uplinks_per_ab: int,
    policy: str = "wcmp",
    rate_gbps=100.0,
    max_moves: int = 200,
) -> np.ndarray:
    """Greedy striping re-allocation toward a skewed demand.

    Starting from canonical striping, repeatedly moves one link from the
    pair with the most capacity-to-scaled-demand slack to the pair with the
    least, keeping row sums within the uplink budget, and stops when the
    evaluated throughput no longer improves by more than 0.1% relative.
    Ties break toward the lowest pair index.
    """
    d = np.asarray(demand, dtype=float)
    s = canonical_striping(n_abs, uplinks_per_ab)
    if d.shape != s.shape:
        raise ValueError(f"demand shape {d.shape} does not match {n_abs} blocks")
    alpha = evaluate_throughput(s, d, policy, rate_gbps).alpha
    if math.isinf(alpha) or alpha <= 0:
        return s

    rate = np.broadcast_to(np.asarray(rate_gbps, dtype=float), s.shape)
    pairs = [(a, b) for a in range(n_abs) for b in range(a + 1, n_abs)]

    for _ in range(max_moves):
        slack = {}
        for a, b in pairs:
            pair_demand = max(d[a, b], d[b, a])
            slack[(a, b)] = s[a, b] * rate[a, b] - alpha * pair_demand
        donors = sorted(
            (p for p in pairs if s[p] >= 1), key=lambda p: (-slack[p], p)
        )
        receivers = sorted(pairs, key=lambda p: (slack[p], p))
        move = None
        for dn in donors:
            for rc in receivers:
                if dn == rc:
                    continue
                row_ok = all(
                    s[x].sum() - (x in dn) + (x in rc) <= uplinks_per_ab
                    for x in set(dn) | set(rc)
                )
                if row_ok:
                    move = (dn, rc)
                    break
            if move:
                break
        if move is None:
            break
        (da, db), (ra, rb) = move
        s[da, db] -= 1
        s[db, da] -= 1
        s[ra, rb] += 1
        s[rb, ra] += 1
        new_alpha = evaluate_throughput(s, d, policy, rate_gbps).alpha
        if new_alpha > alpha * (1.0 + 1e-3):
            alpha = new_alpha
            continue
        s[da, db] += 1
        s[db, da] += 1
        s[ra, rb] -= 1
        s[rb, ra] -= 1
        break
    return s
