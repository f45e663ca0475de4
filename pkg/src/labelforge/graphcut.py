"""Binary MRF segmentation solved exactly by max-flow/min-cut.

Energy: sum of per-voxel unary costs plus Potts pairwise terms with
intensity-modulated capacities on the 6-neighborhood. The flow network
routes source->voxel->sink through terminal capacities (cap_source holds
the background cost, cap_sink the foreground cost) so that after the cut
the source-reachable side is exactly the foreground.

The solver is Dinic's algorithm over a CSR arc table with interleaved
forward/reverse arcs (pair of arc a is a^1), jit-compiled. Terminal
capacities are pre-routed pairwise (min of the two flows immediately,
preserving the flow value) so the network handed to the solver is sparse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import BadProbability, DimMismatch
from .likelihood import DEFAULT_BINS, fit_from_scribbles, unary_costs
from .volume import LabelMask, ScribbleMask, Volume, robust_std

HARD_CAP = 1e9
PROB_FLOOR = 1e-4
# residual capacities below this are treated as saturated
_CAP_EPS = 1e-12


@dataclass(eq=False)
class EnergyParams:
    """Smoothness weight, intensity scale, and the hard-constraint sentinel.

    sigma_int None means "use the robust intensity std of the volume",
    resolved when the energy is built. The neighborhood is fixed to the six
    face neighbors.
    """

    lambda_pair: float = 5.0
    sigma_int: float | None = None
    hard_cap: float = HARD_CAP

    def __post_init__(self):
        if self.lambda_pair < 0:
            raise ValueError("lambda_pair must be >= 0")
        if self.sigma_int is not None and self.sigma_int <= 0:
            raise ValueError("sigma_int must be > 0")
        if self.hard_cap <= 0:
            raise ValueError("hard_cap must be > 0")


@dataclass(eq=False)
class FlowNetwork:
    """s-t network: per-node terminal capacities plus symmetric node arcs."""

    node_count: int
    cap_source: np.ndarray
    cap_sink: np.ndarray
    arc_u: np.ndarray
    arc_v: np.ndarray
    arc_cap: np.ndarray

    def __post_init__(self):
        self.cap_source = np.ascontiguousarray(self.cap_source, dtype=np.float64)
        self.cap_sink = np.ascontiguousarray(self.cap_sink, dtype=np.float64)
        self.arc_u = np.ascontiguousarray(self.arc_u, dtype=np.int32)
        self.arc_v = np.ascontiguousarray(self.arc_v, dtype=np.int32)
        self.arc_cap = np.ascontiguousarray(self.arc_cap, dtype=np.float64)
        n = self.node_count
        if self.cap_source.shape != (n,) or self.cap_sink.shape != (n,):
            raise ValueError("terminal capacity arrays must have node_count entries")
        if not (self.arc_u.shape == self.arc_v.shape == self.arc_cap.shape):
            raise ValueError("arc arrays must be parallel")
        if self.arc_u.size and (
            self.arc_u.min() < 0
            or self.arc_v.min() < 0
            or self.arc_u.max() >= n
            or self.arc_v.max() >= n
        ):
            raise ValueError("arc endpoint out of range")
        if np.any(self.arc_u == self.arc_v):
            raise ValueError("self-arcs are not allowed")
        for cap in (self.cap_source, self.cap_sink, self.arc_cap):
            if cap.size and (not np.all(np.isfinite(cap)) or cap.min() < 0):
                raise ValueError("capacities must be finite and >= 0")


@njit(cache=True)
def _dinic(n, s, t, head, adj, arc_to, arc_cap):
    level = np.empty(n, dtype=np.int32)
    it = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int32)
    stack_node = np.empty(n + 1, dtype=np.int32)
    stack_arc = np.empty(n + 1, dtype=np.int64)
    total = 0.0
    while True:
        for i in range(n):
            level[i] = -1
        level[s] = 0
        qh, qt = 0, 0
        queue[qt] = s
        qt += 1
        while qh < qt:
            u = queue[qh]
            qh += 1
            for k in range(head[u], head[u + 1]):
                a = adj[k]
                v = arc_to[a]
                if arc_cap[a] > _CAP_EPS and level[v] < 0:
                    level[v] = level[u] + 1
                    queue[qt] = v
                    qt += 1
        if level[t] < 0:
            return total
        for i in range(n):
            it[i] = head[i]
        while True:
            # iterative DFS for one augmenting path in the level graph
            depth = 0
            stack_node[0] = s
            found = False
            while depth >= 0:
                u = stack_node[depth]
                if u == t:
                    found = True
                    break
                advanced = False
                while it[u] < head[u + 1]:
                    a = adj[it[u]]
                    v = arc_to[a]
                    if arc_cap[a] > _CAP_EPS and level[v] == level[u] + 1:
                        stack_arc[depth] = a
                        depth += 1
                        stack_node[depth] = v
                        advanced = True
                        break
                    it[u] += 1
                if not advanced:
                    depth -= 1
                    if depth >= 0:
                        it[stack_node[depth]] += 1
            if not found:
                break
            bott = np.inf
            for d in range(depth):
                a = stack_arc[d]
                if arc_cap[a] < bott:
                    bott = arc_cap[a]
            for d in range(depth):
                a = stack_arc[d]
                arc_cap[a] -= bott
                arc_cap[a ^ 1] += bott
            total += bott


@njit(cache=True)
def _reachable(n, s, head, adj, arc_to, arc_cap):
    seen = np.zeros(n, dtype=np.uint8)
    queue = np.empty(n, dtype=np.int32)
    seen[s] = 1
    qh, qt = 0, 0
    queue[qt] = s
    qt += 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        for k in range(head[u], head[u + 1]):
            a = adj[k]
            v = arc_to[a]
            if arc_cap[a] > _CAP_EPS and not seen[v]:
                seen[v] = 1
                queue[qt] = v
                qt += 1
    return seen


def max_flow(net: FlowNetwork):
    """Exact max flow; returns (flow_value, source_side bool per node).

    The returned partition is a minimum cut: nodes reachable from the
    source in the final residual graph. Ties at equal terminal cost land a
    node on the sink side (its residual source arc is saturated away by the
    terminal pre-route).
    """
    nn = net.node_count
    pre = np.minimum(net.cap_source, net.cap_sink)
    a = net.cap_source - pre
    b = net.cap_sink - pre
    s = nn
    t = nn + 1
    n = nn + 2
    src_nodes = np.nonzero(a > 0)[0].astype(np.int32)
    snk_nodes = np.nonzero(b > 0)[0].astype(np.int32)
    m = 2 * (len(src_nodes) + len(snk_nodes) + len(net.arc_u))
    arc_from = np.empty(m, dtype=np.int32)
    arc_to = np.empty(m, dtype=np.int32)
    arc_cap = np.empty(m, dtype=np.float64)
    idx = 0
    k = len(src_nodes)
    arc_from[idx : idx + 2 * k : 2] = s
    arc_to[idx : idx + 2 * k : 2] = src_nodes
    arc_cap[idx : idx + 2 * k : 2] = a[src_nodes]
    arc_from[idx + 1 : idx + 2 * k : 2] = src_nodes
    arc_to[idx + 1 : idx + 2 * k : 2] = s
    arc_cap[idx + 1 : idx + 2 * k : 2] = 0.0
    idx += 2 * k
    k = len(snk_nodes)
    arc_from[idx : idx + 2 * k : 2] = snk_nodes
    arc_to[idx : idx + 2 * k : 2] = t
    arc_cap[idx : idx + 2 * k : 2] = b[snk_nodes]
    arc_from[idx + 1 : idx + 2 * k : 2] = t
    arc_to[idx + 1 : idx + 2 * k : 2] = snk_nodes
    arc_cap[idx + 1 : idx + 2 * k : 2] = 0.0
    idx += 2 * k
    k = len(net.arc_u)
    # symmetric neighbor arcs stored as a mutual forward/reverse pair
    arc_from[idx : idx + 2 * k : 2] = net.arc_u
    arc_to[idx : idx + 2 * k : 2] = net.arc_v
    arc_cap[idx : idx + 2 * k : 2] = net.arc_cap
    arc_from[idx + 1 : idx + 2 * k : 2] = net.arc_v
    arc_to[idx + 1 : idx + 2 * k : 2] = net.arc_u
    arc_cap[idx + 1 : idx + 2 * k : 2] = net.arc_cap
    adj = np.argsort(arc_from, kind="stable").astype(np.int64)
    counts = np.bincount(arc_from, minlength=n)
    head = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=head[1:])
    flow = _dinic(n, s, t, head, adj, arc_to, arc_cap)
    seen = _reachable(n, s, head, adj, arc_to, arc_cap)
    return float(pre.sum()) + float(flow), seen[:nn].astype(bool)


def _neighbor_arcs(data, lambda_pair, sigma):
    """6-neighborhood arc table with intensity-modulated capacities."""
    nx, ny, nz = data.shape
    n = nx * ny * nz
    lin = np.arange(n).reshape((nx, ny, nz), order="F")
    img = data.astype(np.float64)
    eu, ev, w = [], [], []
    for ax in range(3):
        if data.shape[ax] < 2:
            continue
        sl_a = [slice(None)] * 3
        sl_b = [slice(None)] * 3
        sl_a[ax] = slice(0, -1)
        sl_b[ax] = slice(1, None)
        ia = lin[tuple(sl_a)].ravel(order="F")
        ib = lin[tuple(sl_b)].ravel(order="F")
        di = (img[tuple(sl_a)] - img[tuple(sl_b)]).ravel(order="F")
        eu.append(ia)
        ev.append(ib)
        w.append(lambda_pair * np.exp(-(di**2) / (2.0 * sigma * sigma)))
    if not eu:
        return (
            np.zeros(0, dtype=np.int32),
            np.zeros(0, dtype=np.int32),
            np.zeros(0, dtype=np.float64),
        )
    return (
        np.concatenate(eu).astype(np.int32),
        np.concatenate(ev).astype(np.int32),
        np.concatenate(w),
    )


def build_energy(
    unary, v: Volume, s: ScribbleMask | None, p: EnergyParams
) -> FlowNetwork:
    """Assemble the voxel-grid flow network for the given unary costs.

    unary is the (cost_bg, cost_fg) pair; scribbled voxels get their
    terminal capacities replaced by the hard sentinel so no finite cut can
    relabel them.
    """
    cost_bg, cost_fg = unary
    if cost_bg.shape != v.dims or cost_fg.shape != v.dims:
        raise DimMismatch(f"unary dims {cost_bg.shape} vs volume {v.dims}")
    if s is not None and s.dims != v.dims:
        raise DimMismatch(f"scribble dims {s.dims} vs volume {v.dims}")
    sigma = p.sigma_int if p.sigma_int is not None else robust_std(v.data)
    if sigma <= 0:
        sigma = 1.0  # constant image: capacity reduces to lambda_pair anyway
    cap_source = cost_bg.astype(np.float64).ravel(order="F").copy()
    cap_sink = cost_fg.astype(np.float64).ravel(order="F").copy()
    if s is not None:
        fg = s.foreground.ravel(order="F")
        bg = s.background.ravel(order="F")
        cap_source[fg] = p.hard_cap
        cap_sink[fg] = 0.0
        cap_source[bg] = 0.0
        cap_sink[bg] = p.hard_cap
    eu, ev, w = _neighbor_arcs(v.data, p.lambda_pair, sigma)
    n = int(np.prod(v.dims))
    return FlowNetwork(n, cap_source, cap_sink, eu, ev, w)


def _solve_to_mask(net: FlowNetwork, dims) -> LabelMask:
    _, side = max_flow(net)
    return LabelMask(side.reshape(dims, order="F").astype(np.uint8))


def segment_scribbles(
    v: Volume,
    s: ScribbleMask,
    p: EnergyParams | None = None,
    bins: int = DEFAULT_BINS,
) -> LabelMask:
    """Scribble-only pipeline: intensity likelihood then graph-cut refine."""
    p = p or EnergyParams()
    model = fit_from_scribbles(v, s, bins)
    net = build_energy(unary_costs(model, v), v, s, p)
    return _solve_to_mask(net, v.dims)


def refine_prediction(
    prob, v: Volume, s: ScribbleMask | None, p: EnergyParams | None = None
) -> LabelMask:
    """Refine a probabilistic prediction with scribbles and smoothness.

    Unaries are negative logs of the clamped probabilities (floor 1e-4);
    everything after that is the scribble pipeline's energy and solve.
    """
    p = p or EnergyParams()
    pr = prob.data if isinstance(prob, Volume) else np.asarray(prob)
    if pr.shape != v.dims:
        raise DimMismatch(f"probability dims {pr.shape} vs volume {v.dims}")
    if pr.size and (pr.min() < 0.0 or pr.max() > 1.0):
        raise BadProbability(f"values in [{pr.min()}, {pr.max()}]")
    pf = np.clip(pr.astype(np.float64), PROB_FLOOR, 1.0 - PROB_FLOOR)
    cost_fg = -np.log(pf)
    cost_bg = -np.log(1.0 - pf)
    net = build_energy((cost_bg, cost_fg), v, s, p)
    return _solve_to_mask(net, v.dims)
