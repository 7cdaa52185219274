"""Two-terminal max-flow / min-cut.

The solver is the dual search-tree augmenting-path algorithm used for
vision energies (Boykov-Kolmogorov): a source tree and a sink tree grow
until they touch, the connecting path is saturated, and orphaned nodes are
re-attached or released. Capacities are integers so the flow is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

# parent codes; arc indices are >= 0
_NONE = -1
_TERMINAL = -2
_ORPHAN = -3
_INF_DIST = 1 << 60

# capacity used for hard constraint arcs
LARGE = 1 << 40


@dataclass
class FlowGraph:
    """Directed graph with distinguished source and sink nodes.

    Each arc is stored with its paired reverse capacity, so ``add_arc(u, v,
    3, 0)`` is a one-way arc and ``add_arc(u, v, 2, 2)`` an undirected edge.
    """

    node_count: int
    source: int = 0
    sink: int = 1
    arcs: list[tuple[int, int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.node_count < 2:
            raise ValueError("a flow graph needs at least the two terminals")
        if self.source == self.sink:
            raise ValueError("source and sink must differ")
        for t in (self.source, self.sink):
            if not 0 <= t < self.node_count:
                raise ValueError(f"terminal {t} out of range")

    def add_arc(self, u: int, v: int, cap: int, rev_cap: int = 0) -> None:
        if not (0 <= u < self.node_count and 0 <= v < self.node_count):
            raise ValueError(f"arc ({u}, {v}) references a missing node")
        if cap < 0 or rev_cap < 0:
            raise ValueError("capacities must be non-negative")
        self.arcs.append((int(u), int(v), int(cap), int(rev_cap)))

    def cut_capacity(self, source_side) -> int:
        """Total capacity of arcs leaving ``source_side``."""
        s = set(source_side)
        total = 0
        for u, v, c, r in self.arcs:
            if u in s and v not in s:
                total += c
            elif v in s and u not in s:
                total += r
        return total


def max_flow(g: FlowGraph) -> tuple[int, frozenset[int]]:
    """Return the maximum flow value and the source side of a minimum cut."""
    s, t = g.source, g.sink
    inner = [v for v in range(g.node_count) if v not in (s, t)]
    index = {v: k for k, v in enumerate(inner)}
    n = len(inner)
    tr_source = np.zeros(n, dtype=np.int64)
    tr_sink = np.zeros(n, dtype=np.int64)
    eu, ev, ec, er = [], [], [], []
    constant = 0
    for u, v, c, r in g.arcs:
        if u == v:
            continue
        # arcs into the source or out of the sink never carry useful flow
        if u == s and v == t:
            constant += c
        elif u == t and v == s:
            constant += r
        elif u == s:
            tr_source[index[v]] += c
        elif v == s:
            tr_source[index[u]] += r
        elif v == t:
            tr_sink[index[u]] += c
        elif u == t:
            tr_sink[index[v]] += r
        else:
            eu.append(index[u])
            ev.append(index[v])
            ec.append(c)
            er.append(r)
    solver = GridFlow(n)
    solver.set_terminals(tr_source, tr_sink)
    solver.set_edges(np.array(eu, np.int64), np.array(ev, np.int64), np.array(ec, np.int64), np.array(er, np.int64))
    flow = solver.solve() + constant
    side = solver.source_side()
    cut = frozenset([s] + [inner[k] for k in range(n) if side[k]])
    return int(flow), cut


class GridFlow:
    """Array-backed solver used directly by the expansion moves.

    Nodes are 0..n-1; terminal links are given as source/sink capacity
    vectors and neighbour links as parallel edge arrays.
    """

    def __init__(self, n: int):
        self.n = n
        self._tr_source = np.zeros(n, dtype=np.int64)
        self._tr_sink = np.zeros(n, dtype=np.int64)
        self._edges = (np.zeros(0, np.int64),) * 4
        self._side = None

    def set_terminals(self, source_caps: np.ndarray, sink_caps: np.ndarray) -> None:
        self._tr_source = np.asarray(source_caps, dtype=np.int64).copy()
        self._tr_sink = np.asarray(sink_caps, dtype=np.int64).copy()

    def set_edges(self, u, v, cap, rev_cap) -> None:
        self._edges = tuple(np.asarray(a, dtype=np.int64) for a in (u, v, cap, rev_cap))

    def solve(self) -> int:
        u, v, cap, rev = self._edges
        m = u.size
        tails = np.empty(2 * m, np.int64)
        heads = np.empty(2 * m, np.int64)
        caps = np.empty(2 * m, np.int64)
        tails[0::2], tails[1::2] = u, v
        heads[0::2], heads[1::2] = v, u
        caps[0::2], caps[1::2] = cap, rev
        order = np.argsort(tails, kind="stable")
        inv = np.empty_like(order)
        inv[order] = np.arange(order.size)
        sister = inv[order ^ 1]
        first = np.searchsorted(tails[order], np.arange(self.n + 1)).astype(np.int64)
        flow, side = _bk_maxflow(
            self.n,
            first,
            heads[order].copy(),
            caps[order].copy(),
            sister.astype(np.int64),
            self._tr_source,
            self._tr_sink,
        )
        self._side = side
        return int(flow)

    def source_side(self) -> np.ndarray:
        """Boolean per node: True when the node lies on the source side of the cut."""
        if self._side is None:
            raise RuntimeError("solve() has not been called")
        return self._side


@numba.njit(cache=True)
def _bk_maxflow(n, first, head, cap, sister, tr_source, tr_sink):
    flow = 0
    tr = np.empty(n, np.int64)
    for i in range(n):
        m = min(tr_source[i], tr_sink[i])
        flow += m
        tr[i] = tr_source[i] - tr_sink[i]

    parent = np.full(n, _NONE, np.int64)
    is_sink = np.zeros(n, np.bool_)
    ts = np.zeros(n, np.int64)
    dist = np.zeros(n, np.int64)

    # FIFO of active nodes
    queue = np.empty(n + 1, np.int64)
    in_queue = np.zeros(n, np.bool_)
    qhead = 0
    qtail = 0
    qcap = n + 1

    orphans = np.empty(n, np.int64)
    n_orph = 0
    orph_pos = 0

    for i in range(n):
        if tr[i] != 0:
            parent[i] = _TERMINAL
            is_sink[i] = tr[i] < 0
            dist[i] = 1
            queue[qtail] = i
            qtail = (qtail + 1) % qcap
            in_queue[i] = True

    time = 0
    current = -1
    while True:
        # pick an active node
        if current >= 0 and parent[current] != _NONE:
            i = current
        else:
            current = -1
            i = -1
            while qhead != qtail:
                j = queue[qhead]
                qhead = (qhead + 1) % qcap
                in_queue[j] = False
                if parent[j] != _NONE:
                    i = j
                    break
            if i < 0:
                break

        # grow the tree of i; look for an arc joining the two trees
        mid = -1
        if not is_sink[i]:
            for a in range(first[i], first[i + 1]):
                if cap[a] > 0:
                    j = head[a]
                    if parent[j] == _NONE:
                        is_sink[j] = False
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_queue[j]:
                            queue[qtail] = j
                            qtail = (qtail + 1) % qcap
                            in_queue[j] = True
                    elif is_sink[j]:
                        mid = a
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
        else:
            for a in range(first[i], first[i + 1]):
                if cap[sister[a]] > 0:
                    j = head[a]
                    if parent[j] == _NONE:
                        is_sink[j] = True
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_queue[j]:
                            queue[qtail] = j
                            qtail = (qtail + 1) % qcap
                            in_queue[j] = True
                    elif not is_sink[j]:
                        mid = sister[a]
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1

        time += 1
        if mid < 0:
            current = -1
            continue
        current = i

        # --- augment along source-root ... tail(mid) -> head(mid) ... sink-root
        src_node = head[sister[mid]]
        snk_node = head[mid]
        bottleneck = cap[mid]
        j = src_node
        while parent[j] != _TERMINAL:
            a = parent[j]
            if cap[sister[a]] < bottleneck:
                bottleneck = cap[sister[a]]
            j = head[a]
        if tr[j] < bottleneck:
            bottleneck = tr[j]
        j = snk_node
        while parent[j] != _TERMINAL:
            a = parent[j]
            if cap[a] < bottleneck:
                bottleneck = cap[a]
            j = head[a]
        if -tr[j] < bottleneck:
            bottleneck = -tr[j]

        cap[mid] -= bottleneck
        cap[sister[mid]] += bottleneck
        n_orph = 0
        orph_pos = 0
        j = src_node
        while parent[j] != _TERMINAL:
            a = parent[j]
            cap[a] += bottleneck
            cap[sister[a]] -= bottleneck
            if cap[sister[a]] == 0:
                parent[j] = _ORPHAN
                orphans[n_orph] = j
                n_orph += 1
            j = head[a]
        tr[j] -= bottleneck
        if tr[j] == 0:
            parent[j] = _ORPHAN
            orphans[n_orph] = j
            n_orph += 1
        j = snk_node
        while parent[j] != _TERMINAL:
            a = parent[j]
            cap[sister[a]] += bottleneck
            cap[a] -= bottleneck
            if cap[a] == 0:
                parent[j] = _ORPHAN
                orphans[n_orph] = j
                n_orph += 1
            j = head[a]
        tr[j] += bottleneck
        if tr[j] == 0:
            parent[j] = _ORPHAN
            orphans[n_orph] = j
            n_orph += 1
        flow += bottleneck

        # --- adopt orphans
        time += 1
        while orph_pos < n_orph:
            i2 = orphans[orph_pos]
            orph_pos += 1
            sink_tree = is_sink[i2]
            best_a = -1
            best_d = _INF_DIST
            for a in range(first[i2], first[i2 + 1]):
                residual = cap[a] if sink_tree else cap[sister[a]]
                if residual <= 0:
                    continue
                j = head[a]
                if is_sink[j] != sink_tree or parent[j] == _NONE:
                    continue
                # distance from j to its root, or invalid if it hangs off an orphan
                d = 0
                k = j
                while True:
                    if ts[k] == time:
                        d += dist[k]
                        break
                    pa = parent[k]
                    d += 1
                    if pa == _TERMINAL:
                        ts[k] = time
                        dist[k] = 1
                        break
                    if pa == _ORPHAN:
                        d = _INF_DIST
                        break
                    k = head[pa]
                if d < _INF_DIST:
                    if d < best_d:
                        best_a = a
                        best_d = d
                    k = j
                    while ts[k] != time:
                        ts[k] = time
                        dist[k] = d
                        d -= 1
                        k = head[parent[k]]
            if best_a >= 0:
                parent[i2] = best_a
                ts[i2] = time
                dist[i2] = best_d + 1
            else:
                for a in range(first[i2], first[i2 + 1]):
                    j = head[a]
                    if is_sink[j] != sink_tree or parent[j] == _NONE:
                        continue
                    residual = cap[a] if sink_tree else cap[sister[a]]
                    if residual > 0 and not in_queue[j]:
                        queue[qtail] = j
                        qtail = (qtail + 1) % qcap
                        in_queue[j] = True
                    pa = parent[j]
                    if pa >= 0 and head[pa] == i2:
                        parent[j] = _ORPHAN
                        if n_orph >= orphans.size:
                            grown = np.empty(2 * orphans.size + 1, np.int64)
                            grown[:n_orph] = orphans[:n_orph]
                            orphans = grown
                        orphans[n_orph] = j
                        n_orph += 1
                parent[i2] = _NONE

    side = np.zeros(n, np.bool_)
    for i in range(n):
        side[i] = parent[i] != _NONE and not is_sink[i]
    return flow, side
