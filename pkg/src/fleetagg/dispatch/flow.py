"""Max-flow on real-valued capacities, with optional arc lower bounds.

Dinic's algorithm (level graph plus blocking flows) over an array-based
residual graph.  Lower bounds are removed by the usual excess-node
transformation, so a feasible flow exists iff an auxiliary max-flow
saturates every excess arc.
"""

from __future__ import annotations

from collections import deque

import numpy as np


class FlowNetwork:
    """Directed network; every arc has ``lower <= flow <= capacity`` and an optional cost."""

    def __init__(self, num_nodes: int):
        self.num_nodes = num_nodes
        self.tails: list[int] = []
        self.heads: list[int] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.cost: list[float] = []
        self.flow: np.ndarray | None = None

    def add_arc(self, tail: int, head: int, capacity: float, lower: float = 0.0, cost: float = 0.0) -> int:
        if not 0 <= lower <= capacity:
            raise ValueError(f"arc {tail}->{head}: need 0 <= lower ({lower}) <= capacity ({capacity})")
        self.tails.append(tail)
        self.heads.append(head)
        self.lower.append(float(lower))
        self.upper.append(float(capacity))
        self.cost.append(float(cost))
        return len(self.tails) - 1

    @property
    def num_arcs(self) -> int:
        return len(self.tails)

    def conservation_error(self, source: int | None = None, sink: int | None = None) -> float:
        """Largest flow imbalance over nodes other than ``source`` and ``sink``."""
        bal = np.zeros(self.num_nodes)
        np.add.at(bal, self.heads, self.flow)
        np.subtract.at(bal, self.tails, self.flow)
        mask = np.ones(self.num_nodes, dtype=bool)
        for v in (source, sink):
            if v is not None:
                mask[v] = False
        return float(np.abs(bal[mask]).max(initial=0.0))

    def max_flow(self, source: int, sink: int, eps: float = 0.0) -> float:
        """Maximum ``source -> sink`` flow ignoring lower bounds; arc flows land in ``self.flow``."""
        solver = _Dinic(self.num_nodes, eps)
        ids = [solver.add(u, v, c) for u, v, c in zip(self.tails, self.heads, self.upper)]
        value = solver.run(source, sink)
        self.flow = np.array([solver.flow_on(i) for i in ids])
        self._residual = solver
        return value

    def source_side(self, source: int) -> np.ndarray:
        """Nodes reachable from ``source`` in the residual graph of the last solve."""
        return self._residual.reachable(source)

    def feasible_flow(self, source: int, sink: int, eps: float = 0.0, slack: float | None = None) -> tuple[bool, float]:
        """Find a ``source -> sink`` flow meeting all lower bounds.

        Returns ``(feasible, shortfall)`` where ``shortfall`` is the excess that
        could not be routed; up to ``slack`` (default ``eps``) is tolerated.
        On success ``self.flow`` holds a valid flow.
        """
        n = self.num_nodes
        super_s, super_t = n, n + 1
        solver = _Dinic(n + 2, eps)
        excess = np.zeros(n)
        ids = []
        for u, v, lo, up in zip(self.tails, self.heads, self.lower, self.upper):
            ids.append(solver.add(u, v, up - lo))
            excess[v] += lo
            excess[u] -= lo
        solver.add(sink, source, np.inf)
        need = 0.0
        for v in range(n):
            if excess[v] > 0:
                solver.add(super_s, v, excess[v])
                need += excess[v]
            elif excess[v] < 0:
                solver.add(v, super_t, -excess[v])
        routed = solver.run(super_s, super_t)
        self.flow = np.array([lo + solver.flow_on(i) for i, lo in zip(ids, self.lower)])
        self._residual = solver
        shortfall = max(need - routed, 0.0)
        return shortfall <= (eps if slack is None else slack), shortfall


class _Dinic:
    def __init__(self, n: int, eps: float):
        self.n = n
        self.eps = eps
        self.to: list[int] = []
        self.cap: list[float] = []
        self.orig: list[float] = []
        self.adj: list[list[int]] = [[] for _ in range(n)]

    def add(self, u: int, v: int, c: float) -> int:
        e = len(self.to)
        self.to += [v, u]
        self.cap += [c, 0.0]
        self.orig += [c, 0.0]
        self.adj[u].append(e)
        self.adj[v].append(e + 1)
        return e

    def flow_on(self, e: int) -> float:
        return self.orig[e] - self.cap[e]

    def _levels(self, s: int, t: int) -> list[int] | None:
        level = [-1] * self.n
        level[s] = 0
        queue = deque([s])
        to, cap, adj, eps = self.to, self.cap, self.adj, self.eps
        while queue:
            u = queue.popleft()
            for e in adj[u]:
                v = to[e]
                if level[v] < 0 and cap[e] > eps:
                    level[v] = level[u] + 1
                    queue.append(v)
        return level if level[t] >= 0 else None

    def _blocking(self, s: int, t: int, level: list[int]) -> float:
        to, cap, adj, eps = self.to, self.cap, self.adj, self.eps
        ptr = [0] * self.n
        total = 0.0
        while True:
            # iterative DFS for one augmenting path in the level graph
            path: list[int] = []
            u = s
            while u != t:
                edges = adj[u]
                while ptr[u] < len(edges):
                    e = edges[ptr[u]]
                    v = to[e]
                    if cap[e] > eps and level[v] == level[u] + 1:
                        break
                    ptr[u] += 1
                if ptr[u] == len(edges):
                    if u == s:
                        return total
                    level[u] = -1  # dead end
                    e = path.pop()
                    u = to[e ^ 1]
                    ptr[u] += 1
                    continue
                path.append(edges[ptr[u]])
                u = to[edges[ptr[u]]]
            push = min(cap[e] for e in path)
            for e in path:
                cap[e] -= push
                cap[e ^ 1] += push
            total += push

    def run(self, s: int, t: int) -> float:
        total = 0.0
        while True:
            level = self._levels(s, t)
            if level is None:
                return total
            pushed = self._blocking(s, t, level)
            if pushed <= self.eps:
                return total
            total += pushed

    def reachable(self, s: int) -> np.ndarray:
        seen = np.zeros(self.n, dtype=bool)
        seen[s] = True
        stack = [s]
        while stack:
            u = stack.pop()
            for e in self.adj[u]:
                v = self.to[e]
                if not seen[v] and self.cap[e] > self.eps:
                    seen[v] = True
                    stack.append(v)
        return seen
