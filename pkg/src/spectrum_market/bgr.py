"""Bipartite tie-resolution graphs and leaf-elimination decoding.

A user whose best response ties across several providers cannot fix its
own demand split in isolation; only market clearing pins the split down.
This module represents the tied part of the market as a bipartite graph:
circles (user nodes) for tied users, squares (provider nodes) for the
providers they tie over, and one edge per (user, provider) tie.

Each node carries a check-sum.  A user node carries P_i, the effective
resource the user must end up with; a provider node carries S_j, the
supply left after decided users are served.  When the graph is loop-free
(which holds with probability one for continuously distributed offsets)
it is a forest, and the demands on the edges are determined uniquely by
peeling leaves:

* a provider leaf forces q_ij = S_j on its only edge,
* a user leaf forces q_ij = P_i / c_ij,

after which both endpoint check-sums are reduced and the edge removed.
The result does not depend on the peeling order.  The default order is
deterministic (lowest node index first, providers before users at equal
index) so repeated runs are bitwise reproducible; a randomized order can
be requested to exercise the order-invariance property.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    ChecksumMismatchError,
    InvalidParameterError,
    LoopDetectedError,
    NegativeChecksumError,
    NegativeDemandError,
)

# Demands computed in [-NEG_TOL, 0) clamp to zero; anything lower errors.
NEG_TOL = 1e-8
# Relative tolerance for the final-edge consistency check P_i = S_j * c_ij.
TERMINAL_RTOL = 1e-8

USER = "u"
PROVIDER = "p"


@dataclass
class Bgr:
    """Bipartite graph of tied users with node check-sums.

    ``P`` maps user index to its effective-resource check-sum, ``S`` maps
    provider index to its residual-supply check-sum, ``c_view`` maps each
    edge to the channel offset on it.  Values are treated as immutable;
    decoding works on copies.
    """

    user_nodes: tuple[int, ...]
    provider_nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    P: dict[int, float]
    S: dict[int, float]
    c_view: dict[tuple[int, int], float]

    @property
    def edge_count(self) -> int:
        return len(self.edges)


def build_bgr(
    instance,
    preference_sets: Sequence[Iterable[int]],
    x_star: np.ndarray,
    decided_demands: np.ndarray,
) -> Bgr:
    """Assemble the graph of undecided users from preference sets.

    A user enters the graph when its preference set has more than one
    member and it purchases a positive amount (zero purchasers are
    treated as decided).  Provider check-sums are the supplies minus the
    demand already fixed for decided users; a provider oversubscribed by
    decided demand alone signals inconsistent inputs.
    """
    x_star = np.asarray(x_star, dtype=float)
    decided = np.asarray(decided_demands, dtype=float)
    if decided.shape != (instance.I, instance.J):
        raise InvalidParameterError("decided_demands must be an I x J matrix")

    users = []
    edges = []
    for i, pref in enumerate(preference_sets):
        members = tuple(sorted(int(j) for j in pref))
        if len(members) > 1 and x_star[i] > 0.0:
            users.append(i)
            edges.extend((i, j) for j in members)

    providers = sorted({j for _, j in edges})
    residual = instance.Q - decided.sum(axis=0)
    for j in providers:
        if residual[j] < -NEG_TOL * max(1.0, instance.Q[j]):
            raise NegativeChecksumError(
                f"decided demand exceeds supply of provider {j} by {-residual[j]:.3e}"
            )

    return Bgr(
        user_nodes=tuple(users),
        provider_nodes=tuple(providers),
        edges=tuple(edges),
        P={i: float(x_star[i]) for i in users},
        S={j: float(residual[j]) for j in providers},
        c_view={(i, j): float(instance.c[i, j]) for i, j in edges},
    )


def _adjacency(bgr: Bgr) -> dict[tuple[str, int], set[tuple[str, int]]]:
    adj: dict[tuple[str, int], set[tuple[str, int]]] = {}
    for i in bgr.user_nodes:
        adj[(USER, i)] = set()
    for j in bgr.provider_nodes:
        adj[(PROVIDER, j)] = set()
    for i, j in bgr.edges:
        adj[(USER, i)].add((PROVIDER, j))
        adj[(PROVIDER, j)].add((USER, i))
    return adj


def detect_loop(bgr: Bgr) -> Optional[list[tuple[str, int]]]:
    """Return a cycle as an alternating node sequence, or None.

    Depth-first search with parent tracking over every component; a
    non-tree edge closes a cycle through the lowest common ancestor of
    its endpoints.
    """
    adj = _adjacency(bgr)
    visited: set[tuple[str, int]] = set()
    parent: dict[tuple[str, int], Optional[tuple[str, int]]] = {}

    def ancestors(node):
        chain = []
        while node is not None:
            chain.append(node)
            node = parent[node]
        return chain

    for start in adj:
        if start in visited:
            continue
        parent[start] = None
        visited.add(start)
        stack = [start]
        while stack:
            node = stack.pop()
            for nbr in adj[node]:
                if nbr not in visited:
                    visited.add(nbr)
                    parent[nbr] = node
                    stack.append(nbr)
                elif parent[node] != nbr:
                    # non-tree edge between two reached nodes: cycle
                    up_node = ancestors(node)
                    on_node_path = set(up_node)
                    up_nbr = ancestors(nbr)
                    k = next(idx for idx, n in enumerate(up_nbr) if n in on_node_path)
                    lca = up_nbr[k]
                    return up_node[: up_node.index(lca) + 1] + up_nbr[:k][::-1]
    return None


def bgr_decode(
    bgr: Bgr,
    rng: Optional[np.random.Generator] = None,
    neg_tol: float = NEG_TOL,
) -> dict[tuple[int, int], float]:
    """Peel leaves until no edges remain; returns demand per edge.

    Requires a loop-free graph.  When ``rng`` is given, the leaf handled
    at each step is drawn uniformly from the current leaves instead of
    following the deterministic policy; the decoded demands are the same
    either way (up to rounding noise well below 1e-12).
    """
    cycle = detect_loop(bgr)
    if cycle is not None:
        raise LoopDetectedError("tie-resolution graph contains a loop", cycle=cycle)

    adj = _adjacency(bgr)
    P = dict(bgr.P)
    S = dict(bgr.S)
    demands: dict[tuple[int, int], float] = {}
    remaining = len(bgr.edges)

    def leaf_key(node):
        kind, idx = node
        return (idx, 0 if kind == PROVIDER else 1)

    while remaining:
        leaves = [n for n, nbrs in adj.items() if len(nbrs) == 1]
        if not leaves:
            raise LoopDetectedError("no leaf found; graph is not a forest")
        if rng is None:
            leaf = min(leaves, key=leaf_key)
        else:
            leaf = leaves[int(rng.integers(len(leaves)))]
        other = next(iter(adj[leaf]))
        kind, idx = leaf
        if kind == USER:
            i, j = idx, other[1]
        else:
            i, j = other[1], idx
        cij = bgr.c_view[(i, j)]

        if len(adj[other]) == 1:
            # final edge of its component: both check-sums must agree
            if abs(P[i] - S[j] * cij) > TERMINAL_RTOL * max(1.0, abs(P[i])):
                raise ChecksumMismatchError(
                    f"final edge ({i}, {j}) check-sums disagree: "
                    f"P={P[i]:.12e} vs S*c={S[j] * cij:.12e}"
                )

        q = P[i] / cij if kind == USER else S[j]
        if q < -neg_tol:
            raise NegativeDemandError(
                f"edge ({i}, {j}) decoded to negative demand {q:.3e}"
            )
        q = max(q, 0.0)
        demands[(i, j)] = q
        P[i] -= q * cij
        S[j] -= q
        adj[leaf].remove(other)
        adj[other].remove(leaf)
        remaining -= 1

    return demands


def count_undecided(preference_sets: Sequence[Iterable[int]], J: int) -> tuple[int, bool]:
    """Number of users with a non-singleton preference set, and the J bound.

    The bound (count strictly below J) holds whenever the tie graph is
    loop-free, so it should never fail on solved random instances.
    """
    count = sum(1 for pref in preference_sets if len(tuple(pref)) > 1)
    return count, count < J


def bgr_to_dot(bgr: Bgr, demands: Optional[Mapping[tuple[int, int], float]] = None) -> str:
    """Render the graph in DOT format, edges annotated with decoded demand."""
    lines = ["graph bgr {"]
    for i in bgr.user_nodes:
        lines.append(f'  u{i} [shape=circle label="u{i}\\nP={bgr.P[i]:.6g}"];')
    for j in bgr.provider_nodes:
        lines.append(f'  p{j} [shape=box label="p{j}\\nS={bgr.S[j]:.6g}"];')
    for i, j in bgr.edges:
        if demands is not None and (i, j) in demands:
            lines.append(f'  u{i} -- p{j} [label="q={demands[(i, j)]:.6g}"];')
        else:
            lines.append(f"  u{i} -- p{j};")
    lines.append("}")
    return "\n".join(lines) + "\n"
