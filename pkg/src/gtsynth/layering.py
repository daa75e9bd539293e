"""Layer assignment, hyper-chain restructuring, and per-layer channels.

Layer 0 is the bottom (initially the observed nodes); the layer of a node is
its graph distance to the nearest observed node. Synthesis runs top-down: the
vector at layer l is produced from layer l+1 through a linear channel with
one parent per node and independent Gaussian noise.

A layering is usable for synthesis only as a hyper-chain: no intra-layer
edges below the top layer, and every non-top node has exactly one neighbor at
the layer above (the top layer itself may be a chain). Trees where two
adjacent nodes share a layer below the top are restructured by moving the
member farther from the top set into a freshly inserted layer, which may
leave observed nodes at layers above 0; trees where a node keeps two or more
upper neighbors cannot form a hyper-chain and are rejected.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .tree import GaussianTree

__all__ = [
    "LayeredTree",
    "LayerChannel",
    "HyperChainViolation",
    "assign_layers",
    "restructure",
    "build_layer_channel",
]

_MAX_RESTRUCTURE_ROUNDS = 10_000


class HyperChainViolation(ValueError):
    """The tree cannot be layered into a hyper-chain."""


@dataclass(frozen=True, eq=False)
class LayeredTree:
    layer_of: dict[str, int]
    layers: tuple[tuple[str, ...], ...]  # index 0 = bottom
    parent_of: dict[str, str]  # next-layer-up neighbor; absent for top nodes
    top_layer: int

    def latents_at(self, tree: GaussianTree, l: int) -> tuple[str, ...]:
        """Latent ids at layer l, sorted lexicographically (sign order)."""
        return tuple(v for v in sorted(self.layers[l]) if tree.is_latent(v))


@dataclass(frozen=True, eq=False)
class LayerChannel:
    """Linear channel producing layer l from layer l+1 (Y_l = A Y_{l+1} + Z)."""

    node_order: tuple[str, ...]  # layer-l nodes, sorted
    parent_order: tuple[str, ...]  # layer-(l+1) nodes, sorted
    transition: np.ndarray  # (len(node_order), len(parent_order)), 1 nonzero/row
    noise_variances: np.ndarray  # 1 - rho_parent^2 per output node


def _distances_from(tree: GaussianTree, sources) -> dict[str, int]:
    adj = tree.adjacency()
    dist = {s: 0 for s in sources}
    queue = deque(sorted(sources))
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _layers_from_map(layer_of: dict[str, int]) -> tuple[tuple[str, ...], ...]:
    top = max(layer_of.values())
    out = [[] for _ in range(top + 1)]
    for v, l in layer_of.items():
        out[l].append(v)
    return tuple(tuple(sorted(layer)) for layer in out)


def _conflicts_below_top(tree: GaussianTree, layer_of: dict[str, int]) -> list[tuple[str, str]]:
    top = max(layer_of.values())
    pairs = []
    for e in tree.edges:
        if layer_of[e.a] == layer_of[e.b] and layer_of[e.a] < top:
            pairs.append(tuple(sorted((e.a, e.b))))
    return sorted(pairs, key=lambda p: (-layer_of[p[0]], p))


def _build_layered(tree: GaussianTree, layer_of: dict[str, int]) -> LayeredTree:
    """Construct a LayeredTree, checking every hyper-chain invariant."""
    adj = tree.adjacency()
    top = max(layer_of.values())
    parent_of: dict[str, str] = {}
    for v, l in layer_of.items():
        uppers = [u for u in adj[v] if layer_of[u] == l + 1]
        if l == top:
            continue
        if len(uppers) != 1:
            raise HyperChainViolation(
                f"node {v} has {len(uppers)} neighbors at the layer above; "
                "hyper-chain structure requires exactly one"
            )
        parent_of[v] = uppers[0]
    for e in tree.edges:
        la, lb = layer_of[e.a], layer_of[e.b]
        if la == lb and la == top:
            continue  # top-layer intra-set edge, handled by the exact sampler
        if abs(la - lb) != 1:
            raise HyperChainViolation(
                f"edge {e.a}-{e.b} spans layers {la} and {lb}; "
                "every edge must be a parent link or a top-layer intra-set edge"
            )
    return LayeredTree(dict(layer_of), _layers_from_map(layer_of), parent_of, top)


def assign_layers(tree: GaussianTree):
    """Layer nodes by distance to the observed set.

    Returns a LayeredTree, or the list of adjacent same-layer (below-top)
    pairs when the no-intra-layer-edge invariant fails; such trees go through
    restructure(). Raises HyperChainViolation when layers are conflict-free
    but some node has several upper neighbors (no hyper-chain exists).
    """
    layer_of = _distances_from(tree, tree.observed_ids)
    conflicts = _conflicts_below_top(tree, layer_of)
    if conflicts:
        return conflicts
    return _build_layered(tree, layer_of)


def restructure(tree: GaussianTree) -> LayeredTree:
    """Relayer the tree into hyper-chain form.

    The top set is fixed as the nodes at maximal distance from the observed
    layer; every node is then layered by its distance to that set, which
    resolves each adjacent same-layer pair by moving the member farther from
    the top (together with everything below it) into a newly inserted layer.
    Remaining ties (members equidistant from the top) are resolved by moving
    the lexicographically larger node. Raises HyperChainViolation when the
    result cannot satisfy the hyper-chain invariants.
    """
    dist_obs = _distances_from(tree, tree.observed_ids)
    top_set = {v for v, d in dist_obs.items() if d == max(dist_obs.values())}
    depth = _distances_from(tree, top_set)
    adj = tree.adjacency()

    def toward_top(v: str) -> str | None:
        ups = [u for u in adj[v] if depth[u] == depth[v] - 1]
        return min(ups) if ups else None

    def subtree(v: str) -> set[str]:
        # nodes whose path to the top set passes through v
        members = {v}
        queue = deque([v])
        while queue:
            u = queue.popleft()
            for w in adj[u]:
                if w not in members and depth[w] == depth[u] + 1 and toward_top(w) == u:
                    members.add(w)
                    queue.append(w)
        return members

    for _ in range(_MAX_RESTRUCTURE_ROUNDS):
        deepest = max(depth.values())
        layer_of = {v: deepest - d for v, d in depth.items()}
        conflicts = _conflicts_below_top(tree, layer_of)
        if not conflicts:
            return _build_layered(tree, layer_of)
        u, v = conflicts[0]
        if depth[u] != depth[v]:  # pragma: no cover - equal layer implies equal depth
            mover = u if depth[u] > depth[v] else v
        else:
            mover = max(u, v)
        for w in subtree(mover):
            depth[w] += 1
    raise HyperChainViolation("restructuring did not converge")


def build_layer_channel(lt: LayeredTree, tree: GaussianTree, l: int) -> LayerChannel:
    """Transition matrix and noise variances for the layer l+1 -> l channel.

    Row v carries the base (reference-signed) rho of v's parent edge; sign
    factors from the layer sign vectors are applied at synthesis time. The
    noise variance 1 - rho^2 restores unit variance at each output.
    """
    if not 0 <= l < lt.top_layer:
        raise ValueError(f"layer index {l} out of range [0, {lt.top_layer})")
    node_order = tuple(sorted(lt.layers[l]))
    parent_order = tuple(sorted(lt.layers[l + 1]))
    pos = {v: j for j, v in enumerate(parent_order)}
    a = np.zeros((len(node_order), len(parent_order)))
    noise = np.empty(len(node_order))
    for i, v in enumerate(node_order):
        parent = lt.parent_of[v]
        rho = tree.rho(parent, v)
        a[i, pos[parent]] = rho
        noise[i] = 1.0 - rho * rho
    return LayerChannel(node_order, parent_order, a, noise)
