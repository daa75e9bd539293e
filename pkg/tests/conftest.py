"""Shared fixtures: the named trees used across the suite."""

from __future__ import annotations

import json

import pytest

from gtsynth.tree import Edge, GaussianTree, Node


def make_tree(nodes, edges) -> GaussianTree:
    built_nodes = tuple(
        Node(nid, kind, pi) for nid, kind, pi in nodes
    )
    built_edges = tuple(Edge(a, b, rho) for a, b, rho in edges)
    return GaussianTree(built_nodes, built_edges)


def tree_doc(tree: GaussianTree) -> str:
    doc = {
        "nodes": [
            {"id": n.id, "kind": n.kind, **({"pi": n.pi} if n.pi is not None else {})}
            for n in tree.nodes
        ],
        "edges": [{"a": e.a, "b": e.b, "rho": e.rho} for e in tree.edges],
    }
    return json.dumps(doc)


@pytest.fixture
def star_tree() -> GaussianTree:
    """Three observed leaves on one hidden node (rhos 0.6, 0.5, 0.8)."""
    return make_tree(
        [("x1", "observed", None), ("x2", "observed", None), ("x3", "observed", None),
         ("y1", "latent", 0.5)],
        [("y1", "x1", 0.6), ("y1", "x2", 0.5), ("y1", "x3", 0.8)],
    )


@pytest.fixture
def chain_tree() -> GaussianTree:
    """x1 - y1 - y2 - x2 with rhos (0.9, 0.5, 0.8); not minimal, used for
    covariance arithmetic only."""
    return make_tree(
        [("x1", "observed", None), ("x2", "observed", None),
         ("y1", "latent", 0.5), ("y2", "latent", 0.5)],
        [("x1", "y1", 0.9), ("y1", "y2", 0.5), ("y2", "x2", 0.8)],
    )


@pytest.fixture
def dumbbell_tree() -> GaussianTree:
    """Two hidden nodes, two observed leaves each, latent-latent bridge."""
    return make_tree(
        [("x1", "observed", None), ("x2", "observed", None),
         ("x3", "observed", None), ("x4", "observed", None),
         ("y1", "latent", 0.5), ("y2", "latent", 0.5)],
        [("y1", "x1", 0.7), ("y1", "x2", 0.6),
         ("y2", "x3", 0.8), ("y2", "x4", 0.55), ("y1", "y2", 0.5)],
    )


@pytest.fixture
def fig2_tree() -> GaussianTree:
    """Two-layer tree: 4 first-layer latents with observed leaves, 2 top
    latents above them joined by an intra-top edge."""
    nodes = [(f"x{i}", "observed", None) for i in range(1, 9)]
    nodes += [(f"ya{i}", "latent", 0.5) for i in range(1, 5)]
    nodes += [("yb1", "latent", 0.5), ("yb2", "latent", 0.5)]
    edges = [
        ("ya1", "x1", 0.6), ("ya1", "x2", 0.7),
        ("ya2", "x3", 0.5), ("ya2", "x4", 0.8),
        ("ya3", "x5", 0.65), ("ya3", "x6", 0.75),
        ("ya4", "x7", 0.55), ("ya4", "x8", 0.6),
        ("yb1", "ya1", 0.6), ("yb1", "ya2", 0.7),
        ("yb2", "ya3", 0.5), ("yb2", "ya4", 0.8),
        ("yb1", "yb2", 0.45),
    ]
    return make_tree(nodes, edges)


@pytest.fixture
def fig6_tree() -> GaussianTree:
    """Tree with two adjacent first-layer latents: y3-y4 share layer 1, and
    x6, x7 hang below y4, forcing a restructuring step."""
    nodes = [(f"x{i}", "observed", None) for i in range(1, 8)]
    nodes += [(f"y{i}", "latent", 0.5) for i in range(1, 5)]
    nodes += [("ytop", "latent", 0.5)]
    edges = [
        ("y1", "x1", 0.6), ("y1", "x2", 0.7),
        ("y2", "x3", 0.55), ("y2", "x4", 0.8),
        ("y3", "x5", 0.65),
        ("y3", "y4", 0.5),
        ("y4", "x6", 0.7), ("y4", "x7", 0.6),
        ("ytop", "y1", 0.5), ("ytop", "y2", 0.6), ("ytop", "y3", 0.7),
    ]
    return make_tree(nodes, edges)


@pytest.fixture
def two_upper_tree() -> GaussianTree:
    """Caterpillar where the middle latent keeps two upper-layer neighbors
    after restructuring: y1 and y3 sit a layer above ymid with no way to give
    ymid a unique parent."""
    nodes = [(f"x{i}", "observed", None) for i in range(1, 11)]
    nodes += [("ya", "latent", 0.5), ("yb", "latent", 0.5),
              ("yc", "latent", 0.5), ("yd", "latent", 0.5),
              ("y1", "latent", 0.5), ("y3", "latent", 0.5),
              ("ymid", "latent", 0.5)]
    edges = [
        ("ya", "x1", 0.6), ("ya", "x2", 0.6),
        ("yb", "x3", 0.6), ("yb", "x4", 0.6),
        ("yc", "x5", 0.6), ("yc", "x6", 0.6),
        ("yd", "x7", 0.6), ("yd", "x8", 0.6),
        ("ymid", "x9", 0.6), ("ymid", "x10", 0.6),
        ("y1", "ya", 0.5), ("y1", "yb", 0.5),
        ("y3", "yc", 0.5), ("y3", "yd", 0.5),
        ("y1", "ymid", 0.5), ("y3", "ymid", 0.5),
    ]
    return make_tree(nodes, edges)


@pytest.fixture
def star_doc(star_tree) -> str:
    return tree_doc(star_tree)


def random_valid_tree(rng, max_observed=6, max_latent=4) -> GaussianTree:
    """Random minimal latent tree: latent backbone plus observed leaves."""
    k = int(rng.integers(1, max_latent + 1))
    latents = [f"y{i}" for i in range(1, k + 1)]
    edges = []
    for i in range(1, k):
        parent = latents[int(rng.integers(0, i))]
        edges.append((parent, latents[i]))
    degree = {y: 0 for y in latents}
    for a, b in edges:
        degree[a] += 1
        degree[b] += 1
    observed = []
    for y in latents:
        while degree[y] < 3:
            x = f"x{len(observed) + 1}"
            observed.append(x)
            edges.append((y, x))
            degree[y] += 1
    while len(observed) < 3:
        x = f"x{len(observed) + 1}"
        observed.append(x)
        target = latents[int(rng.integers(0, k))]
        edges.append((target, x))
    nodes = [(x, "observed", None) for x in observed]
    nodes += [(y, "latent", float(rng.uniform(0.05, 0.95))) for y in latents]
    built = [(a, b, float(rng.uniform(0.2, 0.95) * rng.choice([-1, 1])))
             for a, b in edges]
    return make_tree(nodes, built)
