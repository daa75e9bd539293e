"""Latent Gaussian tree model.

A tree couples observed and latent (hidden) unit-variance, zero-mean Gaussian
variables; each edge carries a base correlation rho with 0 < |rho| < 1, whose
effective sign further depends on the +-1 sign variables attached to latent
nodes. Pairwise covariances are products of effective edge correlations along
the unique connecting path, so the whole joint law is determined by the
O(n + k - 1) edge parameters.

Sign convention: a sign assignment b multiplies edge (u, v) by b_u * b_v when
both endpoints are latent and by b_u when only u is latent. Equivalently, the
joint covariance under b is D_b * C_ref * D_b where C_ref is the covariance
under the all-+1 reference class and D_b is diagonal with b on latent entries
and +1 on observed ones. The observed block is therefore identical across all
2^k sign classes (the sign singularity).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np

__all__ = [
    "Node",
    "Edge",
    "GaussianTree",
    "CovarianceMatrix",
    "TreeFormatError",
    "parse_tree",
    "serialize_tree",
    "validate_tree",
    "joint_covariance",
    "observed_covariance",
]

OBSERVED = "observed"
LATENT = "latent"


class TreeFormatError(ValueError):
    """Raised when a tree document violates the format contract."""


@dataclass(frozen=True)
class Node:
    id: str
    kind: str  # "observed" | "latent"
    pi: float | None = None  # Bernoulli sign parameter, latent nodes only


@dataclass(frozen=True)
class Edge:
    a: str
    b: str
    rho: float  # base correlation with reference sign, 0 < |rho| < 1


@dataclass(frozen=True)
class GaussianTree:
    """Immutable tree description; all derived views are deterministic."""

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    @property
    def observed_ids(self) -> tuple[str, ...]:
        """Observed node ids in document order."""
        return tuple(n.id for n in self.nodes if n.kind == OBSERVED)

    @property
    def latent_ids(self) -> tuple[str, ...]:
        """Latent node ids sorted lexicographically (canonical sign order)."""
        return tuple(sorted(n.id for n in self.nodes if n.kind == LATENT))

    @property
    def n_latent(self) -> int:
        return len(self.latent_ids)

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def is_latent(self, node_id: str) -> bool:
        return self.node(node_id).kind == LATENT

    def pi_vector(self) -> np.ndarray:
        """Bernoulli parameters aligned to latent_ids."""
        by_id = {n.id: n.pi for n in self.nodes}
        return np.array([by_id[i] for i in self.latent_ids], dtype=float)

    def adjacency(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            adj[e.a].append(e.b)
            adj[e.b].append(e.a)
        for nbrs in adj.values():
            nbrs.sort()
        return adj

    def rho(self, u: str, v: str) -> float:
        for e in self.edges:
            if {e.a, e.b} == {u, v}:
                return e.rho
        raise KeyError(f"no edge {u}-{v}")


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """Symmetric unit-diagonal correlation matrix with node-id labels."""

    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def entry(self, u: str, v: str) -> float:
        return float(self.values[self.index(u), self.index(v)])

    def submatrix(self, labels: Iterable[str]) -> "CovarianceMatrix":
        labels = tuple(labels)
        idx = [self.index(l) for l in labels]
        return CovarianceMatrix(labels, self.values[np.ix_(idx, idx)].copy())


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise TreeFormatError(msg)


def parse_tree(text: str) -> GaussianTree:
    """Parse and structurally validate a tree document.

    The document is a JSON object with "nodes" (array of {"id", "kind",
    "pi"?}) and "edges" (array of {"a", "b", "rho"}). Parsing rejects
    malformed documents, duplicate ids, unknown node references, rho outside
    (-1, 1) \\ {0}, pi outside (0, 1) or missing on a latent node, and edge
    sets that do not form a tree. Minimality (latent degree >= 3, at least 3
    observed nodes) is reported by validate_tree, not enforced here.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TreeFormatError(f"malformed document: {exc}") from exc
    _require(isinstance(doc, dict), "malformed document: top level must be an object")
    _require("nodes" in doc and "edges" in doc, "malformed document: missing nodes/edges")

    nodes: list[Node] = []
    seen: set[str] = set()
    for raw in doc["nodes"]:
        _require(isinstance(raw, dict) and "id" in raw and "kind" in raw,
                 "malformed document: node entries need id and kind")
        nid = raw["id"]
        _require(isinstance(nid, str) and nid != "", f"invalid node id {nid!r}")
        _require(nid not in seen, f"duplicate node id {nid!r}")
        seen.add(nid)
        kind = raw["kind"]
        _require(kind in (OBSERVED, LATENT), f"node {nid}: unknown kind {kind!r}")
        pi = raw.get("pi")
        if kind == LATENT:
            _require(pi is not None, f"missing pi on latent node {nid}")
            _require(isinstance(pi, (int, float)) and 0.0 < pi < 1.0,
                     f"node {nid}: pi outside (0,1)")
            pi = float(pi)
        else:
            _require(pi is None, f"node {nid}: pi on observed node")
        nodes.append(Node(nid, kind, pi))

    edges: list[Edge] = []
    for raw in doc["edges"]:
        _require(isinstance(raw, dict) and {"a", "b", "rho"} <= set(raw),
                 "malformed document: edge entries need a, b, rho")
        a, b, rho = raw["a"], raw["b"], raw["rho"]
        _require(a in seen, f"edge references unknown node {a!r}")
        _require(b in seen, f"edge references unknown node {b!r}")
        _require(a != b, f"self-loop at {a!r}")
        _require(isinstance(rho, (int, float)) and 0.0 < abs(rho) < 1.0,
                 f"edge {a}-{b}: rho outside open interval (-1,1) excluding 0")
        edges.append(Edge(a, b, float(rho)))

    tree = GaussianTree(tuple(nodes), tuple(edges))
    _require(_is_tree(tree), "not a tree")
    return tree


def serialize_tree(tree: GaussianTree) -> str:
    """Serialize to the tree document format (round-trips bit-exactly)."""
    doc = {
        "nodes": [
            {"id": n.id, "kind": n.kind, **({"pi": n.pi} if n.pi is not None else {})}
            for n in tree.nodes
        ],
        "edges": [{"a": e.a, "b": e.b, "rho": e.rho} for e in tree.edges],
    }
    return json.dumps(doc, indent=2)


def _is_tree(tree: GaussianTree) -> bool:
    ids = tree.node_ids
    if len(tree.edges) != len(ids) - 1:
        return False
    adj = tree.adjacency()
    stack, seen = [ids[0]], {ids[0]}
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(ids)


def validate_tree(tree: GaussianTree) -> list[str]:
    """Return every violated invariant; an empty list means the tree is valid."""
    violations: list[str] = []
    if not _is_tree(tree):
        violations.append("not a tree")
    if tree.n_latent == 0:
        violations.append("no latent nodes")
    for e in tree.edges:
        if not (0.0 < abs(e.rho) < 1.0):
            violations.append(f"edge {e.a}-{e.b}: rho outside open interval")
    adj = tree.adjacency()
    n_observed = 0
    for n in tree.nodes:
        if n.kind == LATENT:
            if n.pi is None:
                violations.append(f"missing pi on latent node {n.id}")
            elif not (0.0 < n.pi < 1.0):
                violations.append(f"node {n.id}: pi outside (0,1)")
            if len(adj[n.id]) < 3:
                violations.append(f"latent degree < 3 at {n.id}")
        else:
            n_observed += 1
            if n.pi is not None:
                violations.append(f"node {n.id}: pi on observed node")
    if n_observed < 3:
        violations.append("fewer than 3 observed nodes")
    return violations


@lru_cache(maxsize=64)
def _reference_covariance(tree: GaussianTree) -> np.ndarray:
    """All-pairs path products of base rhos (the all-+1 sign class).

    Built from memoized root-to-node prefix products: the (u, v) entry is
    prefix(u) * prefix(v) / prefix(lca)^2.
    """
    ids = tree.node_ids
    pos = {v: i for i, v in enumerate(ids)}
    adj = tree.adjacency()
    rho = {}
    for e in tree.edges:
        rho[(e.a, e.b)] = e.rho
        rho[(e.b, e.a)] = e.rho

    root = ids[0]
    parent: dict[str, str | None] = {root: None}
    depth = {root: 0}
    prefix = {root: 1.0}
    stack = [root]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in parent:
                parent[v] = u
                depth[v] = depth[u] + 1
                prefix[v] = prefix[u] * rho[(u, v)]
                stack.append(v)

    def lca(u: str, v: str) -> str:
        while depth[u] > depth[v]:
            u = parent[u]
        while depth[v] > depth[u]:
            v = parent[v]
        while u != v:
            u, v = parent[u], parent[v]
        return u

    n = len(ids)
    cov = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            w = lca(ids[i], ids[j])
            val = prefix[ids[i]] * prefix[ids[j]] / prefix[w] ** 2
            cov[i, j] = cov[j, i] = val
    cov.setflags(write=False)
    return cov


def _sign_values(tree: GaussianTree, signs) -> np.ndarray:
    values = np.asarray(getattr(signs, "values", signs), dtype=float)
    if values.shape != (tree.n_latent,):
        raise ValueError(
            f"sign vector length {values.size} != number of latent nodes {tree.n_latent}"
        )
    if not np.all(np.abs(values) == 1.0):
        raise ValueError("sign entries must be +-1")
    return values


def joint_covariance(tree: GaussianTree, signs) -> CovarianceMatrix:
    """Covariance over all nodes under a sign assignment.

    `signs` is a SignAssignment or a +-1 sequence aligned to tree.latent_ids.
    Entries are signed path products; the observed block does not depend on
    the assignment, and negating all signs leaves the matrix unchanged.
    """
    values = _sign_values(tree, signs)
    ref = _reference_covariance(tree)
    by_latent = dict(zip(tree.latent_ids, values))
    d = np.array([by_latent.get(v, 1.0) for v in tree.node_ids])
    cov = ref * np.outer(d, d)
    np.fill_diagonal(cov, 1.0)
    return CovarianceMatrix(tree.node_ids, cov)


def observed_covariance(tree: GaussianTree, signs) -> CovarianceMatrix:
    """Restriction of joint_covariance to the observed nodes (document order)."""
    return joint_covariance(tree, signs).submatrix(tree.observed_ids)
