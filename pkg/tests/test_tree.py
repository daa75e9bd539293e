"""Tree model: parsing, validation, and covariance construction."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gtsynth.tree import (TreeFormatError, joint_covariance, observed_covariance,
                          parse_tree, serialize_tree, validate_tree)
from conftest import make_tree, tree_doc


# ---------------------------------------------------------------------------
# parse / serialize
# ---------------------------------------------------------------------------

def test_parse_star_document(star_doc):
    tree = parse_tree(star_doc)
    assert len(tree.nodes) == 4
    assert len(tree.edges) == 3
    assert tree.latent_ids == ("y1",)
    assert tree.node("y1").pi == 0.5


def test_parse_serialize_roundtrip_is_identity(star_tree):
    # awkward rho values that need full precision to survive a round trip
    tree = make_tree(
        [("x1", "observed", None), ("x2", "observed", None),
         ("x3", "observed", None), ("y1", "latent", 0.1 + 0.2)],
        [("y1", "x1", 0.1 + 0.2), ("y1", "x2", 1 / 3), ("y1", "x3", math.sqrt(0.5))],
    )
    assert parse_tree(serialize_tree(tree)) == tree
    assert parse_tree(serialize_tree(star_tree)) == star_tree


def test_parse_rejects_rho_on_boundary(star_tree):
    doc = json.loads(tree_doc(star_tree))
    doc["edges"][0]["rho"] = 1.0
    with pytest.raises(TreeFormatError, match="rho outside open interval"):
        parse_tree(json.dumps(doc))


def test_parse_rejects_rho_zero(star_tree):
    doc = json.loads(tree_doc(star_tree))
    doc["edges"][0]["rho"] = 0.0
    with pytest.raises(TreeFormatError, match="rho outside open interval"):
        parse_tree(json.dumps(doc))


def test_parse_rejects_cycle():
    doc = {
        "nodes": [{"id": v, "kind": "observed"} for v in ("a", "b", "c")],
        "edges": [{"a": "a", "b": "b", "rho": 0.5},
                  {"a": "b", "b": "c", "rho": 0.5},
                  {"a": "c", "b": "a", "rho": 0.5}],
    }
    with pytest.raises(TreeFormatError, match="not a tree"):
        parse_tree(json.dumps(doc))


def test_parse_rejects_duplicate_and_unknown_and_missing_pi():
    base = {
        "nodes": [{"id": "a", "kind": "observed"}, {"id": "b", "kind": "observed"}],
        "edges": [{"a": "a", "b": "b", "rho": 0.5}],
    }
    dup = json.loads(json.dumps(base))
    dup["nodes"].append({"id": "a", "kind": "observed"})
    with pytest.raises(TreeFormatError, match="duplicate node id"):
        parse_tree(json.dumps(dup))

    unknown = json.loads(json.dumps(base))
    unknown["edges"][0]["b"] = "zz"
    with pytest.raises(TreeFormatError, match="unknown node"):
        parse_tree(json.dumps(unknown))

    latent = json.loads(json.dumps(base))
    latent["nodes"][0]["kind"] = "latent"
    with pytest.raises(TreeFormatError, match="missing pi on latent node"):
        parse_tree(json.dumps(latent))

    bad_pi = json.loads(json.dumps(base))
    bad_pi["nodes"][0] = {"id": "a", "kind": "latent", "pi": 1.5}
    with pytest.raises(TreeFormatError, match="pi outside"):
        parse_tree(json.dumps(bad_pi))

    with pytest.raises(TreeFormatError, match="malformed"):
        parse_tree("{not json")


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def test_validate_star_is_clean(star_tree):
    assert validate_tree(star_tree) == []


def test_validate_flags_low_latent_degree():
    tree = make_tree(
        [("x1", "observed", None), ("x2", "observed", None),
         ("x3", "observed", None), ("y1", "latent", 0.5)],
        [("y1", "x1", 0.6), ("y1", "x2", 0.5), ("x2", "x3", 0.4)],
    )
    assert "latent degree < 3 at y1" in validate_tree(tree)


def test_validate_flags_few_observed():
    tree = make_tree(
        [("x1", "observed", None), ("x2", "observed", None),
         ("y1", "latent", 0.5), ("y2", "latent", 0.5), ("y3", "latent", 0.5)],
        [("y1", "x1", 0.6), ("y1", "x2", 0.5), ("y1", "y2", 0.4),
         ("y2", "y3", 0.3)],
    )
    assert "fewer than 3 observed nodes" in validate_tree(tree)


# ---------------------------------------------------------------------------
# covariance by signed path products
# ---------------------------------------------------------------------------

def test_chain_path_product(chain_tree):
    cov = joint_covariance(chain_tree, (1, 1))
    assert cov.entry("x1", "x2") == pytest.approx(0.9 * 0.5 * 0.8, abs=1e-15)


def test_chain_negated_signs(chain_tree):
    cov = joint_covariance(chain_tree, (-1, -1))
    assert cov.entry("x1", "x2") == pytest.approx(0.36, abs=1e-15)
    assert cov.entry("x1", "y1") == pytest.approx(-0.9, abs=1e-15)
    ref = joint_covariance(chain_tree, (1, 1))
    obs = ["x1", "x2"]
    assert np.array_equal(cov.submatrix(obs).values, ref.submatrix(obs).values)


def test_star_observed_offdiagonals(star_tree):
    cov = observed_covariance(star_tree, (1,))
    assert cov.entry("x1", "x2") == pytest.approx(0.30, abs=1e-15)
    assert cov.entry("x1", "x3") == pytest.approx(0.48, abs=1e-15)
    assert cov.entry("x2", "x3") == pytest.approx(0.40, abs=1e-15)


def test_star_sign_flip_leaves_observed_block(star_tree):
    plus = observed_covariance(star_tree, (1,))
    minus = observed_covariance(star_tree, (-1,))
    assert np.array_equal(plus.values, minus.values)


def test_all_plus_signs_give_base_products(fig2_tree):
    cov = joint_covariance(fig2_tree, (1,) * 6)
    # x1 - ya1 - yb1 - ya2 - x3
    assert cov.entry("x1", "x3") == pytest.approx(0.6 * 0.6 * 0.7 * 0.5, rel=1e-12)
    np.testing.assert_allclose(cov.values, cov.values.T)
    assert np.all(np.diag(cov.values) == 1.0)


def test_sign_vector_length_checked(star_tree):
    with pytest.raises(ValueError, match="length"):
        joint_covariance(star_tree, (1, 1))


def test_latent_block_conjugation(dumbbell_tree):
    ref = joint_covariance(dumbbell_tree, (1, 1))
    for signs in [(1, -1), (-1, 1), (-1, -1)]:
        cov = joint_covariance(dumbbell_tree, signs)
        d = np.array(signs, dtype=float)
        lat = ["y1", "y2"]
        expect = np.outer(d, d) * ref.submatrix(lat).values
        np.testing.assert_array_equal(cov.submatrix(lat).values, expect)


def test_determinant_invariant_under_signs(fig2_tree):
    ref = np.linalg.det(joint_covariance(fig2_tree, (1,) * 6).values)
    rng = np.random.default_rng(3)
    for _ in range(8):
        signs = tuple(rng.choice([-1, 1], size=6))
        det = np.linalg.det(joint_covariance(fig2_tree, signs).values)
        assert det == pytest.approx(ref, rel=1e-12)


def test_joint_covariance_positive_definite(star_tree, dumbbell_tree, fig2_tree, fig6_tree):
    for tree in (star_tree, dumbbell_tree, fig2_tree, fig6_tree):
        cov = joint_covariance(tree, (1,) * tree.n_latent)
        np.linalg.cholesky(cov.values)  # raises if not PD


# ---------------------------------------------------------------------------
# brute-force oracle: ancestral linear-Gaussian simulation
# ---------------------------------------------------------------------------

def ancestral_covariance(tree, signs, n_samples, seed):
    """Independent oracle: draw a root, propagate child = s*rho*parent + noise
    node by node, and estimate the covariance from samples."""
    rng = np.random.default_rng(seed)
    ids = list(tree.node_ids)
    adj = tree.adjacency()
    sign_of = dict(zip(tree.latent_ids, signs))

    def edge_sign(u, v):
        s = 1.0
        if tree.is_latent(u):
            s *= sign_of[u]
        if tree.is_latent(v):
            s *= sign_of[v]
        return s

    root = ids[0]
    values = {root: rng.standard_normal(n_samples)}
    stack = [root]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in values:
                rho = tree.rho(u, v) * edge_sign(u, v)
                noise = rng.standard_normal(n_samples) * math.sqrt(1 - tree.rho(u, v) ** 2)
                values[v] = rho * values[u] + noise
                stack.append(v)
    data = np.stack([values[v] for v in ids], axis=1)
    return np.cov(data, rowvar=False, ddof=1)


def _cov_standard_errors(exact: np.ndarray, n: int) -> np.ndarray:
    """Asymptotic SE of sample covariance entries: sqrt((1 + rho^2)/n)."""
    return np.sqrt((1.0 + exact**2) / n)


@pytest.mark.parametrize("signs", [(1, 1), (-1, 1), (1, -1)])
def test_ancestral_oracle_matches_path_products(dumbbell_tree, signs):
    n = 10**6
    emp = ancestral_covariance(dumbbell_tree, signs, n, seed=11)
    exact = joint_covariance(dumbbell_tree, signs).values
    np.testing.assert_array_less(np.abs(emp - exact), 4.0 * _cov_standard_errors(exact, n))


def test_ancestral_oracle_star(star_tree):
    n = 10**6
    emp = ancestral_covariance(star_tree, (1,), n, seed=7)
    exact = joint_covariance(star_tree, (1,)).values
    np.testing.assert_array_less(np.abs(emp - exact), 4.0 * _cov_standard_errors(exact, n))


# ---------------------------------------------------------------------------
# random-tree property: sign singularity
# ---------------------------------------------------------------------------

from conftest import random_valid_tree


def test_random_trees_are_valid_and_sign_singular():
    from gtsynth.signs import verify_sign_invariance

    rng = np.random.default_rng(2024)
    for _ in range(25):
        tree = random_valid_tree(rng)
        assert validate_tree(tree) == []
        assert verify_sign_invariance(tree) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_observed_block_identical_for_random_sign_pairs(seed):
    rng = np.random.default_rng(seed)
    tree = random_valid_tree(rng)
    k = tree.n_latent
    b1 = tuple(rng.choice([-1, 1], size=k))
    b2 = tuple(rng.choice([-1, 1], size=k))
    m1 = observed_covariance(tree, b1).values
    m2 = observed_covariance(tree, b2).values
    assert np.max(np.abs(m1 - m2)) <= 1e-12
