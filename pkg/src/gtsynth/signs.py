"""Sign-equivalence classes and Bernoulli sign parameters.

A tree with k latent nodes has 2^k sign classes, indexed canonically by
little-endian bits over the lexicographically sorted latent ids (bit j set
means latent j has sign +1; in indexing, 0 stands for -1). Classes b and -b
induce the same covariance on every block visible without sign information,
so at most 2^{k-1} joint laws are distinct and the observed block is the same
for all classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import GaussianTree, observed_covariance

__all__ = [
    "SignAssignment",
    "NotProductFormError",
    "ENUMERATION_GUARD",
    "sign_class",
    "class_index",
    "enumerate_signs",
    "eta_from_pi",
    "pi_from_eta",
    "verify_sign_invariance",
]

ENUMERATION_GUARD = 20


class NotProductFormError(ValueError):
    """Raised when a weight vector is not a product (independent-sign) measure."""


@dataclass(frozen=True)
class SignAssignment:
    """One +-1 labeling of the latent nodes, aligned to sorted latent ids."""

    latent_ids: tuple[str, ...]
    values: tuple[int, ...]

    def __post_init__(self):
        if len(self.latent_ids) != len(self.values):
            raise ValueError("sign vector length != number of latent nodes")
        if any(v not in (-1, 1) for v in self.values):
            raise ValueError("sign entries must be +-1")

    def bitstring(self) -> str:
        """Bits in latent order, 1 for +1 and 0 for -1."""
        return "".join("1" if v == 1 else "0" for v in self.values)

    def negated(self) -> "SignAssignment":
        return SignAssignment(self.latent_ids, tuple(-v for v in self.values))


def class_signs(k: int, index: int) -> tuple[int, ...]:
    """Little-endian decode of a class index into a +-1 vector of length k."""
    return tuple(1 if (index >> j) & 1 else -1 for j in range(k))


def sign_class(tree: GaussianTree, index: int) -> SignAssignment:
    k = tree.n_latent
    if not 0 <= index < (1 << k):
        raise ValueError(f"class index {index} out of range for k={k}")
    return SignAssignment(tree.latent_ids, class_signs(k, index))


def class_index(assignment: SignAssignment) -> int:
    return sum(1 << j for j, v in enumerate(assignment.values) if v == 1)


def enumerate_signs(tree: GaussianTree) -> list[SignAssignment]:
    """All 2^k sign assignments in canonical (little-endian) order."""
    k = tree.n_latent
    if k == 0:
        raise ValueError("tree has no latent nodes")
    if k > ENUMERATION_GUARD:
        raise ValueError(f"k={k} exceeds enumeration guard {ENUMERATION_GUARD}")
    return [sign_class(tree, i) for i in range(1 << k)]


def eta_from_pi(pi) -> np.ndarray:
    """Mixture weights of the 2^k sign classes for independent Bernoulli signs.

    eta_i = prod_j pi_j^{b_ji} (1 - pi_j)^{1 - b_ji} with b in {0, 1}, classes
    in canonical order. The weights sum to 1.
    """
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1 or pi.size == 0:
        raise ValueError("pi must be a non-empty 1-d vector")
    if np.any(pi < 0.0) or np.any(pi > 1.0):
        raise ValueError("pi out of range")
    k = pi.size
    eta = np.ones(1 << k)
    for j in range(k):
        bit = (np.arange(1 << k) >> j) & 1
        eta *= np.where(bit == 1, pi[j], 1.0 - pi[j])
    return eta


def pi_from_eta(eta) -> np.ndarray:
    """Recover Bernoulli parameters from product-form class weights.

    pi_j is the total weight of classes with bit j set. Raises
    NotProductFormError when eta_from_pi(pi) deviates from eta by more than
    1e-9 in sup norm (the weights encode correlated signs).
    """
    eta = np.asarray(eta, dtype=float)
    m = eta.size
    if m == 0 or (m & (m - 1)) != 0:
        raise ValueError("eta length must be a power of two")
    if np.any(eta < -1e-15):
        raise ValueError("eta must be non-negative")
    if abs(eta.sum() - 1.0) > 1e-9:
        raise ValueError("eta must sum to 1")
    k = m.bit_length() - 1
    pi = np.empty(k)
    for j in range(k):
        bit = (np.arange(m) >> j) & 1
        pi[j] = eta[bit == 1].sum()
    if np.max(np.abs(eta_from_pi(pi) - eta)) > 1e-9:
        raise NotProductFormError("weights are not a product measure")
    return pi


def verify_sign_invariance(tree: GaussianTree) -> float:
    """Largest entrywise deviation of the observed covariance across all
    sign classes, relative to the all-+1 reference class. Contract: <= 1e-12.
    """
    classes = enumerate_signs(tree)
    ref = observed_covariance(tree, classes[-1]).values  # all +1
    worst = 0.0
    for assignment in classes:
        dev = np.max(np.abs(observed_covariance(tree, assignment).values - ref))
        worst = max(worst, float(dev))
    return worst
