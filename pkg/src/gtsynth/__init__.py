"""gtsynth: latent Gaussian tree synthesis toolkit.

Represents latent Gaussian trees with correlation-sign ambiguity, computes
per-layer achievable rate bounds for synthesizing them, optimizes the
Bernoulli sign parameters, runs the layered random-codebook synthesis, and
validates the synthesized statistics against the prescribed law.
"""

__version__ = "0.1.0"

from .tree import (GaussianTree, CovarianceMatrix, TreeFormatError, parse_tree,
                   serialize_tree, validate_tree, joint_covariance,
                   observed_covariance)
from .signs import (SignAssignment, NotProductFormError, enumerate_signs,
                    eta_from_pi, pi_from_eta, verify_sign_invariance)
from .layering import (LayeredTree, LayerChannel, HyperChainViolation,
                       assign_layers, restructure, build_layer_channel)
from .rates import (RateBounds, gaussian_mi, mc_mi_mixture, mixture_layer,
                    layer_rate_bounds, optimize_pi, concavity_check)
from .synthesis import (SynthesisConfig, Codebook, SynthesisRun, codebook_size,
                        build_codebooks, synthesize)
from .validation import (FidelityReport, empirical_covariance, fidelity_report,
                         independence_tests, histogram_tv, marginal_normal_tv)

__all__ = [
    "GaussianTree", "CovarianceMatrix", "TreeFormatError", "parse_tree",
    "serialize_tree", "validate_tree", "joint_covariance", "observed_covariance",
    "SignAssignment", "NotProductFormError", "enumerate_signs", "eta_from_pi",
    "pi_from_eta", "verify_sign_invariance",
    "LayeredTree", "LayerChannel", "HyperChainViolation", "assign_layers",
    "restructure", "build_layer_channel",
    "RateBounds", "gaussian_mi", "mc_mi_mixture", "mixture_layer",
    "layer_rate_bounds", "optimize_pi", "concavity_check",
    "SynthesisConfig", "Codebook", "SynthesisRun", "codebook_size",
    "build_codebooks", "synthesize",
    "FidelityReport", "empirical_covariance", "fidelity_report",
    "independence_tests", "histogram_tv", "marginal_normal_tv",
]
