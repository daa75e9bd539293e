"""Per-layer achievable-rate bounds and sign-parameter optimization.

For the channel producing layer l from layer l+1, two quantities bound the
codebook rates (all in nats per symbol):

* sum rate  I[Y_{l+1}, B_{l+1}; Y_l | B_l]. Given all upper inputs, the layer
  l vector is Gaussian with the fixed diagonal noise covariance, and given
  only its own sign class it is Gaussian with a covariance whose determinant
  is the same for every class (sign conjugation), so the bound has the closed
  form 0.5 * log(|Sigma_{Y_l|b}| / |Sigma_z|) and depends on neither the sign
  parameters nor the class.

* y rate    I[Y_{l+1}; Y_l | B_l]. Marginalizing the upper sign vector makes
  the conditional law of Y_l given Y_{l+1} a finite Gaussian mixture, one
  component per upper sign class with posterior component weights, so the
  bound is estimated by Monte Carlo as the closed-form conditional entropy
  minus the sample mean of -log of that explicit mixture density.

The Monte Carlo estimator is unbiased in the -log density term, deterministic
given the seed, and evaluated in fixed-size chunks on independent
counter-based substreams, so the merged estimate does not depend on the
worker count. The sign uniforms are drawn independently of pi, which gives
common random numbers across pi values sharing a seed; optimize_pi relies on
that coupling to resolve the flat region around the optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.linalg import cho_factor, cho_solve, cholesky
from scipy.special import logsumexp

from . import rng as _rng
from .layering import LayeredTree, build_layer_channel
from .signs import class_signs, eta_from_pi
from .tree import GaussianTree, CovarianceMatrix, joint_covariance

__all__ = [
    "RateBounds",
    "MixtureLayer",
    "gaussian_mi",
    "mixture_layer",
    "mc_mi_mixture",
    "layer_rate_bounds",
    "optimize_pi",
    "concavity_check",
    "entropy_functional",
    "fd_gradient",
    "fd_hessian",
    "max_hessian_eigenvalue",
]

_LOG_2PI = math.log(2.0 * math.pi)
_CHUNK = 16384
_MIN_MC = 1000


@dataclass(frozen=True)
class RateBounds:
    layer: int
    sum_rate_lb: float  # nats/symbol
    y_rate_lb: float  # nats/symbol
    y_rate_ci: float  # 95% CI half-width of the y-rate estimate


def gaussian_mi(cov: CovarianceMatrix, set_a, set_b) -> float:
    """Mutual information between two Gaussian blocks, in nats.

    0.5 * log(|Sigma_A| |Sigma_B| / |Sigma_{A u B}|) for disjoint, nonempty
    label sets of cov.
    """
    set_a, set_b = tuple(set_a), tuple(set_b)
    if not set_a or not set_b:
        raise ValueError("label sets must be nonempty")
    if set(set_a) & set(set_b):
        raise ValueError("label sets must be disjoint")
    lds = []
    for labels in (set_a, set_b, set_a + set_b):
        sign, ld = np.linalg.slogdet(cov.submatrix(labels).values)
        if sign <= 0:
            raise ValueError("singular covariance sub-block")
        lds.append(ld)
    return 0.5 * (lds[0] + lds[1] - lds[2])


@dataclass(eq=False)
class MixtureLayer:
    """One layer channel bundled with the laws needed for rate estimation."""

    layer: int
    a_ref: np.ndarray  # (d_low, d_up) reference-signed transition
    noise_var: np.ndarray  # (d_low,)
    upper_cov: np.ndarray  # reference-class covariance of layer l+1
    upper_latent: np.ndarray  # bool mask over upper nodes
    lower_logdet: float  # log |Sigma_{Y_l | b}| (class-invariant)

    @property
    def k_up(self) -> int:
        return int(self.upper_latent.sum())

    def class_flips(self) -> np.ndarray:
        """(2^k_up, d_up) +-1 column flips, canonical class order."""
        k = self.k_up
        flips = np.ones((1 << k, self.a_ref.shape[1]))
        cols = np.flatnonzero(self.upper_latent)
        for c in range(1 << k):
            flips[c, cols] = class_signs(k, c)
        return flips


def mixture_layer(lt: LayeredTree, tree: GaussianTree, l: int) -> MixtureLayer:
    channel = build_layer_channel(lt, tree, l)
    ref = joint_covariance(tree, (1,) * tree.n_latent)
    upper_cov = ref.submatrix(channel.parent_order).values
    lower_cov = ref.submatrix(channel.node_order).values
    sign, ld = np.linalg.slogdet(lower_cov)
    if sign <= 0:
        raise ValueError("singular layer covariance")
    upper_latent = np.array([tree.is_latent(v) for v in channel.parent_order])
    return MixtureLayer(l, channel.transition, channel.noise_variances,
                        upper_cov, upper_latent, float(ld))


def _log_eta(pi: np.ndarray) -> np.ndarray:
    if pi.size == 0:  # no upper sign variables: a single, certain class
        return np.zeros(1)
    with np.errstate(divide="ignore"):
        return np.log(eta_from_pi(pi))


def mc_mi_mixture(ml: MixtureLayer, pi, samples: int, seed: int,
                  threads: int | None = None) -> tuple[float, float]:
    """Monte-Carlo estimate of I[Y_{l+1}; Y_l | B_l] with 95% CI half-width.

    The first entropy term is closed form; the second is the sample mean of
    -log of the exact mixture conditional density (components indexed by the
    upper sign class, weighted by the class posterior given the upper value).
    Deterministic given seed, independent of thread count.
    """
    if samples < _MIN_MC:
        raise ValueError(f"sample budget below {_MIN_MC}")
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (ml.k_up,):
        raise ValueError(f"pi must have length {ml.k_up}")

    d_low, d_up = ml.a_ref.shape
    chol_up = cholesky(ml.upper_cov, lower=True)
    prec_up = cho_solve(cho_factor(ml.upper_cov, lower=True), np.eye(d_up))
    flips = ml.class_flips()
    log_eta = _log_eta(pi)
    live = np.flatnonzero(np.isfinite(log_eta))  # classes with nonzero weight
    noise_sd = np.sqrt(ml.noise_var)
    log_norm_low = -0.5 * float(np.sum(np.log(2.0 * np.pi * ml.noise_var)))
    latent_cols = np.flatnonzero(ml.upper_latent)

    def run_chunk(i: int) -> tuple[float, float, int]:
        lo = i * _CHUNK
        c = min(_CHUNK, samples - lo)
        gen = _rng.substream(seed, "mi", ml.layer, i)
        z_up = gen.standard_normal((c, d_up))
        u = gen.random((c, ml.k_up))
        z_low = gen.standard_normal((c, d_low))

        y_ref = z_up @ chol_up.T
        sample_flip = np.ones((c, d_up))
        sample_flip[:, latent_cols] = np.where(u < pi[None, :], 1.0, -1.0)
        y = y_ref * sample_flip
        x = y_ref @ ml.a_ref.T + z_low * noise_sd[None, :]

        log_terms = np.full((live.size, c), -np.inf)
        log_w = np.full((live.size, c), -np.inf)
        for row, cls in enumerate(live):
            y_c = y * flips[cls][None, :]
            quad = np.einsum("si,ij,sj->s", y_c, prec_up, y_c)
            log_w[row] = log_eta[cls] - 0.5 * quad
            resid = x - y_c @ ml.a_ref.T
            log_like = log_norm_low - 0.5 * np.sum(resid * resid / ml.noise_var, axis=1)
            log_terms[row] = log_w[row] + log_like
        lp = logsumexp(log_terms, axis=0) - logsumexp(log_w, axis=0)
        return float(lp.sum()), float((lp * lp).sum()), c

    n_chunks = (samples + _CHUNK - 1) // _CHUNK
    parts = _rng.map_chunks(run_chunk, n_chunks, threads)
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    n = sum(p[2] for p in parts)

    mean_lp = total / n
    var_lp = max(total_sq / n - mean_lp * mean_lp, 0.0)
    h_low = 0.5 * (d_low * (_LOG_2PI + 1.0) + ml.lower_logdet)
    estimate = h_low + mean_lp
    ci = 1.96 * math.sqrt(var_lp / n)
    return estimate, ci


def layer_rate_bounds(lt: LayeredTree, tree: GaussianTree, l: int, pi=None,
                      mc: int = 200_000, seed: int = 0,
                      sign_class: tuple[int, ...] | None = None,
                      threads: int | None = None) -> RateBounds:
    """Rate lower bounds for the layer l+1 -> l channel.

    `pi` are the Bernoulli parameters of the upper-layer sign inputs (default:
    the tree's own). `sign_class` optionally selects the sign class used to
    build the layer-l covariance block for the closed-form sum rate; the
    determinant is class-invariant, so this only exercises the invariance.
    """
    if not 0 <= l < lt.top_layer:
        raise ValueError(f"layer index {l} out of range [0, {lt.top_layer})")
    if mc < _MIN_MC:
        raise ValueError(f"mc budget below {_MIN_MC}")
    ml = mixture_layer(lt, tree, l)
    if pi is None:
        by_id = {v: tree.node(v).pi for v in tree.latent_ids}
        pi = np.array([by_id[v] for v in lt.latents_at(tree, l + 1)])
    else:
        pi = np.asarray(pi, dtype=float)

    if sign_class is not None:
        cov = joint_covariance(tree, sign_class)
        block = cov.submatrix(tuple(sorted(lt.layers[l]))).values
        sign, lower_logdet = np.linalg.slogdet(block)
        if sign <= 0:
            raise ValueError("singular layer covariance")
    else:
        lower_logdet = ml.lower_logdet
    sum_rate = 0.5 * (lower_logdet - float(np.sum(np.log(ml.noise_var))))

    y_rate, ci = mc_mi_mixture(ml, pi, mc, seed, threads)
    return RateBounds(l, sum_rate, y_rate, ci)


def optimize_pi(lt: LayeredTree, tree: GaussianTree, l: int, grid_step: float,
                mc_budget: int, seed: int,
                threads: int | None = None):
    """Grid search for the sign parameters minimizing the y-rate bound.

    The objective is symmetric in pi <-> 1 - pi and minimized at the uniform
    sign parameters, so the search runs over a shared scalar p applied to all
    upper latents. Every grid point reuses the same seed, so the estimates
    share their underlying draws (common random numbers) and the argmin is
    stable against the Monte Carlo noise floor.

    Returns (pi_star, curve) with curve entries (p, estimate, ci).
    """
    if not 0.0 < grid_step <= 0.25:
        raise ValueError("grid step must lie in (0, 0.25]")
    ml = mixture_layer(lt, tree, l)
    k = ml.k_up
    grid = [i * grid_step for i in range(1, int((1.0 - 1e-9) / grid_step) + 1)]
    curve = []
    for p in grid:
        est, ci = mc_mi_mixture(ml, np.full(k, p), mc_budget, seed, threads)
        curve.append((p, est, ci))
    best = min(curve, key=lambda row: row[1])
    return np.full(k, best[0]), curve


# ---------------------------------------------------------------------------
# Concavity of the conditional entropy in the mixture weights
# ---------------------------------------------------------------------------

def fd_gradient(f, x, step: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def fd_hessian(f, x, step: float = 0.02) -> np.ndarray:
    """Central finite-difference Hessian (symmetric by construction)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = step
        h[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / step**2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = step
            hij = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4.0 * step**2)
            h[i, j] = h[j, i] = hij
    return h


def max_hessian_eigenvalue(f, points, step: float = 0.02) -> float:
    """Largest finite-difference Hessian eigenvalue of f over the points."""
    worst = -np.inf
    for x in points:
        eig = np.linalg.eigvalsh(fd_hessian(f, x, step))
        worst = max(worst, float(eig[-1]))
    return worst


def _flat_mixture_parts(tree: GaussianTree):
    """Group observed leaves by parent latent; reduce to effective coordinates.

    Requires every observed node to be a leaf attached to a latent node (the
    setting of the conditional-entropy concavity argument). Per group the
    whitened observed block has a single direction whose mean is
    +-delta_g * y_parent; the orthogonal rest is standard normal and
    contributes only constant entropy.
    """
    adj = tree.adjacency()
    latent_ids = tree.latent_ids
    pos = {v: j for j, v in enumerate(latent_ids)}
    group_delta: dict[str, float] = {}
    n_obs = 0
    log_sigma_sum = 0.0
    for v in tree.observed_ids:
        nbrs = adj[v]
        if len(nbrs) != 1 or not tree.is_latent(nbrs[0]):
            raise ValueError(
                "concavity check requires observed nodes to be leaves attached to latents"
            )
        r = tree.rho(v, nbrs[0])
        s2 = 1.0 - r * r
        group_delta[nbrs[0]] = group_delta.get(nbrs[0], 0.0) + r * r / s2
        log_sigma_sum += 0.5 * math.log(s2)
        n_obs += 1
    groups = sorted(group_delta)
    delta = np.sqrt(np.array([group_delta[g] for g in groups]))
    sigma_y = joint_covariance(tree, (1,) * len(latent_ids)).submatrix(latent_ids).values
    rest_const = 0.5 * (n_obs - len(groups)) * (_LOG_2PI + 1.0) + log_sigma_sum
    group_cols = np.array([pos[g] for g in groups])
    return sigma_y, delta, group_cols, rest_const


def _component_covs(sigma_y, delta, group_cols, k):
    """Joint (y, s) covariance of each sign-class component."""
    joints, margs = [], []
    for c in range(1 << k):
        b = np.array(class_signs(k, c), dtype=float)
        cov_y = sigma_y * np.outer(b, b)
        m = np.zeros((delta.size, k))
        m[np.arange(delta.size), group_cols] = delta * b[group_cols]
        top = np.hstack([cov_y, cov_y @ m.T])
        bot = np.hstack([m @ cov_y, m @ cov_y @ m.T + np.eye(delta.size)])
        joints.append(np.vstack([top, bot]))
        margs.append(cov_y)
    return joints, margs


def _log_gauss(points: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    chol = cholesky(cov, lower=True)
    sol = np.linalg.solve(chol, points.T)
    quad = np.sum(sol * sol, axis=0)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (quad + logdet + d * _LOG_2PI)


def entropy_functional(tree: GaussianTree, budget: int = 200_000, seed: int = 0,
                       gh_order: int | None = None):
    """Callable eta -> h(X|Y) for the tree's sign mixture (eta need not sum to 1).

    Components are jointly Gaussian after per-group reduction of the observed
    block, so for k <= 2 the integrals use tensor Gauss-Hermite nodes drawn
    under each component's own law; for k = 3 fixed Monte Carlo nodes are used
    instead. The per-component cross log-density tables are precomputed, so
    repeated evaluations (finite differences) are cheap.
    """
    k = tree.n_latent
    if k > 3:
        raise ValueError("concavity check supports at most 3 latent nodes")
    sigma_y, delta, group_cols, rest_const = _flat_mixture_parts(tree)
    joints, margs = _component_covs(sigma_y, delta, group_cols, k)
    n_comp = 1 << k
    dim = k + delta.size

    if gh_order is None:
        gh_order = {1: 96, 2: 64, 3: 32, 4: 20}.get(dim, 0)
    use_gh = dim <= 4 and gh_order > 0
    if use_gh:
        nodes_1d, w_1d = hermegauss(gh_order)
        w_1d = w_1d / math.sqrt(2.0 * math.pi)
        grids = np.meshgrid(*([nodes_1d] * dim), indexing="ij")
        z = np.stack([g.ravel() for g in grids], axis=1)
        wgrids = np.meshgrid(*([w_1d] * dim), indexing="ij")
        weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    else:
        n_nodes = max(budget // n_comp, _MIN_MC)
        z = _rng.substream(seed, "concavity").standard_normal((n_nodes, dim))
        weights = np.full(z.shape[0], 1.0 / z.shape[0])

    # log-density tables: entry [c][c'] = log N_{c'} at component c's nodes
    log_joint = np.empty((n_comp, n_comp, z.shape[0]))
    log_marg = np.empty((n_comp, n_comp, z.shape[0]))
    for c in range(n_comp):
        pts = z @ cholesky(joints[c], lower=True).T
        for c2 in range(n_comp):
            log_joint[c, c2] = _log_gauss(pts, joints[c2])
            log_marg[c, c2] = _log_gauss(pts[:, :k], margs[c2])

    def functional(eta) -> float:
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (n_comp,):
            raise ValueError(f"eta must have length {n_comp}")
        if np.any(eta <= 0.0):
            raise ValueError("eta must be strictly positive")
        log_eta = np.log(eta)
        total = float(eta.sum()) * rest_const
        for c in range(n_comp):
            lp_joint = logsumexp(log_eta[:, None] + log_joint[c], axis=0)
            lp_marg = logsumexp(log_eta[:, None] + log_marg[c], axis=0)
            total += eta[c] * float(weights @ (lp_marg - lp_joint))
        return total

    return functional


def concavity_check(tree: GaussianTree, eta_points=None, budget: int = 200_000,
                    seed: int = 0, step: float = 0.02) -> float:
    """Largest finite-difference Hessian eigenvalue of h(X|Y) in eta.

    Concavity of the conditional entropy in the mixture weights means the
    result should not exceed ~0 (tolerance 1e-3 absorbs quadrature and
    finite-difference noise). Default: 10 seeded interior points.
    """
    k = tree.n_latent
    f = entropy_functional(tree, budget, seed)
    if eta_points is None:
        gen = _rng.substream(seed, "concavity-points")
        raw = gen.dirichlet(np.ones(1 << k), size=10)
        eta_points = 0.8 * raw + 0.2 / (1 << k)  # keep clear of the boundary
    return max_hessian_eigenvalue(f, eta_points, step)
