"""Layered random-codebook synthesis.

Codebooks are built top-down. The top-layer codebook holds mixture Gaussian
codewords: per sign realization of the top sign vector, a length-N sequence
drawn i.i.d. from the exact top-layer Gaussian (the top layer may be a chain,
so the draw factorizes through a Cholesky factor of its covariance block).
Each lower-layer codeword is produced by picking a (y, b) codeword pair of
the layer above uniformly at random, selecting the upper codeword's sign
branch slot by slot according to the b codeword, and pushing the selected
sequence through the linear channel once per lower sign realization, with
noise drawn independently across branches. Sign codebooks are i.i.d.
Bernoulli sequences of the layer's sign vector.

Cardinalities follow M = ceil(2^{N R}) with R in bits (equivalently
ceil(e^{N R_nats})); at realistic rates M is far too large to materialize, so
codebooks are *lazy*: codeword i of layer l is a pure function of
(seed, layer, i) on a counter-based substream, materialized on demand and
cached. This is distributionally identical to generating the full codebook
up front, keeps memory bounded by the working set, and makes every emitted
block reproducible in isolation.

Emitting a block picks a (y, b) pair at the bottom-most input layer,
resolves the lineage of upper-layer picks recorded when each codeword was
generated, and applies the layer-0 channel with fresh per-block noise.
Observed nodes living at higher layers (restructured trees) take their values
from the selected sign branch of the same lineage, which preserves the joint
dependence across layers.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Mapping

import mpmath
import numpy as np
from scipy.linalg import cholesky

from . import rng as _rng
from .layering import LayeredTree, build_layer_channel
from .rates import RateBounds
from .signs import class_signs
from .tree import GaussianTree, joint_covariance

__all__ = [
    "SynthesisConfig",
    "Codebook",
    "SynthesisRun",
    "codebook_size",
    "build_codebooks",
    "propagate_layer",
    "synthesize",
]

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class SynthesisConfig:
    block_length: int  # N, symbols per block
    blocks: int
    rate_margin: float = 1.0
    seed: int = 0
    # test hooks / guards
    force_m_y: Mapping[int, int] | None = None  # layer -> forced y-codebook size
    max_codeword_bytes: int = 1 << 28

    def __post_init__(self):
        if self.block_length < 1:
            raise ValueError("block length must be >= 1")
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")
        if self.rate_margin < 1.0:
            raise ValueError("rate margin must be >= 1")


def codebook_size(n_slots: int, rate_nats: float) -> int:
    """ceil(2^{N R_bits}) = ceil(e^{N R_nats}), exact for arbitrarily large N R."""
    if not math.isfinite(rate_nats):
        raise ValueError("rate bound non-finite")
    x = n_slots * rate_nats
    if x <= 0.0:
        return 1
    with mpmath.workprec(int(x / _LN2) + 64):
        return int(mpmath.ceil(mpmath.exp(x)))


def _class_matrix(k: int) -> np.ndarray:
    """(2^k, k) +-1 sign rows in canonical class order."""
    if k == 0:
        return np.ones((1, 0))
    return np.array([class_signs(k, c) for c in range(1 << k)], dtype=float)


class Codebook:
    """Lazy random codebook for one layer's vector.

    y_codeword(i) returns an array of shape (2^{k_l}, N, dim): one Gaussian
    sequence per sign realization of the layer's own sign vector.
    b_codeword(j) returns the (N,) canonical class indices of an i.i.d.
    Bernoulli sign sequence. Both are pure functions of (seed, layer, index).
    """

    def __init__(self, lt: LayeredTree, tree: GaussianTree, layer: int,
                 m_y: int, m_b: int, config: SynthesisConfig,
                 upper: "Codebook | None"):
        self.layer = layer
        self.m_y = m_y
        self.m_b = m_b
        self.n_slots = config.block_length
        self.node_order = tuple(sorted(lt.layers[layer]))
        self.latent_ids = lt.latents_at(tree, layer)
        self.k = len(self.latent_ids)
        self.branch_count = 1 << self.k
        self._seed = config.seed
        self._upper = upper
        self._pi = np.array([tree.node(v).pi for v in self.latent_ids])
        self._branch_signs = _class_matrix(self.k)
        latent_pos = [self.node_order.index(v) for v in self.latent_ids]
        self._branch_flips = np.ones((self.branch_count, len(self.node_order)))
        self._branch_flips[:, latent_pos] = self._branch_signs
        self._cache_y: dict[int, np.ndarray] = {}
        self._cache_b: dict[int, np.ndarray] = {}
        self._cache_pick: dict[int, tuple[int, int]] = {}
        self._lock = threading.Lock()

        word_bytes = self.branch_count * self.n_slots * len(self.node_order) * 8
        if word_bytes > config.max_codeword_bytes:
            raise MemoryError(
                f"codeword working set at layer {layer} ({word_bytes} bytes) "
                "exceeds the memory guard"
            )

        is_top = upper is None
        if is_top:
            cov = joint_covariance(tree, (1,) * tree.n_latent)
            self._top_chol = cholesky(cov.submatrix(self.node_order).values, lower=True)
            self._channel = None
        else:
            self._top_chol = None
            self._channel = build_layer_channel(lt, tree, layer)
            upper_latents = lt.latents_at(tree, layer + 1)
            upper_pos = [self._channel.parent_order.index(v) for v in upper_latents]
            self._upper_latent_pos = np.array(upper_pos, dtype=int)
            self._upper_branch_signs = _class_matrix(len(upper_latents))

    def b_codeword(self, j: int) -> np.ndarray:
        """Canonical class index per slot of sign codeword j."""
        if not 0 <= j < self.m_b:
            raise IndexError(f"b index {j} out of range")
        with self._lock:
            cached = self._cache_b.get(j)
        if cached is not None:
            return cached
        gen = _rng.substream(self._seed, "cb_b", self.layer, j)
        u = gen.random((self.n_slots, self.k))
        bits = (u < self._pi[None, :]).astype(np.int64)
        classes = np.zeros(self.n_slots, dtype=np.int64)
        for pos in range(self.k):
            classes |= bits[:, pos] << pos
        with self._lock:
            self._cache_b[j] = classes
        return classes

    def lineage(self, i: int) -> tuple[int, int] | None:
        """Upper-layer (y, b) pick that generated y-codeword i; None at top."""
        if self._upper is None:
            return None
        with self._lock:
            cached = self._cache_pick.get(i)
        if cached is not None:
            return cached
        gen = _rng.substream(self._seed, "pick", self.layer, i)
        pick = (_rng.uniform_index(gen, self._upper.m_y),
                _rng.uniform_index(gen, self._upper.m_b))
        with self._lock:
            self._cache_pick[i] = pick
        return pick

    def y_codeword(self, i: int) -> np.ndarray:
        if not 0 <= i < self.m_y:
            raise IndexError(f"y index {i} out of range")
        with self._lock:
            cached = self._cache_y.get(i)
        if cached is not None:
            return cached
        if self._upper is None:
            word = self._draw_top(i)
        else:
            y_up, b_up = self.lineage(i)
            selected = self._upper.select_branches(y_up, b_up)
            up_classes = self._upper.b_codeword(b_up)
            word = propagate_layer(
                selected, up_classes, self._channel,
                self._upper_latent_pos, self._upper_branch_signs,
                self._branch_flips,
                noise_stream=(self._seed, "cb_z", self.layer, i),
            )
        with self._lock:
            self._cache_y[i] = word
        return word

    def select_branches(self, i: int, j: int) -> np.ndarray:
        """(N, dim) sequence: y-codeword i with the branch at slot t chosen
        by sign codeword j (the transmitted (y|b)^N sequence)."""
        word = self.y_codeword(i)
        classes = self.b_codeword(j)
        return word[classes, np.arange(self.n_slots), :]

    def _draw_top(self, i: int) -> np.ndarray:
        n, dim = self.n_slots, len(self.node_order)
        word = np.empty((self.branch_count, n, dim))
        for c in range(self.branch_count):
            gen = _rng.substream(self._seed, "cb_y", self.layer, i, c)
            base = gen.standard_normal((n, dim)) @ self._top_chol.T
            word[c] = base * self._branch_flips[c][None, :]
        return word


def propagate_layer(selected: np.ndarray, upper_classes: np.ndarray,
                    channel, upper_latent_pos: np.ndarray,
                    upper_branch_signs: np.ndarray, lower_branch_flips: np.ndarray,
                    noise_stream: tuple) -> np.ndarray:
    """Push a selected upper sequence through the layer channel.

    The slot-t input is the upper codeword's branch picked by the sign
    codeword; the effective transition sign of edge (u, v) is the upper sign
    b_u times the lower sign b'_v (latent endpoints only). One output branch
    is produced per lower sign realization, with noise drawn independently
    across branches, so each branch follows its conditional Gaussian law.
    """
    n, d_up = selected.shape
    if channel.transition.shape[1] != d_up:
        raise ValueError("selected sequence does not match the channel input dimension")
    if np.any(upper_classes >= upper_branch_signs.shape[0]):
        raise IndexError("branch index out of range")
    up_flip = np.ones((n, d_up))
    if upper_latent_pos.size:
        up_flip[:, upper_latent_pos] = upper_branch_signs[upper_classes]
    core = (selected * up_flip) @ channel.transition.T  # (N, d_low)

    n_branch, d_low = lower_branch_flips.shape
    word = np.empty((n_branch, n, d_low))
    sd = np.sqrt(channel.noise_variances)
    for c in range(n_branch):
        gen = _rng.substream(*noise_stream, c)
        noise = gen.standard_normal((n, d_low)) * sd[None, :]
        word[c] = core * lower_branch_flips[c][None, :] + noise
    return word


@dataclass(eq=False)
class SynthesisRun:
    """Emitted blocks with full cross-layer lineage."""

    observed_ids: tuple[str, ...]  # column order of samples
    samples: np.ndarray  # (blocks, N, n_observed)
    lineage: list[dict[int, tuple[int, int]]]  # per block: layer -> (y, b)
    config: SynthesisConfig
    codebook_sizes: dict[int, tuple[int, int]] = field(default_factory=dict)

    @property
    def pooled(self) -> np.ndarray:
        """All slots pooled: (blocks * N, n_observed)."""
        return self.samples.reshape(-1, len(self.observed_ids))


def _rates_by_layer(rates) -> dict[int, RateBounds]:
    out = {}
    for rb in rates:
        out[rb.layer] = rb
    return out


def build_codebooks(lt: LayeredTree, tree: GaussianTree, config: SynthesisConfig,
                    rates) -> list[Codebook]:
    """Codebooks for layers top..1 (in that order).

    The codebook at layer l+1 is sized from the layer-l channel bounds:
    R_Y = rate_margin * y_rate_lb and R_Y + R_B = rate_margin * sum_rate_lb.
    """
    by_layer = _rates_by_layer(rates)
    books: list[Codebook] = []
    upper: Codebook | None = None
    for l in range(lt.top_layer, 0, -1):
        rb = by_layer.get(l - 1)
        if rb is None:
            raise ValueError(f"missing rate bounds for layer {l - 1}")
        r_y = config.rate_margin * rb.y_rate_lb
        r_b = config.rate_margin * rb.sum_rate_lb - r_y
        m_y = codebook_size(config.block_length, r_y)
        m_b = codebook_size(config.block_length, r_b)
        if config.force_m_y and l in config.force_m_y:
            m_y = int(config.force_m_y[l])
        book = Codebook(lt, tree, l, m_y, m_b, config, upper)
        books.append(book)
        upper = book
    return books


def synthesize(lt: LayeredTree, tree: GaussianTree, config: SynthesisConfig,
               rates, threads: int | None = None) -> SynthesisRun:
    """Emit config.blocks output blocks of length N.

    Each block uniformly picks a (y, b) pair at layer 1, applies the layer-0
    channel with fresh per-block noise, and reads observed nodes at higher
    layers out of the same lineage's selected branches. Deterministic given
    the seed and independent of the worker count.
    """
    books = build_codebooks(lt, tree, config, rates)
    by_layer = {book.layer: book for book in books}
    bottom = by_layer[1]
    channel0 = build_layer_channel(lt, tree, 0)
    n, blocks = config.block_length, config.blocks

    observed_ids = tree.observed_ids
    col_of = {v: i for i, v in enumerate(observed_ids)}
    # observed nodes by layer, with their column inside the layer vector
    obs_at_layer: dict[int, list[tuple[int, int]]] = {}
    for v in observed_ids:
        l = lt.layer_of[v]
        if l == 0:
            continue
        book = by_layer[l]
        obs_at_layer.setdefault(l, []).append((book.node_order.index(v), col_of[v]))
    layer0_cols = [col_of[v] for v in channel0.node_order]

    upper_latents1 = lt.latents_at(tree, 1)
    upper_pos1 = np.array([channel0.parent_order.index(v) for v in upper_latents1], dtype=int)
    upper_signs1 = _class_matrix(len(upper_latents1))
    sd0 = np.sqrt(channel0.noise_variances)

    def resolve_lineage(y1: int, b1: int) -> dict[int, tuple[int, int]]:
        chain = {1: (y1, b1)}
        l, idx = 1, y1
        while by_layer[l].lineage(idx) is not None:
            idx, b_idx = by_layer[l].lineage(idx)
            l += 1
            chain[l] = (idx, b_idx)
        return chain

    def emit_block(j: int) -> tuple[np.ndarray, dict[int, tuple[int, int]]]:
        gen = _rng.substream(config.seed, "block", j)
        y1 = _rng.uniform_index(gen, bottom.m_y)
        b1 = _rng.uniform_index(gen, bottom.m_b)
        chain = resolve_lineage(y1, b1)

        out = np.empty((n, len(observed_ids)))
        selected = bottom.select_branches(y1, b1)
        classes1 = bottom.b_codeword(b1)
        up_flip = np.ones_like(selected)
        if upper_pos1.size:
            up_flip[:, upper_pos1] = upper_signs1[classes1]
        noise = gen.standard_normal((n, len(channel0.node_order))) * sd0[None, :]
        out[:, layer0_cols] = (selected * up_flip) @ channel0.transition.T + noise

        for l, cols in obs_at_layer.items():
            y_idx, b_idx = chain[l]
            word = by_layer[l].y_codeword(y_idx)
            classes = by_layer[l].b_codeword(b_idx)
            branch_values = word[classes, np.arange(n), :]
            for layer_col, out_col in cols:
                out[:, out_col] = branch_values[:, layer_col]
        return out, chain

    results = _rng.map_chunks(emit_block, blocks, threads)
    samples = np.stack([r[0] for r in results])
    lineage = [r[1] for r in results]
    sizes = {book.layer: (book.m_y, book.m_b) for book in books}
    return SynthesisRun(observed_ids, samples, lineage, config, sizes)
