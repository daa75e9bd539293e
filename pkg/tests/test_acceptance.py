"""Acceptance gate: every criterion at its stated tolerance and runtime.

Each test prints one pass/fail line; run with `pytest tests/test_acceptance.py -v -s`.
"""

from __future__ import annotations

import time

import numpy as np
import pytest
from click.testing import CliRunner

from gtsynth.cli import main as cli_main
from gtsynth.layering import assign_layers, restructure
from gtsynth.rates import (concavity_check, layer_rate_bounds,
                           max_hessian_eigenvalue, optimize_pi)
from gtsynth.signs import enumerate_signs, verify_sign_invariance
from gtsynth.synthesis import SynthesisConfig, synthesize
from gtsynth.tree import observed_covariance, validate_tree
from gtsynth.validation import fidelity_report, independence_tests
from conftest import random_valid_tree, tree_doc


class Criterion:
    """Timed context that prints one pass/fail line per criterion."""

    def __init__(self, number: int, label: str, limit_s: float):
        self.number = number
        self.label = label
        self.limit_s = limit_s

    def __enter__(self):
        self.t0 = time.monotonic()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.monotonic() - self.t0
        status = "PASS" if exc_type is None and elapsed < self.limit_s else "FAIL"
        print(f"[{status}] criterion {self.number}: {self.label} "
              f"({elapsed:.1f}s / limit {self.limit_s:.0f}s)")
        if exc_type is None and elapsed >= self.limit_s:
            raise AssertionError(
                f"criterion {self.number} exceeded runtime limit: "
                f"{elapsed:.1f}s >= {self.limit_s}s")
        return False


def test_criterion_1_sign_singularity():
    with Criterion(1, "sign singularity across 50 random trees", 10.0):
        rng = np.random.default_rng(20240501)
        for _ in range(50):
            tree = random_valid_tree(rng, max_observed=6, max_latent=4)
            assert validate_tree(tree) == []
            assert len(tree.observed_ids) <= 6 and tree.n_latent <= 4
            assert len(enumerate_signs(tree)) == 2 ** tree.n_latent
            assert verify_sign_invariance(tree) <= 1e-12


def test_criterion_2_sum_rate_fixedness(star_tree, fig2_tree):
    with Criterion(2, "sum rate bit-identical across pi grid and sign classes", 5.0):
        for tree in (star_tree, fig2_tree):
            lt = assign_layers(tree)
            k_up = len(lt.latents_at(tree, 1))
            reference = None
            for p in np.linspace(0.1, 0.9, 9):
                rb = layer_rate_bounds(lt, tree, 0, pi=[p] * k_up, mc=1000, seed=0)
                reference = rb.sum_rate_lb if reference is None else reference
                assert rb.sum_rate_lb == reference
            for cls in range(2 ** tree.n_latent):
                signs = tuple(1 if (cls >> j) & 1 else -1
                              for j in range(tree.n_latent))
                rb = layer_rate_bounds(lt, tree, 0, mc=1000, seed=0, sign_class=signs)
                assert rb.sum_rate_lb == reference


def test_criterion_3_uniform_sign_optimum(star_tree, dumbbell_tree):
    with Criterion(3, "uniform sign parameters optimal (star and two-latent layer)", 300.0):
        for tree in (star_tree, dumbbell_tree):
            lt = assign_layers(tree)
            pi_star, curve = optimize_pi(lt, tree, 0, grid_step=0.05,
                                         mc_budget=200_000, seed=31)
            assert np.all(np.abs(pi_star - 0.5) <= 0.05 + 1e-12)
            by_p = {round(p, 3): (est, ci) for p, est, ci in curve}
            for p in (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45):
                a, ca = by_p[p]
                b, cb = by_p[round(1.0 - p, 3)]
                assert abs(a - b) <= 3.0 * (ca + cb)


def test_criterion_4_concavity(star_tree):
    with Criterion(4, "conditional entropy concave in eta; harness self-test", 120.0):
        assert concavity_check(star_tree, seed=17) <= 1e-3
        convex = lambda eta: float(np.sum(np.asarray(eta) ** 2))
        points = [np.array([0.5, 0.5]), np.array([0.25, 0.75])]
        assert max_hessian_eigenvalue(convex, points, step=0.02) > 1e-3


def test_criterion_5_synthesis_fidelity(star_tree):
    with Criterion(5, "star fidelity at 1.1x rates, N=64, 2000 blocks", 120.0):
        lt = assign_layers(star_tree)
        rates = [layer_rate_bounds(lt, star_tree, 0, mc=200_000, seed=51)]
        config = SynthesisConfig(block_length=64, blocks=2000, rate_margin=1.1,
                                 seed=51)
        run = synthesize(lt, star_tree, config, rates)
        target = observed_covariance(star_tree, (1,))
        rep = fidelity_report(run, target, bins=64, seed=51)
        assert rep.pooled_slots == 128_000
        assert rep.max_cov_error <= 0.02
        assert all(tv <= 0.015 for tv in rep.marginal_tv.values())


def test_criterion_6_under_rate_detection(star_tree):
    with Criterion(6, "forced M_Y = 1 rejected by cross-block test (>=19/20)", 120.0):
        lt = assign_layers(star_tree)
        rates = [layer_rate_bounds(lt, star_tree, 0, mc=50_000, seed=61)]
        rejections = 0
        for rep in range(20):
            config = SynthesisConfig(block_length=64, blocks=200, rate_margin=1.1,
                                     seed=1000 + rep, force_m_y={1: 1})
            run = synthesize(lt, star_tree, config, rates)
            verdict = independence_tests(run, tests=("cross_block",), seed=rep)
            rejections += int(not verdict["cross_block"]["pass"])
        assert rejections >= 19


def test_criterion_7_index_matching(fig6_tree):
    with Criterion(7, "restructured tree cross-layer covariance via lineage matching", 180.0):
        lt = restructure(fig6_tree)
        rates = [layer_rate_bounds(lt, fig6_tree, l, mc=200_000, seed=71)
                 for l in range(lt.top_layer)]
        config = SynthesisConfig(block_length=64, blocks=2000, rate_margin=1.1,
                                 seed=71)
        run = synthesize(lt, fig6_tree, config, rates)
        emp = np.cov(run.pooled, rowvar=False, ddof=1)
        exact = observed_covariance(fig6_tree, (1,) * 5).values
        obs = list(run.observed_ids)
        low = [obs.index("x6"), obs.index("x7")]
        high = [obs.index(f"x{i}") for i in range(1, 6)]
        cross = np.abs(emp[np.ix_(high, low)] - exact[np.ix_(high, low)])
        assert cross.max() <= 0.03


def test_criterion_8_sign_independence(star_tree):
    with Criterion(8, "sign-group two-sample tests at Bonferroni alpha 0.01", 60.0):
        lt = assign_layers(star_tree)
        rates = [layer_rate_bounds(lt, star_tree, 0, mc=50_000, seed=23)]
        config = SynthesisConfig(block_length=18, blocks=78_000, rate_margin=1.0,
                                 seed=23)
        run = synthesize(lt, star_tree, config, rates)
        verdict = independence_tests(run, tests=("sign_groups",))
        assert verdict["sign_groups"]["groups"] >= 2
        assert verdict["sign_groups"]["pass"]


def test_criterion_9_cli_determinism(tmp_path, star_tree, monkeypatch):
    with Criterion(9, "byte-identical CLI outputs for GTSYNTH_THREADS in {1,4}", 120.0):
        runner = CliRunner()
        tree_file = tmp_path / "star.json"
        tree_file.write_text(tree_doc(star_tree))
        outputs = {}
        for threads in ("1", "4"):
            monkeypatch.setenv("GTSYNTH_THREADS", threads)
            syn_dir = tmp_path / f"syn{threads}"
            result = runner.invoke(cli_main, [
                "synthesize", "-t", str(tree_file), "-N", "32", "--blocks", "200",
                "--rate-margin", "1.1", "--samples", "50000", "--seed", "91",
                "-o", str(syn_dir)])
            assert result.exit_code == 0, result.output
            rate_dir = tmp_path / f"rates{threads}"
            result = runner.invoke(cli_main, [
                "rates", "-t", str(tree_file), "--samples", "50000",
                "--seed", "91", "-o", str(rate_dir)])
            assert result.exit_code == 0, result.output
            outputs[threads] = {
                "blocks": (syn_dir / "blocks.csv").read_bytes(),
                "lineage": (syn_dir / "lineage.json").read_bytes(),
                "manifest": (syn_dir / "manifest.json").read_bytes(),
                "rates": (rate_dir / "rates.csv").read_bytes(),
            }
        assert outputs["1"] == outputs["4"]
