"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 usage error. All randomness
flows from --seed; identical argv and seed produce byte-identical outputs
regardless of GTSYNTH_THREADS. Every command that writes files also writes a
manifest.json describing the invocation, and `replay` re-executes a manifest.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .layering import HyperChainViolation, assign_layers, restructure
from .rates import layer_rate_bounds, optimize_pi as _optimize_pi
from .signs import enumerate_signs
from .synthesis import SynthesisConfig, SynthesisRun, synthesize
from .tree import (TreeFormatError, observed_covariance, parse_tree,
                   validate_tree)
from .validation import empirical_covariance, fidelity_report, independence_tests

_LN2 = math.log(2.0)
_MIN_RATE_MC = 1000  # closed-form sum rate only; MC side unused


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _load_tree(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise click.ClickException(f"cannot read tree file: {exc}")
    try:
        return parse_tree(text)
    except TreeFormatError as exc:
        raise click.ClickException(f"invalid tree document: {exc}")


def _layered(tree):
    result = assign_layers(tree)
    if isinstance(result, list):
        return restructure(tree), result
    return result, []


def _write_manifest(out_dir: Path, command: str, tree_path: str | None,
                    args: dict, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "tree": tree_path,
        "args": args,
        "outputs": outputs,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _ensure_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


tree_option = click.option("-t", "--tree", "tree_path", required=True,
                           type=click.Path(), help="Tree JSON document.")
seed_option = click.option("--seed", type=int, default=0, show_default=True,
                           help="Master 64-bit seed; all randomness derives from it.")
bits_option = click.option("--bits", is_flag=True, help="Report rates in bits instead of nats.")


@click.group()
@click.version_option(__version__)
def main():
    """Latent Gaussian tree synthesis toolkit."""


@main.command()
@tree_option
def validate(tree_path):
    """Check tree invariants; exit 1 when violations exist."""
    tree = _load_tree(tree_path)
    violations = validate_tree(tree)
    for v in violations:
        click.echo(v)
    if violations:
        sys.exit(1)
    click.echo("ok")


@main.command()
@tree_option
@click.option("-o", "--out", "out_path", type=click.Path(), default=None,
              help="Write the layering as JSON.")
def layerize(tree_path, out_path):
    """Assign layers (restructuring intra-layer conflicts away)."""
    tree = _load_tree(tree_path)
    try:
        lt, conflicts = _layered(tree)
    except HyperChainViolation as exc:
        click.echo(f"hyper-chain violation: {exc}", err=True)
        sys.exit(1)
    doc = {
        "layers": [list(layer) for layer in lt.layers],
        "parent_of": dict(sorted(lt.parent_of.items())),
        "top_layer": lt.top_layer,
        "resolved_conflicts": [list(c) for c in conflicts],
    }
    text = json.dumps(doc, indent=2) + "\n"
    if out_path:
        out = _ensure_dir(Path(out_path))
        (out / "layering.json").write_text(text)
        _write_manifest(out, "layerize", tree_path, {}, ["layering.json"])
    else:
        click.echo(text, nl=False)


@main.group()
def signs():
    """Sign-class utilities."""


@signs.command("enumerate")
@tree_option
def signs_enumerate(tree_path):
    """One line per sign class: bitstring, max observed-covariance deviation."""
    tree = _load_tree(tree_path)
    classes = enumerate_signs(tree)
    ref = observed_covariance(tree, classes[-1]).values
    for assignment in classes:
        dev = float(np.max(np.abs(observed_covariance(tree, assignment).values - ref)))
        click.echo(f"{assignment.bitstring()},{_fmt(dev)}")


def _rates_rows(tree, lt, samples, seed, threads=None):
    rows = []
    for l in range(lt.top_layer):
        pi = [tree.node(v).pi for v in lt.latents_at(tree, l + 1)]
        rb = layer_rate_bounds(lt, tree, l, mc=samples, seed=seed, threads=threads)
        rows.append((rb, pi))
    return rows


def _write_rates_csv(path: Path, rows, bits: bool) -> None:
    scale = 1.0 / _LN2 if bits else 1.0
    k_max = max((len(pi) for _, pi in rows), default=0)
    header = ["layer"] + [f"pi{i + 1}" for i in range(k_max)] + \
             ["sum_rate_lb", "y_rate_lb", "ci"]
    lines = [",".join(header)]
    for rb, pi in rows:
        cells = [str(rb.layer)]
        cells += [_fmt(p) for p in pi] + [""] * (k_max - len(pi))
        cells += [_fmt(rb.sum_rate_lb * scale), _fmt(rb.y_rate_lb * scale),
                  _fmt(rb.y_rate_ci * scale)]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


@main.command()
@tree_option
@click.option("--samples", type=int, default=200_000, show_default=True,
              help="Monte Carlo budget per layer for the Y-rate bound.")
@seed_option
@bits_option
@click.option("-o", "--out", "out_path", type=click.Path(), default=None,
              help="Output CSV path (default: stdout).")
def rates(tree_path, samples, seed, bits, out_path):
    """Per-layer rate lower bounds (sum rate closed form, Y rate by MC)."""
    tree = _load_tree(tree_path)
    try:
        lt, _ = _layered(tree)
    except HyperChainViolation as exc:
        click.echo(f"hyper-chain violation: {exc}", err=True)
        sys.exit(1)
    rows = _rates_rows(tree, lt, samples, seed)
    if out_path:
        out_file = Path(out_path)
        if out_file.suffix != ".csv":
            out_dir = _ensure_dir(out_file)
            out_file = out_dir / "rates.csv"
        else:
            out_file.parent.mkdir(parents=True, exist_ok=True)
        _write_rates_csv(out_file, rows, bits)
        _write_manifest(out_file.parent, "rates", tree_path,
                        {"samples": samples, "seed": seed, "bits": bits},
                        [out_file.name])
    else:
        scale = 1.0 / _LN2 if bits else 1.0
        for rb, pi in rows:
            click.echo(f"layer {rb.layer}: sum_rate_lb={_fmt(rb.sum_rate_lb * scale)} "
                       f"y_rate_lb={_fmt(rb.y_rate_lb * scale)} ci={_fmt(rb.y_rate_ci * scale)}")


@main.command("optimize-pi")
@tree_option
@click.option("--layer", type=int, default=0, show_default=True,
              help="Channel layer whose upper sign parameters are optimized.")
@click.option("--grid-step", type=float, default=0.05, show_default=True)
@click.option("--samples", type=int, default=200_000, show_default=True,
              help="Monte Carlo budget per grid point.")
@seed_option
@bits_option
@click.option("-o", "--out", "out_path", type=click.Path(), default=None,
              help="Output directory (curve.csv, curve.png).")
def optimize_pi_cmd(tree_path, layer, grid_step, samples, seed, bits, out_path):
    """Grid search for the sign parameters minimizing the Y-rate bound."""
    tree = _load_tree(tree_path)
    try:
        lt, _ = _layered(tree)
    except HyperChainViolation as exc:
        click.echo(f"hyper-chain violation: {exc}", err=True)
        sys.exit(1)
    if not 0 <= layer < lt.top_layer:
        raise click.UsageError(f"layer must lie in [0, {lt.top_layer})")
    pi_star, curve = _optimize_pi(lt, tree, layer, grid_step, samples, seed)
    sum_rate = layer_rate_bounds(lt, tree, layer, mc=_MIN_RATE_MC, seed=seed).sum_rate_lb
    scale = 1.0 / _LN2 if bits else 1.0
    click.echo("pi_star=" + ",".join(_fmt(p) for p in pi_star))
    if out_path:
        out = _ensure_dir(out_path)
        k = pi_star.size
        lines = [",".join(["layer"] + [f"pi{i + 1}" for i in range(k)] +
                          ["sum_rate_lb", "y_rate_lb", "ci"])]
        for p, est, ci in curve:
            cells = [str(layer)] + [_fmt(p)] * k + \
                [_fmt(sum_rate * scale), _fmt(est * scale), _fmt(ci * scale)]
            lines.append(",".join(cells))
        (out / "curve.csv").write_text("\n".join(lines) + "\n")
        from .plots import fig_pi_curve
        fig_pi_curve(curve, out / "curve.png", bits)
        _write_manifest(out, "optimize-pi", tree_path,
                        {"layer": layer, "grid_step": grid_step,
                         "samples": samples, "seed": seed, "bits": bits},
                        ["curve.csv", "curve.png"])


def _write_blocks_csv(path: Path, run: SynthesisRun) -> None:
    header = "block,t," + ",".join(run.observed_ids)
    with path.open("w") as fh:
        fh.write(header + "\n")
        blocks, n, _ = run.samples.shape
        for j in range(blocks):
            for t in range(n):
                row = run.samples[j, t]
                fh.write(f"{j},{t}," + ",".join(_fmt(v) for v in row) + "\n")


def read_blocks_csv(path: Path):
    """Load a blocks.csv back into (node_ids, samples array)."""
    with path.open() as fh:
        header = fh.readline().strip().split(",")
        node_ids = tuple(header[2:])
        rows = [line.strip().split(",") for line in fh if line.strip()]
    blocks = int(rows[-1][0]) + 1
    n = int(rows[-1][1]) + 1
    samples = np.empty((blocks, n, len(node_ids)))
    for row in rows:
        samples[int(row[0]), int(row[1])] = [float(v) for v in row[2:]]
    return node_ids, samples


@main.command()
@tree_option
@click.option("-N", "block_length", type=int, default=64, show_default=True,
              help="Block length (channel uses per block).")
@click.option("--blocks", type=int, default=1000, show_default=True)
@click.option("--rate-margin", type=float, default=1.1, show_default=True,
              help="Multiplier >= 1 applied to the rate lower bounds.")
@click.option("--samples", type=int, default=200_000, show_default=True,
              help="Monte Carlo budget for the rate bounds.")
@seed_option
@click.option("-o", "--out", "out_path", type=click.Path(), required=True,
              help="Output directory (blocks.csv, lineage.json).")
def synthesize_cmd(tree_path, block_length, blocks, rate_margin, samples, seed, out_path):
    """Run the layered random-codebook synthesis and emit output blocks."""
    tree = _load_tree(tree_path)
    violations = validate_tree(tree)
    if violations:
        for v in violations:
            click.echo(v, err=True)
        sys.exit(1)
    try:
        lt, _ = _layered(tree)
    except HyperChainViolation as exc:
        click.echo(f"hyper-chain violation: {exc}", err=True)
        sys.exit(1)
    rate_rows = _rates_rows(tree, lt, samples, seed)
    config = SynthesisConfig(block_length=block_length, blocks=blocks,
                             rate_margin=rate_margin, seed=seed)
    run = synthesize(lt, tree, config, [rb for rb, _ in rate_rows])
    out = _ensure_dir(out_path)
    _write_blocks_csv(out / "blocks.csv", run)
    lineage_doc = {
        str(block): {str(layer): list(pick) for layer, pick in sorted(chain.items())}
        for block, chain in enumerate(run.lineage)
    }
    (out / "lineage.json").write_text(json.dumps(lineage_doc) + "\n")
    _write_manifest(out, "synthesize", tree_path,
                    {"N": block_length, "blocks": blocks, "rate_margin": rate_margin,
                     "samples": samples, "seed": seed},
                    ["blocks.csv", "lineage.json"])
    sizes = ", ".join(f"layer {l}: M_Y={my} M_B={mb}"
                      for l, (my, mb) in sorted(run.codebook_sizes.items()))
    click.echo(f"emitted {blocks} blocks of length {block_length} ({sizes})")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@tree_option
@click.option("--bins", type=int, default=64, show_default=True)
@seed_option
@click.option("-o", "--out", "out_path", type=click.Path(), default=None,
              help="Output directory (default: the run directory).")
def report(run_dir, tree_path, bins, seed, out_path):
    """Fidelity report for a synthesized run, with figures."""
    tree = _load_tree(tree_path)
    run_dir = Path(run_dir)
    node_ids, samples = read_blocks_csv(run_dir / "blocks.csv")
    lineage_path = run_dir / "lineage.json"
    lineage = []
    if lineage_path.exists():
        raw = json.loads(lineage_path.read_text())
        lineage = [
            {int(l): tuple(pick) for l, pick in raw[str(block)].items()}
            for block in range(len(raw))
        ]
    config = SynthesisConfig(block_length=samples.shape[1], blocks=samples.shape[0],
                             seed=seed)
    run = SynthesisRun(node_ids, samples, lineage, config)
    target = observed_covariance(tree, (1,) * tree.n_latent)
    rep = fidelity_report(run, target, bins=bins, seed=seed)
    if lineage:
        try:
            rep.verdicts.update(independence_tests(run, seed=seed, tests=("sign_groups",)))
        except ValueError as exc:
            rep.verdicts["sign_groups"] = {"skipped": str(exc)}
        rep.verdicts.update(independence_tests(run, seed=seed, tests=("cross_block",)))

    out = _ensure_dir(out_path) if out_path else run_dir
    (out / "report.json").write_text(json.dumps(rep.as_dict(), indent=2) + "\n")
    summary_header = "max_cov_error,frobenius_error,max_marginal_tv,pinsker_tv_bound,pooled_slots"
    summary = ",".join([
        _fmt(rep.max_cov_error), _fmt(rep.frobenius_error),
        _fmt(max(rep.marginal_tv.values())), _fmt(rep.pinsker_tv_bound),
        str(rep.pooled_slots),
    ])
    (out / "report_summary.csv").write_text(summary_header + "\n" + summary + "\n")

    from .plots import fig_cov_error, fig_marginals
    emp = empirical_covariance(run.pooled, node_ids)
    target_aligned = target.submatrix(node_ids)
    fig_marginals(run.pooled, node_ids, out / "marginals.png")
    fig_cov_error(emp.values, target_aligned.values, node_ids, out / "cov_error.png")
    _write_manifest(out, "report", tree_path,
                    {"run_dir": str(run_dir), "bins": bins, "seed": seed},
                    ["report.json", "report_summary.csv", "marginals.png", "cov_error.png"])
    click.echo(f"max_cov_error={_fmt(rep.max_cov_error)} "
               f"pinsker_tv_bound={_fmt(rep.pinsker_tv_bound)}")


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True))
def replay(manifest_path):
    """Re-execute the command recorded in a manifest."""
    doc = json.loads(Path(manifest_path).read_text())
    command = doc["command"]
    args = doc.get("args", {})
    out_dir = str(Path(manifest_path).parent)
    argv = [command]
    if doc.get("tree"):
        argv += ["-t", doc["tree"]]
    flag_names = {"grid_step": "--grid-step", "rate_margin": "--rate-margin",
                  "N": "-N", "run_dir": None}
    positional = []
    for key, value in args.items():
        if key == "run_dir":
            positional.append(value)
            continue
        flag = flag_names.get(key, f"--{key}")
        if isinstance(value, bool):
            if value:
                argv.append(flag)
        else:
            argv += [flag, str(value)]
    argv = [command] + positional + argv[1:]
    if command in {"layerize", "rates", "optimize-pi", "synthesize", "report"}:
        argv += ["-o", out_dir]
    main(args=argv, standalone_mode=False)


if __name__ == "__main__":
    main()
