"""Command-line entry point: train, compose, ablate, eval, gap-verify.

Every command is deterministic given (config, seed). Exit codes: 0 ok,
1 config error, 2 numerical failure, 3 acceptance-check failure.
"""

from __future__ import annotations

import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import report
from .chain import FactorChain
from .config import ExperimentConfig, load_config
from .denoiser import (TrainingDiverged, init_denoiser, load_checkpoint, make_pair,
                       save_checkpoint, train_step, Adam, Trainer, CheckpointMismatch)
from .bethegap import (BoundaryEvidenceZero, flip_channel, gap_covariance, gap_direct,
                       random_chain, sticky_chain, verify_identity)
from .messages import AsyncConfig, build_sync_system
from .sampler import (GuidanceConfig, NumericalFailure, compose_diffcollage,
                      compose_guided, compose_independent)
from .schedule import ConfigError
from .tasks import SuccessThresholds, evaluate_plan, gen_arcs, gen_segments

EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_ACCEPTANCE = 3


def _load(config_path, out_override):
    cfg = load_config(config_path)
    if out_override:
        cfg.output_dir = Path(out_override)
    return cfg


def _dataset(cfg: ExperimentConfig):
    rng = np.random.default_rng(cfg.task.seed)
    if cfg.task.kind == "arcs":
        return gen_arcs(cfg.task.radius, cfg.task.F, cfg.task.count, rng)
    return gen_segments(cfg.task.N, rng, F=cfg.task.F,
                        demos_per_pair=max(cfg.task.count // cfg.task.N, 1))


def _characteristic_length(cfg, dataset) -> float:
    return dataset.chord if cfg.task.kind == "arcs" else dataset.corridor_width


def _resolve_anchors(cfg, dataset):
    if cfg.compose.start is not None and cfg.compose.goal is not None:
        return cfg.compose.start, cfg.compose.goal
    if cfg.task.kind == "arcs":
        anchor = np.array([cfg.task.radius, 0.0])
        return anchor, anchor
    i, j = cfg.compose.pair if cfg.compose.pair is not None else (0, 0)
    return dataset.starts[i], dataset.goals[j]


def _checkpoint_paths(cfg):
    return cfg.output_dir / "checkpoint.npz", cfg.output_dir / "checkpoint_boundary.npz"


@click.group()
def main():
    """Compositional trajectory planning via guided diffusion over chunk chains."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default=None, help="override output directory")
def train(config_path, out):
    """Train the chunk denoiser (and the boundary-marginal denoiser) and
    write checkpoints plus a loss-curve CSV."""
    try:
        cfg = _load(config_path, out)
        dataset = _dataset(cfg)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)

    sched = cfg.schedule.build()
    rng = np.random.default_rng(cfg.train.seed)
    chunks = dataset.chunks
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path, boundary_path = _checkpoint_paths(cfg)

    try:
        losses = _train_model(cfg, sched, rng, chunks, dataset.F, 2)
        save_checkpoint(ckpt_path, losses["pair"], sched)
        report.write_csv(cfg.output_dir / "train_loss.csv", ["step", "loss"],
                         list(enumerate(losses["losses"])))
        report.loss_curve_figure(cfg.output_dir / "train_loss.svg", losses["losses"])

        frames = np.concatenate([chunks[:, 0], chunks[:, -1]])[:, None, :]
        b = _train_model(cfg, sched, rng, frames, 1, 2,
                         steps=max(cfg.train.steps // 2, 1))
        save_checkpoint(boundary_path, b["pair"], sched)
    except TrainingDiverged as e:
        click.echo(f"numerical failure: {e}", err=True)
        sys.exit(EXIT_NUMERICAL)
    click.echo(f"wrote {ckpt_path} and {boundary_path}")


def _train_model(cfg, sched, rng, chunks, F, d, steps=None):
    model = init_denoiser(F, d, hidden=cfg.model.hidden, time_dim=cfg.model.time_dim,
                          rng=rng, nonlinearity=cfg.model.nonlinearity)
    pair = make_pair(model, decay=cfg.train.ema_decay)
    trainer = Trainer(pair, sched, Adam(pair.latest.params(), lr=cfg.train.lr))
    losses = []
    n_steps = cfg.train.steps if steps is None else steps
    for _ in range(n_steps):
        idx = rng.integers(0, len(chunks), size=min(cfg.train.batch, len(chunks)))
        losses.append(train_step(trainer, chunks[idx], rng))
    return {"pair": pair, "losses": losses}


def _run_one_seed(cfg, sched, pair, boundary_pair, chain, seed, steps=None,
                  w_sync=None, w_async=None):
    gcfg = GuidanceConfig(
        g_r=cfg.sampler.g_r, steps=steps or cfg.sampler.steps, seed=seed,
        w_sync=cfg.sampler.w_sync if w_sync is None else w_sync,
        w_async=cfg.sampler.w_async if w_async is None else w_async)
    if cfg.sampler.kind == "guided":
        sync = build_sync_system(chain)
        return compose_guided(pair, chain, sched, sync,
                              AsyncConfig(gamma=cfg.sampler.gamma), gcfg)
    if cfg.sampler.kind == "independent":
        return compose_independent(pair, chain, sched, gcfg)
    return compose_diffcollage(pair, boundary_pair, chain, sched, gcfg)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default=None)
@click.option("--threads", default=1, show_default=True)
def compose(config_path, out, threads):
    """Run the configured sampler over all seeds; write per-step metrics,
    plan and chunk CSVs, and an SVG overlay per seed."""
    try:
        cfg = _load(config_path, out)
        dataset = _dataset(cfg)
        pair, boundary_pair, sched = _load_models(cfg)
    except (ConfigError, FileNotFoundError, CheckpointMismatch, ValueError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)

    start, goal = _resolve_anchors(cfg, dataset)
    chain = FactorChain(n=cfg.sampler.n, F=cfg.task.F, d=2, start=start, goal=goal)
    thresholds = SuccessThresholds.from_length(_characteristic_length(cfg, dataset))

    def run(seed):
        trace = _run_one_seed(cfg, sched, pair, boundary_pair, chain, seed)
        report.write_metrics_csv(cfg.output_dir / f"metrics_seed{seed}.csv", trace)
        report.write_plan_csv(cfg.output_dir / f"plan_seed{seed}.csv", trace.plan)
        report.write_chunks_csv(cfg.output_dir / f"chunks_seed{seed}.csv", trace.chunks)
        report.overlay_figure(cfg.output_dir / f"overlay_seed{seed}.svg", trace, chain,
                              title=f"{cfg.sampler.kind} seed={seed}")
        metrics = evaluate_plan(trace.plan, chain, thresholds, chunks=trace.chunks)
        metrics.update(seed=seed, nfe=trace.nfe, boundary_nfe=trace.boundary_nfe,
                       max_residual=trace.max_boundary_residual(chain))
        return metrics

    try:
        with ThreadPoolExecutor(max_workers=max(threads, 1)) as ex:
            results = list(ex.map(run, cfg.sampler.seeds))
    except (NumericalFailure, FloatingPointError) as e:
        click.echo(f"numerical failure: {e}", err=True)
        sys.exit(EXIT_NUMERICAL)

    cols = ["seed", "success", "start_err", "goal_err", "max_transition_err",
            "max_residual", "smoothness", "nfe", "boundary_nfe"]
    report.write_csv(cfg.output_dir / "compose_summary.csv", cols,
                     [[r[c] if c != "success" else int(r[c]) for c in cols] for r in results])
    med = statistics.median(r["max_residual"] for r in results)
    click.echo(f"median max boundary residual over {len(results)} seeds: {med:.6g}")


def _load_models(cfg):
    sched = cfg.schedule.build()
    ckpt_path, boundary_path = _checkpoint_paths(cfg)
    if not ckpt_path.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    pair = load_checkpoint(ckpt_path, sched)
    boundary_pair = load_checkpoint(boundary_path, sched) if boundary_path.exists() else None
    if cfg.sampler.kind == "diffcollage" and boundary_pair is None:
        raise FileNotFoundError(f"boundary checkpoint not found: {boundary_path}")
    return pair, boundary_pair, sched


ABLATION_SCHEMES = {"sync_only": (1.0, 0.0), "async_only": (0.0, 1.0), "joint": (1.0, 1.0)}
ABLATION_STEPS = (50, 100, 300)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", default=None)
@click.option("--threads", default=1, show_default=True)
def ablate(config_path, out, threads):
    """Sweep {sync_only, async_only, joint} x steps x seeds; emit per-run
    rows plus per-cell medians/means and a summary figure."""
    try:
        cfg = _load(config_path, out)
        dataset = _dataset(cfg)
        pair, boundary_pair, sched = _load_models(cfg)
    except (ConfigError, FileNotFoundError, CheckpointMismatch, ValueError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)

    start, goal = _resolve_anchors(cfg, dataset)
    chain = FactorChain(n=cfg.sampler.n, F=cfg.task.F, d=2, start=start, goal=goal)
    thresholds = SuccessThresholds.from_length(_characteristic_length(cfg, dataset))

    cells = [(scheme, steps, seed) for scheme in ABLATION_SCHEMES
             for steps in ABLATION_STEPS for seed in cfg.sampler.seeds]

    def run(cell):
        scheme, steps, seed = cell
        w_sync, w_async = ABLATION_SCHEMES[scheme]
        trace = _run_one_seed(cfg, sched, pair, boundary_pair, chain, seed,
                              steps=steps, w_sync=w_sync, w_async=w_async)
        metrics = evaluate_plan(trace.plan, chain, thresholds, chunks=trace.chunks)
        return {"scheme": scheme, "steps": steps, "seed": seed,
                "residual": trace.max_boundary_residual(chain),
                "success": int(metrics["success"]),
                "smoothness": metrics["smoothness"]}

    try:
        with ThreadPoolExecutor(max_workers=max(threads, 1)) as ex:
            rows = list(ex.map(run, cells))
    except (NumericalFailure, FloatingPointError) as e:
        click.echo(f"numerical failure: {e}", err=True)
        sys.exit(EXIT_NUMERICAL)

    report.write_csv(cfg.output_dir / "ablate.csv",
                     ["scheme", "steps", "seed", "residual", "success", "smoothness"],
                     [[r[c] for c in ("scheme", "steps", "seed", "residual",
                                      "success", "smoothness")] for r in rows])
    summary = []
    for scheme in ABLATION_SCHEMES:
        for steps in ABLATION_STEPS:
            cell = [r for r in rows if r["scheme"] == scheme and r["steps"] == steps]
            summary.append({
                "scheme": scheme, "steps": steps,
                "median_residual": statistics.median(r["residual"] for r in cell),
                "mean_residual": statistics.fmean(r["residual"] for r in cell),
                "success_rate": statistics.fmean(r["success"] for r in cell),
            })
    report.write_csv(cfg.output_dir / "ablate_summary.csv",
                     ["scheme", "steps", "median_residual", "mean_residual", "success_rate"],
                     [[r["scheme"], r["steps"], r["median_residual"], r["mean_residual"],
                       r["success_rate"]] for r in summary])
    report.ablation_figure(cfg.output_dir / "ablate_summary.svg", summary)
    for r in summary:
        click.echo(f"{r['scheme']:>10} steps={r['steps']:>3} "
                   f"median_residual={r['median_residual']:.6g} "
                   f"success_rate={r['success_rate']:.2f}")


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True))
@click.option("--chunks", "chunks_path", default=None, type=click.Path(exists=True))
@click.option("--out", default=None)
def eval_cmd(config_path, plan_path, chunks_path, out):
    """Recompute plan metrics from exported CSVs."""
    try:
        cfg = _load(config_path, out)
        dataset = _dataset(cfg)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    start, goal = _resolve_anchors(cfg, dataset)
    chain = FactorChain(n=cfg.sampler.n, F=cfg.task.F, d=2, start=start, goal=goal)
    thresholds = SuccessThresholds.from_length(_characteristic_length(cfg, dataset))
    plan = report.read_plan_csv(plan_path)
    chunks = report.read_chunks_csv(chunks_path) if chunks_path else None
    m = evaluate_plan(plan, chain, thresholds, chunks=chunks)
    for k, v in m.items():
        click.echo(f"{k} = {v}")


@main.command("gap-verify")
@click.option("--k", "K", default=3, show_default=True, help="alphabet size")
@click.option("--preset", type=click.Choice(["random", "sticky"]), default="random",
              show_default=True)
@click.option("--strength", default=None, type=float,
              help="fixed noise strength (random per trial when omitted)")
@click.option("--trials", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, help="CSV output path")
@click.option("--tol", default=1e-12, show_default=True)
def gap_verify(K, preset, strength, trials, seed, out, tol):
    """Cross-check the enumerated gap against the covariance formula;
    nonzero exit if any |difference| exceeds the tolerance."""
    rng = np.random.default_rng(seed)
    if preset == "sticky" or strength is not None:
        rows = []
        base = sticky_chain(K) if preset == "sticky" else None
        for trial in range(trials):
            chain = base if base is not None else random_chain(K, rng)
            s = strength if strength is not None else rng.uniform(0.05, 0.45)
            C = flip_channel(K, min(s, (K - 1) / K))
            obs = tuple(rng.integers(0, K, size=3))
            direct = gap_direct(chain, C, obs)
            try:
                formula = gap_covariance(chain, C, obs).delta_formula
                diff = abs(direct.delta - formula)
            except BoundaryEvidenceZero:
                # ratio form undefined for this obs; report the direct gap only
                formula, diff = float("nan"), 0.0
            rows.append({"trial": trial, "obs": obs, "delta_direct": direct.delta,
                         "delta_formula": formula, "abs_diff": diff})
    else:
        rows = verify_identity(K, trials, rng)

    if out:
        report.write_csv(out, ["trial", "obs", "delta_direct", "delta_formula", "abs_diff"],
                         [[r["trial"], "|".join(map(str, r["obs"])), r["delta_direct"],
                           r["delta_formula"], r["abs_diff"]] for r in rows])
    worst = max(r["abs_diff"] for r in rows)
    click.echo(f"{len(rows)} trials, max |delta_direct - delta_formula| = {worst:.3e}")
    if worst > tol:
        click.echo("identity check FAILED", err=True)
        sys.exit(EXIT_ACCEPTANCE)


if __name__ == "__main__":
    main()
