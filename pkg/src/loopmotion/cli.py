"""Command-line entry points."""
from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np
import torch

from . import metrics as metrics_mod
from .config import Config, load_config
from .corpus import corpus_features, corpus_index, generate_corpus, load_corpus
from .diffusion import make_schedule
from .errors import DataError, LoopMotionError
from .loop import TASK_KINDS, EpisodeLog, TaskSpec, run_episode
from .planner import DenoiserConfig, DiPlanner, DipTrainer, build_vocab
from .ppo import ClosedLoopEnv, ReplayEnv, train_tracking_policy
from .skeleton import make_skeleton
from .tracker import TrackingPolicy


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Config file (TOML-style sections).")
@click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
              help="Override a config value; repeatable.")
@click.pass_context
def main(ctx, config_path, overrides):
    """Closed-loop text-driven motion planning and tracking."""
    try:
        ctx.obj = load_config(config_path, list(overrides))
    except LoopMotionError as exc:
        raise click.UsageError(str(exc))


def _fail(exc: Exception):
    raise click.ClickException(str(exc))


def _skeleton(cfg: Config):
    return make_skeleton(cfg.skeleton.joints, cfg.skeleton.frame_rate)


def _load_featurized(cfg: Config, corpus_dir):
    skeleton = _skeleton(cfg)
    clips = list(load_corpus(corpus_dir))
    return skeleton, corpus_features(skeleton, clips,
                                     cfg.contacts.height, cfg.contacts.speed)


@main.command("gen-data")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_obj
def gen_data(cfg: Config, out):
    """Generate the procedural (motion, text) corpus."""
    try:
        clips = generate_corpus(cfg, _skeleton(cfg), out)
    except LoopMotionError as exc:
        _fail(exc)
    click.echo(f"wrote {len(clips)} clips to {out} (config {cfg.hash()})")


@main.command("train-dip")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--steps", type=int, default=None, help="Override train.steps.")
@click.pass_obj
def train_dip(cfg: Config, corpus_dir, out, steps):
    """Train the diffusion planner on a corpus."""
    try:
        skeleton, (feats, prompts, _) = _load_featurized(cfg, corpus_dir)
        vocab = build_vocab([p for ps in prompts for p in ps])
        dcfg = DenoiserConfig(
            layers=cfg.model.layers, latent_dim=cfg.model.latent_dim,
            heads=cfg.model.heads, prefix_frames=cfg.model.prefix_frames,
            pred_frames=cfg.model.pred_frames, text_tokens=cfg.model.text_tokens,
            lambda_target=cfg.model.lambda_target, vocab_size=len(vocab))
        planner = DiPlanner(skeleton, dcfg,
                            make_schedule(cfg.schedule.steps, cfg.schedule.kind),
                            vocab, seed=cfg.train.seed)
        trainer = DipTrainer(planner, feats, prompts, lr=cfg.train.lr,
                             batch_size=cfg.train.batch_size,
                             cond_dropout=cfg.train.cond_dropout, seed=cfg.train.seed)
        total = steps or cfg.train.steps
        best = (float("inf"), None)
        chunk = max(cfg.train.log_every, 1)
        done = 0
        while done < total:
            n = min(chunk, total - done)
            trainer.train(n, log_every=n, log_fn=click.echo)
            done += n
            if cfg.train.select == "best_target":
                val = trainer.validation_target_loss()
                if val < best[0]:
                    planner.save(out, cfg.hash())
                    best = (val, planner.step_count)
                    click.echo(f"  checkpoint kept at step {planner.step_count} "
                               f"(val target {val:.4f})")
        if cfg.train.select != "best_target" or best[1] is None:
            planner.save(out, cfg.hash())
    except LoopMotionError as exc:
        _fail(exc)
    click.echo(f"saved planner to {out}")


@main.command("pretrain-tracker")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--updates", type=int, default=None)
@click.pass_obj
def pretrain_tracker(cfg: Config, corpus_dir, out, updates):
    """Pretrain the tracking policy on corpus replay."""
    try:
        skeleton = _skeleton(cfg)
        references = [c.motion for c in load_corpus(corpus_dir)]
        policy = TrackingPolicy.fresh(skeleton, cfg.tracker, cfg.sim.a_max,
                                      seed=cfg.train.seed)
        rng = np.random.default_rng(cfg.train.seed)
        envs = [ReplayEnv(skeleton, cfg, references,
                          np.random.default_rng(rng.integers(2 ** 62)))
                for _ in range(cfg.ppo.n_envs)]
        history = train_tracking_policy(
            policy, envs, updates or cfg.ppo.pretrain_updates, cfg,
            seed=cfg.train.seed,
            log_fn=lambda i, s: click.echo(
                f"update {i}: reward {s['mean_reward']:.3f} kl {s['approx_kl']:.4f}"))
        policy.save(out, cfg.hash(), phase="pretrain")
    except LoopMotionError as exc:
        _fail(exc)
    click.echo(f"saved tracker to {out}")


@main.command("finetune")
@click.option("--planner", "planner_path", required=True, type=click.Path(exists=True))
@click.option("--tracker", "tracker_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--updates", type=int, default=None)
@click.pass_obj
def finetune(cfg: Config, planner_path, tracker_path, out, updates):
    """Fine-tune the tracker in the closed loop across all tasks (planner frozen)."""
    try:
        planner = DiPlanner.load(planner_path)
        policy = TrackingPolicy.load(tracker_path)
        rng = np.random.default_rng(cfg.train.seed + 7)
        envs = [ClosedLoopEnv(planner, cfg,
                              np.random.default_rng(rng.integers(2 ** 62)))
                for _ in range(cfg.ppo.n_envs)]
        train_tracking_policy(
            policy, envs, updates or cfg.ppo.finetune_updates, cfg,
            seed=cfg.train.seed + 13,
            log_fn=lambda i, s: click.echo(
                f"update {i}: reward {s['mean_reward']:.3f} "
                f"success {s.get('success_rate', float('nan')):.2f}"))
        policy.save(out, cfg.hash(), phase="finetune")
    except LoopMotionError as exc:
        _fail(exc)
    click.echo(f"saved fine-tuned tracker to {out}")


@main.command("run")
@click.option("--planner", "planner_path", required=True, type=click.Path(exists=True))
@click.option("--tracker", "tracker_path", required=True, type=click.Path(exists=True))
@click.option("--task", type=click.Choice(TASK_KINDS), required=True)
@click.option("--prompt", default=None, help="Override the task prompt.")
@click.option("--episodes", type=int, default=1)
@click.option("--seed", type=int, default=0)
@click.option("--open-loop", is_flag=True, help="Feed the planner its own predictions.")
@click.option("--no-finetune", is_flag=True,
              help="Use --tracker-pretrained instead of --tracker.")
@click.option("--tracker-pretrained", type=click.Path(exists=True), default=None)
@click.option("--state-machine", is_flag=True, help="Chain tasks after done signals.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.pass_obj
def run(cfg: Config, planner_path, tracker_path, task, prompt, episodes, seed,
        open_loop, no_finetune, tracker_pretrained, state_machine, out):
    """Run evaluation episodes and persist their logs."""
    if no_finetune and not tracker_pretrained:
        raise click.UsageError("--no-finetune requires --tracker-pretrained")
    try:
        planner = DiPlanner.load(planner_path)
        policy = TrackingPolicy.load(tracker_pretrained if no_finetune else tracker_path)
        wins = 0
        for i in range(episodes):
            hold = 5 if task in ("sit", "getup") else 1
            spec = TaskSpec(task, done_hold=hold)
            log = run_episode(planner, policy, cfg, spec, seed + i,
                              open_loop=open_loop, state_machine=state_machine)
            if prompt is not None:
                log.events.append({"frame": 0, "kind": "note",
                                   "prompt_override": prompt})
            wins += int(log.success)
            if out:
                log.save(Path(out) / f"ep_{i:04d}")
        click.echo(f"{task}: {wins}/{episodes} successes "
                   f"({'open' if open_loop else 'closed'} loop)")
    except LoopMotionError as exc:
        _fail(exc)


@main.command("eval")
@click.option("--logs", "log_dirs", required=True, multiple=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
@click.option("--force", is_flag=True, help="Allow mixed config hashes.")
@click.pass_obj
def eval_cmd(cfg: Config, log_dirs, out, csv_path, force):
    """Aggregate metrics and success rates over episode logs."""
    episodes = []
    hashes = set()
    for root in log_dirs:
        for ep_dir in sorted(Path(root).iterdir()):
            if not ep_dir.is_dir():
                continue
            try:
                manifest, frames, _ = EpisodeLog.load(ep_dir)
                hashes.add(manifest["config_hash"])
                episodes.append((manifest, frames))
            except (OSError, KeyError, json.JSONDecodeError, DataError):
                click.echo(f"warning: skipping unreadable episode {ep_dir}", err=True)
                episodes.append((None, None))
    if len(hashes) > 1 and not force:
        raise click.ClickException(
            f"episode logs carry {len(hashes)} different config hashes; "
            "pass --force to aggregate anyway")
    try:
        report = metrics_mod.evaluate(episodes, cfg.metrics.tolerance_mm,
                                      config_hash=(hashes.pop() if len(hashes) == 1 else ""),
                                      warn=lambda m: click.echo(m, err=True))
    except LoopMotionError as exc:
        _fail(exc)
    report.save(out)
    if csv_path:
        Path(csv_path).write_text(report.to_csv())
    for task, rate in sorted(report.success_rates.items()):
        lo, hi = report.confidence[task]
        click.echo(f"{task}: {rate:.3f} [{lo:.3f}, {hi:.3f}] "
                   f"n={report.episode_counts[task]}")
    click.echo(f"penetration {report.penetration_mm:.3f} mm, "
               f"floating {report.floating_mm:.3f} mm, "
               f"skating {report.skating_mm:.3f} mm")


@main.command("bench")
@click.option("--planner", "planner_path", required=True, type=click.Path(exists=True))
@click.option("--steps", "steps_list", default="5,10,20", help="Diffusion step counts.")
@click.option("--seeds", type=int, default=10)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
def bench(cfg: Config, planner_path, steps_list, seeds, out):
    """Measure plan latency and throughput across diffusion step counts."""
    try:
        planner = DiPlanner.load(planner_path)
        from .motion import (RelativeMotion, TargetCondition, global_to_relative,
                             hold_pose, identity_anchor)
        sk = planner.skeleton
        anchor = identity_anchor(sk)
        held = hold_pose(sk, anchor, planner.cfg.prefix_frames + 1)
        prefix = RelativeMotion(global_to_relative(sk, held).features[1:])
        goal = np.array([1.0, sk.rest_pose()[0, 1], 0.0])
        target = TargetCondition.for_joint(sk, 0, goal, 0.0)
        rows = []
        base_schedule = planner.schedule
        for t_steps in [int(s) for s in steps_list.split(",")]:
            planner.schedule = make_schedule(t_steps, base_schedule.kind)
            times = []
            for seed in range(seeds):
                seg = planner.plan(prefix, "a person walks forward", target,
                                   guidance=cfg.tasks.guidance, seed=seed)
                times.append(seg.wall_time_ms)
            latency = float(np.mean(times))
            fps = planner.cfg.pred_frames / (latency / 1e3)
            rows.append({"diffusion_steps": t_steps, "latency_ms": latency,
                         "frames_per_second": fps})
            click.echo(f"T={t_steps}: {latency:.1f} ms per {planner.cfg.pred_frames}"
                       f"-frame plan ({fps:.0f} frames/s)")
        planner.schedule = base_schedule
        if out:
            Path(out).write_text(json.dumps({"rows": rows, "config_hash": cfg.hash()},
                                            indent=1))
    except LoopMotionError as exc:
        _fail(exc)


@main.command("serve")
@click.option("--planner", "planner_path", required=True, type=click.Path(exists=True))
@click.option("--tracker", "tracker_path", required=True, type=click.Path(exists=True))
@click.option("--port", type=int, default=None,
              help="Defaults to $LOOPMOTION_PORT or 8765.")
@click.option("--task", type=click.Choice(TASK_KINDS), default="reach")
@click.option("--seed", type=int, default=0)
@click.option("--log-dir", type=click.Path(file_okay=False), default=None)
@click.pass_obj
def serve_cmd(cfg: Config, planner_path, tracker_path, port, task, seed, log_dir):
    """Host the closed loop live; browsers connect over WebSocket."""
    from .service import serve
    if port is None:
        port = int(os.environ.get("LOOPMOTION_PORT", "8765"))
    try:
        planner = DiPlanner.load(planner_path)
        policy = TrackingPolicy.load(tracker_path)
        click.echo(f"serving on ws://127.0.0.1:{port} (task {task}); Ctrl-C stops")
        serve(planner, policy, cfg, port, task=task, seed=seed, log_dir=log_dir)
    except KeyboardInterrupt:
        click.echo("stopped")
    except LoopMotionError as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
