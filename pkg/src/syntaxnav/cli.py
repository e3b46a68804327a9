"""``syntaxnav`` command line: world generation, training, evaluation, tracing, gradient checks.

Exit codes: 0 on success, 1 on runtime or validation failure, 2 on usage errors.
"""

from __future__ import annotations

import contextlib
import json
import shutil
import subprocess
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import click

from . import __version__
from .config import PRESETS, ConfigError, TrainConfig, load_config, preset
from .metrics import evaluate
from .nnmath import CheckpointError, no_tape
from .nnmath.params import FORMAT_VERSION as CKPT_VERSION
from .training import CKPT_FORMAT, TrainingError, evaluate_params, load_model, train
from .world import (
    ConfigInvalid,
    WorldConfig,
    WorldError,
    clause_heads,
    generate_world,
    load_world,
    replay_teacher,
    save_world,
)
from .world.generate import EPISODE_FORMAT, WORLD_FORMAT

MANIFEST_FORMAT = "syntaxnav.manifest/1"
TRACE_FORMAT = "syntaxnav.trace/1"
SPLIT_NAMES = {"train": "train", "seen": "val_seen", "unseen": "val_unseen"}


def build_id() -> str:
    """``git describe``-style identifier of the code that produced an artifact."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return __version__
    desc = out.stdout.strip()
    return f"{__version__}+{desc}" if out.returncode == 0 and desc else __version__


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    formats: dict[str, str] = field(default_factory=dict)
    build: str = field(default_factory=build_id)

    def write(self, path: Path) -> None:
        body = {"format": MANIFEST_FORMAT, "argv": sys.argv[1:], **asdict(self)}
        path.write_text(json.dumps(body, sort_keys=True, indent=1) + "\n", encoding="utf-8")


@contextlib.contextmanager
def cleanup_on_failure(*paths: Path):
    """Remove any of ``paths`` that this command created if it fails."""
    fresh = [p for p in paths if not p.exists()]
    try:
        yield
    except BaseException:
        for p in fresh:
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()
        raise


def fail(msg: str) -> click.ClickException:
    return click.ClickException(msg)


def parse_grid(ctx, param, value: str) -> tuple[int, int]:
    try:
        w, h = (int(x) for x in value.lower().split("x"))
    except ValueError:
        raise click.BadParameter("expected WxH, e.g. 6x6") from None
    return w, h


def open_world(path: str):
    try:
        return load_world(path)
    except (WorldError, KeyError, TypeError, ValueError) as exc:
        raise fail(f"invalid world {path}: {exc}") from exc


@click.group()
@click.version_option(__version__, prog_name="syntaxnav")
def main():
    """Desk-scale syntax-aware navigation experiments."""


# --------------------------------------------------------------------------


@main.command("gen-world")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--grid", default="6x6", show_default=True, callback=parse_grid, help="Grid size WxH.")
@click.option("--episodes", type=int, default=500, show_default=True)
@click.option("--unseen-frac", type=float, default=0.2, show_default=True,
              help="Held-out fraction, split evenly into seen and unseen validation.")
@click.option("--feature-dim", type=int, default=64, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def gen_world(seed, grid, episodes, unseen_frac, feature_dim, out):
    """Generate a world: world.json, episodes.jsonl and manifest.json in OUT."""
    cfg = WorldConfig(grid_w=grid[0], grid_h=grid[1], episodes=episodes, unseen_fraction=unseen_frac,
                      feature_dim=feature_dim)
    try:
        cfg.validate()
    except ConfigInvalid as exc:
        raise click.UsageError(str(exc)) from None
    out = Path(out)
    with cleanup_on_failure(out):
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(
            "gen-world", {**asdict(cfg), "split_counts": cfg.split_counts()}, seed,
            outputs={"world": str(out / "world.json"), "episodes": str(out / "episodes.jsonl")},
            formats={"world": WORLD_FORMAT, "episode": EPISODE_FORMAT},
        )
        manifest.write(out / "manifest.json")
        try:
            world = generate_world(seed, cfg)
        except WorldError as exc:
            raise fail(str(exc)) from exc
        save_world(world, out)
    counts = {s: len(world.split(s)) for s in ("train", "val_seen", "val_unseen")}
    click.echo(f"wrote {len(world.episodes)} episodes to {out} " + " ".join(f"{k}={v}" for k, v in counts.items()))


# --------------------------------------------------------------------------


def resolve_train_config(preset_name: str, config_file: str | None, overrides: dict) -> TrainConfig:
    try:
        cfg = preset(preset_name)
        if config_file:
            cfg = load_config(Path(config_file).read_text(encoding="utf-8"), cfg)
        return replace(cfg, **{k: v for k, v in overrides.items() if v is not None}).validate()
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from None


def sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


@main.command("train")
@click.option("--world", "world_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--encoder", type=click.Choice(["tree", "chain", "chain2", "meanpool"]))
@click.option("--iters", type=int, help="Total iterations.")
@click.option("--batch", type=int)
@click.option("--lr", type=float)
@click.option("--lambda", "lambda_il", type=float, help="Weight of the imitation loss.")
@click.option("--gamma", type=float, help="Return discount.")
@click.option("--eta", type=float, help="Entropy bonus weight.")
@click.option("--il-only", is_flag=True, default=None, help="Skip the sampled actor-critic pass.")
@click.option("--eval-every", type=int)
@click.option("--max-steps", type=int)
@click.option("--preset", "preset_name", type=click.Choice(sorted(PRESETS)), default="desk", show_default=True)
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
              help="File of 'key = value' lines applied after the preset.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Checkpoint path.")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False))
@click.option("--stop-after", type=int, help="Stop after this many iterations (the checkpoint is still written).")
def train_cmd(world_dir, encoder, iters, batch, lr, lambda_il, gamma, eta, il_only, eval_every, max_steps,
              preset_name, config_file, seed, out, resume, stop_after):
    """Train an agent; writes OUT, OUT-stem.log.jsonl and OUT-stem.manifest.json."""
    cfg = resolve_train_config(preset_name, config_file, dict(
        encoder=encoder, iterations=iters, batch_size=batch, lr=lr, lambda_il=lambda_il, gamma=gamma, eta=eta,
        il_only=il_only, eval_every=eval_every, max_steps=max_steps))
    world = open_world(world_dir)
    out = Path(out)
    log_path, manifest_path = sibling(out, ".log.jsonl"), sibling(out, ".manifest.json")
    with cleanup_on_failure(out, log_path, manifest_path):
        RunManifest(
            "train", cfg.as_dict(), seed,
            inputs={"world": str(world_dir), **({"resume": str(resume)} if resume else {})},
            outputs={"checkpoint": str(out), "log": str(log_path)},
            formats={"world": WORLD_FORMAT, "checkpoint": f"{CKPT_FORMAT} v{CKPT_VERSION}"},
        ).write(manifest_path)

        def show(rec):
            if "SR_seen" in rec or "SR_unseen" in rec:
                click.echo(" ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                                    for k, v in rec.items()), err=True)

        try:
            res = train(world, cfg, seed, out=out, log_path=log_path, resume=resume, stop_after=stop_after,
                        on_log=show)
        except (TrainingError, CheckpointError) as exc:
            raise fail(str(exc)) from exc
    click.echo(f"checkpoint {out} at iteration {res.iteration}")


# --------------------------------------------------------------------------


@main.command("eval")
@click.option("--world", "world_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--ckpt", required=True, help="Checkpoint path, or 'teacher' to replay the teacher.")
@click.option("--split", type=click.Choice(["seen", "unseen", "train", "all"]), default="unseen", show_default=True)
@click.option("--report", required=True, type=click.Path(dir_okay=False),
              help="JSON report path; a CSV with the same stem is written next to it.")
@click.option("--max-steps", type=int, help="Episode step limit (defaults to the training value).")
def eval_cmd(world_dir, ckpt, split, report, max_steps):
    """Greedy evaluation on one split."""
    world = open_world(world_dir)
    episodes = world.episodes if split == "all" else world.split(SPLIT_NAMES[split])
    report = Path(report)
    csv_path, manifest_path = report.with_suffix(".csv"), sibling(report, ".manifest.json")
    with cleanup_on_failure(report, csv_path, manifest_path):
        if ckpt == "teacher":
            lm, config = None, {"policy": "teacher"}
            steps = max_steps or TrainConfig().max_steps
        else:
            try:
                lm = load_model(ckpt)
            except (TrainingError, CheckpointError, OSError) as exc:
                raise fail(str(exc)) from exc
            if lm.model.feature_dim != world.feature_dim:
                raise fail(f"checkpoint expects {lm.model.feature_dim}-d features, world has {world.feature_dim}")
            config = lm.header["config"]
            steps = max_steps or config["max_steps"]
        RunManifest("eval", {"split": split, "max_steps": steps, "checkpoint_config": config}, None,
                    inputs={"world": str(world_dir), "checkpoint": str(ckpt)},
                    outputs={"report": str(report), "csv": str(csv_path)},
                    formats={"report": "syntaxnav.report/1"}).write(manifest_path)
        if lm is None:
            paths = [replay_teacher(world.graph_for(e), e.start, e.goal, world.start_heading(e), steps)
                     for e in episodes]
            rep = evaluate(episodes, paths, world.envs)
        else:
            rep = evaluate_params(lm.params, lm.model, lm.vocab, world, episodes, steps)
        report.write_text(rep.to_json() + "\n", encoding="utf-8")
        csv_path.write_text(rep.to_csv(), encoding="utf-8")
    click.echo(rep.to_csv(), nl=False)


# --------------------------------------------------------------------------


@main.command("trace")
@click.option("--world", "world_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--episode", "episode_id", required=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def trace_cmd(world_dir, ckpt, episode_id, out):
    """Write the per-step attention trace of one greedy episode."""
    from .agent import Agent, trace_to_json

    world = open_world(world_dir)
    try:
        ep = world.episode(episode_id)
    except KeyError:
        raise fail(f"unknown episode {episode_id!r}") from None
    try:
        lm = load_model(ckpt)
    except (TrainingError, CheckpointError) as exc:
        raise fail(str(exc)) from exc
    out = Path(out)
    manifest_path = sibling(out, ".manifest.json")
    with cleanup_on_failure(out, manifest_path):
        RunManifest("trace", {"episode": episode_id}, lm.header.get("seed"),
                    inputs={"world": str(world_dir), "checkpoint": str(ckpt)}, outputs={"trace": str(out)},
                    formats={"trace": TRACE_FORMAT}).write(manifest_path)
        agent = Agent(lm.model, lm.vocab, lm.params)
        with no_tape():
            enc = agent.encode(ep)
            ro = agent.run(ep, world.graph_for(ep), world.start_heading(ep), "greedy",
                           max_steps=lm.header["config"]["max_steps"])
        body = {
            "format": TRACE_FORMAT,
            **trace_to_json(ep, ro),
            "instruction": list(ep.tokens),
            "encoder": lm.model.encoder,
            "node_ids": enc.node_ids,
            "node_tokens": enc.node_tokens,
            "clause_heads": clause_heads(ep.tree),
            "path": ro.path,
            "reference": list(ep.path),
        }
        out.write_text(json.dumps(body, indent=1) + "\n", encoding="utf-8")
    click.echo(f"{len(ro.steps)} steps written to {out}")


# --------------------------------------------------------------------------


@main.command("gradcheck")
@click.option("--seed", type=int, default=0, show_default=True, help="First seed.")
@click.option("--seeds", type=click.IntRange(min=1), default=20, show_default=True, help="Number of seeds.")
@click.option("--eps", type=float, default=1e-5, show_default=True, help="Finite-difference step.")
@click.option("--report", type=click.Path(dir_okay=False), help="Optional JSON table of results.")
def gradcheck_cmd(seed, seeds, eps, report):
    """Compare analytic and finite-difference gradients for every submodule."""
    from .gradsuite import SUBMODULES, TOLERANCE, run_suite

    report = Path(report) if report else None
    paths = [report, sibling(report, ".manifest.json")] if report else []
    with cleanup_on_failure(*paths):
        if report:
            RunManifest("gradcheck", {"eps": eps, "seeds": seeds, "tolerance": TOLERANCE}, seed,
                        outputs={"report": str(report)}).write(paths[1])
        worst = run_suite(range(seed, seed + seeds), eps)
        ok = all(worst[n] <= TOLERANCE for n in SUBMODULES)
        click.echo(f"{'submodule':<10} {'max rel err':>12}  result")
        for n in SUBMODULES:
            click.echo(f"{n:<10} {worst[n]:>12.3e}  {'pass' if worst[n] <= TOLERANCE else 'FAIL'}")
        if report:
            report.write_text(json.dumps({"eps": eps, "seeds": list(range(seed, seed + seeds)),
                                          "tolerance": TOLERANCE, "max_rel_error": worst, "pass": ok},
                                         indent=1) + "\n", encoding="utf-8")
    if not ok:
        raise fail(f"gradient check exceeded {TOLERANCE:g}")


if __name__ == "__main__":
    main()
