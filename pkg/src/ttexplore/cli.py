"""Command-line interface.

Subcommands: run (batch episodes into a fresh run store), metrics
(recompute summary statistics from stored transcripts), replay (verify a
stored run against the world), forge (build thinker training data), and
validate (check configs and world files without running anything).
"""

from __future__ import annotations

import datetime as _dt
import json
import sys
from pathlib import Path

import click

from . import __version__
from .config import (
    ConfigValidationError,
    ExperimentConfig,
    load_config,
    resolve_world_path,
    select_tasks,
)
from .metrics import SummaryTable, aggregate, compute_metrics, _mean2
from .orchestrator import RunStoreError, read_transcript, run_batch
from .pipeline import export_grpo, export_sft, forge
from .world import TextWorld, WorldValidationError, load_world


def _fail(message: str, code: int = 2) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _fresh_store(root: Path, label: str | None) -> Path:
    """A new, never-existing subdirectory of the store root. Existing stores
    are never reused or overwritten."""
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = f"{stamp}-{label}" if label else stamp
    candidate = root / base
    suffix = 0
    while candidate.exists():
        suffix += 1
        candidate = root / f"{base}-{suffix}"
    candidate.mkdir(parents=True)
    return candidate


def _load_experiment(config_path: str) -> ExperimentConfig:
    try:
        return load_config(config_path)
    except (ConfigValidationError, WorldValidationError, ValueError) as exc:
        _fail(str(exc))
    raise AssertionError("unreachable")


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Test-time exploration over text worlds: episode runners, exploration
    metrics, and the thinker training-data pipeline."""


@main.command("run")
@click.option("--config", "config_path", required=True,
              type=click.Path(), help="Experiment config YAML.")
@click.option("--mode", type=click.Choice(["react", "ttexplore", "reflexion",
                                           "bestofn"]),
              default=None, help="Override the run mode from the config.")
@click.option("--n-trigger", type=int, default=None,
              help="Thinker trigger interval (config default: 6).")
@click.option("--max-steps", type=int, default=None,
              help="Episode step budget (config default: 50).")
@click.option("--samples-n", type=int, default=None,
              help="Best-of-N sample count (config default: 5).")
@click.option("--retries-n", type=int, default=None,
              help="Reflect-and-retry attempt count (config default: 5).")
@click.option("--seed", "seeds", type=int, multiple=True,
              help="Seed(s) to run; repeatable. Overrides config seeds.")
@click.option("--store-dir", type=click.Path(), default=None,
              help="Run store root; a fresh subdirectory is created inside.")
@click.option("--label", default=None,
              help="Suffix for the new run directory name.")
@click.option("--parallelism", type=int, default=None,
              help="Episodes to run concurrently (config default: 1).")
def cmd_run(config_path, mode, n_trigger, max_steps, samples_n, retries_n,
            seeds, store_dir, label, parallelism) -> None:
    """Run a batch of episodes and persist transcripts plus a manifest."""
    exp = _load_experiment(config_path)
    cfg = exp.run
    if mode is not None:
        cfg.mode = mode
    if n_trigger is not None:
        cfg.n_trigger = n_trigger
    if max_steps is not None:
        cfg.max_steps = max_steps
    if samples_n is not None:
        cfg.samples_N = samples_n
    if retries_n is not None:
        cfg.retries_N = retries_n
    try:
        cfg.validate()
    except ValueError as exc:
        _fail(str(exc))
    if cfg.mode == "ttexplore" and exp.thinker is None:
        _fail("mode 'ttexplore' needs a 'thinker' policy in the config")

    try:
        world = exp.load_world()
        tasks = select_tasks(world, exp.task_ids)
    except (ConfigValidationError, WorldValidationError) as exc:
        _fail(str(exc))

    run_seeds = list(seeds) if seeds else exp.seeds
    items = [(task, seed) for task in tasks for seed in run_seeds]
    root = Path(store_dir) if store_dir else exp.store_dir
    store = _fresh_store(root, label)
    results = run_batch(
        world, items, cfg, exp.actor, thinker=exp.thinker,
        store_dir=store,
        parallelism=parallelism if parallelism is not None else exp.parallelism,
        world_file=exp.world_file)

    table = aggregate(results)
    click.echo(f"store: {store}")
    click.echo(table.to_text())
    errors = [r.trajectory.error for r in results if r.trajectory.error]
    if errors:
        click.echo(f"{len(errors)} episode(s) aborted on internal errors:",
                   err=True)
        for err in errors:
            click.echo(f"  {err}", err=True)
        sys.exit(1)


@main.command("metrics")
@click.argument("store", type=click.Path(exists=True, file_okay=False))
@click.option("--k", type=int, default=3, show_default=True,
              help="Top-k window for the repetition metric.")
@click.option("--jsonl", "as_jsonl", is_flag=True,
              help="Emit the summary as a single JSON line.")
def cmd_metrics(store, k, as_jsonl) -> None:
    """Recompute exploration metrics from stored transcripts."""
    store = Path(store)
    manifest_path = store / "manifest.json"
    if not manifest_path.exists():
        _fail(f"{store}: not a run store (no manifest.json)")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    episodes = manifest.get("episodes", [])
    if not episodes:
        _fail(f"{store}: manifest lists no episodes")

    rows = []
    for entry in episodes:
        path = store / entry["file"]
        if not path.exists():
            _fail(f"{store}: transcript {entry['file']} is missing")
        try:
            records = read_transcript(path)
        except RunStoreError as exc:
            _fail(str(exc))
        if not records:
            _fail(f"{path}: empty transcript")
        m = compute_metrics([r["action"] for r in records],
                            [r["observation"] for r in records], k=k)
        rows.append((entry, records, m))

    table = SummaryTable(
        count=len(rows),
        success_rate=_mean2([100.0 if e["success"] else 0.0 for e, _, _ in rows]),
        mean_process_score=_mean2([r[-1]["score"] for _, r, _ in rows]),
        mean_wall_s=0.0,
        mean_action_diversity=_mean2([m.action_diversity for _, _, m in rows]),
        mean_action_repetition=_mean2([m.action_repetition for _, _, m in rows]),
        mean_observation_diversity=_mean2(
            [m.observation_diversity for _, _, m in rows]),
        mean_observation_repetition=_mean2(
            [m.observation_repetition for _, _, m in rows]),
    )
    if as_jsonl:
        click.echo(table.to_jsonl())
    else:
        for entry, records, m in rows:
            click.echo(f"{entry['file']}: steps={len(records)} "
                       f"score={records[-1]['score']} "
                       f"adiv={m.action_diversity:.4f} "
                       f"arep={m.action_repetition:.4f} "
                       f"odiv={m.observation_diversity:.4f} "
                       f"orep={m.observation_repetition:.4f}")
        click.echo(table.to_text())


@main.command("replay")
@click.argument("store", type=click.Path(exists=True, file_okay=False))
@click.option("--world", "world_override", type=click.Path(exists=True),
              default=None,
              help="World file to replay against (default: the one recorded "
                   "in the manifest).")
def cmd_replay(store, world_override) -> None:
    """Re-execute every stored episode and verify each recorded score."""
    store = Path(store)
    manifest_path = store / "manifest.json"
    if not manifest_path.exists():
        _fail(f"{store}: not a run store (no manifest.json)")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    world_file = world_override or manifest.get("world_file")
    if not world_file:
        _fail("manifest records no world file; pass --world")
    try:
        world = load_world(resolve_world_path(world_file))
    except (ConfigValidationError, WorldValidationError) as exc:
        _fail(str(exc))

    failures = 0
    for entry in manifest.get("episodes", []):
        path = store / entry["file"]
        try:
            records = read_transcript(path)
        except RunStoreError as exc:
            _fail(str(exc))
        task = world.tasks.get(entry["task_id"])
        if task is None:
            click.echo(f"FAIL {entry['file']}: task {entry['task_id']!r} "
                       f"not in world {world.id!r}")
            failures += 1
            continue
        mismatch = _verify_episode(world, task, entry["seed"], records)
        if mismatch is None:
            click.echo(f"PASS {entry['file']}")
        else:
            click.echo(f"FAIL {entry['file']}: {mismatch}")
            failures += 1
    if failures:
        click.echo(f"{failures} episode(s) failed verification", err=True)
        sys.exit(1)
    click.echo("replay PASS")


def _verify_episode(world: TextWorld, task, seed: int,
                    records: list[dict]) -> str | None:
    """Replay the recorded actions and return a description of the first
    mismatching step, or None when everything matches."""
    state, _ = world.reset(task, seed)
    for record in records:
        step = record["step"]
        state, obs, done = world.step(state, record["action"], step_index=step)
        score = world.process_score(state, task).value
        if obs.text != record["observation"]:
            return (f"step {step}: observation mismatch, stored "
                    f"{record['observation']!r}, replay gave {obs.text!r}")
        if score != record["score"]:
            return (f"step {step}: score mismatch, stored {record['score']}, "
                    f"replay gave {score}")
        if done != record["done"]:
            return (f"step {step}: done mismatch, stored {record['done']}, "
                    f"replay gave {done}")
    return None


@main.command("forge")
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="Experiment config YAML with strong, weak, thinker, and "
                   "actor policies.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Output root; a fresh subdirectory is created inside "
                   "(default: the config's store_dir).")
@click.option("--label", default=None,
              help="Suffix for the new output directory name.")
def cmd_forge(config_path, out_dir, label) -> None:
    """Build grouped thinker training data and SFT pairs.

    Difficulty thresholds default to x=5 and y=15 weak-policy steps; the
    step-penalty reward rate defaults to 0.05 per extra step.
    """
    exp = _load_experiment(config_path)
    for name, handle in (("strong", exp.strong), ("weak", exp.weak),
                         ("thinker", exp.thinker), ("actor", exp.actor)):
        if handle is None:
            _fail(f"forge needs a {name!r} policy in the config")
    try:
        world = exp.load_world()
        tasks = select_tasks(world, exp.task_ids)
    except (ConfigValidationError, WorldValidationError) as exc:
        _fail(str(exc))

    out = _fresh_store(Path(out_dir) if out_dir else exp.store_dir, label)
    result = forge(world, tasks, exp.strong, exp.weak, exp.thinker, exp.actor,
                   exp.pipeline, seeds=exp.seeds)
    export_grpo(result.groups, out / "grpo.jsonl")
    export_sft(world, world.tasks, result.strong_trajectories,
               out / "sft.jsonl", char_budget=exp.run.char_budget)
    (out / "forge_manifest.json").write_text(
        json.dumps(result.manifest, indent=2, ensure_ascii=False,
                   sort_keys=True) + "\n",
        encoding="utf-8")
    click.echo(f"store: {out}")
    click.echo(json.dumps(result.manifest, indent=2, sort_keys=True))
    if result.manifest["groups"] == 0:
        click.echo("warning: no rollout groups were produced", err=True)


@main.command("validate")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Experiment config YAML to check.")
@click.option("--world", "world_path", type=click.Path(), default=None,
              help="World file to check.")
def cmd_validate(config_path, world_path) -> None:
    """Validate a config file and/or a world file without running anything."""
    if config_path is None and world_path is None:
        _fail("pass --config and/or --world")
    if config_path is not None:
        exp = _load_experiment(config_path)
        try:
            world = exp.load_world()
            select_tasks(world, exp.task_ids)
        except (ConfigValidationError, WorldValidationError) as exc:
            _fail(str(exc))
        click.echo(f"config ok: {config_path}")
    if world_path is not None:
        try:
            world = load_world(Path(world_path))
        except WorldValidationError as exc:
            _fail(str(exc))
        click.echo(f"world ok: {world.id} "
                   f"({len(world.tasks)} task(s), {len(world.rules)} rule(s))")


if __name__ == "__main__":
    main()
