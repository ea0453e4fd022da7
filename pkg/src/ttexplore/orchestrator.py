"""Episode execution engines and the run store.

Runners: plain ReAct loop, the actor/thinker exploration loop with
fixed-frequency thinker triggering, a reflect-and-retry harness, and
best-of-N sampling. Thinker invocations never consume the step budget.
Episodes are strictly sequential inside; the batch runner parallelizes
across episodes only.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from . import metrics as metrics_mod
from .policies import PolicyHandle, complete
from .prompts import (
    DeepThought,
    HistoryView,
    ParseError,
    parse_actor_output,
    parse_thinker_output,
    render_actor_prompt,
    render_thinker_prompt,
)
from .world import SENTINEL, TaskSpec, TextWorld

log = logging.getLogger(__name__)

FALLBACK_ACTION = "look around"


@dataclass
class RunConfig:
    mode: str = "react"  # react | ttexplore | reflexion | bestofn
    inner_mode: str = "ttexplore"  # for bestofn
    n_trigger: int = 6
    max_steps: int = 50
    retries_N: int = 5
    samples_N: int = 5
    seed: int = 0
    trigger_policy: str = "fixed"  # fixed | on_failure
    char_budget: int = 100_000
    include_prior_thoughts: bool = True
    metrics_k: int = 3

    def validate(self) -> None:
        if self.mode not in ("react", "ttexplore", "reflexion", "bestofn"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.inner_mode not in ("react", "ttexplore"):
            raise ValueError(f"unknown inner mode {self.inner_mode!r}")
        if self.n_trigger <= 0 or self.max_steps <= 0:
            raise ValueError("n_trigger and max_steps must be positive")
        if self.n_trigger >= self.max_steps:
            raise ValueError("n_trigger must be smaller than max_steps")
        if self.trigger_policy not in ("fixed", "on_failure"):
            raise ValueError(f"unknown trigger policy {self.trigger_policy!r}")

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "inner_mode": self.inner_mode,
            "n_trigger": self.n_trigger,
            "max_steps": self.max_steps,
            "retries_N": self.retries_N,
            "samples_N": self.samples_N,
            "seed": self.seed,
            "trigger_policy": self.trigger_policy,
            "char_budget": self.char_budget,
            "include_prior_thoughts": self.include_prior_thoughts,
            "metrics_k": self.metrics_k,
        }


@dataclass
class StepRecord:
    action: str
    observation: str
    score_after: float
    wall_ms: float
    done: bool = False


@dataclass
class Final:
    success: bool
    process_score: float
    steps_used: int
    wall_ms_total: float


@dataclass
class Trajectory:
    task_id: str
    seed: int
    mode: str
    initial_observation: str
    steps: list[StepRecord] = field(default_factory=list)
    thoughts: list[DeepThought] = field(default_factory=list)
    final: Final = field(default_factory=lambda: Final(False, 0.0, 0, 0.0))
    error: Optional[str] = None

    def actions(self) -> list[str]:
        return [s.action for s in self.steps]

    def observations(self) -> list[str]:
        return [s.observation for s in self.steps]


@dataclass
class EpisodeResult:
    trajectory: Trajectory
    metrics: metrics_mod.ExplorationMetrics
    wall_s: float


def _act(actor: PolicyHandle, task: TaskSpec, view: HistoryView, seed: int,
         cfg: RunConfig) -> str:
    """One actor decision; retries once on a parse failure, then substitutes
    the no-op action and logs the incident."""
    prompt = render_actor_prompt(task, view, char_budget=cfg.char_budget)
    for attempt in range(2):
        raw = complete(actor, prompt, seed=seed)
        try:
            return parse_actor_output(raw).action
        except ParseError as exc:
            if attempt == 0:
                log.warning("actor parse failure (%s); retrying once", exc.kind.value)
    log.warning("actor parse failure persisted; substituting %r", FALLBACK_ACTION)
    return FALLBACK_ACTION


def _think(thinker: PolicyHandle, task: TaskSpec, view: HistoryView, seed: int,
           cfg: RunConfig) -> Optional[str]:
    """One thinker invocation; a persistent parse failure skips the thought."""
    thinker_view = view
    if not cfg.include_prior_thoughts:
        thinker_view = HistoryView(view.task_id, view.initial_observation,
                                   steps=list(view.steps), thoughts=[],
                                   reflections=list(view.reflections))
    prompt = render_thinker_prompt(task, thinker_view, char_budget=cfg.char_budget)
    for attempt in range(2):
        raw = complete(thinker, prompt, seed=seed)
        try:
            return parse_thinker_output(raw)
        except ParseError as exc:
            if attempt == 0:
                log.warning("thinker parse failure (%s); retrying once", exc.kind.value)
    log.warning("thinker parse failure persisted; episode continues without a thought")
    return None


def _should_trigger(cfg: RunConfig, t: int, view: HistoryView) -> bool:
    if t % cfg.n_trigger != 0 or t >= cfg.max_steps:
        return False
    if cfg.trigger_policy == "on_failure":
        recent = view.steps[-cfg.n_trigger:]
        return any(obs == SENTINEL for _, obs in recent)
    return True


def _run_episode(world: TextWorld, actor: PolicyHandle, task: TaskSpec,
                 cfg: RunConfig, thinker: Optional[PolicyHandle] = None,
                 reflections: Optional[list[str]] = None,
                 seed: Optional[int] = None) -> Trajectory:
    seed = cfg.seed if seed is None else seed
    t_start = time.perf_counter()
    state, obs0 = world.reset(task, seed)
    view = HistoryView(task.id, obs0.text,
                       reflections=list(reflections or []))
    traj = Trajectory(task_id=task.id, seed=seed,
                      mode="ttexplore" if thinker else "react",
                      initial_observation=obs0.text)
    score = 0.0
    done = False
    try:
        for t in range(1, cfg.max_steps + 1):
            action = _act(actor, task, view, seed, cfg)
            step_start = time.perf_counter()
            state, obs, done = world.step(state, action, step_index=t)
            wall_ms = (time.perf_counter() - step_start) * 1000.0
            score = world.process_score(state, task).value
            traj.steps.append(StepRecord(action=action, observation=obs.text,
                                         score_after=score, wall_ms=wall_ms,
                                         done=done))
            view.steps.append((action, obs.text))
            if done:
                break
            if thinker is not None and _should_trigger(cfg, t, view):
                text = _think(thinker, task, view, seed, cfg)
                if text is not None:
                    traj.thoughts.append(DeepThought(text=text, anchor_step=t))
                    view.thoughts.append((t, text))
    except Exception as exc:  # unrecoverable backend error
        log.error("episode aborted: %s", exc)
        traj.error = f"{type(exc).__name__}: {exc}"
    traj.final = Final(
        success=done and score == 100.0,
        process_score=score,
        steps_used=len(traj.steps),
        wall_ms_total=(time.perf_counter() - t_start) * 1000.0,
    )
    return traj


def run_react(world: TextWorld, actor: PolicyHandle, task: TaskSpec,
              cfg: RunConfig) -> Trajectory:
    cfg.validate()
    return _run_episode(world, actor, task, cfg)


def run_ttexplore(world: TextWorld, actor: PolicyHandle, thinker: PolicyHandle,
                  task: TaskSpec, cfg: RunConfig) -> Trajectory:
    cfg.validate()
    if thinker is None:
        raise ValueError("ttexplore mode requires a thinker handle")
    return _run_episode(world, actor, task, cfg, thinker=thinker)


def _reflection_prompt(task: TaskSpec, traj: Trajectory) -> str:
    lines = [
        "Reflection Request: the previous attempt at this task failed.",
        "",
        f"The Task: {task.instruction}",
        "",
        "Transcript:",
    ]
    for step in traj.steps:
        lines.append(f"Action: {step.action}")
        lines.append(f"Observation: {step.observation}")
    lines += [
        "",
        f"Final score: {traj.final.process_score}",
        "",
        "Write a short reflection on what went wrong and what to do "
        "differently in the next attempt.",
    ]
    return "\n".join(lines)


def run_reflexion(world: TextWorld, actor: PolicyHandle, task: TaskSpec,
                  cfg: RunConfig, thinker: Optional[PolicyHandle] = None) -> Trajectory:
    """Up to retries_N independent attempts; after each failure a reflection
    generated by the actor backend is prepended to the next attempt."""
    cfg.validate()
    reflections: list[str] = []
    best: Optional[Trajectory] = None
    for attempt in range(cfg.retries_N):
        traj = _run_episode(world, actor, task, cfg, thinker=thinker,
                            reflections=reflections)
        traj.mode = "reflexion"
        if best is None or traj.final.process_score > best.final.process_score:
            best = traj
        if traj.final.success:
            break
        if attempt < cfg.retries_N - 1:
            reflection = complete(actor, _reflection_prompt(task, traj),
                                  seed=cfg.seed).strip()
            reflections.append(reflection)
    assert best is not None
    return best


def run_best_of_n(world: TextWorld, actor: PolicyHandle, task: TaskSpec,
                  cfg: RunConfig, thinker: Optional[PolicyHandle] = None) -> Trajectory:
    """samples_N independent episodes of the inner mode; returns the one with
    the maximal process score, ties broken by lowest sample index, then
    fewest steps."""
    cfg.validate()
    samples: list[Trajectory] = []
    for i in range(cfg.samples_N):
        sample_cfg = replace(cfg, mode=cfg.inner_mode, seed=cfg.seed + i)
        inner_thinker = thinker if cfg.inner_mode == "ttexplore" else None
        traj = _run_episode(world, actor, task, sample_cfg, thinker=inner_thinker)
        samples.append(traj)
    return select_best(samples)


def select_best(samples: list[Trajectory]) -> Trajectory:
    best_idx = 0
    for i, traj in enumerate(samples[1:], start=1):
        best = samples[best_idx]
        key = (traj.final.process_score, -traj.final.steps_used)
        best_key = (best.final.process_score, -best.final.steps_used)
        if key > best_key:
            best_idx = i
    chosen = samples[best_idx]
    chosen.mode = "bestofn"
    return chosen


def run_mode(world: TextWorld, actor: PolicyHandle, task: TaskSpec,
             cfg: RunConfig, thinker: Optional[PolicyHandle] = None) -> Trajectory:
    if cfg.mode == "react":
        return run_react(world, actor, task, cfg)
    if cfg.mode == "ttexplore":
        if thinker is None:
            raise ValueError("ttexplore mode requires a thinker handle")
        return run_ttexplore(world, actor, thinker, task, cfg)
    if cfg.mode == "reflexion":
        return run_reflexion(world, actor, task, cfg, thinker=thinker)
    if cfg.mode == "bestofn":
        return run_best_of_n(world, actor, task, cfg, thinker=thinker)
    raise ValueError(f"unknown mode {cfg.mode!r}")


# ---------------------------------------------------------------------------
# Run store
# ---------------------------------------------------------------------------

class RunStoreError(RuntimeError):
    pass


def _episode_filename(index: int, traj: Trajectory) -> str:
    safe_task = traj.task_id.replace(" ", "_").replace("/", "_")
    return f"{index:03d}_{safe_task}_s{traj.seed}.jsonl"


def write_transcript(path: Path, traj: Trajectory) -> None:
    lines = []
    for i, step in enumerate(traj.steps, start=1):
        lines.append(json.dumps(
            {"step": i, "action": step.action, "observation": step.observation,
             "score": step.score_after, "done": step.done},
            ensure_ascii=False))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_transcript(path: Path) -> list[dict]:
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise RunStoreError(f"{path}:{lineno}: corrupt transcript line: {exc}")
    return records


def _episode_manifest_entry(filename: str, traj: Trajectory,
                            m: metrics_mod.ExplorationMetrics) -> dict:
    return {
        "file": filename,
        "task_id": traj.task_id,
        "seed": traj.seed,
        "mode": traj.mode,
        "success": traj.final.success,
        "process_score": traj.final.process_score,
        "steps_used": traj.final.steps_used,
        "initial_observation": traj.initial_observation,
        "thoughts": [{"anchor_step": t.anchor_step, "text": t.text}
                     for t in traj.thoughts],
        "metrics": m.as_dict(),
        "error": traj.error,
    }


def run_batch(world: TextWorld, items: list[tuple[TaskSpec, int]], cfg: RunConfig,
              actor: PolicyHandle, thinker: Optional[PolicyHandle] = None,
              store_dir: Optional[Path] = None,
              parallelism: int = 1,
              world_file: Optional[str] = None) -> list[EpisodeResult]:
    """Run one episode per (task, seed) item. Results keep input order; each
    transcript is persisted before its result is reported."""
    cfg.validate()
    if store_dir is not None:
        store_dir = Path(store_dir)
        store_dir.mkdir(parents=True, exist_ok=True)

    def one(index_item: tuple[int, tuple[TaskSpec, int]]) -> EpisodeResult:
        index, (task, seed) = index_item
        t0 = time.perf_counter()
        episode_cfg = replace(cfg, seed=seed)
        traj = run_mode(world, actor, task, episode_cfg, thinker=thinker)
        wall_s = time.perf_counter() - t0
        if traj.steps:
            m = metrics_mod.compute_metrics(traj.actions(), traj.observations(),
                                            k=cfg.metrics_k)
        else:
            m = metrics_mod.ExplorationMetrics(0.0, 0.0, 0.0, 0.0, cfg.metrics_k)
        if store_dir is not None:
            try:
                write_transcript(store_dir / _episode_filename(index, traj), traj)
            except OSError as exc:
                raise RunStoreError(f"failed to persist episode {index}: {exc}")
        return EpisodeResult(trajectory=traj, metrics=m, wall_s=wall_s)

    indexed = list(enumerate(items))
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, indexed))
    else:
        results = [one(pair) for pair in indexed]

    if store_dir is not None:
        entries = [
            _episode_manifest_entry(_episode_filename(i, r.trajectory),
                                    r.trajectory, r.metrics)
            for i, r in enumerate(results)
        ]
        manifest = {
            "config": cfg.as_dict(),
            "world_file": world_file,
            "world_id": world.id,
            "episodes": entries,
            "aggregate": metrics_mod.aggregate_deterministic(results),
        }
        (store_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
            encoding="utf-8")
        timings = {
            "episodes": [round(r.wall_s, 6) for r in results],
            "total_s": round(sum(r.wall_s for r in results), 6),
        }
        (store_dir / "timings.json").write_text(
            json.dumps(timings, indent=2) + "\n", encoding="utf-8")
    return results
