"""Thinker-training data factory.

Stages: divide a strong trajectory into sub-tasks at process-score
milestones, probe each sub-task's difficulty with a weak policy, drop the
easy ones, build shared rollout contexts (replayed prefix + a fixed-length
weak continuation), sample the trainable thinker m times per context, score
each thought by letting a frozen actor continue, and export the grouped
records for policy-gradient training plus thinker SFT pairs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .orchestrator import RunConfig, StepRecord, Trajectory, _act
from .policies import PolicyHandle, complete
from .prompts import (
    DeepThought,
    HistoryView,
    ParseError,
    parse_thinker_output,
    render_thinker_prompt,
)
from .world import TaskSpec, TextWorld

log = logging.getLogger(__name__)

EASY = "easy"
MEDIUM = "medium"
HARD = "hard"
UNSET = "unset"

BINARY = "binary"
STEP_PENALTY = "step_penalty"


class PipelineError(RuntimeError):
    pass


class IntegrityError(PipelineError):
    """Replaying a recorded prefix did not reproduce its recorded score."""


@dataclass
class PipelineConfig:
    x: int = 5
    y: int = 15
    m: int = 4
    reward_mode: str = BINARY
    penalty_rate: float = 0.05
    nodes_per_trajectory: int = 1
    rollout_max_steps: int = 25
    completion_rule: str = "any_improvement"  # or "next_milestone"
    sample_retry_budget: int = 3
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> None:
        if not (0 < self.x < self.y):
            raise ValueError("thresholds must satisfy 0 < x < y")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.penalty_rate < 0:
            raise ValueError("penalty rate must be >= 0")
        if self.reward_mode not in (BINARY, STEP_PENALTY):
            raise ValueError(f"unknown reward mode {self.reward_mode!r}")
        if self.completion_rule not in ("any_improvement", "next_milestone"):
            raise ValueError(f"unknown completion rule {self.completion_rule!r}")


@dataclass
class SubTask:
    parent_task_id: str
    seed: int
    prefix_actions: list[str]
    start_score: float
    target_score: float
    difficulty: str = UNSET
    weak_actions: list[str] = field(default_factory=list)
    completion_step: Optional[int] = None


@dataclass
class RolloutContext:
    context_id: str
    sub: SubTask
    prompt: str
    history: HistoryView
    weak_prefix: list[str]


@dataclass
class RewardRecord:
    context_id: str
    thought: DeepThought
    continuation: list[StepRecord]
    reward: float
    improved_at: Optional[int] = None  # 1-based continuation step


@dataclass
class RolloutGroup:
    context_id: str
    prompt: str
    records: list[RewardRecord]
    difficulty: str = UNSET

    def validate(self, m: int) -> None:
        if len(self.records) != m:
            raise PipelineError(
                f"group {self.context_id}: {len(self.records)} records, expected {m}")


# ---------------------------------------------------------------------------
# Sub-task division and filtering
# ---------------------------------------------------------------------------

def divide_subtasks(task: TaskSpec, strong_traj: Trajectory) -> list[SubTask]:
    """One sub-task per strict process-score increase; sub-task j starts at
    milestone j-1, so its prefix is the strong trajectory up to and including
    the step that reached the previous milestone."""
    scores = [s.score_after for s in strong_traj.steps]
    actions = strong_traj.actions()
    increases = [i for i in range(len(scores))
                 if scores[i] > (scores[i - 1] if i > 0 else 0.0)]
    if not increases:
        log.warning("strong trajectory for %s is flat; no sub-tasks",
                    strong_traj.task_id)
        return []
    subs: list[SubTask] = []
    prev_end = 0  # steps included in the prefix
    prev_score = 0.0
    for i in increases:
        subs.append(SubTask(
            parent_task_id=task.id,
            seed=strong_traj.seed,
            prefix_actions=actions[:prev_end],
            start_score=prev_score,
            target_score=scores[i],
        ))
        prev_end = i + 1
        prev_score = scores[i]
    return subs


def replay_with_history(world: TextWorld, task: TaskSpec, seed: int,
                        actions: list[str]) -> tuple:
    """Fold the actions from reset, collecting (state, view, scores)."""
    state, obs0 = world.reset(task, seed)
    view = HistoryView(task.id, obs0.text)
    score = 0.0
    for i, action in enumerate(actions, start=1):
        state, obs, _ = world.step(state, action, step_index=i)
        score = world.process_score(state, task).value
        view.steps.append((action, obs.text))
    return state, view, score


def classify_difficulty(world: TextWorld, task: TaskSpec, sub: SubTask,
                        weak: PolicyHandle, cfg: PipelineConfig) -> SubTask:
    """Run the weak policy from the replayed prefix for up to y steps;
    completion within x steps is easy, within (x, y] medium, never is hard."""
    cfg.validate()
    state, view, score = replay_with_history(world, task, sub.seed,
                                             sub.prefix_actions)
    if score != sub.start_score:
        raise IntegrityError(
            f"prefix replay of {sub.parent_task_id} gave {score}, "
            f"recorded start is {sub.start_score}")
    weak_actions: list[str] = []
    completion: Optional[int] = None
    base = len(sub.prefix_actions)
    for t in range(1, cfg.y + 1):
        action = _act(weak, task, view, sub.seed, cfg.run)
        state, obs, _ = world.step(state, action, step_index=base + t)
        score = world.process_score(state, task).value
        weak_actions.append(action)
        view.steps.append((action, obs.text))
        if _completed(score, sub, cfg):
            completion = t
            break
    if completion is None:
        sub.difficulty = HARD
    elif completion <= cfg.x:
        sub.difficulty = EASY
    else:
        sub.difficulty = MEDIUM
    sub.weak_actions = weak_actions
    sub.completion_step = completion
    return sub


def _completed(score: float, sub: SubTask, cfg: PipelineConfig) -> bool:
    if cfg.completion_rule == "next_milestone":
        return score >= sub.target_score
    return score > sub.start_score


def filter_subtasks(subs: list[SubTask]) -> list[SubTask]:
    for sub in subs:
        if sub.difficulty == UNSET:
            raise PipelineError(
                f"sub-task of {sub.parent_task_id} is unclassified")
    return [s for s in subs if s.difficulty != EASY]


# ---------------------------------------------------------------------------
# Rollout contexts, thought sampling, reward computation
# ---------------------------------------------------------------------------

def build_rollout_context(world: TextWorld, task: TaskSpec, sub: SubTask,
                          cfg: PipelineConfig) -> RolloutContext:
    cfg.validate()
    if not sub.weak_actions:
        raise PipelineError("sub-task has no weak trajectory; classify it first")
    weak_prefix = list(sub.weak_actions[:cfg.x])
    while len(weak_prefix) < cfg.x:
        # shorter weak runs are padded by repeating the last action
        weak_prefix.append(weak_prefix[-1] if weak_prefix else "look around")
    actions = sub.prefix_actions + weak_prefix
    state, view, score = replay_with_history(world, task, sub.seed, actions)
    expected = world.process_score(
        world.replay(task, sub.seed, sub.prefix_actions), task).value
    if expected != sub.start_score:
        raise IntegrityError(
            f"context rebuild for {sub.parent_task_id} diverged: "
            f"{expected} != {sub.start_score}")
    prompt = render_thinker_prompt(task, view, char_budget=cfg.run.char_budget)
    context_id = f"{task.id}-s{sub.seed}-p{len(sub.prefix_actions)}"
    return RolloutContext(context_id=context_id, sub=sub, prompt=prompt,
                          history=view, weak_prefix=weak_prefix)


class GroupDiscarded(PipelineError):
    """A context whose thought group could not be filled; never padded."""


def sample_thoughts(thinker: PolicyHandle, context: RolloutContext, m: int,
                    base_seed: int = 0,
                    retry_budget: int = 3) -> list[DeepThought]:
    anchor = len(context.history.steps)
    thoughts: list[DeepThought] = []
    seed = base_seed
    failures = 0
    while len(thoughts) < m:
        raw = complete(thinker, context.prompt, seed=seed)
        seed += 1
        try:
            text = parse_thinker_output(raw)
        except ParseError:
            failures += 1
            if failures > retry_budget:
                raise GroupDiscarded(
                    f"context {context.context_id}: thought sampling failed "
                    f"{failures} times")
            continue
        thoughts.append(DeepThought(text=text, anchor_step=anchor))
    return thoughts


def continuation_reward(mode: str, improved_at: Optional[int],
                        rate: float = 0.05) -> float:
    """Reward for a continuation whose first score improvement happened at
    1-based step `improved_at` (None = no improvement)."""
    if improved_at is None:
        return 0.0
    if mode == BINARY:
        return 1.0
    if mode == STEP_PENALTY:
        return max(0.0, 1.0 - rate * (improved_at - 1))
    raise ValueError(f"unknown reward mode {mode!r}")


def evaluate_thought(world: TextWorld, actor_frozen: PolicyHandle,
                     task: TaskSpec, context: RolloutContext,
                     thought: DeepThought, cfg: PipelineConfig) -> RewardRecord:
    """Let the frozen actor continue for up to (y - x) steps with the thought
    injected at the context boundary."""
    cfg.validate()
    sub = context.sub
    state, view, _ = replay_with_history(
        world, task, sub.seed, sub.prefix_actions + context.weak_prefix)
    view.thoughts.append((thought.anchor_step, thought.text))
    continuation: list[StepRecord] = []
    improved_at: Optional[int] = None
    base = len(view.steps)
    budget = cfg.y - cfg.x
    for t in range(1, budget + 1):
        action = _act(actor_frozen, task, view, sub.seed, cfg.run)
        state, obs, done = world.step(state, action, step_index=base + t)
        score = world.process_score(state, task).value
        continuation.append(StepRecord(action=action, observation=obs.text,
                                       score_after=score, wall_ms=0.0, done=done))
        view.steps.append((action, obs.text))
        if improved_at is None and score > sub.start_score:
            improved_at = t
            break
    reward = continuation_reward(cfg.reward_mode, improved_at, cfg.penalty_rate)
    return RewardRecord(context_id=context.context_id, thought=thought,
                        continuation=continuation, reward=reward,
                        improved_at=improved_at)


def rollout_group(world: TextWorld, task: TaskSpec, context: RolloutContext,
                  thinker: PolicyHandle, actor_frozen: PolicyHandle,
                  cfg: PipelineConfig, base_seed: int = 0) -> RolloutGroup:
    thoughts = sample_thoughts(thinker, context, cfg.m, base_seed=base_seed,
                               retry_budget=cfg.sample_retry_budget)
    records = [evaluate_thought(world, actor_frozen, task, context, thought, cfg)
               for thought in thoughts]
    group = RolloutGroup(context_id=context.context_id, prompt=context.prompt,
                         records=records, difficulty=context.sub.difficulty)
    group.validate(cfg.m)
    return group


# ---------------------------------------------------------------------------
# Multi-node ablation contexts
# ---------------------------------------------------------------------------

NODE_INTERVALS = {2: 9, 4: 6}


@dataclass
class MultiNodeRollout:
    trajectory: Trajectory
    reward: float
    trigger_steps: list[int]


@dataclass
class MultiNodeGroup:
    task_id: str
    interval: int
    max_steps: int
    rollouts: list[MultiNodeRollout]


def build_multinode_contexts(world: TextWorld, task: TaskSpec,
                             thinker: PolicyHandle, actor_frozen: PolicyHandle,
                             cfg: PipelineConfig,
                             base_seed: int = 0) -> MultiNodeGroup:
    """Rollouts whose trajectory reward is shared by every thinking node.
    Node counts of 2 and 4 map to trigger intervals of 9 and 6 under the
    rollout step cap; a node count of 1 is the standard single-node path."""
    from .orchestrator import run_ttexplore

    nodes = cfg.nodes_per_trajectory
    if nodes == 1:
        raise ValueError("single-node data comes from the standard pipeline; "
                         "use divide/classify/rollout instead")
    if nodes not in NODE_INTERVALS:
        raise ValueError(f"unsupported nodes_per_trajectory: {nodes}")
    interval = NODE_INTERVALS[nodes]
    run_cfg = RunConfig(mode="ttexplore", n_trigger=interval,
                        max_steps=cfg.rollout_max_steps,
                        char_budget=cfg.run.char_budget)
    rollouts = []
    for j in range(cfg.m):
        episode_cfg = RunConfig(**{**run_cfg.as_dict(), "seed": base_seed + j})
        traj = run_ttexplore(world, actor_frozen, thinker, task, episode_cfg)
        improved = [i + 1 for i, s in enumerate(traj.steps) if s.score_after > 0.0]
        reward = continuation_reward(cfg.reward_mode,
                                     improved[0] if improved else None,
                                     cfg.penalty_rate)
        rollouts.append(MultiNodeRollout(
            trajectory=traj, reward=reward,
            trigger_steps=[t.anchor_step for t in traj.thoughts]))
    return MultiNodeGroup(task_id=task.id, interval=interval,
                          max_steps=cfg.rollout_max_steps, rollouts=rollouts)


# ---------------------------------------------------------------------------
# Exports and the end-to-end forge driver
# ---------------------------------------------------------------------------

def export_grpo(groups: list[RolloutGroup], path: str | Path) -> dict:
    path = Path(path)
    lines = []
    for group in groups:
        prompts = {group.prompt}
        if len(prompts) != 1:
            raise PipelineError(f"group {group.context_id} has mixed prompts")
        lines.append(json.dumps({
            "context_id": group.context_id,
            "prompt": group.prompt,
            "completions": [r.thought.text for r in group.records],
            "rewards": [r.reward for r in group.records],
            "meta": {
                "difficulty": group.difficulty,
                "improved_at": [r.improved_at for r in group.records],
            },
        }, ensure_ascii=False))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return {"groups": len(groups)}


def export_sft(world: TextWorld, tasks: dict[str, TaskSpec],
               trajectories: list[Trajectory], path: str | Path,
               char_budget: int = 100_000) -> dict:
    """One record per deep thought: the thinker prompt at the anchor and the
    thought text as completion."""
    path = Path(path)
    lines = []
    for traj in trajectories:
        task = tasks[traj.task_id]
        for thought in traj.thoughts:
            view = HistoryView(
                traj.task_id, traj.initial_observation,
                steps=[(s.action, s.observation)
                       for s in traj.steps[:thought.anchor_step]],
                thoughts=[(t.anchor_step, t.text) for t in traj.thoughts
                          if t.anchor_step < thought.anchor_step],
            )
            prompt = render_thinker_prompt(task, view, char_budget=char_budget)
            lines.append(json.dumps({"prompt": prompt,
                                     "completion": thought.text},
                                    ensure_ascii=False))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return {"records": len(lines)}


@dataclass
class ForgeResult:
    strong_trajectories: list[Trajectory]
    subtasks: list[SubTask]
    groups: list[RolloutGroup]
    skipped: list[str]
    manifest: dict


def forge(world: TextWorld, tasks: list[TaskSpec], strong: PolicyHandle,
          weak: PolicyHandle, thinker: PolicyHandle,
          actor_frozen: PolicyHandle, cfg: PipelineConfig,
          seeds: Optional[list[int]] = None) -> ForgeResult:
    """Run the full data factory over the given tasks."""
    from .orchestrator import run_react

    cfg.validate()
    seeds = seeds if seeds is not None else [0]
    strong_trajs: list[Trajectory] = []
    all_subs: list[SubTask] = []
    groups: list[RolloutGroup] = []
    skipped: list[str] = []

    for task in tasks:
        for seed in seeds:
            run_cfg = RunConfig(mode="react", seed=seed,
                                max_steps=task.max_steps_default,
                                char_budget=cfg.run.char_budget)
            strong_traj = run_react(world, strong, task, run_cfg)
            strong_trajs.append(strong_traj)
            if strong_traj.final.process_score <= 0.0:
                skipped.append(f"{task.id}-s{seed}: strong trajectory flat")
                continue
            subs = divide_subtasks(task, strong_traj)
            for sub in subs:
                classify_difficulty(world, task, sub, weak, cfg)
            all_subs.extend(subs)
            for sub in filter_subtasks(subs):
                context = build_rollout_context(world, task, sub, cfg)
                base_seed = seed * 10_000 + len(sub.prefix_actions) * 100
                try:
                    groups.append(rollout_group(world, task, context, thinker,
                                                actor_frozen, cfg,
                                                base_seed=base_seed))
                except GroupDiscarded as exc:
                    skipped.append(str(exc))

    difficulty_counts = {EASY: 0, MEDIUM: 0, HARD: 0}
    for sub in all_subs:
        difficulty_counts[sub.difficulty] += 1
    rewards = [r.reward for g in groups for r in g.records]
    histogram: dict[str, int] = {}
    for r in rewards:
        key = f"{r:.2f}"
        histogram[key] = histogram.get(key, 0) + 1
    manifest = {
        "tasks": [t.id for t in tasks],
        "seeds": seeds,
        "config": {
            "x": cfg.x, "y": cfg.y, "m": cfg.m,
            "reward_mode": cfg.reward_mode,
            "penalty_rate": cfg.penalty_rate,
            "completion_rule": cfg.completion_rule,
        },
        "subtasks": len(all_subs),
        "difficulty_counts": difficulty_counts,
        "groups": len(groups),
        "skipped": skipped,
        "mean_reward": (round(sum(rewards) / len(rewards), 4) if rewards else None),
        "reward_histogram": histogram,
    }
    return ForgeResult(strong_trajectories=strong_trajs, subtasks=all_subs,
                       groups=groups, skipped=skipped, manifest=manifest)
