"""Actor/thinker policy backends.

Two backend families:

* scripted — named, deterministic functions of (prompt, seed). They read the
  episode state back out of the rendered prompt text, so the whole test suite
  runs offline. The behavior table lives in this module.
* remote — a chat-completions style HTTP endpoint; one single-turn request per
  call, API key taken from an environment variable.
"""

from __future__ import annotations

import os
import random
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import requests

from .prompts import PromptView, parse_prompt
from .world import SENTINEL, parse_action


class ConfigError(ValueError):
    pass


class RemoteError(RuntimeError):
    def __init__(self, message: str, attempts: int, retryable: bool = True):
        super().__init__(message)
        self.attempts = attempts
        self.retryable = retryable


@dataclass(frozen=True)
class DecodeParams:
    temperature: float = 0.0
    max_output_tokens: int = 1024


@dataclass(frozen=True)
class ScriptedBackend:
    name: str


@dataclass(frozen=True)
class RemoteBackend:
    endpoint: str
    model: str
    api_key_env: str = "TTEXPLORE_API_KEY"
    max_retries: int = 2
    timeout_s: float = 60.0


@dataclass
class PolicyHandle:
    role: str  # "actor" | "thinker"
    backend: ScriptedBackend | RemoteBackend
    decode: DecodeParams = field(default_factory=DecodeParams)


def scripted(role: str, name: str, temperature: float = 0.0) -> PolicyHandle:
    return PolicyHandle(role=role, backend=ScriptedBackend(name),
                        decode=DecodeParams(temperature=temperature))


def complete(policy: PolicyHandle, prompt: str, seed: int = 0) -> str:
    """Run one completion. Scripted backends are pure in (prompt, seed);
    remote backends issue a single chat-completion call. Identical outputs for
    identical remote prompts are NOT guaranteed, even at temperature 0."""
    if isinstance(policy.backend, ScriptedBackend):
        fn = SCRIPTED_POLICIES.get(policy.backend.name)
        if fn is None:
            raise ConfigError(f"unknown scripted policy {policy.backend.name!r}")
        return fn(prompt, seed)
    return _complete_remote(policy, prompt)


def _complete_remote(policy: PolicyHandle, prompt: str) -> str:
    backend = policy.backend
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(backend.api_key_env)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    payload = {
        "model": backend.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": policy.decode.temperature,
        "max_tokens": policy.decode.max_output_tokens,
    }
    last_error: Optional[Exception] = None
    attempts = 0
    for attempt in range(backend.max_retries + 1):
        attempts = attempt + 1
        try:
            resp = requests.post(backend.endpoint, json=payload, headers=headers,
                                 timeout=backend.timeout_s)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, ValueError) as exc:
            last_error = exc
            if attempt < backend.max_retries:
                time.sleep(0.5 * (attempt + 1))
    raise RemoteError(f"remote completion failed: {last_error}", attempts=attempts)


# ---------------------------------------------------------------------------
# Scripted fixture policies
# ---------------------------------------------------------------------------

# Full known-good action scripts, keyed by task instruction.
SOLUTIONS: dict[str, list[str]] = {
    "put the apple on the table": [
        "go to kitchen",
        "go to fridge 1",
        "open fridge 1",
        "take apple 1 from fridge 1",
        "go to table 1",
        "put apple 1 on table 1",
    ],
    "put the soap on the table": [
        "go to kitchen",
        "go to cabinet 1",
        "open cabinet 1",
        "take soap 1 from cabinet 1",
        "go to table 1",
        "put soap 1 on table 1",
    ],
    "put the gem on the shelf": [
        "go to drawer 1",
        "open drawer 1",
        "take key 1 from drawer 1",
        "go to chest 1",
        "open chest 1",
        "put key 1 in chest 1",
        "take gem 1 from chest 1",
        "go to shelf 1",
        "put gem 1 on shelf 1",
    ],
}

# What a rule-ignorant subgoal chaser tries: interact with targets directly,
# no navigation, no opening of containers it has not thought about.
NAIVE_PLANS: dict[str, list[str]] = {
    "put the apple on the table": [
        "open fridge 1",
        "take apple 1 from fridge 1",
        "put apple 1 on table 1",
    ],
    "put the soap on the table": [
        "open cabinet 1",
        "take soap 1 from cabinet 1",
        "put soap 1 on table 1",
    ],
    "put the gem on the shelf": [
        "open chest 1",
        "take gem 1 from chest 1",
        "put gem 1 on shelf 1",
    ],
}

# Round-robin action cycles for the wanderer (the difficulty-probing weak
# policy of the data pipeline fixtures). The cycle position is the history
# length mod cycle length, so different replayed prefixes start at different
# points.
WANDER_CYCLES: dict[str, list[str]] = {
    "put the soap on the table": [
        "take soap 1 from cabinet 1",
        "look around",
        "go to table 1",
        "look around",
        "go to cabinet 1",
        "put soap 1 on table 1",
    ],
}

REFLECTION_MARKER = "Reflection Request:"

CANNED_REFLECTION = (
    "The previous attempt failed. Navigate to a target before interacting "
    "with it, and do not repeat actions that produced no effect."
)


def _actor_raw(thought: str, action: str) -> str:
    return f"<think>{thought}</think>\n<answer>{action}</answer>"


def _thinker_raw(text: str) -> str:
    return f"<deepthink>{text}</deepthink>"


def _successful_actions(view: PromptView) -> set[str]:
    return {a for a, o in view.steps if o != SENTINEL}


def _plan_lines(thought_text: str) -> list[str]:
    lines = thought_text.split("\n")
    plan: list[str] = []
    in_plan = False
    for line in lines:
        if line.strip() == "Plan:":
            in_plan = True
            continue
        if in_plan:
            if line.startswith("- "):
                plan.append(line[2:].strip())
            else:
                break
    return plan


def _latest_plan_step(view: PromptView) -> Optional[str]:
    """Next unexecuted plan line of the latest deep thought, if any."""
    if not view.thoughts:
        return None
    anchor_pos, text = view.thoughts[-1]
    plan = _plan_lines(text)
    idx = len(view.steps) - anchor_pos
    if 0 <= idx < len(plan):
        return plan[idx]
    return None


def loop_actor(prompt: str, seed: int) -> str:
    if REFLECTION_MARKER in prompt:
        return CANNED_REFLECTION
    view = parse_prompt(prompt)
    action = view.steps[-1][0] if view.steps else "look around"
    return _actor_raw("keep going", action)


def greedy_actor(prompt: str, seed: int) -> str:
    """Rule-ignorant subgoal chaser; follows the latest deep thought's plan
    lines when one is present."""
    if REFLECTION_MARKER in prompt:
        return CANNED_REFLECTION
    view = parse_prompt(prompt)
    planned = _latest_plan_step(view)
    if planned is not None:
        return _actor_raw("following the plan", planned)
    naive = NAIVE_PLANS.get(view.instruction, ["look around"])
    done = _successful_actions(view)
    attempted = [a for a, _ in view.steps]
    candidates = [a for a in naive if a not in done]
    if not candidates:
        return _actor_raw("nothing left to try", "look around")
    for action in candidates:
        if action not in attempted:
            return _actor_raw("trying the direct approach", action)
    return _actor_raw("trying again", candidates[-1])


def obedient_actor(prompt: str, seed: int) -> str:
    """Follows the latest thought's plan lines; with no plan it degenerates to
    repeating its last action."""
    if REFLECTION_MARKER in prompt:
        return CANNED_REFLECTION
    view = parse_prompt(prompt)
    planned = _latest_plan_step(view)
    if planned is not None:
        return _actor_raw("following the plan", planned)
    return loop_actor(prompt, seed)


def oracle_actor(prompt: str, seed: int) -> str:
    """Strong policy: plays the known-good script by position."""
    if REFLECTION_MARKER in prompt:
        return CANNED_REFLECTION
    view = parse_prompt(prompt)
    script = SOLUTIONS.get(view.instruction, [])
    idx = len(view.steps)
    if idx < len(script):
        return _actor_raw("executing the known solution", script[idx])
    return _actor_raw("done", "look around")


def wanderer_actor(prompt: str, seed: int) -> str:
    """Weak policy: cycles a fixed action list, position keyed to history
    length so behavior depends on the replayed prefix."""
    if REFLECTION_MARKER in prompt:
        return CANNED_REFLECTION
    view = parse_prompt(prompt)
    cycle = WANDER_CYCLES.get(view.instruction)
    if not cycle:
        naive = NAIVE_PLANS.get(view.instruction, [])
        cycle = naive + ["look around"] if naive else ["look around"]
    action = cycle[len(view.steps) % len(cycle)]
    return _actor_raw("wandering", action)


def staged_actor(prompt: str, seed: int) -> str:
    """Executes two more solution steps per reflection received; used to
    exercise the retry harness."""
    if REFLECTION_MARKER in prompt:
        return CANNED_REFLECTION
    view = parse_prompt(prompt)
    script = SOLUTIONS.get(view.instruction, [])
    limit = 2 * (len(view.reflections) + 1)
    idx = len(view.steps)
    if idx < min(limit, len(script)):
        return _actor_raw("one more stage", script[idx])
    return _actor_raw("out of ideas", "look around")


_RULE_EXPLANATIONS = {
    "must-face-target": "the agent must go to an object before interacting with it",
    "one-item-hand": "the agent cannot hold two objects at the same time",
    "closed-blocks-access": "a closed container blocks access to its contents",
    "locked-needs-key": "a locked container only opens while its key is in hand",
    "unknown-verb-reject": "the environment only understands its documented verbs",
}


def _diagnose(view: PromptView, failed_action: str) -> str:
    action = parse_action(failed_action)
    if action.verb == "unknown":
        return "unknown-verb-reject"
    facing = None
    for a, o in view.steps:
        parsed = parse_action(a)
        if o != SENTINEL and parsed.verb == "go" and parsed.target is not None:
            facing = parsed.target
        elif o != SENTINEL and parsed.verb == "go":
            facing = None
    target = action.item if action.verb == "open" else action.target
    if target is not None and facing != target:
        return "must-face-target"
    if action.verb == "take":
        takes = [a for a, o in view.steps if o != SENTINEL and a.startswith("take ")]
        puts = [a for a, o in view.steps if o != SENTINEL and a.startswith("put ")]
        if len(takes) > len(puts):
            return "one-item-hand"
        return "closed-blocks-access"
    if action.verb == "open":
        return "locked-needs-key"
    return "closed-blocks-access"


def _corrective_plan(view: PromptView) -> list[str]:
    # navigation is never skipped: facing is transient, so a past "go to"
    # success does not mean the agent is still there
    script = SOLUTIONS.get(view.instruction, [])
    done = {a for a in _successful_actions(view)
            if parse_action(a).verb in ("open", "take", "put")}
    return [a for a in script if a not in done]


def oracle_thinker(prompt: str, seed: int) -> str:
    """Names the violated fixture rule and emits a corrective plan."""
    view = parse_prompt(prompt)
    failed = [a for a, o in view.steps if o == SENTINEL]
    plan = _corrective_plan(view)
    lines: list[str]
    if failed:
        rule = _diagnose(view, failed[-1])
        lines = [
            f"Summary: {len(failed)} recent actions had no effect.",
            f"Hypothesis: a hidden rule ({rule}) is blocking progress: "
            f"{_RULE_EXPLANATIONS[rule]}.",
        ]
    else:
        lines = ["Summary: all feedback so far looks consistent."]
    if plan:
        lines.append("Plan:")
        lines += [f"- {a}" for a in plan]
    else:
        lines.append("Plan:")
        lines.append("- look around")
    return _thinker_raw("\n".join(lines))


def null_thinker(prompt: str, seed: int) -> str:
    return _thinker_raw(
        "Summary: everything looks fine so far.\ncontinue")


def noisy_thinker(prompt: str, seed: int) -> str:
    """Stochastic trainable-thinker stand-in: seed decides between a helpful
    corrective thought and a useless one."""
    rng = random.Random(f"{zlib.crc32(prompt.encode('utf-8'))}:{seed}")
    if rng.random() < 0.5:
        return oracle_thinker(prompt, seed)
    return null_thinker(prompt, seed)


SCRIPTED_POLICIES: dict[str, Callable[[str, int], str]] = {
    "loop-actor": loop_actor,
    "greedy-actor": greedy_actor,
    "obedient-actor": obedient_actor,
    "oracle-actor": oracle_actor,
    "wanderer-actor": wanderer_actor,
    "staged-actor": staged_actor,
    "oracle-thinker": oracle_thinker,
    "null-thinker": null_thinker,
    "noisy-thinker": noisy_thinker,
}
