"""Deterministic partially observable text-world engine.

Worlds are declared in YAML: rooms, entities, a rule table, and tasks with
subgoal predicates. Rules are guard/effect pairs evaluated in declaration
order; the first matching reject wins and the step yields the sentinel
observation. Seeds only shuffle entity enumeration order in observation text,
never reachability or scoring.
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Optional

import yaml

SENTINEL = "Nothing happened."

HAND = "hand"


class WorldValidationError(ValueError):
    """A world or task definition violates the schema."""


@dataclass
class Entity:
    id: str
    kind: str  # "object" | "receptacle"
    location: str  # room id, receptacle id, or "hand"
    open: Optional[bool] = None
    attributes: set[str] = field(default_factory=set)


@dataclass
class Agent:
    room: str
    facing: Optional[str] = None
    hand: Optional[str] = None


@dataclass
class WorldState:
    rooms: tuple[str, ...]
    entities: dict[str, Entity]
    agent: Agent
    rng_seed: int

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class Observation:
    text: str
    step_index: int = 0


@dataclass(frozen=True)
class ProcessScore:
    value: float
    satisfied_subgoals: frozenset[int]


@dataclass(frozen=True)
class Rule:
    id: str
    guard: str
    effect: str = "reject"


@dataclass
class Subgoal:
    description: str
    conditions: list[dict]  # conjunction of condition descriptors


@dataclass
class TaskSpec:
    id: str
    instruction: str
    initial_world: WorldState
    subgoals: list[Subgoal]
    action_space_doc: str
    examples: list[str]
    max_steps_default: int = 50


@dataclass(frozen=True)
class Action:
    verb: str  # go | open | take | put | look | unknown
    item: Optional[str] = None
    target: Optional[str] = None
    preposition: Optional[str] = None
    raw: str = ""


@dataclass(frozen=True)
class Allow:
    pass


@dataclass(frozen=True)
class Reject:
    rule_id: str


ALLOW = Allow()


def parse_action(text: str) -> Action:
    raw = text.strip()
    lowered = raw.lower()
    if lowered == "look around":
        return Action("look", raw=raw)
    if lowered.startswith("go to "):
        return Action("go", target=raw[6:].strip(), raw=raw)
    if lowered.startswith("open "):
        return Action("open", item=raw[5:].strip(), raw=raw)
    if lowered.startswith("take "):
        rest = raw[5:]
        if " from " in rest:
            item, target = rest.split(" from ", 1)
            return Action("take", item=item.strip(), target=target.strip(), raw=raw)
        return Action("unknown", raw=raw)
    if lowered.startswith("put "):
        rest = raw[4:]
        for prep in (" in ", " on "):
            if prep in rest:
                item, target = rest.split(prep, 1)
                return Action(
                    "put",
                    item=item.strip(),
                    target=target.strip(),
                    preposition=prep.strip(),
                    raw=raw,
                )
        return Action("unknown", raw=raw)
    return Action("unknown", raw=raw)


def _interaction_target(action: Action) -> Optional[str]:
    if action.verb == "open":
        return action.item
    if action.verb in ("take", "put"):
        return action.target
    return None


def _receptacle(state: WorldState, name: Optional[str]) -> Optional[Entity]:
    if name is None:
        return None
    ent = state.entities.get(name)
    if ent is not None and ent.kind == "receptacle":
        return ent
    return None


# --- rule guards -----------------------------------------------------------
# A guard returns True when the rule should fire (reject the action).

def _guard_unknown_verb(state: WorldState, action: Action) -> bool:
    return action.verb == "unknown"


def _guard_must_face_target(state: WorldState, action: Action) -> bool:
    target = _interaction_target(action)
    if _receptacle(state, target) is None:
        return False
    return state.agent.facing != target


def _guard_one_item_hand(state: WorldState, action: Action) -> bool:
    return action.verb == "take" and state.agent.hand is not None


def _guard_closed_blocks_access(state: WorldState, action: Action) -> bool:
    if action.verb not in ("take", "put"):
        return False
    target = _receptacle(state, action.target)
    return target is not None and target.open is False


def _guard_locked_needs_key(state: WorldState, action: Action) -> bool:
    if action.verb != "open":
        return False
    target = _receptacle(state, action.item)
    if target is None or "locked" not in target.attributes:
        return False
    key = None
    for attr in target.attributes:
        if attr.startswith("unlocks-with:"):
            key = attr.split(":", 1)[1]
    return state.agent.hand != key


GUARDS = {
    "unknown-verb": _guard_unknown_verb,
    "must-face-target": _guard_must_face_target,
    "one-item-hand": _guard_one_item_hand,
    "closed-blocks-access": _guard_closed_blocks_access,
    "locked-needs-key": _guard_locked_needs_key,
}


# --- subgoal conditions ----------------------------------------------------

def _cond_holds(state: WorldState, cond: dict) -> bool:
    kind = cond["kind"]
    if kind == "receptacle_open":
        ent = state.entities.get(cond["entity"])
        return ent is not None and ent.open is True
    if kind == "in_hand":
        return state.agent.hand == cond["entity"]
    if kind == "was_held":
        ent = state.entities.get(cond["entity"])
        return ent is not None and "held" in ent.attributes
    if kind == "located":
        ent = state.entities.get(cond["entity"])
        return ent is not None and ent.location == cond["container"]
    if kind == "facing":
        return state.agent.facing == cond["entity"]
    if kind == "agent_in":
        return state.agent.room == cond["room"]
    raise WorldValidationError(f"unknown subgoal condition kind: {kind!r}")


def _round2(value: Decimal) -> float:
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


class TextWorld:
    """A world definition plus its rule table; all operations are pure."""

    def __init__(self, world_id: str, rooms: list[str], entities: dict[str, Entity],
                 agent: Agent, rules: list[Rule]):
        self.id = world_id
        self.rooms = tuple(sorted(rooms))
        self.entities = entities
        self.agent = agent
        self.rules = rules
        self.tasks: dict[str, TaskSpec] = {}

    # -- episode operations --------------------------------------------

    def reset(self, task: TaskSpec, seed: int) -> tuple[WorldState, Observation]:
        validate_task(task)
        state = task.initial_world.copy()
        state.rng_seed = seed
        return state, Observation(self._room_description(state), step_index=0)

    def step(self, state: WorldState, action_text: str,
             step_index: int = 0) -> tuple[WorldState, Observation, bool]:
        action = parse_action(action_text)
        verdict = self.check_rule(state, action_text)
        if isinstance(verdict, Reject):
            done = self._all_satisfied(state)
            return state, Observation(SENTINEL, step_index), done
        new_state = state.copy()
        text = self._apply(new_state, action)
        done = self._all_satisfied(new_state)
        return new_state, Observation(text, step_index), done

    def check_rule(self, state: WorldState, action_text: str) -> Allow | Reject:
        action = parse_action(action_text)
        for rule in self.rules:
            guard = GUARDS.get(rule.guard)
            if guard is None:
                raise WorldValidationError(f"unknown rule guard: {rule.guard!r}")
            if rule.effect == "reject" and guard(state, action):
                return Reject(rule.id)
        return self._builtin_check(state, action)

    def process_score(self, state: WorldState, task: TaskSpec) -> ProcessScore:
        satisfied = frozenset(
            i for i, goal in enumerate(task.subgoals)
            if all(_cond_holds(state, cond) for cond in goal.conditions)
        )
        value = _round2(Decimal(100) * Decimal(len(satisfied)) / Decimal(len(task.subgoals)))
        return ProcessScore(value=value, satisfied_subgoals=satisfied)

    def replay(self, task: TaskSpec, seed: int, actions: list[str]) -> WorldState:
        state, _ = self.reset(task, seed)
        for i, action in enumerate(actions, start=1):
            state, _, _ = self.step(state, action, step_index=i)
        return state

    # -- internals -------------------------------------------------------

    def _all_satisfied(self, state: WorldState) -> bool:
        task = self._task_for_state(state)
        if task is None:
            return False
        return self.process_score(state, task).value == 100.0

    def _task_for_state(self, state: WorldState) -> Optional[TaskSpec]:
        # worlds ship one task each; multi-task worlds resolve via step(task=...)
        if len(self.tasks) == 1:
            return next(iter(self.tasks.values()))
        return None

    def _builtin_check(self, state: WorldState, action: Action) -> Allow | Reject:
        if action.verb == "unknown":
            return Reject("unknown-verb")
        if action.verb == "look":
            return ALLOW
        if action.verb == "go":
            target = action.target
            if target in state.rooms or _receptacle(state, target) is not None:
                return ALLOW
            return Reject("invalid-target")
        if action.verb == "open":
            ent = _receptacle(state, action.item)
            if ent is None or ent.open is None:
                return Reject("invalid-target")
            if ent.open:
                return Reject("already-open")
            return ALLOW
        if action.verb == "take":
            source = _receptacle(state, action.target)
            item = state.entities.get(action.item or "")
            if source is None or item is None or item.location != source.id:
                return Reject("invalid-target")
            if state.agent.hand is not None:
                return Reject("one-item-hand")
            if source.open is False:
                return Reject("closed-blocks-access")
            return ALLOW
        if action.verb == "put":
            dest = _receptacle(state, action.target)
            if dest is None:
                return Reject("invalid-target")
            if state.agent.hand != action.item:
                return Reject("not-holding")
            if dest.open is False:
                return Reject("closed-blocks-access")
            return ALLOW
        return Reject("unknown-verb")

    def _apply(self, state: WorldState, action: Action) -> str:
        if action.verb == "look":
            return "You look around. " + self._room_description(state)
        if action.verb == "go":
            if action.target in state.rooms:
                state.agent.room = action.target
                state.agent.facing = None
                return self._room_description(state)
            ent = state.entities[action.target]
            state.agent.room = self._room_of(state, ent)
            state.agent.facing = ent.id
            return f"You arrive at {ent.id}. " + self._receptacle_description(state, ent)
        if action.verb == "open":
            ent = state.entities[action.item]
            ent.open = True
            contents = self._contents(state, ent.id)
            if contents:
                return f"You open {ent.id}. Inside you see: {', '.join(contents)}."
            return f"You open {ent.id}. It is empty."
        if action.verb == "take":
            item = state.entities[action.item]
            item.location = HAND
            item.attributes.add("held")
            state.agent.hand = item.id
            return f"You take {item.id} from {action.target}."
        if action.verb == "put":
            item = state.entities[action.item]
            dest = state.entities[action.target]
            item.location = dest.id
            state.agent.hand = None
            prep = "on" if "surface" in dest.attributes else "in"
            return f"You put {item.id} {prep} {dest.id}."
        raise AssertionError(f"unreachable verb {action.verb!r}")

    def _room_of(self, state: WorldState, ent: Entity) -> str:
        loc = ent.location
        while loc not in state.rooms:
            loc = state.entities[loc].location
        return loc

    def _enumeration_order(self, state: WorldState, container: str,
                           ids: list[str]) -> list[str]:
        ordered = sorted(ids)
        rng = random.Random(f"{state.rng_seed}:{container}")
        rng.shuffle(ordered)
        return ordered

    def _contents(self, state: WorldState, container: str) -> list[str]:
        ids = [e.id for e in state.entities.values() if e.location == container]
        return self._enumeration_order(state, container, ids)

    def _room_description(self, state: WorldState) -> str:
        room = state.agent.room
        items = []
        for eid in self._contents(state, room):
            ent = state.entities[eid]
            if ent.open is True:
                items.append(f"{eid} (open)")
            elif ent.open is False:
                items.append(f"{eid} (closed)")
            else:
                items.append(eid)
        exits = [r for r in state.rooms if r != room]
        seen = ", ".join(items) if items else "nothing of note"
        return f"You are in the {room}. You see: {seen}. Exits: {', '.join(exits)}."

    def _receptacle_description(self, state: WorldState, ent: Entity) -> str:
        if ent.open is False:
            return "It is closed."
        contents = self._contents(state, ent.id)
        if "surface" in ent.attributes:
            if contents:
                return f"On it you see: {', '.join(contents)}."
            return "There is nothing on it."
        if contents:
            return f"It is open. Inside you see: {', '.join(contents)}."
        return "It is open. It is empty."


# --- loading and validation -------------------------------------------------

def validate_task(task: TaskSpec) -> None:
    if not task.subgoals:
        raise WorldValidationError(f"task {task.id!r}: subgoals must be non-empty")
    for i, goal in enumerate(task.subgoals):
        if not goal.conditions:
            raise WorldValidationError(
                f"task {task.id!r}: subgoal {i} has no conditions")
        for cond in goal.conditions:
            if "kind" not in cond:
                raise WorldValidationError(
                    f"task {task.id!r}: subgoal {i} condition missing 'kind'")


def _validate_world(state: WorldState) -> None:
    in_hand = [e.id for e in state.entities.values() if e.location == HAND]
    if len(in_hand) > 1:
        raise WorldValidationError(f"more than one entity in hand: {in_hand}")
    for ent in state.entities.values():
        loc = ent.location
        if loc != HAND and loc not in state.rooms and loc not in state.entities:
            raise WorldValidationError(f"entity {ent.id!r} has unknown location {loc!r}")
        if ent.open is not None and ent.kind != "receptacle":
            raise WorldValidationError(f"entity {ent.id!r}: 'open' only valid on receptacles")
    if state.agent.room not in state.rooms:
        raise WorldValidationError(f"agent room {state.agent.room!r} does not exist")


def load_world(path: str | Path) -> TextWorld:
    """Load a world definition file and its tasks."""
    path = Path(path)
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    for key in ("id", "rooms", "entities", "agent", "rules", "tasks"):
        if key not in data:
            raise WorldValidationError(f"{path}: missing top-level key {key!r}")

    entities: dict[str, Entity] = {}
    for eid, spec in data["entities"].items():
        entities[eid] = Entity(
            id=eid,
            kind=spec["kind"],
            location=spec["location"],
            open=spec.get("open"),
            attributes=set(spec.get("attributes", [])),
        )
    agent = Agent(room=data["agent"]["room"],
                  facing=data["agent"].get("facing"),
                  hand=data["agent"].get("hand"))
    rules = [Rule(id=r["id"], guard=r["guard"], effect=r.get("effect", "reject"))
             for r in data["rules"]]
    world = TextWorld(data["id"], data["rooms"], entities, agent, rules)

    base_state = WorldState(
        rooms=tuple(sorted(data["rooms"])),
        entities=entities,
        agent=agent,
        rng_seed=0,
    )
    _validate_world(base_state)

    for tdata in data["tasks"]:
        subgoals = []
        for g in tdata.get("subgoals", []):
            subgoals.append(Subgoal(description=g.get("description", ""),
                                    conditions=g.get("all", [])))
        task = TaskSpec(
            id=tdata["id"],
            instruction=tdata["instruction"],
            initial_world=base_state.copy(),
            subgoals=subgoals,
            action_space_doc=tdata.get("action_space", ""),
            examples=list(tdata.get("examples", [])),
            max_steps_default=int(tdata.get("max_steps", 50)),
        )
        validate_task(task)
        initial_score = world.process_score(task.initial_world, task)
        if initial_score.satisfied_subgoals and not tdata.get("allow_initial_subgoals"):
            raise WorldValidationError(
                f"task {task.id!r}: initial world already satisfies subgoals "
                f"{sorted(initial_score.satisfied_subgoals)}")
        world.tasks[task.id] = task
    return world


def builtin_world_path(name: str) -> Path:
    return Path(__file__).parent / "worlds" / f"{name}.yaml"


def load_builtin_world(name: str) -> TextWorld:
    return load_world(builtin_world_path(name))
