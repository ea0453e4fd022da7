"""Prompt rendering, tagged-output parsing, truncation, and introspection."""

import pytest

from ttexplore.prompts import (
    ACTOR_FORMAT_BLOCK,
    THINKER_FORMAT_BLOCK,
    TRUNCATION_MARKER,
    ActorOutput,
    ContractViolation,
    HistoryView,
    ParseError,
    ParseErrorKind,
    format_actor_output,
    format_thinker_output,
    parse_actor_output,
    parse_prompt,
    parse_thinker_output,
    render_actor_prompt,
    render_thinker_prompt,
)


@pytest.fixture
def task(minihouse1):
    return minihouse1.tasks["minihouse-1"]


@pytest.fixture
def view(task):
    return HistoryView(
        task_id=task.id,
        initial_observation="You are in the hallway.",
        steps=[("go to kitchen", "You are in the kitchen."),
               ("open fridge 1", "Nothing happened.")],
        thoughts=[(2, "Summary: something is off.\nPlan:\n- go to fridge 1")],
    )


# --- rendering -------------------------------------------------------------

def test_render_is_pure(task, view):
    assert render_actor_prompt(task, view) == render_actor_prompt(task, view)
    assert render_thinker_prompt(task, view) == render_thinker_prompt(task, view)


def test_actor_prompt_structure(task, view):
    prompt = render_actor_prompt(task, view)
    assert "You are an Action Agent responsible for achieving a text-based task." in prompt
    assert f"The Task: {task.instruction}" in prompt
    assert "Initial Observation: You are in the hallway." in prompt
    assert "Action: go to kitchen" in prompt
    assert "Observation: Nothing happened." in prompt
    assert "Deep Thought: Summary: something is off." in prompt
    assert prompt.endswith(ACTOR_FORMAT_BLOCK)


def test_thinker_prompt_structure(task, view):
    prompt = render_thinker_prompt(task, view)
    assert "You are a Thinker Agent responsible for uncovering the implicit rules" in prompt
    assert "History Trajectory:" in prompt
    assert "consider what hidden rules could explain the observations" in prompt
    assert prompt.endswith(THINKER_FORMAT_BLOCK)


def test_thinker_prompt_empty_history(task):
    view = HistoryView(task_id=task.id, initial_observation="obs")
    prompt = render_thinker_prompt(task, view)
    assert "(no interaction yet)" in prompt


def test_reflections_rendered(task):
    view = HistoryView(task_id=task.id, initial_observation="obs",
                       reflections=["try navigating first"])
    prompt = render_actor_prompt(task, view)
    assert "Previous Reflections:" in prompt
    assert "- try navigating first" in prompt


def test_wrong_task_id_raises(task, view):
    bad = HistoryView(task_id="other-task", initial_observation="obs")
    with pytest.raises(ContractViolation):
        render_actor_prompt(task, bad)
    assert view.task_id == task.id  # sanity on the fixture


def test_thought_anchor_out_of_range_raises(task):
    view = HistoryView(task_id=task.id, initial_observation="obs",
                       thoughts=[(5, "text")])
    with pytest.raises(ContractViolation):
        render_thinker_prompt(task, view)


# --- truncation ------------------------------------------------------------

def test_truncation_drops_oldest_pairs_keeps_invariants(task):
    steps = [(f"go to kitchen", f"observation number {i} with padding " + "x" * 40)
             for i in range(40)]
    view = HistoryView(task_id=task.id, initial_observation="the initial observation",
                       steps=steps,
                       thoughts=[(40, "an important deep thought")])
    full = render_actor_prompt(task, view, char_budget=10 ** 6)
    small = render_actor_prompt(task, view, char_budget=len(full) - 500)
    assert len(small) < len(full)
    assert TRUNCATION_MARKER in small
    assert f"The Task: {task.instruction}" in small
    assert "Initial Observation: the initial observation" in small
    assert "Deep Thought: an important deep thought" in small
    assert "observation number 0 " not in small  # oldest pair dropped first
    assert "observation number 39 " in small


def test_no_truncation_under_budget(task, view):
    prompt = render_actor_prompt(task, view)
    assert TRUNCATION_MARKER not in prompt


# --- output parsing --------------------------------------------------------

def test_actor_round_trip():
    out = ActorOutput(thought="consider the fridge", action="open fridge 1")
    assert parse_actor_output(format_actor_output(out)) == out


def test_thinker_round_trip():
    assert parse_thinker_output(format_thinker_output("hidden rule: face it")) == \
        "hidden rule: face it"


def test_actor_parse_ignores_surrounding_junk():
    raw = "preamble\n<think> a </think>\nmiddle\n<answer> go to kitchen </answer>\ntail"
    assert parse_actor_output(raw).action == "go to kitchen"


def test_actor_parse_takes_first_block():
    raw = ("<think>one</think><answer>first</answer>"
           "<think>two</think><answer>second</answer>")
    assert parse_actor_output(raw).action == "first"


@pytest.mark.parametrize("raw,kind", [
    ("<answer>go</answer>", ParseErrorKind.MissingThink),
    ("<think>t</think>", ParseErrorKind.MissingAnswer),
    ("<think>t</think><answer>   </answer>", ParseErrorKind.EmptyAction),
])
def test_actor_parse_errors(raw, kind):
    with pytest.raises(ParseError) as exc:
        parse_actor_output(raw)
    assert exc.value.kind == kind


def test_thinker_parse_error():
    with pytest.raises(ParseError) as exc:
        parse_thinker_output("no tags at all")
    assert exc.value.kind == ParseErrorKind.MissingDeepthink


def test_thinker_parse_discards_preamble():
    raw = "secret reasoning\n<deepthink> the rule </deepthink>"
    assert parse_thinker_output(raw) == "the rule"


# --- prompt introspection --------------------------------------------------

def test_parse_prompt_round_trip(task, view):
    for render in (render_actor_prompt, render_thinker_prompt):
        recovered = parse_prompt(render(task, view))
        assert recovered.instruction == task.instruction
        assert recovered.initial_observation == view.initial_observation
        assert recovered.steps == view.steps
        assert recovered.thoughts == view.thoughts


def test_parse_prompt_multiline_thought(task):
    view = HistoryView(
        task_id=task.id, initial_observation="obs",
        steps=[("look around", "nothing")],
        thoughts=[(1, "Summary: x.\nPlan:\n- go to kitchen\n- open fridge 1")],
    )
    recovered = parse_prompt(render_actor_prompt(task, view))
    assert recovered.thoughts == view.thoughts


def test_parse_prompt_recovers_reflections(task):
    view = HistoryView(task_id=task.id, initial_observation="obs",
                       reflections=["first lesson", "second lesson"])
    recovered = parse_prompt(render_actor_prompt(task, view))
    assert recovered.reflections == ["first lesson", "second lesson"]
