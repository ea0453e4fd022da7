"""Scripted fixture policies and the remote backend contract."""

import json

import pytest

from ttexplore.orchestrator import RunConfig, run_react
from ttexplore.policies import (
    SCRIPTED_POLICIES,
    SOLUTIONS,
    CANNED_REFLECTION,
    REFLECTION_MARKER,
    ConfigError,
    DecodeParams,
    PolicyHandle,
    RemoteBackend,
    RemoteError,
    complete,
    noisy_thinker,
    scripted,
)
from ttexplore.prompts import HistoryView, parse_actor_output, render_actor_prompt


def actor_prompt(world, task_id, steps=(), thoughts=()):
    task = world.tasks[task_id]
    _, obs0 = world.reset(task, 0)
    view = HistoryView(task_id=task.id, initial_observation=obs0.text,
                       steps=list(steps), thoughts=list(thoughts))
    return render_actor_prompt(task, view)


# --- scripted backends -----------------------------------------------------

def test_scripted_policies_are_pure(minihouse1):
    prompt = actor_prompt(minihouse1, "minihouse-1")
    for name in SCRIPTED_POLICIES:
        handle = scripted("actor", name)
        assert complete(handle, prompt, seed=3) == complete(handle, prompt, seed=3)


def test_unknown_scripted_name_raises(minihouse1):
    prompt = actor_prompt(minihouse1, "minihouse-1")
    with pytest.raises(ConfigError, match="no-such-policy"):
        complete(scripted("actor", "no-such-policy"), prompt)


def test_oracle_actor_plays_script_by_position(minihouse1):
    script = SOLUTIONS["put the apple on the table"]
    steps = []
    handle = scripted("actor", "oracle-actor")
    for expected in script:
        prompt = actor_prompt(minihouse1, "minihouse-1", steps=steps)
        action = parse_actor_output(complete(handle, prompt)).action
        assert action == expected
        steps.append((action, "ok"))


def test_loop_actor_repeats_last_action(minihouse1):
    handle = scripted("actor", "loop-actor")
    prompt = actor_prompt(minihouse1, "minihouse-1")
    assert parse_actor_output(complete(handle, prompt)).action == "look around"
    prompt = actor_prompt(minihouse1, "minihouse-1",
                          steps=[("go to kitchen", "fine")])
    assert parse_actor_output(complete(handle, prompt)).action == "go to kitchen"


def test_greedy_actor_follows_plan_lines(minihouse1):
    handle = scripted("actor", "greedy-actor")
    thought = "Summary: blocked.\nPlan:\n- go to fridge 1\n- open fridge 1"
    steps = [("open fridge 1", "Nothing happened.")]
    prompt = actor_prompt(minihouse1, "minihouse-1", steps=steps,
                          thoughts=[(1, thought)])
    assert parse_actor_output(complete(handle, prompt)).action == "go to fridge 1"
    steps = steps + [("go to fridge 1", "You arrive at fridge 1.")]
    prompt = actor_prompt(minihouse1, "minihouse-1", steps=steps,
                          thoughts=[(1, thought)])
    assert parse_actor_output(complete(handle, prompt)).action == "open fridge 1"


def test_actors_answer_reflection_requests_raw():
    raw = complete(scripted("actor", "greedy-actor"),
                   f"{REFLECTION_MARKER} the attempt failed")
    assert raw == CANNED_REFLECTION
    assert "<think>" not in raw


def test_oracle_thinker_names_violated_rule(minihouse1):
    handle = scripted("thinker", "oracle-thinker")
    steps = [("open fridge 1", "Nothing happened.")]
    prompt = actor_prompt(minihouse1, "minihouse-1", steps=steps)
    raw = complete(handle, prompt)
    assert "must-face-target" in raw
    assert "Plan:" in raw


def test_oracle_thinker_plan_keeps_navigation_steps(minihouse1):
    # a successful "go to" in the history must not be dropped from the plan:
    # facing is transient
    handle = scripted("thinker", "oracle-thinker")
    steps = [
        ("go to kitchen", "You are in the kitchen."),
        ("go to fridge 1", "You arrive at fridge 1. It is closed."),
        ("open fridge 1", "You open fridge 1."),
        ("go to table 1", "You arrive at table 1."),
        ("take apple 1 from fridge 1", "Nothing happened."),
    ]
    raw = complete(handle, actor_prompt(minihouse1, "minihouse-1", steps=steps))
    assert "- go to fridge 1" in raw
    assert "- open fridge 1" not in raw  # already succeeded, not repeated


def test_noisy_thinker_mixes_across_seeds(minihouse2):
    prompt = actor_prompt(minihouse2, "minihouse-2",
                          steps=[("open cabinet 1", "Nothing happened.")])
    outputs = {noisy_thinker(prompt, seed) for seed in range(20)}
    assert len(outputs) == 2  # both the helpful and the useless variant occur


def test_wanderer_cycle_position_tracks_history_length(minihouse2):
    handle = scripted("actor", "wanderer-actor")
    first = parse_actor_output(
        complete(handle, actor_prompt(minihouse2, "minihouse-2"))).action
    assert first == "take soap 1 from cabinet 1"
    shifted = parse_actor_output(complete(handle, actor_prompt(
        minihouse2, "minihouse-2",
        steps=[("look around", "x"), ("look around", "x")]))).action
    assert shifted == "go to table 1"


def test_staged_actor_progresses_with_reflections(minihouse1, oracle):
    cfg = RunConfig(mode="react", max_steps=50, seed=0)
    traj = run_react(minihouse1, scripted("actor", "staged-actor"),
                     minihouse1.tasks["minihouse-1"], cfg)
    assert not traj.final.success  # two steps only, then idles


# --- remote backend --------------------------------------------------------

class FakeResponse:
    def __init__(self, payload, status=200):
        self._payload = payload
        self.status_code = status

    def raise_for_status(self):
        if self.status_code >= 400:
            import requests
            raise requests.HTTPError(f"status {self.status_code}")

    def json(self):
        return self._payload


def remote_handle():
    return PolicyHandle(
        role="actor",
        backend=RemoteBackend(endpoint="http://example.invalid/v1/chat",
                              model="test-model", max_retries=1, timeout_s=1.0),
        decode=DecodeParams(temperature=0.5, max_output_tokens=64),
    )


def test_remote_success_and_payload(monkeypatch):
    calls = []

    def fake_post(url, json=None, headers=None, timeout=None):
        calls.append((url, json, headers))
        return FakeResponse(
            {"choices": [{"message": {"content": "<think>t</think>"
                                                 "<answer>go</answer>"}}]})

    monkeypatch.setattr("ttexplore.policies.requests.post", fake_post)
    monkeypatch.setenv("TTEXPLORE_API_KEY", "sk-test")
    out = complete(remote_handle(), "the prompt")
    assert "go" in out
    url, payload, headers = calls[0]
    assert payload["messages"] == [{"role": "user", "content": "the prompt"}]
    assert payload["temperature"] == 0.5
    assert headers["Authorization"] == "Bearer sk-test"


def test_remote_key_never_in_payload(monkeypatch):
    captured = {}

    def fake_post(url, json=None, headers=None, timeout=None):
        captured["json"] = json
        return FakeResponse({"choices": [{"message": {"content": "x"}}]})

    monkeypatch.setattr("ttexplore.policies.requests.post", fake_post)
    monkeypatch.setenv("TTEXPLORE_API_KEY", "sk-secret")
    complete(remote_handle(), "p")
    assert "sk-secret" not in json.dumps(captured["json"])


def test_remote_retries_then_raises(monkeypatch):
    attempts = []

    def fake_post(url, json=None, headers=None, timeout=None):
        attempts.append(1)
        return FakeResponse({}, status=500)

    monkeypatch.setattr("ttexplore.policies.requests.post", fake_post)
    monkeypatch.setattr("ttexplore.policies.time.sleep", lambda s: None)
    with pytest.raises(RemoteError) as exc:
        complete(remote_handle(), "p")
    assert exc.value.attempts == 2  # max_retries=1 means two attempts
    assert len(attempts) == 2


def test_remote_malformed_body_is_an_error(monkeypatch):
    monkeypatch.setattr("ttexplore.policies.requests.post",
                        lambda *a, **k: FakeResponse({"unexpected": True}))
    monkeypatch.setattr("ttexplore.policies.time.sleep", lambda s: None)
    with pytest.raises(RemoteError):
        complete(remote_handle(), "p")
