from __future__ import annotations

from importlib import resources
from pathlib import Path

import pytest

from carma.memory import MemoryStore
from carma.model import ActionTriplet, ActorClass, InstanceId, Kind

SCENARIO_DIR = Path(str(resources.files("carma").joinpath("data", "scenarios")))
ACCEPTANCE_FIXTURES = ("sorting_fruits_2p", "pouring_2p", "handover_2pr")

_acceptance_lines: list[str] = []


def record_criterion(name: str, ok: bool, detail: str = "") -> None:
    _acceptance_lines.append(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def obj(n: int) -> InstanceId:
    return InstanceId(Kind.OBJECT, n)


def person(n: int) -> InstanceId:
    return InstanceId(Kind.PERSON, n)


def robot(n: int = 1) -> InstanceId:
    return InstanceId(Kind.ROBOT_HAND, n)


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


@pytest.fixture
def small_store() -> MemoryStore:
    """Three objects, one person with six crops, one robot hand with one crop."""
    mem = MemoryStore()
    for k in range(3):
        mem.register_object(f"frames/scene.png#{10 * k},0,20,20", (0.1 * k, 0.3, 1.0), 0.0)
    p = mem.register_actor(ActorClass.HUMAN, 0.0)
    for k in range(6):
        mem.append_person_crop(p, f"frames/scene.png#{100 + k},50,80,160", 0.5 * (k + 1))
    r = mem.register_actor(ActorClass.ROBOT, 0.0)
    mem.append_person_crop(r, "frames/scene.png#300,200,40,40", 0.5)
    return mem


def triplet(actor: InstanceId, action: str, o: int | None = None, on: int | None = None,
            flag: bool = False, t: float = 0.0) -> ActionTriplet:
    return ActionTriplet(actor, action, None if o is None else obj(o), None if on is None else obj(on),
                         flag, t)


GOLDEN_DIR = Path(__file__).parent / "golden"
GOLDEN_MODES = ("discrete_prev", "trigger_prev", "trigger_only", "trigger_label_prev")


def golden_store() -> MemoryStore:
    """Frozen snapshot behind the golden prompt files."""
    mem = MemoryStore()
    for k in range(3):
        mem.register_object(f"frames/scene.png#{40 + 60 * k},300,50,50", (0.1 * k, 0.3, 1.0), 0.0)
    p = mem.register_actor(ActorClass.HUMAN, 0.0)
    r = mem.register_actor(ActorClass.ROBOT, 0.0)
    mem.append_person_crop(r, "frames/scene.png#400,200,40,40", 0.5)
    for k in range(5):
        mem.append_person_crop(p, f"frames/scene.png#{100 + 4 * k},50,80,160", 0.5 * (k + 1))
    mem.log_triplet(triplet(p, "pick_up", 2, t=1.0))
    return mem


def golden_prompt(mode: str) -> str:
    from carma.model import ReasonerConfig
    from carma.reasoner import assemble_prompt, serialize_prompt
    from carma.trigger import TriggerEvent

    label = "place_down" if mode == "trigger_label_prev" else None
    trig = TriggerEvent(person(1), 2.5, label)
    spec = assemble_prompt(golden_store(), trig, ReasonerConfig(mode))
    return serialize_prompt(spec, GOLDEN_DIR)
