import pytest
from hypothesis import given
from hypothesis import strategies as st

from carma.errors import InvalidLabel, ParseError
from carma.model import (
    ActionTriplet,
    ActorClass,
    ActorInstance,
    InstanceId,
    Kind,
    ObjectInstance,
    ReasonerConfig,
    normalize_action_label,
    parse_id,
    render_id,
    triplet_equals,
)

from conftest import obj, person, triplet

ids = st.builds(InstanceId, st.sampled_from(list(Kind)), st.integers(1, 10**6))


@pytest.mark.parametrize("raw, expected", [
    ("place_down", "place_down"),
    ("Place Down", "place_down"),
    ("hand-over!", "hand_over"),
    ("  Pick   up ", "pick_up"),
    ("pour__into", "pour_into"),
])
def test_normalize_action_label(raw, expected):
    assert normalize_action_label(raw) == expected


@pytest.mark.parametrize("raw", ["", "   ", "!!!", "--"])
def test_normalize_rejects_empty(raw):
    with pytest.raises(InvalidLabel):
        normalize_action_label(raw)


@given(st.text(min_size=1))
def test_normalize_is_idempotent(raw):
    try:
        once = normalize_action_label(raw)
    except InvalidLabel:
        return
    assert normalize_action_label(once) == once
    ActionTriplet(person(1), once)  # always a valid triplet label


def test_render_and_parse_examples():
    assert render_id(InstanceId(Kind.OBJECT, 2)) == "object_2"
    assert parse_id("person_1") == InstanceId(Kind.PERSON, 1)
    assert parse_id("robot_hand_3") == InstanceId(Kind.ROBOT_HAND, 3)


@pytest.mark.parametrize("bad", ["object_0", "object_", "cup_1", "object_01", "Object_1", "object_-1", ""])
def test_parse_rejects_malformed(bad):
    with pytest.raises(ParseError):
        parse_id(bad)


@given(ids)
def test_id_round_trip(iid):
    assert parse_id(render_id(iid)) == iid


def test_triplet_equals_examples():
    a = triplet(person(1), "pour", 2, 4, t=1.0)
    assert triplet_equals(a, a)
    assert triplet_equals(a, triplet(person(1), "pour", 2, 4, t=9.0))
    assert not triplet_equals(a, triplet(person(1), "pour", 2, 4, flag=True, t=1.0))
    assert not triplet_equals(a, triplet(person(2), "pour", 2, 4, t=1.0))
    assert not triplet_equals(a, triplet(person(1), "pour", 2, None, t=1.0))


triplets = st.builds(
    lambda actor, action, o, flag, t: ActionTriplet(person(actor), action, o and obj(o), None, flag, t),
    st.integers(1, 2), st.sampled_from(["pour", "pick_up"]), st.one_of(st.none(), st.integers(1, 2)),
    st.booleans(), st.floats(0, 10),
)


@given(triplets, triplets, triplets)
def test_triplet_equals_is_an_equivalence(a, b, c):
    assert triplet_equals(a, a)
    assert triplet_equals(a, b) == triplet_equals(b, a)
    if triplet_equals(a, b) and triplet_equals(b, c):
        assert triplet_equals(a, c)


def test_triplet_invariants():
    with pytest.raises(InvalidLabel):
        ActionTriplet(person(1), "Pour")
    with pytest.raises(ValueError):
        ActionTriplet(person(1), "pour", obj(2), obj(2))
    with pytest.raises(ValueError):
        ActionTriplet(person(1), "pour", person(2))
    ActionTriplet(person(1), "wave")  # object may be absent


def test_instance_invariants():
    with pytest.raises(ValueError):
        ObjectInstance(obj(1), "", (0, 0, 1), 0.0)
    with pytest.raises(ValueError):
        ObjectInstance(obj(1), "a.png", (0, 0, 1), 0.0, embedding=(1.0, 1.0))
    ObjectInstance(obj(1), "a.png", (0, 0, 1), 0.0, embedding=(0.6, 0.8))
    with pytest.raises(ValueError):
        ActorInstance(InstanceId(Kind.ROBOT_HAND, 1), ActorClass.HUMAN)
    with pytest.raises(ValueError):
        ActorInstance(person(1), ActorClass.HUMAN, crop_history=((1.0, "a"), (1.0, "b")))


def test_serialization_round_trips():
    t = triplet(person(1), "place_down", 2, 4, True, 3.5)
    assert ActionTriplet.from_dict(t.to_dict()) == t
    o = ObjectInstance(obj(3), "f.png#1,2,3,4", (0.1, 0.2, 0.3), 1.0, (1.0, 0.0))
    assert ObjectInstance.from_dict(o.to_dict()) == o
    a = ActorInstance(person(2), ActorClass.HUMAN, ((0, 0, 1),), ((0.5, "x"), (1.0, "y")))
    assert ActorInstance.from_dict(a.to_dict()) == a
    c = ReasonerConfig("trigger_label_prev", 1.5, False)
    assert ReasonerConfig.from_dict(c.to_dict()) == c
