import difflib
import json
import os
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from carma.errors import GroundingError, NotFound
from carma.memory import MemoryStore
from carma.model import ActorClass, ReasonerConfig
from carma.reasoner import (
    PromptBlock,
    ReasonerOutput,
    assemble_prompt,
    parse_response,
    prefilter_objects,
    render_output,
    run_reasoning_cycle,
    serialize_prompt,
)
from carma.reasoner import ground_output
from carma.trigger import TriggerEvent

from conftest import GOLDEN_DIR, GOLDEN_MODES, golden_prompt, obj, person, triplet

CANONICAL = "{'object': 'object_2', 'action': 'place_down', 'on': 'object_4', 'robot_interaction': false}"


def kinds(spec):
    return [b.kind for b in spec.blocks]


# -- assembly -----------------------------------------------------------

def test_block_counts(small_store):
    small_store.log_triplet(triplet(person(1), "pick_up", 1, t=1.0))
    trig = TriggerEvent(person(1), 3.0)
    prev = assemble_prompt(small_store, trig, ReasonerConfig("trigger_prev"))
    only = assemble_prompt(small_store, trig, ReasonerConfig("trigger_only"))
    assert len(prev.blocks) == 11
    assert len(only.blocks) == 10
    assert kinds(prev) == ["text"] + ["image"] * 8 + ["text", "text"]
    captions = [b.caption for b in prev.images]
    assert captions[:4] == ["object_1", "object_2", "object_3", "robot_hand_1"]
    assert captions[4:] == [f"person_1 view {i} of 4" for i in range(1, 5)]
    # the four most recent crops, oldest first
    assert [b.image_ref for b in prev.images[4:]] == [f"frames/scene.png#{100 + k},50,80,160"
                                                       for k in range(2, 6)]


def test_robot_hand_can_be_left_out(small_store):
    spec = assemble_prompt(small_store, TriggerEvent(person(1), 3.0),
                           ReasonerConfig("trigger_only", include_robot_hand=False))
    assert len(spec.blocks) == 9
    assert "robot_hand_1" not in [b.caption for b in spec.images]


def test_actor_with_two_crops():
    mem = MemoryStore()
    mem.register_object("a.png", (0, 0, 1), 0.0)
    p = mem.register_actor(ActorClass.HUMAN, 0.0)
    mem.append_person_crop(p, "c1.png", 1.0)
    mem.append_person_crop(p, "c2.png", 2.0)
    spec = assemble_prompt(mem, TriggerEvent(p, 2.0), ReasonerConfig("trigger_only"))
    assert [b.caption for b in spec.images] == ["object_1", "person_1 view 1 of 2", "person_1 view 2 of 2"]


def test_no_previous_block_without_history(small_store):
    spec = assemble_prompt(small_store, TriggerEvent(person(1), 3.0), ReasonerConfig("trigger_prev"))
    assert len(spec.blocks) == 10


def test_offered_objects_subset_and_unknown(small_store):
    spec = assemble_prompt(small_store, TriggerEvent(person(1), 3.0), ReasonerConfig(), [obj(3)])
    assert [b.caption for b in spec.images][:1] == ["object_3"]
    with pytest.raises(GroundingError) as info:
        assemble_prompt(small_store, TriggerEvent(person(1), 3.0), ReasonerConfig(), [obj(9)])
    assert info.value.reason == "unknown_object"
    with pytest.raises(NotFound):
        assemble_prompt(small_store, TriggerEvent(person(4), 3.0), ReasonerConfig())


def test_task_text_has_four_numbered_instructions(small_store):
    task = assemble_prompt(small_store, TriggerEvent(person(1), 3.0), ReasonerConfig()).blocks[-1].text
    positions = [task.index(f"{n}. ") for n in range(1, 5)]
    assert positions == sorted(positions)
    assert "person_1" in task


def test_block_kind_fields():
    with pytest.raises(ValueError):
        PromptBlock("text", text="a", caption="b")
    with pytest.raises(ValueError):
        PromptBlock("image", caption="object_1")
    with pytest.raises(ValueError):
        PromptBlock("audio", text="a")


def test_prompt_is_deterministic(small_store):
    trig = TriggerEvent(person(1), 3.0)
    a = serialize_prompt(assemble_prompt(small_store, trig, ReasonerConfig()))
    b = serialize_prompt(assemble_prompt(small_store, trig, ReasonerConfig()))
    assert a == b


# -- golden prompts -----------------------------------------------------

@pytest.mark.parametrize("mode", GOLDEN_MODES)
def test_golden_prompt(mode):
    path = GOLDEN_DIR / f"prompt_{mode}.json"
    text = golden_prompt(mode)
    if os.environ.get("CARMA_UPDATE_GOLDEN"):
        path.write_bytes(text.encode())
    assert text.encode() == path.read_bytes()
    doc = json.loads(text)
    assert all(b["sha256"] for b in doc["blocks"] if b["kind"] == "image")


def golden_blocks(mode):
    return json.loads((GOLDEN_DIR / f"prompt_{mode}.json").read_bytes())["blocks"]


def test_golden_trigger_prev_vs_trigger_only_differ_in_one_block():
    prev, only = golden_blocks("trigger_prev"), golden_blocks("trigger_only")
    assert len(prev) == len(only) + 1
    sm = difflib.SequenceMatcher(a=[json.dumps(b) for b in prev], b=[json.dumps(b) for b in only],
                                 autojunk=False)
    ops = [op for op in sm.get_opcodes() if op[0] != "equal"]
    assert len(ops) == 1 and ops[0][0] == "delete" and ops[0][2] - ops[0][1] == 1
    removed = prev[ops[0][1]]
    assert removed["kind"] == "text" and "pick_up" in removed["text"]


def test_golden_label_mode_adds_one_sentence():
    prev, lab = golden_blocks("trigger_prev"), golden_blocks("trigger_label_prev")
    assert prev[:-1] == lab[:-1]
    base, extended = prev[-1]["text"].encode(), lab[-1]["text"].encode()
    assert extended.startswith(base)
    added = extended[len(base):]
    assert added == b" The action detector reports the label 'place_down'."
    # exactly one sentence: a single terminal period
    assert added.count(b".") == 1


def test_golden_discrete_prev_blocks_equal_trigger_prev():
    assert golden_blocks("discrete_prev") == golden_blocks("trigger_prev")


# -- parsing ------------------------------------------------------------

def test_parse_canonical_record():
    assert parse_response(CANONICAL) == ReasonerOutput("place_down", "object_2", "object_4", False)


@pytest.mark.parametrize("raw, expected", [
    ('Sure! {"action": "pour", "object": "object_1", "robot_interaction": true}',
     ReasonerOutput("pour", "object_1", None, True)),
    ("```json\n{\"object\": \"object_3\", \"action\": \"pick_up\"}\n```",
     ReasonerOutput("pick_up", "object_3")),
    ("{'object': None, 'action': 'wave', 'robot_interaction': False}", ReasonerOutput("wave")),
    ("{object: 'object_1', action: 'push',}", ReasonerOutput("push", "object_1")),
    ("I think {this} is it: {'action': 'drink', 'object': 'object_2'}", ReasonerOutput("drink", "object_2")),
    ("{'action': 'pour', 'robot_interaction': 'True'}", ReasonerOutput("pour", robot_interaction=True)),
])
def test_parse_tolerated_forms(raw, expected):
    assert parse_response(raw) == expected


@pytest.mark.parametrize("raw", [
    "I cannot tell.",
    "",
    "{'object': 'object_1'}",
    "{'action': 'pour', 'colour': 'red'}",
    "{'action': 'pour'",
    "{'action': 3}",
    "{'action': 'pour', 'robot_interaction': 'maybe'}",
])
def test_parse_malformed(raw):
    with pytest.raises(GroundingError) as info:
        parse_response(raw)
    assert info.value.reason == "malformed_response"
    assert info.value.raw == raw


def test_parse_empty_action():
    with pytest.raises(GroundingError) as info:
        parse_response("{'action': '  ', 'object': 'object_1'}")
    assert info.value.reason == "empty_action"


name = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=20)
outputs = st.builds(ReasonerOutput, name.filter(str.strip), st.one_of(st.none(), name),
                    st.one_of(st.none(), name), st.booleans())


@given(outputs)
def test_parse_render_round_trip(out):
    assert parse_response(render_output(out)) == out


# -- grounding ----------------------------------------------------------

def grounding_store():
    mem = MemoryStore()
    for k in range(4):
        mem.register_object(f"o{k}.png", (0.1 * k, 0, 1), 0.0)
    mem.register_actor(ActorClass.HUMAN, 0.0)
    return mem


def test_ground_canonical_record():
    mem = grounding_store()
    tr = ground_output(parse_response(CANONICAL), mem, TriggerEvent(person(1), 2.0))
    assert tr == triplet(person(1), "place_down", 2, 4, False, 2.0)
    assert mem.triplets() == [tr]


@pytest.mark.parametrize("out, reason", [
    (ReasonerOutput("pour", "object_9"), "unknown_object"),
    (ReasonerOutput("pour", "the bottle"), "unknown_object"),
    (ReasonerOutput("pour", "person_1"), "unknown_object"),
    (ReasonerOutput("pour", "object_1", "object_7"), "unknown_secondary"),
    (ReasonerOutput("pour", "object_1", "object_1"), "unknown_secondary"),
    (ReasonerOutput("!!!", "object_1"), "empty_action"),
])
def test_ground_failures_log_nothing(out, reason):
    mem = grounding_store()
    with pytest.raises(GroundingError) as info:
        ground_output(out, mem, TriggerEvent(person(1), 2.0))
    assert info.value.reason == reason
    assert mem.triplets() == []


def test_ground_without_object_and_normalizes():
    mem = grounding_store()
    tr = ground_output(ReasonerOutput("Wave"), mem, TriggerEvent(person(1), 1.0))
    assert tr.object is None and tr.action == "wave"


# -- prefilter ----------------------------------------------------------

def embedded_store(vectors):
    mem = MemoryStore()
    for k, v in enumerate(vectors):
        mem.register_object(f"o{k}.png", (0.1 * k, 0, 1), 0.0, v)
    return mem


def test_prefilter_identical_and_orthogonal():
    mem = embedded_store([(1.0, 0.0), (0.0, 1.0)])
    assert prefilter_objects(mem, (1.0, 0.0), min_sim=0.8) == [obj(1)]
    mem2 = embedded_store([(0.0, 1.0)])
    assert prefilter_objects(mem2, (1.0, 0.0), min_sim=0.8) == []


def test_prefilter_top_three_by_hand():
    # similarities to (1, 0): 0.6, 1.0, 0.8, 0.0, 0.8
    mem = embedded_store([(0.6, 0.8), (1.0, 0.0), (0.8, 0.6), (0.0, 1.0), (0.8, -0.6)])
    assert prefilter_objects(mem, (1.0, 0.0), max_n=3, min_sim=0.0) == [obj(2), obj(3), obj(5)]


def test_prefilter_missing_embedding_offers_everything(caplog):
    mem = embedded_store([(1.0, 0.0)])
    mem.register_object("x.png", (0, 0, 1), 0.0)
    with caplog.at_level("WARNING"):
        assert prefilter_objects(mem, (0.0, 1.0), min_sim=0.9) == [obj(1), obj(2)]
    assert "no embedding" in caplog.text
    assert prefilter_objects(mem, (0.0, 1.0), provider=lambda o: (0.0, 1.0), min_sim=0.9) == [obj(2)]


def test_prefilter_rejects_non_unit_query():
    with pytest.raises(ValueError):
        prefilter_objects(embedded_store([(1.0, 0.0)]), (2.0, 0.0))


@given(st.integers(0, 10**6), st.floats(-1, 1), st.floats(-1, 1))
def test_prefilter_monotone_in_min_sim(seed, a, b):
    rng = random.Random(seed)
    import math
    vecs = []
    for _ in range(rng.randint(1, 8)):
        ang = rng.uniform(0, 2 * math.pi)
        vecs.append((math.cos(ang), math.sin(ang)))
    mem = embedded_store(vecs)
    lo, hi = sorted([a, b])
    assert set(prefilter_objects(mem, (1.0, 0.0), max_n=99, min_sim=hi)) <= \
        set(prefilter_objects(mem, (1.0, 0.0), max_n=99, min_sim=lo))


# -- the cycle ----------------------------------------------------------

class Scripted:
    def __init__(self, *answers):
        self.answers = list(answers)
        self.prompts = []

    def dispatch(self, prompt):
        self.prompts.append(prompt)
        return self.answers.pop(0)


def test_cycle_logs_scripted_answer():
    mem = grounding_store()
    mem.append_person_crop(person(1), "c.png", 1.0)
    be = Scripted(CANONICAL)
    tr = run_reasoning_cycle(TriggerEvent(person(1), 2.0), mem, ReasonerConfig(), be)
    assert tr.action == "place_down" and mem.triplets() == [tr]


def test_cycle_retries_once_with_corrective():
    mem = grounding_store()
    be = Scripted("hmm", CANONICAL)
    run_reasoning_cycle(TriggerEvent(person(1), 2.0), mem, ReasonerConfig(), be)
    assert len(be.prompts) == 2
    assert len(be.prompts[1].blocks) == len(be.prompts[0].blocks) + 1
    assert "could not be read" in be.prompts[1].blocks[-1].text


def test_cycle_gives_up_after_one_retry():
    mem = grounding_store()
    be = Scripted("prose", "more prose", CANONICAL)
    with pytest.raises(GroundingError) as info:
        run_reasoning_cycle(TriggerEvent(person(1), 2.0), mem, ReasonerConfig(), be)
    assert info.value.reason == "malformed_response" and info.value.raw == "more prose"
    assert len(be.prompts) == 2 and mem.triplets() == []


def test_cycle_does_not_retry_grounding_errors():
    mem = grounding_store()
    be = Scripted("{'action': 'pour', 'object': 'object_9'}")
    with pytest.raises(GroundingError) as info:
        run_reasoning_cycle(TriggerEvent(person(1), 2.0), mem, ReasonerConfig(), be)
    assert info.value.reason == "unknown_object" and len(be.prompts) == 1
