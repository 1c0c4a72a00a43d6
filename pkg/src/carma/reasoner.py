"""Prompt assembly, response parsing and grounding for the action reasoner.

A reasoning cycle turns one trigger into one grounded triplet:

    assemble_prompt -> backend.dispatch -> parse_response -> ground_output

Backends only see a :class:`PromptSpec` and answer with raw text, so the
same cycle runs against a scripted oracle or a remote vision-language model.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from .errors import GroundingError, InvalidLabel, NotFound, ParseError
from .memory import MemoryStore
from .model import (
    ActionTriplet,
    ActorClass,
    InstanceId,
    Kind,
    ObjectInstance,
    ReasonerConfig,
    normalize_action_label,
    parse_id,
    render_id,
)
from .trigger import TriggerEvent

logger = logging.getLogger(__name__)

PROMPT_VERSION = "prompt/v1"
MAX_PERSON_CROPS = 4


@lru_cache(maxsize=None)
def load_template(version: str = PROMPT_VERSION) -> dict:
    name = version.split("/")[-1] + ".json"
    text = resources.files("carma").joinpath("prompts", name).read_text(encoding="utf-8")
    tpl = json.loads(text)
    if tpl.get("version") != version:
        raise ValueError(f"template file {name} declares {tpl.get('version')!r}, expected {version!r}")
    return tpl


def _fill(template: str, **values: str) -> str:
    # str.format would trip over the braces in the example record
    for key, value in values.items():
        template = template.replace("{" + key + "}", value)
    return template


@dataclass(frozen=True)
class PromptBlock:
    kind: str  # "text" or "image"
    text: Optional[str] = None
    caption: Optional[str] = None
    image_ref: Optional[str] = None

    def __post_init__(self):
        if self.kind == "text":
            if self.text is None or self.caption is not None or self.image_ref is not None:
                raise ValueError("text blocks carry text only")
        elif self.kind == "image":
            if self.text is not None or self.caption is None or not self.image_ref:
                raise ValueError("image blocks carry a caption and an image reference only")
        else:
            raise ValueError(f"unknown block kind {self.kind!r}")

    @classmethod
    def of_text(cls, text: str) -> "PromptBlock":
        return cls("text", text=text)

    @classmethod
    def of_image(cls, caption: str, image_ref: str) -> "PromptBlock":
        return cls("image", caption=caption, image_ref=image_ref)


@dataclass(frozen=True)
class PromptSpec:
    blocks: tuple[PromptBlock, ...]
    actor: InstanceId
    config: ReasonerConfig
    t: float = 0.0
    template: str = PROMPT_VERSION

    @property
    def images(self) -> list[PromptBlock]:
        return [b for b in self.blocks if b.kind == "image"]


def image_path(ref: str) -> str:
    """File part of an image reference (references may carry a ``#x,y,w,h`` crop suffix)."""
    return ref.split("#", 1)[0]


def image_digest(ref: str, base: Optional[Path] = None) -> Optional[str]:
    path = Path(image_path(ref))
    if base is not None and not path.is_absolute():
        path = base / path
    try:
        data = path.read_bytes()
    except OSError:
        return None
    h = hashlib.sha256(data)
    if "#" in ref:
        h.update(b"#" + ref.split("#", 1)[1].encode())
    return h.hexdigest()


def serialize_prompt(spec: PromptSpec, base: Optional[Path] = None) -> str:
    """Canonical, byte-stable JSON rendering of a prompt (golden files, logs)."""
    blocks = []
    for b in spec.blocks:
        if b.kind == "text":
            blocks.append({"kind": "text", "text": b.text})
        else:
            blocks.append({"kind": "image", "caption": b.caption, "image": b.image_ref,
                           "sha256": image_digest(b.image_ref, base)})
    doc = {
        "format": "carma-prompt/1",
        "template": spec.template,
        "actor": render_id(spec.actor),
        "t": spec.t,
        "config": spec.config.to_dict(),
        "blocks": blocks,
    }
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# -- reasoner output ----------------------------------------------------

@dataclass(frozen=True)
class ReasonerOutput:
    action: str
    object: Optional[str] = None
    on: Optional[str] = None
    robot_interaction: bool = False

    def __post_init__(self):
        if not self.action:
            raise ValueError("action must be non-empty")


def _quote(s: str) -> str:
    return "'" + s.replace("\\", "\\\\").replace("'", "\\'") + "'"


def render_output(out: ReasonerOutput) -> str:
    """Render in the single-quoted record form the reasoner is asked to produce."""
    parts = []
    if out.object is not None:
        parts.append(f"'object': {_quote(out.object)}")
    parts.append(f"'action': {_quote(out.action)}")
    if out.on is not None:
        parts.append(f"'on': {_quote(out.on)}")
    parts.append(f"'robot_interaction': {'true' if out.robot_interaction else 'false'}")
    return "{" + ", ".join(parts) + "}"


def render_triplet(triplet: ActionTriplet) -> str:
    return render_output(ReasonerOutput(
        action=triplet.action,
        object=None if triplet.object is None else render_id(triplet.object),
        on=None if triplet.on is None else render_id(triplet.on),
        robot_interaction=triplet.robot_interaction,
    ))


_LITERALS = {"true": True, "True": True, "false": False, "False": False,
             "null": None, "None": None}


class _RecordScanner:
    """Reads one flat ``{key: value, ...}`` record with JSON or Python-style quoting."""

    def __init__(self, text: str, pos: int):
        self.s, self.i = text, pos

    def ws(self):
        while self.i < len(self.s) and self.s[self.i].isspace():
            self.i += 1

    def expect(self, ch: str):
        self.ws()
        if self.i >= len(self.s) or self.s[self.i] != ch:
            raise ParseError(f"expected {ch!r} at {self.i}")
        self.i += 1

    def string(self) -> str:
        quote = self.s[self.i]
        self.i += 1
        out = []
        while self.i < len(self.s):
            ch = self.s[self.i]
            if ch == "\\" and self.i + 1 < len(self.s):
                nxt = self.s[self.i + 1]
                out.append({"n": "\n", "t": "\t", "r": "\r"}.get(nxt, nxt))
                self.i += 2
                continue
            if ch == quote:
                self.i += 1
                return "".join(out)
            out.append(ch)
            self.i += 1
        raise ParseError("unterminated string")

    def bare(self) -> str:
        start = self.i
        while self.i < len(self.s) and (self.s[self.i].isalnum() or self.s[self.i] in "_.-+"):
            self.i += 1
        if start == self.i:
            raise ParseError(f"unexpected character at {self.i}")
        return self.s[start:self.i]

    def key(self) -> str:
        self.ws()
        if self.i < len(self.s) and self.s[self.i] in "'\"":
            return self.string()
        return self.bare()

    def value(self):
        self.ws()
        if self.i >= len(self.s):
            raise ParseError("missing value")
        if self.s[self.i] in "'\"":
            return self.string()
        word = self.bare()
        if word in _LITERALS:
            return _LITERALS[word]
        try:
            return float(word)
        except ValueError:
            raise ParseError(f"unrecognised value {word!r}") from None

    def record(self) -> dict:
        self.expect("{")
        rec = {}
        self.ws()
        if self.i < len(self.s) and self.s[self.i] == "}":
            self.i += 1
            return rec
        while True:
            k = self.key()
            self.expect(":")
            rec[k] = self.value()
            self.ws()
            if self.i < len(self.s) and self.s[self.i] == ",":
                self.i += 1
                self.ws()
                if self.i < len(self.s) and self.s[self.i] == "}":
                    self.i += 1
                    return rec
                continue
            self.expect("}")
            return rec


_FIELDS = {"object", "action", "on", "robot_interaction"}


def _coerce(rec: dict, raw: str) -> ReasonerOutput:
    if "action" not in rec or not set(rec) <= _FIELDS:
        raise ParseError("not a reasoner record")
    action = rec["action"]
    if not isinstance(action, str):
        raise ParseError("action must be a string")
    for name in ("object", "on"):
        if rec.get(name) is not None and not isinstance(rec[name], str):
            raise ParseError(f"{name} must be a string")
    flag = rec.get("robot_interaction", False)
    if isinstance(flag, str) and flag.lower() in ("true", "false"):
        flag = flag.lower() == "true"
    if flag is None:
        flag = False
    if not isinstance(flag, bool):
        raise ParseError("robot_interaction must be a boolean")
    if not action.strip():
        raise GroundingError("empty_action", raw, "the record names no action")
    return ReasonerOutput(action=action, object=rec.get("object") or None,
                          on=rec.get("on") or None, robot_interaction=flag)


def parse_response(raw: str) -> ReasonerOutput:
    """Extract the first reasoner record from free-form backend text.

    Prose, code fences and either quoting style are tolerated. Missing
    ``object``/``on`` mean absent, missing ``robot_interaction`` means false.
    """
    pos = raw.find("{")
    while pos != -1:
        try:
            rec = _RecordScanner(raw, pos).record()
            return _coerce(rec, raw)
        except ParseError:
            pass
        pos = raw.find("{", pos + 1)
    raise GroundingError("malformed_response", raw, "no parsable record in response")


# -- prompt assembly ----------------------------------------------------

def _robot_hands(mem: MemoryStore) -> list:
    return [a for a in mem.actors() if a.actor_class is ActorClass.ROBOT and a.crop_history]


def assemble_prompt(mem: MemoryStore, trigger: TriggerEvent, config: ReasonerConfig,
                    offered_objects: Optional[Sequence[InstanceId]] = None) -> PromptSpec:
    """Build the prompt for one trigger.

    Blocks: intro, one captioned image per offered object, the robot hand
    (when enabled and known), up to four recent crops of the actor, the
    previous triplet (modes that use it, when one exists) and the task text.
    ``offered_objects`` defaults to every object in memory.
    """
    tpl = load_template()
    actor = render_id(trigger.actor)
    if not mem.has_actor(trigger.actor):
        raise NotFound(f"unknown actor {trigger.actor}")
    if offered_objects is None:
        offered = mem.objects()
    else:
        offered = []
        for oid in offered_objects:
            try:
                offered.append(mem.get_object(oid))
            except NotFound:
                raise GroundingError("unknown_object", "", f"offered object {oid} is not in memory") from None

    blocks = [PromptBlock.of_text(tpl["intro"])]
    blocks += [PromptBlock.of_image(render_id(o.id), o.crop_ref) for o in offered]
    if config.include_robot_hand:
        blocks += [PromptBlock.of_image(render_id(h.id), h.crop_history[-1][1])
                   for h in _robot_hands(mem)]

    crops = mem.recent_crops(trigger.actor, MAX_PERSON_CROPS)
    blocks += [
        PromptBlock.of_image(
            _fill(tpl["person_crop_caption"], actor=actor, index=str(i + 1), count=str(len(crops))),
            ref,
        )
        for i, ref in enumerate(crops)
    ]

    if config.mode.uses_previous_triplet:
        prev = mem.previous_triplet(trigger.actor)
        if prev is not None:
            blocks.append(PromptBlock.of_text(
                _fill(tpl["previous_triplet"], actor=actor, triplet=render_triplet(prev))))

    task = _fill(tpl["task"], actor=actor, example=tpl["example"])
    if config.mode.carries_label and trigger.label is not None:
        task += " " + _fill(tpl["label_hint"], label=trigger.label)
    blocks.append(PromptBlock.of_text(task))
    return PromptSpec(tuple(blocks), trigger.actor, config, trigger.t)


def with_corrective(spec: PromptSpec) -> PromptSpec:
    tpl = load_template()
    extra = PromptBlock.of_text(_fill(tpl["corrective"], example=tpl["example"]))
    return replace(spec, blocks=spec.blocks + (extra,))


# -- grounding ----------------------------------------------------------

def _ground_ref(name: Optional[str], mem: MemoryStore, reason: str, raw: str) -> Optional[InstanceId]:
    if name is None:
        return None
    try:
        iid = parse_id(name.strip())
    except ParseError:
        raise GroundingError(reason, raw, f"{name!r} is not an instance identifier") from None
    if iid.kind is not Kind.OBJECT or not mem.has_object(iid):
        raise GroundingError(reason, raw, f"{name!r} is not a known object")
    return iid


def ground_output(out: ReasonerOutput, mem: MemoryStore, trigger: TriggerEvent,
                  raw: str = "") -> ActionTriplet:
    """Resolve names against memory, build the triplet and log it.

    Nothing is logged when any reference fails to resolve.
    """
    raw = raw or render_output(out)
    obj = _ground_ref(out.object, mem, "unknown_object", raw)
    on = _ground_ref(out.on, mem, "unknown_secondary", raw)
    if on is not None and on == obj:
        raise GroundingError("unknown_secondary", raw, "secondary object repeats the primary one")
    try:
        action = normalize_action_label(out.action)
    except InvalidLabel:
        raise GroundingError("empty_action", raw, f"action {out.action!r} normalizes to nothing") from None
    triplet = ActionTriplet(trigger.actor, action, obj, on, out.robot_interaction, trigger.t)
    mem.log_triplet(triplet)
    return triplet


# -- embedding pre-filter -----------------------------------------------

EmbeddingProvider = Callable[[ObjectInstance], Optional[Sequence[float]]]


def prefilter_objects(mem: MemoryStore, query: Sequence[float],
                      provider: Optional[EmbeddingProvider] = None,
                      max_n: int = 8, min_sim: float = 0.5) -> list[InstanceId]:
    """Objects whose embedding is cosine-similar to ``query``, best first.

    Stored embeddings are used when present, else ``provider(obj)``. If any
    object has no embedding at all, filtering is skipped and every object is
    offered.
    """
    qnorm = math.sqrt(sum(v * v for v in query))
    if abs(qnorm - 1.0) > 1e-6:
        raise ValueError(f"query embedding must have unit norm, got {qnorm:.8f}")
    objects = mem.objects()
    scored = []
    for obj in objects:
        emb = obj.embedding if obj.embedding is not None else (provider(obj) if provider else None)
        if emb is None:
            logger.warning("object %s has no embedding; offering all objects unfiltered",
                           render_id(obj.id))
            return [o.id for o in objects]
        if len(emb) != len(query):
            raise ValueError(f"embedding of {render_id(obj.id)} has dimension {len(emb)}, "
                             f"query has {len(query)}")
        sim = sum(a * b for a, b in zip(emb, query))
        if sim >= min_sim:
            scored.append((-sim, obj.id.ordinal, obj.id))
    scored.sort(key=lambda s: s[:2])
    return [iid for _, _, iid in scored[:max_n]]


# -- the cycle ----------------------------------------------------------

class Backend(Protocol):
    def dispatch(self, prompt: PromptSpec) -> str: ...


def run_reasoning_cycle(trigger: TriggerEvent, mem: MemoryStore, config: ReasonerConfig,
                        backend: Backend,
                        offered_objects: Optional[Sequence[InstanceId]] = None) -> ActionTriplet:
    """Assemble, dispatch, parse and ground one trigger.

    An unreadable answer is retried once with a corrective instruction
    appended. Grounding errors and backend errors propagate.
    """
    prompt = assemble_prompt(mem, trigger, config, offered_objects)
    raw = backend.dispatch(prompt)
    try:
        out = parse_response(raw)
    except GroundingError as exc:
        if exc.reason != "malformed_response":
            raise
        logger.info("unreadable reasoner answer for %s; retrying once", render_id(trigger.actor))
        raw = backend.dispatch(with_corrective(prompt))
        out = parse_response(raw)
    return ground_output(out, mem, trigger, raw)
