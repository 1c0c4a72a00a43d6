"""Regenerate the bundled scenario fixtures under src/carma/data/scenarios/.

    python scripts/make_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

from carma.synth import Step, Story, write_story

OUT = Path(__file__).resolve().parents[1] / "src" / "carma" / "data" / "scenarios"

ALICE = ("human", (-0.5, 0.0, 1.7))
BOB = ("human", (0.5, 0.0, 1.7))
ROBOT = ("robot", (0.0, 0.05, 0.75))

FRUITS = [("banana", -0.6, 1.0), ("apple_a", -0.35, 1.2), ("apple_b", -0.1, 1.0),
          ("orange", 0.15, 1.2), ("bowl", 0.4, 1.0), ("plate", 0.65, 1.2)]

STORIES = [
    Story(
        "sorting_fruits_1p", "sorting_fruits", "1P", FRUITS, {"@alice": ALICE},
        [
            Step(1.0, "@alice", "pick_up", "banana"),
            Step(2.0, "@alice", "place_down", "banana", "bowl"),
            Step(3.0, "@alice", "pick_up", "apple_a"),
            Step(4.0, "@alice", "place_down", "apple_a", "bowl"),
            Step(5.0, "@alice", "pick_up", "apple_b"),
            Step(6.0, "@alice", "place_down", "apple_b", "plate"),
            Step(7.0, "@alice", "pick_up", "orange"),
            Step(8.0, "@alice", "place_down", "orange", "plate"),
        ],
        duration=9.0,
    ),
    Story(
        "sorting_fruits_2p", "sorting_fruits", "2P", FRUITS, {"@alice": ALICE, "@bob": BOB},
        [
            Step(1.0, "@alice", "pick_up", "banana"),
            Step(1.5, "@bob", "pick_up", "orange"),
            Step(2.5, "@alice", "place_down", "banana", "bowl"),
            Step(3.0, "@bob", "place_down", "orange", "plate"),
            Step(4.0, "@alice", "pick_up", "apple_a"),
            Step(4.75, "@bob", "pick_up", "apple_b"),
            Step(5.5, "@alice", "place_down", "apple_a", "plate"),
            Step(6.25, "@bob", "place_down", "apple_b", "bowl"),
            Step(7.5, "@alice", "idle"),
            Step(8.0, "@bob", "push", "bowl"),
        ],
        duration=9.5,
    ),
    Story(
        "pouring_2p", "pouring", "2P",
        [("bottle", -0.55, 1.1), ("cup_a", -0.25, 1.0), ("cup_b", 0.05, 1.2),
         ("cup_c", 0.35, 1.0), ("coaster", 0.65, 1.15)],
        {"@alice": ALICE, "@bob": BOB},
        [
            Step(1.0, "@alice", "pick_up", "bottle"),
            Step(2.0, "@alice", "pour", "bottle", "cup_a"),
            Step(3.25, "@alice", "place_down", "bottle"),
            Step(4.0, "@bob", "pick_up", "bottle"),
            Step(5.0, "@bob", "pour", "bottle", "cup_c"),
            Step(5.5, "@alice", "pick_up", "cup_a"),
            Step(6.25, "@bob", "place_down", "bottle"),
            Step(7.0, "@alice", "drink", "cup_a"),
            Step(8.5, "@alice", "place_down", "cup_a", "coaster"),
        ],
        duration=10.0,
        resegment_at=4.5,
        moved={"bottle": (-0.5, 1.15)},
    ),
    Story(
        "handover_2pr", "handover", "2P+R",
        [("sponge", -0.55, 1.0), ("cup", -0.25, 1.2), ("box", 0.1, 1.0), ("banana", 0.45, 1.2)],
        {"@alice": ALICE, "@bob": BOB, "@robot": ROBOT},
        [
            Step(1.0, "@robot", "pick_up", "cup"),
            Step(2.0, "@robot", "hand_over", "cup", robot_interaction=True),
            Step(2.25, "@alice", "receive", "cup", robot_interaction=True),
            Step(3.25, "@alice", "hand_over", "cup"),
            Step(3.5, "@bob", "receive", "cup"),
            Step(4.5, "@bob", "place_down", "cup", "box"),
            Step(5.5, "@bob", "pick_up", "banana"),
            Step(6.5, "@bob", "hand_over", "banana", robot_interaction=True),
            Step(6.75, "@robot", "receive", "banana", robot_interaction=True),
            Step(7.75, "@robot", "place_down", "banana", "box"),
            Step(8.5, "@alice", "wipe", "sponge"),
        ],
        duration=10.0,
    ),
]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for k, story in enumerate(STORIES):
        paths = write_story(story, OUT, seed=100 + k)
        print(f"{story.recording}: {paths['scenario'].name}, {len(story.steps)} triplets")
    manifest = {
        "out": "batch_out",
        "rows": [{"scenario": f"{s.recording}.scn", "mode": mode, "backend": "oracle"}
                 for s in STORIES[1:] for mode in
                 ("discrete-prev", "trigger-prev", "trigger", "trigger-label-prev")],
    }
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
