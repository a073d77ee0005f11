"""Regenerate the committed attention fixture under exporter/data/.

Uses the deterministic stub backend so the fixture is reproducible on any
machine; the files have the structure of a real capture (two pathways,
several timesteps, multi-resolution layers, multiple heads, one grid per
prompt term). Run from the exporter directory:

    python tools/record_fixture.py
"""
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from winovis_exporter.backends import StubBackend
from winovis_exporter.formats import atomic_write, pack_stack

DATA_DIR = os.path.join(os.path.dirname(__file__), "..", "data")

INSTANCES = [
    {
        "id": "rec-0001",
        "statement": "The cat is afraid of the vacuum cleaner because it is loud.",
        "pronoun": "it",
        "snippet": "it is loud",
        "options": ["cat", "vacuum cleaner"],
        "answer": 1,
        "reason": "A vacuum cleaner is loud; a cat is quiet.",
        "entity_class": "disparate",
        "context_type": "visually_intangible",
    },
    {
        "id": "rec-0002",
        "statement": "The plumber had to replace the pipe because it was rusty.",
        "pronoun": "it",
        "snippet": "it was rusty",
        "options": ["plumber", "pipe"],
        "answer": 1,
        "reason": "Pipes rust; plumbers do not.",
        "entity_class": "disparate",
        "context_type": "visually_tangible",
    },
    {
        "id": "rec-0003",
        "statement": "The dog chased the car because it was excited.",
        "pronoun": "it",
        "snippet": "it was excited",
        "options": ["dog", "car"],
        "answer": 0,
        "reason": "Excitement applies to the dog, not the car.",
        "entity_class": "disparate",
        "context_type": "emotional",
    },
]


def main() -> None:
    os.makedirs(DATA_DIR, exist_ok=True)
    backend = StubBackend(timesteps=2, heads=2, resolutions=(8, 16, 32))
    with open(os.path.join(DATA_DIR, "instances.jsonl"), "w", encoding="utf-8") as fh:
        for inst in INSTANCES:
            fh.write(json.dumps(inst, sort_keys=True) + "\n")
    for inst in INSTANCES:
        terms = (inst["options"][0], inst["options"][1], inst["pronoun"])
        capture = backend.generate(inst["statement"], terms, steps=50, seed=1234)
        data = pack_stack(inst["id"], terms, capture.slices)
        atomic_write(os.path.join(DATA_DIR, f"{inst['id']}.wvas"), data)
        print(f"{inst['id']}: {len(capture.slices)} slices, {len(data)} bytes")


if __name__ == "__main__":
    main()
