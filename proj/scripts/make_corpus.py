#!/usr/bin/env python3
"""Generates data/corpus.txt: ~100 KB of deterministic synthetic English prose.

The text is plain printable ASCII plus newlines, built from fixed word banks
and sentence templates with a seeded RNG, so the file is reproducible and
carries enough regular structure for a small character-level model to learn.
"""

import argparse
import random
import textwrap

NAMES = [
    "alma", "bruno", "clara", "edgar", "frida", "gregor", "helena", "ivan",
    "jonas", "katja", "lars", "marta", "nils", "olga", "peter", "runa",
]

NOUNS = [
    "river", "lantern", "market", "garden", "bridge", "letter", "carpenter",
    "orchard", "bakery", "meadow", "harbor", "clock", "mountain", "library",
    "valley", "kettle", "window", "road", "forest", "mill", "church", "tower",
    "boat", "field", "cellar", "attic", "stove", "barrel", "bell", "wagon",
    "fence", "stable", "well", "lamp", "chimney", "shore", "path", "square",
    "floor", "flag",
]

ADJECTIVES = [
    "quiet", "old", "narrow", "bright", "heavy", "gentle", "distant", "warm",
    "crooked", "pale", "steady", "restless", "plain", "broad", "cold", "soft",
    "early", "late", "green", "grey", "small", "tall", "round", "patient",
]

VERBS_PAST = [
    "crossed", "repaired", "watched", "carried", "opened", "followed",
    "painted", "measured", "counted", "gathered", "cleaned", "visited",
    "remembered", "described", "borrowed", "traded", "planted", "folded",
    "flattened",
]

PLACES = [
    "near the harbor", "behind the church", "along the river", "by the mill",
    "at the edge of town", "past the orchard", "under the bridge",
    "beside the well", "on the north road", "in the lower valley",
]

TIMES = [
    "in the morning", "before dusk", "after the rain", "every spring",
    "on market day", "late in autumn", "at first light", "during the thaw",
    "through the winter", "when the bell rang",
]

SAYINGS = [
    "patience mends more than haste breaks",
    "a borrowed tool returns with a story",
    "slow water still turns the wheel",
    "every road remembers its first traveler",
    "good bread needs a quiet oven",
    "the second harvest tastes of the first frost",
]


def sentence(rng: random.Random) -> str:
    name = rng.choice(NAMES)
    noun = rng.choice(NOUNS)
    adj = rng.choice(ADJECTIVES)
    verb = rng.choice(VERBS_PAST)
    place = rng.choice(PLACES)
    when = rng.choice(TIMES)
    forms = [
        f"{name} {verb} the {adj} {noun} {place}",
        f"the {adj} {noun} {place} belonged to {name}",
        f"{when}, {name} {verb} the {noun}",
        f"{name} and {rng.choice(NAMES)} {verb} the {noun} {when}",
        f"the {noun} stood {place} for {rng.randint(2, 90)} years",
        f"in 18{rng.randint(10, 99)} the {noun} was {verb} by {name}",
        f"{name} said that {rng.choice(SAYINGS)}",
        f"people {place} knew the {adj} {noun} well",
        f"the {adj} {noun} held {rng.randint(3, 40)} {rng.choice(NOUNS)}s",
        f"{name} {verb} the {noun}, then the {rng.choice(NOUNS)}",
    ]
    text = rng.choice(forms)
    if rng.random() < 0.04:
        text = f"the {noun} was last {verb}"
    return text[0].upper() + text[1:] + "."


def paragraph(rng: random.Random) -> str:
    body = " ".join(sentence(rng) for _ in range(rng.randint(3, 6)))
    return "\n".join(textwrap.wrap(body, width=72))


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/corpus.txt")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--target-bytes", type=int, default=100_000)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    parts: list[str] = []
    size = 0
    while size < args.target_bytes:
        p = paragraph(rng) + "\n\n"
        parts.append(p)
        size += len(p)
    text = "".join(parts)
    assert all(c == "\n" or 0x20 <= ord(c) <= 0x7E for c in text)
    with open(args.out, "w", newline="\n") as fh:
        fh.write(text)
    print(f"wrote {len(text)} bytes to {args.out}")


if __name__ == "__main__":
    main()
