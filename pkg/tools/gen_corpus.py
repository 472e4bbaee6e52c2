"""Generate the bundled desk-scale corpus.

Produces ~200 KB of lowercase English-like sentences from a small template
grammar. The output is deterministic for a fixed seed and is committed at
src/blockprop/assets/desk_corpus.txt; this script only exists so the asset
can be regenerated or rescaled.

The text is designed for character-level modeling: a small alphabet
(letters, space, comma, period, newline), strong within-word structure,
and recurring multi-word phrases, so a small recurrent model beats a
unigram baseline within a couple of epochs.
"""

import argparse

import numpy as np

NOUNS = [
    "river", "mountain", "forest", "garden", "village", "harbor", "meadow",
    "window", "lantern", "letter", "winter", "summer", "morning", "evening",
    "road", "bridge", "tower", "market", "stone", "tree", "bird", "horse",
    "sailor", "farmer", "teacher", "child", "stranger", "traveler", "painter",
    "story", "song", "shadow", "light", "rain", "snow", "wind", "fire",
]

VERBS = [
    "watched", "followed", "remembered", "crossed", "reached", "carried",
    "painted", "opened", "closed", "found", "lost", "built", "burned",
    "gathered", "waited for", "returned to", "walked along", "looked at",
    "listened to", "wrote about", "dreamed of", "sang about",
]

ADJS = [
    "old", "quiet", "bright", "dark", "small", "great", "distant", "narrow",
    "golden", "silver", "broken", "hidden", "gentle", "heavy", "early",
    "late", "cold", "warm", "long", "strange",
]

PLACES = [
    "beyond the hills", "near the shore", "under the stars", "in the valley",
    "by the old mill", "at the edge of town", "across the water",
    "along the northern road", "behind the garden wall", "in the early light",
]

OPENERS = [
    "in those days", "long ago", "every morning", "once again",
    "after the storm", "before the harvest", "at the end of autumn",
    "when the bells rang", "year after year",
]


def sentence(rng):
    adj1 = rng.random() < 0.55
    adj2 = rng.random() < 0.35
    subj = ("the "
            + (ADJS[rng.integers(len(ADJS))] + " " if adj1 else "")
            + NOUNS[rng.integers(len(NOUNS))])
    obj = ("the "
           + (ADJS[rng.integers(len(ADJS))] + " " if adj2 else "")
           + NOUNS[rng.integers(len(NOUNS))])
    parts = []
    if rng.random() < 0.3:
        parts.append(OPENERS[rng.integers(len(OPENERS))] + ",")
    parts.append(subj)
    parts.append(VERBS[rng.integers(len(VERBS))])
    parts.append(obj)
    if rng.random() < 0.45:
        parts.append(PLACES[rng.integers(len(PLACES))])
    if rng.random() < 0.2:
        parts.append("and " + NOUNS[rng.integers(len(NOUNS))] + "s "
                     + VERBS[rng.integers(len(VERBS))] + " "
                     + obj)
    return " ".join(parts) + "."


def generate(target_bytes, seed):
    rng = np.random.default_rng(seed)
    lines = []
    size = 0
    while size < target_bytes:
        para = " ".join(sentence(rng) for _ in range(int(rng.integers(3, 7))))
        lines.append(para)
        size += len(para.encode("utf-8")) + 1
    return "\n".join(lines) + "\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="src/blockprop/assets/desk_corpus.txt")
    ap.add_argument("--bytes", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=774401)
    args = ap.parse_args()
    text = generate(args.bytes, args.seed)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(text)
    alphabet = sorted(set(text))
    print(f"wrote {len(text.encode('utf-8'))} bytes, "
          f"{len(alphabet)} distinct characters: {''.join(alphabet)!r}")


if __name__ == "__main__":
    main()
