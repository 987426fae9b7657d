#!/usr/bin/env python3
"""Independent reference for distractor sampling.

Pool: entities E000..E099 in relation P19, language cs. E042 is the fact's
object, E013 has no Czech label, and E077's label equals the correct form
"Praze", so 97 entities are eligible. Each eligible entity is keyed by
sha256(salt U+2016 relation U+2016 language U+2016 entity_id) in lowercase
hex; a sample of size k is the k smallest keys in ascending order.

Writes distractor_expected.json next to this script.
"""
import hashlib
import json
import pathlib

SALT = "oracle-salt"
RELATION = "P19"
LANGUAGE = "cs"
OBJECT = "E042"
NO_LABEL = "E013"
COLLIDING = "E077"
CORRECT = ["Praha", "Praze"]
SEP = "‖"


def label(entity_id):
    if entity_id == NO_LABEL:
        return None
    if entity_id == COLLIDING:
        return "Praze"
    return "Obec " + entity_id[1:]


def key(entity_id):
    data = SEP.join([SALT, RELATION, LANGUAGE, entity_id]).encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def sample(k):
    pool = [f"E{i:03d}" for i in range(100)]
    eligible = [e for e in pool
                if e != OBJECT and label(e) is not None and label(e) not in CORRECT]
    eligible.sort(key=key)
    return [{"entity_id": e, "form": label(e), "key": key(e)} for e in eligible[:k]]


def tiny():
    # Pool {e1, e2, e3}, object e2, k=2: both remaining ids in key order.
    eligible = sorted(["e1", "e3"], key=key)
    return [{"entity_id": e, "form": "Obec " + e, "key": key(e)} for e in eligible]


def main():
    out = {"salt": SALT, "relation": RELATION, "language": LANGUAGE,
           "samples": {str(k): sample(k) for k in (1, 50, 99)},
           "tiny": tiny()}
    path = pathlib.Path(__file__).resolve().parent / "distractor_expected.json"
    path.write_text(json.dumps(out, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
