#!/usr/bin/env python3
"""Independent oracle for frozen test values.

Re-derives every golden constant used by the C++ test suites from first
principles (pure Python, no project code). Run from the repo root:

    python3 tests/oracle/gen_golden.py

Writes tests/golden/* and prints scalar expectations for the unit tests.
"""
import json
import math
import os

MASK64 = (1 << 64) - 1


def splitmix64_stream(seed):
    state = seed & MASK64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        yield z ^ (z >> 31)


def fnv1a64(s):
    h = 0xCBF29CE484222325
    for b in s.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def fisher_yates(ids, seed):
    out = sorted(ids)
    gen = splitmix64_stream(seed)
    for i in range(len(out) - 1, 0, -1):
        j = next(gen) % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def split_ids(ids, frac, seed):
    shuffled = fisher_yates(ids, seed)
    n_train = math.floor(frac * len(shuffled))
    return shuffled[:n_train], shuffled[n_train:]


def embed(concept, dim):
    gen = splitmix64_stream(fnv1a64(concept))
    vals = [2.0 * ((next(gen) >> 11) * 2.0 ** -53) - 1.0 for _ in range(dim)]
    norm = math.sqrt(sum(v * v for v in vals))
    return [v / norm for v in vals]


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    golden = os.path.join(here, "..", "golden")
    os.makedirs(golden, exist_ok=True)

    # 20-id split, seed 42, fraction 0.85 -> frozen partition
    ids = [chr(ord("a") + i) for i in range(20)]
    train, val = split_ids(ids, 0.85, 42)
    with open(os.path.join(golden, "split_train_20ids_seed42.txt"), "w") as f:
        f.write("\n".join(train) + "\n")
    with open(os.path.join(golden, "split_val_20ids_seed42.txt"), "w") as f:
        f.write("\n".join(val) + "\n")
    print("train:", train)
    print("val:  ", val)

    # concept embeddings, D=16 golden prefix
    vecs = {c: embed(c, 16) for c in ("polyp", "lung")}
    with open(os.path.join(golden, "embeddings_d16.json"), "w") as f:
        json.dump(vecs, f, indent=1, sort_keys=True)
    for c, v in vecs.items():
        print(c, "first4:", ["%.17g" % x for x in v[:4]])
        print(c, "norm:", "%.17g" % math.sqrt(sum(x * x for x in v)))

    # scalar loss expectations
    ln2 = math.log(2.0)
    print("focal_bce(0.5,1,0.25,2)      = %.12f" % (0.25 * 0.25 * ln2))
    cfocal = 0.25 * 0.25 * ln2 - 0.75 * 0.25 * ln2
    print("C_focal(0.5)                 = %.12f" % cfocal)
    print("cost(p=.5, same box)         = %.12f" % (2.0 * cfocal - 2.0))
    print("presence(0.5,1,10)           = %.12f" % (10 * ln2))
    print("presence(0.5,0,10)           = %.12f" % ln2)
    print("find one pair N_q=1          = %.12f" % (20 * 0.25 * 0.25 * ln2 + 20 * 10 * ln2))
    print("dice_loss zeros k=3 eps=1    = %.12f" % (1 - 1 / 4))
    print("seg focal px (a=.6 g=2 p=.5) = %.12f" % (0.6 * 0.25 * ln2))
    print("dice 4px pred.5 gt1 eps1     = %.12f" % (1 - (2 * 2 + 1) / (2 + 4 + 1)))
    print("llrd l=1 base 5e-5           = %.12e" % (5e-5 * 0.85 ** 11))
    print("0.85^11                      = %.12f" % 0.85 ** 11)
    print("giou [0,0,2,2] vs [1,1,3,3]  = %.12f" % (1 / 7 - 2 / 9))


if __name__ == "__main__":
    main()
