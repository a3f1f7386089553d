#!/usr/bin/env python3
"""Generates the brute-force fixture: 50 small segments (|C|, |S| <= 6) and,
for every rule configuration, the argmax set found by enumerating every
(candidate, support) pair with the oracle utilities.

Run: python3 crates/core/tests/oracles/gen_brute_force.py
Writes crates/cli/tests/fixtures/brute_force.jsonl and
crates/cli/tests/fixtures/brute_force_expected.json.
"""
import json
import math
import os
import random

from oracle import bleu_utility, token_f1

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "..", "..", "cli", "tests", "fixtures")
VOCAB = ["the", "cat", "sat", "on", "mat", "a", "dog", "ran", "."]
TOL = 1e-12


def sentence(rng):
    return " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 6)))


def make_segment(rng, i):
    n_c = rng.randint(2, 6)
    n_q = rng.randint(0, 5)
    cands = []
    for _ in range(n_c):
        if cands and rng.random() < 0.2:
            text = rng.choice(cands)["text"]
        else:
            text = sentence(rng)
        cands.append({"text": text, "logprob": round(-rng.uniform(0.0, 5.0), 3)})
    quasi = [
        {"text": sentence(rng), "provenance": "pp", "weight": round(rng.uniform(0.1, 1.0), 3)}
        for _ in range(n_q)
    ]
    return {
        "id": f"bf{i:02d}",
        "source": sentence(rng),
        "candidates": cands,
        "quasi_sources": quasi,
        "references": [sentence(rng)],
    }


def qe(src, hyp):
    return token_f1(src, hyp)


def brute(n_cands, supports, weights, u_of):
    """Enumerates every pair; returns the scores and the argmax set."""
    scores = []
    for c in range(n_cands):
        total = 0.0
        for s in range(len(supports)):
            total += weights[s] * u_of(supports[s], c)
        scores.append(total)
    best = max(scores)
    return scores, [i for i, v in enumerate(scores) if v >= best - TOL]


def uniform(n):
    return [1.0 / n] * n


def softmax(lps):
    hi = max(lps)
    ex = [math.exp(l - hi) for l in lps]
    t = sum(ex)
    return [e / t for e in ex]


def normalized(ws):
    t = sum(ws)
    return [w / t for w in ws]


def cases(seg):
    cands = [c["text"] for c in seg["candidates"]]
    lps = [c["logprob"] for c in seg["candidates"]]
    src = seg["source"]
    expected = []

    def add(rule, provider, scores_ties, k=None, weighted=False, filter_m=None):
        scores, ties = scores_ties
        expected.append({
            "rule": rule,
            "provider": provider,
            "k": k,
            "weighted": weighted,
            "filter_m": filter_m,
            "selected_index": ties[0],
            "tied_indices": ties,
            "scores": scores,
        })

    best = max(lps)
    add("map", "none", (lps, [i for i, v in enumerate(lps) if v >= best - TOL]))

    bleu_u = lambda s, c: bleu_utility(s, cands[c])
    qe_u = lambda s, c: qe(s, cands[c])
    n = len(cands)
    for name, u in [("mock:bleu", bleu_u), ("mock:qe", qe_u)]:
        add("mbr_naive", name, brute(n, cands, uniform(n), u))
        add("mbr_naive", name, brute(n, cands, softmax(lps), u), weighted=True)

    # top-3 supports by QE against the source; ties keep the lower index
    m = min(3, n)
    order = sorted(range(n), key=lambda i: (-qe(src, cands[i]), i))[:m]
    sup = [cands[i] for i in order]
    add("mbr_naive", "mock:bleu", brute(n, sup, uniform(m), bleu_u), filter_m=m)

    add("qe_rerank", "mock:qe", brute(n, [src], [1.0], qe_u))

    sources = [src] + [q["text"] for q in seg["quasi_sources"]]
    raw = [q["weight"] for q in seg["quasi_sources"]]
    src_weights = [max(raw) if raw else 1.0] + raw
    for k in sorted({1, 2, len(sources)}):
        if k > len(sources):
            continue
        kk = None if k == len(sources) else k
        add("smbr", "mock:qe", brute(n, sources[:k], uniform(k), qe_u), k=kk)
        if raw:
            add("smbr", "mock:qe", brute(n, sources[:k], normalized(src_weights[:k]), qe_u), k=kk, weighted=True)
    return expected


def main():
    rng = random.Random(20240611)
    segs = [make_segment(rng, i) for i in range(50)]
    os.makedirs(OUT, exist_ok=True)
    with open(os.path.join(OUT, "brute_force.jsonl"), "w") as f:
        for s in segs:
            f.write(json.dumps(s) + "\n")
    table = {s["id"]: cases(s) for s in segs}
    with open(os.path.join(OUT, "brute_force_expected.json"), "w") as f:
        json.dump(table, f, indent=1)
        f.write("\n")
    n_cases = sum(len(v) for v in table.values())
    n_ties = sum(len(c["tied_indices"]) > 1 for v in table.values() for c in v)
    print(f"{len(segs)} segments, {n_cases} rule cases, {n_ties} with ties")


if __name__ == "__main__":
    main()
