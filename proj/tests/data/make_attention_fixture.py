"""Writes attention_fixture.json: random token sequences with projection
weights and the logits/outputs computed by numpy.

The rotary step uses complex multiplication on each axis half rather than
explicit 2x2 rotations. Run from this directory:

    python3 make_attention_fixture.py
"""

import json

import numpy as np


def rope(x, i, j, base=10000.0):
    d = x.shape[0]
    half = d // 2
    out = np.empty_like(x)
    for start, pos in ((0, i), (half, j)):
        seg = x[start:start + half]
        z = seg[0::2] + 1j * seg[1::2]
        freqs = base ** (-2.0 * np.arange(half // 2) / half)
        z = z * np.exp(1j * pos * freqs)
        out[start:start + half:2] = z.real
        out[start + 1:start + half:2] = z.imag
    return out


def case(rng, n, d_model, d_head):
    roles = rng.choice(["text", "ref", "pose", "latent"], size=n)
    tokens = []
    for r in roles:
        tokens.append({
            "role": str(r),
            "ref": 0 if r == "ref" else -1,
            "i": int(rng.integers(0, 12)),
            "j": int(rng.integers(0, 12)),
            "features": rng.normal(size=d_model).tolist(),
        })
    x = np.array([t["features"] for t in tokens])
    wq, wk, wv = (rng.normal(scale=0.5, size=(d_model, d_head)) for _ in range(3))
    q = np.array([rope(row, t["i"], t["j"]) for row, t in zip(x @ wq, tokens)])
    k = np.array([rope(row, t["i"], t["j"]) for row, t in zip(x @ wk, tokens)])
    logits = q @ k.T / np.sqrt(d_head)
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    return {
        "tokens": tokens,
        "wq": wq.tolist(),
        "wk": wk.tolist(),
        "wv": wv.tolist(),
        "logits": logits.tolist(),
        "output": (w @ (x @ wv)).tolist(),
    }


def main():
    rng = np.random.default_rng(2024)
    cases = [case(rng, n, dm, dh) for n, dm, dh in ((1, 8, 8), (3, 8, 16), (7, 12, 8), (12, 16, 32))]
    with open("attention_fixture.json", "w") as f:
        json.dump({"base": 10000.0, "cases": cases}, f)


if __name__ == "__main__":
    main()
