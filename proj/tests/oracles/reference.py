#!/usr/bin/env python3
"""Independent reference for the toy zoo.

Regenerates weights from (seed, path) with its own PCG32 / FNV-1a, tokenizes
with its own greedy matcher and runs alpha / beta forwards in float64 with
plain loops. Prints the values frozen into test_reference.cpp.

    python3 tests/oracles/reference.py fixtures/vocab.txt
"""
import json
import math
import struct
import sys

MASK64 = (1 << 64) - 1
MULT = 6364136223846793005
INC = 1442695040888963407


def fnv1a64(s):
    h = 14695981039346656037
    for b in s.encode("utf-8"):
        h ^= b
        h = (h * 1099511628211) & MASK64
    return h


class Pcg32:
    def __init__(self, seed):
        self.state = ((seed + INC) * MULT + INC) & MASK64

    def next(self):
        old = self.state
        self.state = (old * MULT + INC) & MASK64
        xs = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xs >> rot) | (xs << ((32 - rot) & 31))) & 0xFFFFFFFF

    def weight(self):
        unit = (self.next() >> 8) / 16777216.0
        # round to float32 exactly like a C++ static_cast<float>(double)
        return struct.unpack("<f", struct.pack("<f", unit * 0.2 - 0.1))[0]


def f32_bits(x):
    return struct.unpack("<I", struct.pack("<f", x))[0]


def tensor(seed, path, shape):
    rng = Pcg32(seed ^ fnv1a64(path))
    n = 1
    for s in shape:
        n *= s
    flat = [rng.weight() for _ in range(n)]
    if len(shape) == 1:
        return flat
    rows, cols = shape
    return [flat[r * cols:(r + 1) * cols] for r in range(rows)]


D, H, L, FF, MAXSEQ = 16, 2, 2, 32, 32
HD = D // H


def weights(dialect, seed, vocab):
    W = {}

    def add(path, shape):
        W[path] = tensor(seed, path, shape)

    if dialect == "alpha":
        add("transformer.wte.weight", (vocab, D))
        add("transformer.wpe.weight", (MAXSEQ, D))
        for i in range(L):
            p = f"transformer.h[{i}]"
            for n in ("ln_1", "ln_2"):
                add(f"{p}.{n}.weight", (D,))
                add(f"{p}.{n}.bias", (D,))
            add(f"{p}.attn.c_attn.weight", (D, 3 * D))
            add(f"{p}.attn.c_attn.bias", (3 * D,))
            add(f"{p}.attn.c_proj.weight", (D, D))
            add(f"{p}.attn.c_proj.bias", (D,))
            add(f"{p}.mlp.c_fc.weight", (D, FF))
            add(f"{p}.mlp.c_fc.bias", (FF,))
            add(f"{p}.mlp.c_proj.weight", (FF, D))
            add(f"{p}.mlp.c_proj.bias", (D,))
        add("transformer.ln_f.weight", (D,))
        add("transformer.ln_f.bias", (D,))
    else:
        add("model.embed_tokens.weight", (vocab, D))
        for i in range(L):
            p = f"model.layers[{i}]"
            add(f"{p}.input_layernorm.weight", (D,))
            add(f"{p}.post_attention_layernorm.weight", (D,))
            for n in ("q_proj", "k_proj", "v_proj", "o_proj"):
                add(f"{p}.self_attn.{n}.weight", (D, D))
            add(f"{p}.mlp.gate_proj.weight", (D, FF))
            add(f"{p}.mlp.up_proj.weight", (D, FF))
            add(f"{p}.mlp.down_proj.weight", (FF, D))
        add("model.norm.weight", (D,))
    add("lm_head.weight", (vocab, D))
    return W


def load_vocab(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def tokenize(vocab, text):
    index = {t: i for i, t in enumerate(vocab)}
    s = text.replace(" ", "▁")
    out, i = [], 0
    while i < len(s):
        for j in range(len(s), i, -1):
            if s[i:j] in index:
                out.append(index[s[i:j]])
                i = j
                break
        else:
            raise ValueError("untokenizable")
    return out


def matvec(x, w, b=None):  # x (in), w (in, out)
    out = [0.0] * len(w[0])
    for k, xv in enumerate(x):
        row = w[k]
        for j in range(len(out)):
            out[j] += xv * row[j]
    if b is not None:
        out = [o + bb for o, bb in zip(out, b)]
    return out


def layernorm(x, g, b):
    m = sum(x) / len(x)
    v = sum((t - m) ** 2 for t in x) / len(x)
    inv = 1.0 / math.sqrt(v + 1e-5)
    return [(t - m) * inv * gg + bb for t, gg, bb in zip(x, g, b)]


def rmsnorm(x, g):
    ms = sum(t * t for t in x) / len(x)
    inv = 1.0 / math.sqrt(ms + 1e-6)
    return [t * inv * gg for t, gg in zip(x, g)]


def gelu(x):
    return 0.5 * x * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def silu(x):
    return x / (1.0 + math.exp(-x))


def rotate(vec, pos):
    out = list(vec)
    for h in range(H):
        for j in range(HD // 2):
            theta = 10000.0 ** (-2.0 * j / HD)
            a = pos * theta
            x0, x1 = vec[h * HD + 2 * j], vec[h * HD + 2 * j + 1]
            out[h * HD + 2 * j] = x0 * math.cos(a) - x1 * math.sin(a)
            out[h * HD + 2 * j + 1] = x0 * math.sin(a) + x1 * math.cos(a)
    return out


def attention(q, k, v):
    seq = len(q)
    ctx = [[0.0] * D for _ in range(seq)]
    for h in range(H):
        sl = slice(h * HD, (h + 1) * HD)
        for i in range(seq):
            scores = [sum(a * b for a, b in zip(q[i][sl], k[j][sl])) / math.sqrt(HD) for j in range(i + 1)]
            m = max(scores)
            e = [math.exp(s - m) for s in scores]
            z = sum(e)
            for j in range(i + 1):
                p = e[j] / z
                for c in range(HD):
                    ctx[i][h * HD + c] += p * v[j][h * HD + c]
    return ctx


def forward(dialect, W, tokens):
    """Returns (residual after each layer incl. embeddings, final norm fn, head)."""
    seq = len(tokens)
    if dialect == "alpha":
        h = [[a + b for a, b in zip(W["transformer.wte.weight"][t], W["transformer.wpe.weight"][s])]
             for s, t in enumerate(tokens)]
    else:
        h = [list(W["model.embed_tokens.weight"][t]) for t in tokens]
    states = [h]
    for i in range(L):
        if dialect == "alpha":
            p = f"transformer.h[{i}]"
            x = [layernorm(r, W[f"{p}.ln_1.weight"], W[f"{p}.ln_1.bias"]) for r in h]
            qkv = [matvec(r, W[f"{p}.attn.c_attn.weight"], W[f"{p}.attn.c_attn.bias"]) for r in x]
            q = [r[:D] for r in qkv]
            k = [r[D:2 * D] for r in qkv]
            v = [r[2 * D:] for r in qkv]
            ctx = attention(q, k, v)
            a = [matvec(r, W[f"{p}.attn.c_proj.weight"], W[f"{p}.attn.c_proj.bias"]) for r in ctx]
            mid = [[s + t for s, t in zip(r, ar)] for r, ar in zip(h, a)]
            y = [layernorm(r, W[f"{p}.ln_2.weight"], W[f"{p}.ln_2.bias"]) for r in mid]
            f = [[gelu(t) for t in matvec(r, W[f"{p}.mlp.c_fc.weight"], W[f"{p}.mlp.c_fc.bias"])] for r in y]
            m = [matvec(r, W[f"{p}.mlp.c_proj.weight"], W[f"{p}.mlp.c_proj.bias"]) for r in f]
        else:
            p = f"model.layers[{i}]"
            x = [rmsnorm(r, W[f"{p}.input_layernorm.weight"]) for r in h]
            q = [rotate(matvec(r, W[f"{p}.self_attn.q_proj.weight"]), s) for s, r in enumerate(x)]
            k = [rotate(matvec(r, W[f"{p}.self_attn.k_proj.weight"]), s) for s, r in enumerate(x)]
            v = [matvec(r, W[f"{p}.self_attn.v_proj.weight"]) for r in x]
            ctx = attention(q, k, v)
            a = [matvec(r, W[f"{p}.self_attn.o_proj.weight"]) for r in ctx]
            mid = [[s + t for s, t in zip(r, ar)] for r, ar in zip(h, a)]
            y = [rmsnorm(r, W[f"{p}.post_attention_layernorm.weight"]) for r in mid]
            g = matvec
            f = [[silu(a1) * b1 for a1, b1 in zip(g(r, W[f"{p}.mlp.gate_proj.weight"]), g(r, W[f"{p}.mlp.up_proj.weight"]))]
                 for r in y]
            m = [matvec(r, W[f"{p}.mlp.down_proj.weight"]) for r in f]
        h = [[s + t for s, t in zip(r, mr)] for r, mr in zip(mid, m)]
        states.append(h)
    return states


def final_norm(dialect, W, r):
    if dialect == "alpha":
        return layernorm(r, W["transformer.ln_f.weight"], W["transformer.ln_f.bias"])
    return rmsnorm(r, W["model.norm.weight"])


def unembed(W, r):
    return [sum(a * b for a, b in zip(r, row)) for row in W["lm_head.weight"]]


def softmax(x):
    m = max(x)
    e = [math.exp(t - m) for t in x]
    z = sum(e)
    return [t / z for t in e]


def first_tokens(vocab, target):
    return {tokenize(vocab, target)[0], tokenize(vocab, " " + target)[0]}


def main():
    vocab = load_vocab(sys.argv[1] if len(sys.argv) > 1 else "fixtures/vocab.txt")
    V = len(vocab)
    out = {"vocab_size": V}

    out["weight_bits"] = {}
    for seed in (42, 7):
        for path, shape in (("transformer.wte.weight", (V, D)), ("model.layers[1].mlp.down_proj.weight", (FF, D)),
                            ("lm_head.weight", (V, D))):
            t = tensor(seed, path, shape)
            flat = t if len(shape) == 1 else [v for row in t for v in row]
            h = 14695981039346656037
            for v in flat:
                for b in struct.pack("<I", f32_bits(v)):
                    h ^= b
                    h = (h * 1099511628211) & MASK64
            out["weight_bits"][f"{seed}:{path}"] = {"first4": [f"0x{f32_bits(v):08x}" for v in flat[:4]],
                                                    "fnv_of_bits": f"0x{h:016x}"}

    prompt = "The capital of France is"
    tokens = tokenize(vocab, prompt)
    out["tokens"] = tokens
    for dialect in ("alpha", "beta"):
        W = weights(dialect, 42, V)
        states = forward(dialect, W, tokens)
        logits = [unembed(W, final_norm(dialect, W, r)) for r in states[-1]]
        last = logits[-1]
        probs = softmax(last)
        lens1 = softmax(unembed(W, final_norm(dialect, W, states[1][-1])))
        order = sorted(range(V), key=lambda i: -last[i])
        fake = first_tokens(vocab, "London") | first_tokens(vocab, "Lyon")
        target = first_tokens(vocab, "Paris")
        out[dialect] = {
            "argmax_per_position": [max(range(V), key=lambda i: row[i]) for row in logits],
            "argmax_last": order[0],
            "argmax_margin": last[order[0]] - last[order[1]],
            "last_logits_first5": last[:5],
            "lens_layer1_last_argmax": max(range(V), key=lambda i: lens1[i]),
            "lens_layer1_last_first5": lens1[:5],
            "category_target": sum(probs[i] for i in target),
            "category_fake": sum(probs[i] for i in fake),
            "fake_ids": sorted(fake),
        }
    json.dump(out, sys.stdout, indent=1)
    print()


if __name__ == "__main__":
    main()
