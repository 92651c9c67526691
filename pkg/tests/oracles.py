"""Independent scalar-loop oracles used by the test suite.

Everything here is written against the mathematical definitions with plain
Python loops, deliberately avoiding the library's vectorized code paths so
the two implementations can check each other.
"""

from __future__ import annotations

import math


def matmul_loops(a, b):
    """Triple-loop matrix product over nested lists."""
    m, k = len(a), len(a[0])
    k2, n = len(b), len(b[0])
    assert k == k2
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return out


def softmax_list(xs):
    m = max(xs)
    es = [math.exp(x - m) for x in xs]
    z = sum(es)
    return [e / z for e in es]


def relu_s(x):
    return x if x > 0.0 else 0.0


def sigmoid_s(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def mm_unit_loops(a, b, w):
    """MM(a, b) = W^T [a || b || a*b || a+b] with explicit loops."""
    d = len(a)
    feats = list(a) + list(b) + [a[i] * b[i] for i in range(d)] + [a[i] + b[i] for i in range(d)]
    d_out = len(w[0])
    return [sum(feats[i] * w[i][j] for i in range(len(feats))) for j in range(d_out)]


def bilinear_attention_loops(xp, xq, u_p, u_q, p_vec, w_q, merge_w, merge_b,
                             heads, rel_table=None, k_max=0):
    """Low-rank bilinear attention, one pair, scalar loops.

    xp: N x d, xq: Nq x d, u_p/u_q: d x d_low, p_vec: d_low,
    w_q: d x d, merge_w: (heads*d) x d, merge_b: d,
    rel_table: optional (2*k_max+1) x d value-path position embedding.
    Returns (output N x d, per-head attention maps).
    """
    n, d = len(xp), len(xp[0])
    nq = len(xq)
    d_low = len(u_p[0])
    per = d_low // heads

    q_proj = [[relu_s(sum(xp[i][t] * u_p[t][c] for t in range(d))) for c in range(d_low)]
              for i in range(n)]
    k_proj = [[relu_s(sum(xq[j][t] * u_q[t][c] for t in range(d))) for c in range(d_low)]
              for j in range(nq)]
    values = [[sum(xq[j][t] * w_q[t][c] for t in range(d)) for c in range(d)]
              for j in range(nq)]

    def rel(i, j):
        if rel_table is None:
            return [0.0] * d
        delta = max(-k_max, min(k_max, j - i)) + k_max
        return rel_table[delta]

    head_outputs = []
    attn_maps = []
    for h in range(heads):
        lo = h * per
        attn = []
        for i in range(n):
            logits = [sum(p_vec[lo + c] * q_proj[i][lo + c] * k_proj[j][lo + c]
                          for c in range(per))
                      for j in range(nq)]
            attn.append(softmax_list(logits))
        attn_maps.append(attn)
        out_h = []
        for i in range(n):
            row = [0.0] * d
            for j in range(nq):
                r = rel(i, j)
                for c in range(d):
                    row[c] += attn[i][j] * (values[j][c] + r[c])
            out_h.append(row)
        head_outputs.append(out_h)

    merged = []
    for i in range(n):
        stacked = []
        for h in range(heads):
            stacked.extend(head_outputs[h][i])
        merged.append([sum(stacked[t] * merge_w[t][c] for t in range(heads * d)) + merge_b[c]
                       for c in range(d)])
    return merged, attn_maps


def channel_gate_loops(xp, xq, v_p, v_q, ffn_w1, ffn_b1, ffn_w2, ffn_b2):
    """Channel-level interaction gate, scalar loops.

    v_p/v_q: d x d_c. The gate FFN maps d_c -> d_c -> d with an inner ReLU;
    sigmoid squashes the result into (0, 1).
    Returns (gate N x d, channel map d_c x d_c).
    """
    n, d = len(xp), len(xp[0])
    d_c = len(v_p[0])

    proj_p = [[sum(xp[i][t] * v_p[t][c] for t in range(d)) for c in range(d_c)]
              for i in range(n)]
    proj_q = [[sum(xq[i][t] * v_q[t][c] for t in range(d)) for c in range(d_c)]
              for i in range(len(xq))]
    mean_p = [sum(proj_p[i][c] for i in range(n)) / n for c in range(d_c)]
    mean_q = [sum(proj_q[i][c] for i in range(len(xq))) / len(xq) for c in range(d_c)]

    s = [[-(mean_p[i] - mean_q[j]) ** 2 for j in range(d_c)] for i in range(d_c)]
    # softmax over i (down each column)
    smx = [[0.0] * d_c for _ in range(d_c)]
    for j in range(d_c):
        col = softmax_list([s[i][j] for i in range(d_c)])
        for i in range(d_c):
            smx[i][j] = col[i]

    mixed = [[sum(proj_p[i][t] * smx[t][c] for t in range(d_c)) for c in range(d_c)]
             for i in range(n)]
    gate = []
    for i in range(n):
        hidden = [relu_s(sum(mixed[i][t] * ffn_w1[t][c] for t in range(d_c)) + ffn_b1[c])
                  for c in range(d_c)]
        raw = [sum(hidden[t] * ffn_w2[t][c] for t in range(d_c)) + ffn_b2[c]
               for c in range(d)]
        gate.append([sigmoid_s(x) for x in raw])
    return gate, smx


def linear_loops(x, w, b=None):
    n, d_in = len(x), len(x[0])
    d_out = len(w[0])
    out = [[sum(x[i][t] * w[t][c] for t in range(d_in)) + (b[c] if b else 0.0)
            for c in range(d_out)] for i in range(n)]
    return out


def ffn_loops(x, w1, b1, w2, b2):
    hidden = [[relu_s(v) for v in row] for row in linear_loops(x, w1, b1)]
    return linear_loops(hidden, w2, b2)


def cgmi_loops(xp, xq, ba_params, gate_params, out_ffn_params):
    """FFN(BA(xp, xq) * CG(xp, xq) + xp) with scalar loops throughout."""
    ba_out, attn = bilinear_attention_loops(xp, xq, *ba_params)
    gate, _ = channel_gate_loops(xp, xq, *gate_params)
    n, d = len(xp), len(xp[0])
    pre = [[ba_out[i][c] * gate[i][c] + xp[i][c] for c in range(d)] for i in range(n)]
    return ffn_loops(pre, *out_ffn_params), attn


def temporal_attention_loops(h, video, w_h, w_x, v, b):
    """score_i = v . tanh(W_h h + W_x video_i + b); context = sum w_i video_i."""
    n, d = len(video), len(video[0])
    k = len(v)
    base = [sum(h[t] * w_h[t][c] for t in range(len(h))) + b[c] for c in range(k)]
    scores = []
    for i in range(n):
        pre = [base[c] + sum(video[i][t] * w_x[t][c] for t in range(d)) for c in range(k)]
        scores.append(sum(v[c] * math.tanh(pre[c]) for c in range(k)))
    weights = softmax_list(scores)
    context = [sum(weights[i] * video[i][c] for i in range(n)) for c in range(d)]
    return context, weights
