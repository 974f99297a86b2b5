"""Independent scalar oracles used by the test suite.

These re-derive every formula with explicit python loops over numpy values.
They never call into the package's tensor engine, so agreement between the
two paths is meaningful evidence.
"""

import math

import numpy as np


def scalar_linear(weight, bias, x):
    x = np.atleast_2d(x)
    out = np.zeros((x.shape[0], weight.shape[1]))
    for r in range(x.shape[0]):
        for c in range(weight.shape[1]):
            acc = bias[c]
            for k in range(weight.shape[0]):
                acc += x[r, k] * weight[k, c]
            out[r, c] = acc
    return out


def scalar_gelu(x):
    flat = [0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))) for v in np.ravel(x)]
    return np.array(flat).reshape(np.shape(x))


def scalar_layer_norm(gamma, beta, eps, x):
    x = np.atleast_2d(x)
    out = np.zeros_like(x, dtype=float)
    d = x.shape[1]
    for r in range(x.shape[0]):
        mu = sum(x[r]) / d
        var = sum((v - mu) ** 2 for v in x[r]) / d
        for c in range(d):
            out[r, c] = gamma[c] * (x[r, c] - mu) / math.sqrt(var + eps) + beta[c]
    return out


def scalar_feed_forward(p, x):
    h = scalar_gelu(scalar_linear(p.fc1.weight.data, p.fc1.bias.data, x))
    return scalar_linear(p.fc2.weight.data, p.fc2.bias.data, h)


def scalar_mha(p, q_src, kv_src, key_mask=None):
    """Brute-force multi-head attention: one head at a time, row by row."""
    q = scalar_linear(p.w_q.weight.data, p.w_q.bias.data, q_src)
    k = scalar_linear(p.w_k.weight.data, p.w_k.bias.data, kv_src)
    v = scalar_linear(p.w_v.weight.data, p.w_v.bias.data, kv_src)
    m_q, m_k = q.shape[0], k.shape[0]
    ctx = np.zeros((m_q, p.num_heads * p.head_dim))
    for h in range(p.num_heads):
        lo = h * p.head_dim
        for i in range(m_q):
            logits = []
            for j in range(m_k):
                s = sum(q[i, lo + d] * k[j, lo + d] for d in range(p.head_dim))
                s /= math.sqrt(p.head_dim)
                if key_mask is not None and not key_mask[j]:
                    s = -math.inf
                logits.append(s)
            mx = max(logits)
            ws = [math.exp(s - mx) for s in logits]
            z = sum(ws)
            for j in range(m_k):
                w = ws[j] / z
                for d in range(p.head_dim):
                    ctx[i, lo + d] += w * v[j, lo + d]
    return scalar_linear(p.w_o.weight.data, p.w_o.bias.data, ctx)


def scalar_cross_attention_block(p, vision, text, text_mask=None):
    """Both directions of the cross-attention exchange, step by step."""

    def one_side(attn, norm_attn, norm_ff, ff, queries, keys, mask):
        att = scalar_mha(attn, queries, keys, mask)
        mid = scalar_layer_norm(norm_attn.gamma.data, norm_attn.beta.data,
                                norm_attn.epsilon, att + queries)
        ffo = scalar_feed_forward(ff, mid)
        return scalar_layer_norm(norm_ff.gamma.data, norm_ff.beta.data,
                                 norm_ff.epsilon, ffo + mid)

    v_out = one_side(p.attn_into_vision, p.norm_vision_attn, p.norm_vision_ff,
                     p.ff_vision, vision, text, text_mask)
    t_out = one_side(p.attn_into_text, p.norm_text_attn, p.norm_text_ff,
                     p.ff_text, text, vision, None)
    return v_out, t_out


def scalar_gated_self_attention(p, previous, updated, key_mask=None):
    fused = scalar_linear(p.fuse.weight.data, p.fuse.bias.data,
                          updated * previous + previous)
    att = scalar_mha(p.attn, fused, fused, key_mask)
    mid = scalar_layer_norm(p.norm_attn.gamma.data, p.norm_attn.beta.data,
                            p.norm_attn.epsilon, att + fused)
    ffo = scalar_feed_forward(p.ff, mid)
    return scalar_layer_norm(p.norm_ff.gamma.data, p.norm_ff.beta.data,
                             p.norm_ff.epsilon, ffo + mid)


def scalar_intra_term(emb, labels, temperature):
    """Double-loop supervised contrastive term over one modality."""
    emb = np.asarray(emb, dtype=float)
    n = emb.shape[0]
    total = 0.0
    for i in range(n):
        positives = [j for j in range(n) if j != i and labels[j] == labels[i]]
        if not positives:
            continue
        denom = 0.0
        for k in range(n):
            if k == i:
                continue
            denom += math.exp(float(np.dot(emb[i], emb[k])) / temperature)
        acc = 0.0
        for j in positives:
            num = math.exp(float(np.dot(emb[i], emb[j])) / temperature)
            acc += math.log(num / denom)
        total += -acc / len(positives)
    return total


def scalar_inter_term(anchors, others, labels, temperature, include_own_pair=False):
    """Double-loop cross-modality term: anchors from one modality, candidates
    from the other.  By default the anchor's own paired sample is excluded
    from both positives and the denominator."""
    anchors = np.asarray(anchors, dtype=float)
    others = np.asarray(others, dtype=float)
    n = anchors.shape[0]
    total = 0.0
    for i in range(n):
        if include_own_pair:
            positives = [j for j in range(n) if labels[j] == labels[i]]
            denom_idx = list(range(n))
        else:
            positives = [j for j in range(n) if j != i and labels[j] == labels[i]]
            denom_idx = [k for k in range(n) if k != i]
        if not positives:
            continue
        denom = sum(
            math.exp(float(np.dot(anchors[i], others[k])) / temperature) for k in denom_idx
        )
        acc = 0.0
        for j in positives:
            num = math.exp(float(np.dot(anchors[i], others[j])) / temperature)
            acc += math.log(num / denom)
        total += -acc / len(positives)
    return total


def scalar_cross_modal_loss(x, t, labels, temperature, inter_weight, include_own_pair=False):
    """The four-term objective, combined symmetrically."""
    vv = scalar_intra_term(x, labels, temperature)
    ll = scalar_intra_term(t, labels, temperature)
    lv = scalar_inter_term(x, t, labels, temperature, include_own_pair)
    vl = scalar_inter_term(t, x, labels, temperature, include_own_pair)
    return {
        "vision_intra": vv,
        "text_intra": ll,
        "text_to_vision": lv,
        "vision_to_text": vl,
        "total": (vv + ll) + inter_weight * (lv + vl),
    }


def scalar_cross_entropy(logits, labels):
    logits = np.asarray(logits, dtype=float)
    n = logits.shape[0]
    total = 0.0
    for i in range(n):
        mx = max(logits[i])
        lse = mx + math.log(sum(math.exp(v - mx) for v in logits[i]))
        total += lse - logits[i][labels[i]]
    return total / n
