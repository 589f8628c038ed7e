"""Independent loop-based oracles shared by the test modules."""

import math

import numpy as np

def ref_softmax(row):
    m = max(row)
    e = [math.exp(x - m) for x in row]
    s = sum(e)
    return [x / s for x in e]


def ref_cumax(row):
    out, acc = [], 0.0
    for p in ref_softmax(row):
        acc += p
        out.append(acc)
    return np.array(out)


def ref_layer_norm(x, g, b, eps=1e-5):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return (x - mu) / math.sqrt(var + eps) * g + b


def ref_block(h, p, cfg, gated=True, gates=None):
    """Block output computed position by position, head by head."""
    p = {k: v.data for k, v in p.items()}
    t_len = h.shape[0]
    dh, dg, c = cfg.d_head, cfg.gate_dim, cfg.chunk_factor
    out = np.zeros_like(h)
    for t in range(t_len):
        heads = []
        for hd in range(cfg.n_heads):
            cols = slice(hd * dh, (hd + 1) * dh)
            gcols = slice(hd * dg, (hd + 1) * dg)
            q = h[t] @ p["W_q"][:, cols]
            scores = [float(q @ (h[j] @ p["W_k"][:, cols])) / math.sqrt(dh) for j in range(t + 1)]
            a = ref_softmax(scores)
            ctx = np.zeros(dh)
            for j in range(t + 1):
                v = h[j] @ p["W_v"][:, cols]
                if gates is not None:
                    i_gate = np.asarray(gates[0], dtype=float) * np.ones(dg)
                elif gated:
                    i_gate = 1 - ref_cumax(h[j] @ p["W_i"][:, gcols] + p["b_i"][gcols])
                else:
                    i_gate = np.ones(dg)
                ctx += a[j] * np.repeat(i_gate, c) * v
            if gates is not None:
                f_gate = np.asarray(gates[1], dtype=float) * np.ones(dg)
            elif gated:
                f_gate = ref_cumax(h[t] @ p["W_f"][:, gcols] + p["b_f"][gcols])
            else:
                f_gate = np.ones(dg)
            heads.append(np.repeat(f_gate, c) * ctx)
        mixed = np.concatenate(heads) @ p["W_o"]
        y = ref_layer_norm(h[t] + mixed, p["ln1_g"], p["ln1_b"])
        ff = np.maximum(y @ p["W_1"] + p["b_1"], 0) @ p["W_2"] + p["b_2"]
        out[t] = ref_layer_norm(y + ff, p["ln2_g"], p["ln2_b"])
    return out



def ref_lm_logits(tokens, weights):
    """Logits of a model by composing the reference block layer by layer."""
    from otlm.attention import AttentionConfig

    cfg = AttentionConfig.from_model(weights.config)
    emb = weights.token_embedding.data.astype(float)
    h = np.array([emb[t] + weights.positional_table.data[i] for i, t in enumerate(tokens)], dtype=float)
    for layer in weights.layers:
        h = ref_block(h, layer, cfg)
    return np.array([[float(h[t] @ emb[v]) for v in range(emb.shape[0])] for t in range(len(tokens))])


def ref_cross_entropy(logits, targets):
    total = 0.0
    for row, y in zip(logits, targets):
        m = max(row)
        total += -(row[y] - m - math.log(sum(math.exp(x - m) for x in row)))
    return total / len(targets)
