"""Shared oracles for the test suite.

The gradient oracle is central finite differences evaluated through a
caller-supplied loss closure; it never touches the backward pass it is
checking. ``rel_error`` guards the denominator with a magnitude floor:
below the floor, finite differences themselves are noise-limited and a
raw relative error would measure the oracle, not the implementation.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from mlnetvad.autodiff import Tensor
from mlnetvad.corpus import LabeledUtterance, MixSpec, label_frames, pad_silence
from mlnetvad.frontend import FrontendConfig, Waveform, featurize

# raw log-mel puts the silence floor at ln(1e-10) = -23, which saturates
# the gated units at init scale, so the toy corpora train with
# per-utterance normalization on
TOY_FRONTEND = FrontendConfig(normalize=True)


def tone_silence_utterance(idx: int, rng: np.random.Generator) -> LabeledUtterance:
    """Loud tone between silence stretches: linearly separable by energy."""
    sr = 16000
    dur = rng.uniform(0.3, 0.6)
    t = np.arange(int(dur * sr)) / sr
    freq = rng.uniform(200, 1200)
    tone = Waveform(0.5 * np.sin(2 * np.pi * freq * t), sr)
    padded, mask = pad_silence(tone, MixSpec(silence_pad_s=0.3))
    feats = featurize(padded, TOY_FRONTEND, source_id=f"toy-{idx}")
    labels = label_frames(mask, TOY_FRONTEND, sr)
    return LabeledUtterance(feats, labels, f"toy-{idx}")


def toy_corpus(n: int, seed: int = 0) -> list[LabeledUtterance]:
    rng = np.random.default_rng(seed)
    return [tone_silence_utterance(i, rng) for i in range(n)]


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-2) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def scalar_attention_oracle(
    q: np.ndarray,
    w0: np.ndarray,
    b0: np.ndarray,
    w1: np.ndarray,
    b1: np.ndarray,
    double_sigmoid: bool,
) -> tuple[list, list, list]:
    """Naive per-scalar reimplementation of the channel-attention block.

    Pure Python loops over one frame's (n_branches, gated_dim) matrix;
    returns (raw scores a, weights p, fused Q) as plain float lists.
    """
    import math

    n, dim = q.shape
    hidden_n = w0.shape[0]
    d_avg = [sum(float(v) for v in q[i]) / dim for i in range(n)]
    d_max = [max(float(v) for v in q[i]) for i in range(n)]

    def net(d):
        hidden = []
        for j in range(hidden_n):
            s = float(b0[j]) + sum(float(w0[j, i]) * d[i] for i in range(n))
            hidden.append(s if s > 0 else 0.01 * s)
        return [
            float(b1[i]) + sum(float(w1[i, j]) * hidden[j] for j in range(hidden_n))
            for i in range(n)
        ]

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    scores = [x + y for x, y in zip(net(d_avg), net(d_max))]
    a = [sig(v) for v in scores]
    num = [sig(v) for v in a] if double_sigmoid else list(a)
    total = sum(num)
    p = [v / total for v in num]
    fused = [sum(p[i] * float(q[i, d]) for i in range(n)) for d in range(dim)]
    return a, p, fused


def reference_loss(
    x: np.ndarray,
    y: np.ndarray,
    cfg,
    named: dict[str, np.ndarray],
    frozen_k: np.ndarray | None = None,
    lam: float = 1.0,
) -> float:
    """Plain-numpy reimplementation of the full forward pass plus losses.

    Written independently of the tensor engine so finite differences over
    it are fast and the two forward paths can be cross-checked. Matches
    the production semantics: replicate padding, time-major windows,
    gated affine branches, shared-net channel attention with the double
    sigmoid option, [input, forget, candidate, output] LSTM gate packing,
    leaky_relu(0.01) head, clamped cross-entropy, and the attention loss
    at a caller-frozen winning branch.
    """

    def sigmoid(v):
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-v))

    def lrelu(v):
        return np.where(v > 0, v, 0.01 * v)

    t_len = x.shape[0]
    radius = max(cfg.receptive_fields)
    padded = np.pad(x, ((radius, radius), (0, 0)), mode="edge")

    def windows(r):
        cols = [padded[radius - r + k : radius - r + k + t_len] for k in range(2 * r + 1)]
        return np.concatenate(cols, axis=1)

    def gated(r):
        w = windows(r)
        pre = f"branch_r{r}"
        return np.tanh(w @ named[f"{pre}.w_f"].T + named[f"{pre}.b_f"]) * sigmoid(
            w @ named[f"{pre}.w_g"].T + named[f"{pre}.b_g"]
        )

    att_p = None
    if cfg.variant == "bilstm_base":
        m = np.tanh(windows(radius) @ named["projection.w"].T + named["projection.b"])
    elif cfg.variant == "gated_unit":
        m = gated(radius)
    else:
        q = np.stack([gated(r) for r in cfg.receptive_fields], axis=1)  # (T, n, D)
        if cfg.variant == "non_attention":
            m = q.mean(axis=1)
        else:
            d_avg = q.mean(axis=2)
            d_max = q.max(axis=2)

            def net(d):
                hidden = lrelu(d @ named["attention.w0"].T + named["attention.b0"])
                return hidden @ named["attention.w1"].T + named["attention.b1"]

            a = sigmoid(net(d_avg) + net(d_max))
            num = sigmoid(a) if cfg.double_sigmoid else a
            att_p = num / num.sum(axis=1, keepdims=True)
            m = (att_p[:, :, None] * q).sum(axis=1)

    seq = m
    h_dim = cfg.lstm_hidden
    for layer in range(cfg.lstm_layers):
        outputs = []
        for tag, reverse in (("fwd", False), ("bwd", True)):
            w_x = named[f"lstm{layer}.{tag}.w_x"]
            w_h = named[f"lstm{layer}.{tag}.w_h"]
            bias = named[f"lstm{layer}.{tag}.b"]
            xproj = seq @ w_x + bias
            h = np.zeros(h_dim)
            c = np.zeros(h_dim)
            out = np.zeros((t_len, h_dim))
            steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
            for t in steps:
                z = xproj[t] + h @ w_h
                i = sigmoid(z[0:h_dim])
                f = sigmoid(z[h_dim : 2 * h_dim])
                g = np.tanh(z[2 * h_dim : 3 * h_dim])
                o = sigmoid(z[3 * h_dim :])
                c = f * c + i * g
                h = o * np.tanh(c)
                out[t] = h
            outputs.append(out)
        seq = np.concatenate(outputs, axis=1)
    hidden = lrelu(seq @ named["head.w_hidden"].T + named["head.b_hidden"])
    probs = sigmoid((hidden @ named["head.w_out"].T + named["head.b_out"]).ravel())

    clamped = np.clip(probs, 1e-7, 1.0 - 1e-7)
    loss = -float(np.sum(y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped)))
    if frozen_k is not None and att_p is not None:
        loss += lam * -float(np.sum(np.log(att_p[np.arange(t_len), frozen_k])))
    return loss


def numeric_grad(
    loss_fn: Callable[[], float],
    tensors: Sequence[Tensor],
    eps: float = 1e-4,
) -> list[np.ndarray]:
    """Central-difference gradient of ``loss_fn`` w.r.t. each tensor's data.

    ``loss_fn`` must read the tensors' current ``data`` buffers; they are
    perturbed in place and restored exactly.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data, dtype=np.float64)
        flat = t.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_fn()
            flat[i] = orig - eps
            f_minus = loss_fn()
            flat[i] = orig
            gf[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads
