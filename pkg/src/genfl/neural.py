"""Encoder-evaluator-decoder over client selections, in plain numpy.

The encoder is a single-layer LSTM whose per-token outputs form the latent
matrix E_s (T x hidden).  The decoder is a second LSTM with dot-product
attention over E_s; its first input is the last encoder output and later
inputs are projected token embeddings (teacher forcing during training).
The evaluator mean-pools E_s and applies a two-layer feed-forward net to
estimate the normalized comprehensive score.

All gradients are computed by hand-written reverse-mode differentiation so
the latent gradient d(score)/d(E_s) is exact; the test suite checks every
parameter group against central finite differences.

Mini-batches are grouped by sequence length before the vectorized forward
pass, so the PAD token exists in the vocabulary (for the decode-time mask)
but never enters the loss.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .collectors import RecordSet
from .core import ClientSelection
from .errors import DataError, NumericError

EMB_DIM = 32
HIDDEN = 64
EVAL_HIDDEN = 200

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Vocabulary:
    """Device tokens 0..J-1, then EOS, then PAD."""

    n_devices: int

    @property
    def eos(self) -> int:
        return self.n_devices

    @property
    def pad(self) -> int:
        return self.n_devices + 1

    @property
    def size(self) -> int:
        return self.n_devices + 2


@dataclass
class ModelBundle:
    vocab: Vocabulary
    hidden: int
    emb_dim: int
    eval_hidden: int
    params: dict[str, np.ndarray]
    norm_lo: float = 0.0
    norm_hi: float = 1.0
    seed: int = 0

    def normalize(self, score: float) -> float:
        if self.norm_hi == self.norm_lo:
            return 0.5
        return (score - self.norm_lo) / (self.norm_hi - self.norm_lo)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    learning_rate: float = 0.001
    alpha: float = 0.8
    epochs: int = 200
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.batch_size < 1 or self.learning_rate <= 0 or self.epochs < 0:
            raise ValueError("invalid train config")


def _glorot(gen: np.random.Generator, fan_in: int, fan_out: int,
            shape: tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-limit, limit, size=shape)


def init_bundle(n_devices: int, seed: int, hidden: int = HIDDEN,
                emb_dim: int = EMB_DIM, eval_hidden: int = EVAL_HIDDEN) -> ModelBundle:
    vocab = Vocabulary(n_devices)
    gen = rngmod.stream(seed, "init")
    H, De, He, V = hidden, emb_dim, eval_hidden, vocab.size
    p = {
        "emb": _glorot(gen, V, De, (V, De)),
        "enc_Wx": _glorot(gen, De, 4 * H, (De, 4 * H)),
        "enc_Wh": _glorot(gen, H, 4 * H, (H, 4 * H)),
        "enc_b": np.zeros(4 * H),
        "inproj_W": _glorot(gen, De, H, (De, H)),
        "inproj_b": np.zeros(H),
        "dec_Wx": _glorot(gen, H, 4 * H, (H, 4 * H)),
        "dec_Wh": _glorot(gen, H, 4 * H, (H, 4 * H)),
        "dec_b": np.zeros(4 * H),
        "out_W": _glorot(gen, 2 * H, V, (2 * H, V)),
        "out_b": np.zeros(V),
        "ev_W1": _glorot(gen, H, He, (H, He)),
        "ev_b1": np.zeros(He),
        "ev_W2": _glorot(gen, He, 1, (He, 1)),
        "ev_b2": np.zeros(1),
    }
    # forget-gate bias of 1 stabilizes early LSTM training
    p["enc_b"][H:2 * H] = 1.0
    p["dec_b"][H:2 * H] = 1.0
    return ModelBundle(vocab=vocab, hidden=H, emb_dim=De, eval_hidden=He,
                       params=p, seed=seed)


# ---------------------------------------------------------------------------
# primitives

def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free in both tails
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _lstm_forward(X: np.ndarray, Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray):
    """Run an LSTM over X (B, T, D); returns outputs (B, T, H) and a cache."""
    B, T, _ = X.shape
    H = Wh.shape[0]
    Zx = X @ Wx + b                      # input projections for all steps at once
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    Hs = np.empty((B, T, H))
    Hprev = np.empty((B, T, H))
    Cprev = np.empty((B, T, H))
    gates = np.empty((B, T, 4 * H))      # i, f, g, o
    TC = np.empty((B, T, H))             # tanh of the new cell state
    for t in range(T):
        z = Zx[:, t] + h @ Wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        Hprev[:, t] = h
        Cprev[:, t] = c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[:, t, :H] = i
        gates[:, t, H:2 * H] = f
        gates[:, t, 2 * H:3 * H] = g
        gates[:, t, 3 * H:] = o
        TC[:, t] = tc
        Hs[:, t] = h
    return Hs, (X, Hprev, Cprev, gates, TC, Wx, Wh)


def _lstm_backward(cache, dHs: np.ndarray):
    """BPTT given per-step output gradients; returns dX and weight grads."""
    X, Hprev, Cprev, gates, TC, Wx, Wh = cache
    B, T, H = Hprev.shape
    dZ = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    WhT = Wh.T
    for t in reversed(range(T)):
        i = gates[:, t, :H]
        f = gates[:, t, H:2 * H]
        g = gates[:, t, 2 * H:3 * H]
        o = gates[:, t, 3 * H:]
        tc = TC[:, t]
        dh = dHs[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dZ[:, t, :H] = (dc * g) * i * (1 - i)
        dZ[:, t, H:2 * H] = (dc * Cprev[:, t]) * f * (1 - f)
        dZ[:, t, 2 * H:3 * H] = (dc * i) * (1 - g * g)
        dZ[:, t, 3 * H:] = do * o * (1 - o)
        dh_next = dZ[:, t] @ WhT
        dc_next = dc * f
    dX = dZ @ Wx.T
    flat_dZ = dZ.reshape(B * T, 4 * H)
    dWx = X.reshape(B * T, -1).T @ flat_dZ
    dWh = Hprev.reshape(B * T, H).T @ flat_dZ
    db = flat_dZ.sum(axis=0)
    return dX, dWx, dWh, db


# ---------------------------------------------------------------------------
# forward passes

def encode(selection: ClientSelection, bundle: ModelBundle) -> np.ndarray:
    """Map a selection to its latent matrix E_s of shape (T, hidden)."""
    tokens = np.asarray(selection.tokens, dtype=int)[None, :]
    if tokens.max() >= bundle.vocab.n_devices:
        raise DataError("selection contains ids outside the vocabulary")
    p = bundle.params
    X = p["emb"][tokens]
    Hs, _ = _lstm_forward(X, p["enc_Wx"], p["enc_Wh"], p["enc_b"])
    return Hs[0]


def attend(dec_state: np.ndarray, latent: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dot-product attention of one decoder state over E_s rows.

    Returns (context, weights); weights are a proper distribution.
    """
    scores = latent @ dec_state
    weights = _softmax(scores)
    return weights @ latent, weights


def decode_step(prev_token: int | None, state: tuple[np.ndarray, np.ndarray] | None,
                latent: np.ndarray, bundle: ModelBundle):
    """One autoregressive decoder step.

    ``prev_token=None`` starts decoding: the input is the last row of E_s.
    Returns (probabilities over the vocabulary, new recurrent state).
    """
    p = bundle.params
    H = bundle.hidden
    if prev_token is None:
        x = latent[-1]
    else:
        x = p["emb"][prev_token] @ p["inproj_W"] + p["inproj_b"]
    h, c = state if state is not None else (np.zeros(H), np.zeros(H))

    z = x @ p["dec_Wx"] + h @ p["dec_Wh"] + p["dec_b"]
    i = _sigmoid(z[:H])
    f = _sigmoid(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = _sigmoid(z[3 * H:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)

    context, _ = attend(h_new, latent)
    logits = np.concatenate([h_new, context]) @ p["out_W"] + p["out_b"]
    return _softmax(logits), (h_new, c_new)


def sequence_nll(selection: ClientSelection, latent: np.ndarray,
                 bundle: ModelBundle) -> float:
    """Teacher-forced negative log-likelihood of selection + EOS given E_s."""
    state = None
    prev: int | None = None
    nll = 0.0
    for target in list(selection.tokens) + [bundle.vocab.eos]:
        probs, state = decode_step(prev, state, latent, bundle)
        nll -= float(np.log(max(probs[target], 1e-300)))
        prev = target if target != bundle.vocab.eos else prev
    return nll


def evaluate_score(latent: np.ndarray, bundle: ModelBundle) -> float:
    """Evaluator estimate of the (normalized) score for a latent matrix."""
    p = bundle.params
    pooled = latent.mean(axis=0)
    hidden = np.maximum(pooled @ p["ev_W1"] + p["ev_b1"], 0.0)
    return float((hidden @ p["ev_W2"] + p["ev_b2"])[0])


def evaluate_score_grad(latent: np.ndarray, bundle: ModelBundle) -> tuple[float, np.ndarray]:
    """Evaluator output and its exact gradient with respect to E_s."""
    p = bundle.params
    T = latent.shape[0]
    pooled = latent.mean(axis=0)
    a1 = pooled @ p["ev_W1"] + p["ev_b1"]
    hidden = np.maximum(a1, 0.0)
    score = float((hidden @ p["ev_W2"] + p["ev_b2"])[0])
    dhidden = p["ev_W2"][:, 0]
    dpooled = ((a1 > 0) * dhidden) @ p["ev_W1"].T
    return score, np.tile(dpooled / T, (T, 1))


# ---------------------------------------------------------------------------
# batched teacher-forced training pass (all sequences in a call share length)

def forward_teacher(tokens: np.ndarray, scores: np.ndarray, alpha: float,
                    bundle: ModelBundle, latent_override: np.ndarray | None = None):
    """Joint forward pass for a same-length batch.

    tokens: (B, T) device ids; scores: (B,) normalized targets.
    ``latent_override`` (B, T, H) replaces the encoder output, which lets the
    finite-difference oracle probe the latent input directly.
    Returns a dict with per-batch losses and the cache for ``backward_teacher``.
    """
    p = bundle.params
    B, T = tokens.shape
    H = bundle.hidden
    V = bundle.vocab.size
    eos = bundle.vocab.eos

    if latent_override is None:
        X_enc = p["emb"][tokens]
        Es, enc_cache = _lstm_forward(X_enc, p["enc_Wx"], p["enc_Wh"], p["enc_b"])
    else:
        Es, enc_cache = latent_override, None

    # decoder inputs: last encoder output, then projected true-token embeddings
    emb_prev = p["emb"][tokens]                      # (B, T, De)
    proj_prev = emb_prev @ p["inproj_W"] + p["inproj_b"]
    X_dec = np.concatenate([Es[:, -1:, :], proj_prev], axis=1)  # (B, T+1, H)
    Hdec, dec_cache = _lstm_forward(X_dec, p["dec_Wx"], p["dec_Wh"], p["dec_b"])

    targets = np.concatenate([tokens, np.full((B, 1), eos)], axis=1)  # (B, T+1)
    att_scores = Hdec @ Es.transpose(0, 2, 1)           # (B, T+1, T)
    att = _softmax(att_scores)
    contexts = att @ Es                                 # (B, T+1, H)
    combined = np.concatenate([Hdec, contexts], axis=2)  # (B, T+1, 2H)
    logits = combined @ p["out_W"] + p["out_b"]          # (B, T+1, V)
    probs = _softmax(logits)
    picked = probs[np.arange(B)[:, None], np.arange(T + 1)[None, :], targets]
    nll = -np.log(np.maximum(picked, 1e-300)).sum(axis=1)   # (B,)
    loss_seq = float(nll.mean())

    pooled = Es.mean(axis=1)
    a1 = pooled @ p["ev_W1"] + p["ev_b1"]
    hidden_ev = np.maximum(a1, 0.0)
    p_hat = (hidden_ev @ p["ev_W2"] + p["ev_b2"])[:, 0]
    loss_score = float(np.mean((scores - p_hat) ** 2))

    loss = alpha * loss_seq + (1.0 - alpha) * loss_score
    cache = dict(tokens=tokens, targets=targets, alpha=alpha, Es=Es,
                 enc_cache=enc_cache, dec_cache=dec_cache, Hdec=Hdec, att=att,
                 contexts=contexts, combined=combined, probs=probs,
                 pooled=pooled, a1=a1, hidden_ev=hidden_ev, p_hat=p_hat,
                 scores=scores)
    return {"loss": loss, "loss_seq": loss_seq, "loss_score": loss_score,
            "p_hat": p_hat, "cache": cache}


def backward_teacher(cache: dict, bundle: ModelBundle):
    """Exact gradients of the joint loss for a cached forward pass.

    Returns (grads, dEs) where dEs is the gradient with respect to the
    latent matrix treated as a free input (decoder + evaluator paths only);
    encoder parameter gradients chain through dEs when the encoder ran.
    """
    p = bundle.params
    tokens, targets = cache["tokens"], cache["targets"]
    alpha = cache["alpha"]
    Es, Hdec = cache["Es"], cache["Hdec"]
    att, contexts, probs = cache["att"], cache["contexts"], cache["probs"]
    B, T = tokens.shape
    H = bundle.hidden

    grads = {k: np.zeros_like(v) for k, v in p.items()}

    # score head
    dp_hat = (1.0 - alpha) * 2.0 * (cache["p_hat"] - cache["scores"]) / B
    grads["ev_W2"] += cache["hidden_ev"].T @ dp_hat[:, None]
    grads["ev_b2"] += np.array([dp_hat.sum()])
    dhidden = dp_hat[:, None] * p["ev_W2"][:, 0][None, :]
    da1 = dhidden * (cache["a1"] > 0)
    grads["ev_W1"] += cache["pooled"].T @ da1
    grads["ev_b1"] += da1.sum(axis=0)
    dpooled = da1 @ p["ev_W1"].T
    dEs = np.repeat(dpooled[:, None, :] / T, T, axis=1)

    # sequence head
    dlogits = probs.copy()
    dlogits[np.arange(B)[:, None], np.arange(T + 1)[None, :], targets] -= 1.0
    dlogits *= alpha / B
    combined = cache["combined"]
    grads["out_W"] += combined.reshape(-1, 2 * H).T @ dlogits.reshape(-1, dlogits.shape[-1])
    grads["out_b"] += dlogits.sum(axis=(0, 1))
    dcombined = dlogits @ p["out_W"].T
    dHdec = dcombined[:, :, :H].copy()
    dcontexts = dcombined[:, :, H:]

    # attention backward
    datt = dcontexts @ Es.transpose(0, 2, 1)
    dEs += att.transpose(0, 2, 1) @ dcontexts
    dscores = att * (datt - (att * datt).sum(axis=2, keepdims=True))
    dHdec += dscores @ Es
    dEs += dscores.transpose(0, 2, 1) @ Hdec

    # decoder BPTT
    dX_dec, dWx, dWh, db = _lstm_backward(cache["dec_cache"], dHdec)
    grads["dec_Wx"] += dWx
    grads["dec_Wh"] += dWh
    grads["dec_b"] += db
    dEs[:, -1, :] += dX_dec[:, 0, :]

    # projected-embedding decoder inputs
    dproj = dX_dec[:, 1:, :]                      # (B, T, H)
    emb_prev = p["emb"][tokens]
    grads["inproj_W"] += emb_prev.reshape(-1, bundle.emb_dim).T @ dproj.reshape(-1, H)
    grads["inproj_b"] += dproj.sum(axis=(0, 1))
    demb_prev = dproj @ p["inproj_W"].T
    np.add.at(grads["emb"], tokens, demb_prev)

    # encoder BPTT (absent when the latent was injected directly)
    if cache["enc_cache"] is not None:
        dX_enc, dWx, dWh, db = _lstm_backward(cache["enc_cache"], dEs)
        grads["enc_Wx"] += dWx
        grads["enc_Wh"] += dWh
        grads["enc_b"] += db
        np.add.at(grads["emb"], tokens, dX_enc)

    return grads, dEs


def joint_loss(tokens: np.ndarray, scores: np.ndarray, alpha: float,
               bundle: ModelBundle) -> float:
    return forward_teacher(tokens, scores, alpha, bundle)["loss"]


# ---------------------------------------------------------------------------
# training

def _group_by_length(indices: np.ndarray, lengths: np.ndarray) -> list[np.ndarray]:
    groups: dict[int, list[int]] = {}
    for idx in indices:
        groups.setdefault(int(lengths[idx]), []).append(int(idx))
    return [np.asarray(groups[L]) for L in sorted(groups)]


def train(recordset: RecordSet, n_devices: int, cfg: TrainConfig,
          history: list[float] | None = None) -> ModelBundle:
    """Fit the bundle on a (typically augmented) record corpus with Adam.

    ``history``, when given, receives the mean training loss of each epoch.
    """
    if len(recordset) == 0:
        raise DataError("cannot train on an empty corpus")
    bundle = init_bundle(n_devices, seed=cfg.seed)

    raw_scores = np.array([r.score for r in recordset.records])
    lo, hi = float(raw_scores.min()), float(raw_scores.max())
    if hi == lo:
        warnings.warn("degenerate score normalization (min == max); using 0.5 targets")
        norm_scores = np.full(len(raw_scores), 0.5)
    else:
        norm_scores = (raw_scores - lo) / (hi - lo)
    bundle.norm_lo, bundle.norm_hi = lo, hi

    sequences = [np.asarray(r.selection.tokens, dtype=int) for r in recordset.records]
    lengths = np.array([len(s) for s in sequences])
    n = len(sequences)

    gen = rngmod.stream(cfg.seed, "train")
    m = {k: np.zeros_like(v) for k, v in bundle.params.items()}
    v = {k: np.zeros_like(v) for k, v in bundle.params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    best_loss = np.inf
    stall = 0

    for _epoch in range(cfg.epochs):
        order = gen.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            chunk = order[start:start + cfg.batch_size]
            grads = {k: np.zeros_like(g) for k, g in bundle.params.items()}
            chunk_loss = 0.0
            for group in _group_by_length(chunk, lengths):
                toks = np.stack([sequences[i] for i in group])
                res = forward_teacher(toks, norm_scores[group], cfg.alpha, bundle)
                g, _ = backward_teacher(res["cache"], bundle)
                w = len(group) / len(chunk)
                for k in grads:
                    grads[k] += w * g[k]
                chunk_loss += w * res["loss"]
            if not np.isfinite(chunk_loss):
                raise NumericError("non-finite training loss")
            step += 1
            for k in bundle.params:
                m[k] = beta1 * m[k] + (1 - beta1) * grads[k]
                v[k] = beta2 * v[k] + (1 - beta2) * grads[k] ** 2
                mhat = m[k] / (1 - beta1 ** step)
                vhat = v[k] / (1 - beta2 ** step)
                bundle.params[k] -= cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
            epoch_loss += chunk_loss * len(chunk) / n
        if history is not None:
            history.append(epoch_loss)
        if epoch_loss < best_loss - 1e-6:
            best_loss = epoch_loss
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    return bundle


# ---------------------------------------------------------------------------
# checkpoint container

def checkpoint_dumps(bundle: ModelBundle, config_hash: str = "") -> str:
    doc = {
        "version": CHECKPOINT_VERSION,
        "manifest": {
            "n_devices": bundle.vocab.n_devices,
            "vocab_size": bundle.vocab.size,
            "hidden": bundle.hidden,
            "emb_dim": bundle.emb_dim,
            "eval_hidden": bundle.eval_hidden,
            "norm_lo": bundle.norm_lo,
            "norm_hi": bundle.norm_hi,
            "seed": bundle.seed,
            "config_hash": config_hash,
        },
        "params": {k: v.tolist() for k, v in sorted(bundle.params.items())},
    }
    return json.dumps(doc, indent=1)


def checkpoint_loads(text: str) -> tuple[ModelBundle, str]:
    doc = json.loads(text)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('version')}")
    man = doc["manifest"]
    params = {k: np.asarray(val, dtype=np.float64) for k, val in doc["params"].items()}
    bundle = ModelBundle(vocab=Vocabulary(man["n_devices"]), hidden=man["hidden"],
                         emb_dim=man["emb_dim"], eval_hidden=man["eval_hidden"],
                         params=params, norm_lo=man["norm_lo"], norm_hi=man["norm_hi"],
                         seed=man["seed"])
    return bundle, man.get("config_hash", "")
