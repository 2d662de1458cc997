"""The diagnosis network: three GRU encoders with shared-private fusion, an
attention-pooled detector head, and a per-position localizer head.

All forward functions accept a batch of embedded windows [batch, n, dim];
a single window [n, dim] is promoted to a batch of one and squeezed back.
Forward passes never mutate ModelParams, so inference over frozen parameters
is safe to run concurrently; training steps mutate them single-writer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embedding import EventVocabulary

CHECKPOINT_VERSION = 1


@dataclass
class GruParams:
    """Update/reset/candidate weights, each [hidden, hidden + dim]; H_0 = 0."""

    w_update: Tensor
    w_reset: Tensor
    w_candidate: Tensor


@dataclass
class EncodedViews:
    """Per-encoder hidden-state matrices plus their additive fusions."""

    private_det: Tensor   # [batch, n, hidden]
    private_loc: Tensor
    shared: Tensor
    fused_det: Tensor     # private_det + shared
    fused_loc: Tensor     # private_loc + shared


@dataclass
class DiagnosisOutput:
    """Per-window verdict probability and per-position localization scores."""

    y_hat: Tensor            # [batch] anomaly probability
    scores: Tensor           # [batch, n] localizer probabilities p_i
    alpha_raw: Tensor        # [batch, n] unnormalized attention
    attention_dist: Tensor   # [batch, n] softmax of alpha_raw
    root_cause_dist: Tensor  # [batch, n] softmax of pre-sigmoid scores


class ModelParams:
    """All learnable tensors, addressable by name for the optimizer/checkpoint."""

    def __init__(self, vocab: EventVocabulary, table: Tensor,
                 enc_private_det: GruParams, enc_private_loc: GruParams,
                 enc_shared: GruParams, attn: Tensor,
                 det_w: Tensor, det_b: Tensor, loc_w: Tensor, loc_b: Tensor,
                 hidden: int, dim: int):
        self.vocab = vocab
        self.table = table
        self.enc_private_det = enc_private_det
        self.enc_private_loc = enc_private_loc
        self.enc_shared = enc_shared
        self.attn = attn
        self.det_w = det_w
        self.det_b = det_b
        self.loc_w = loc_w
        self.loc_b = loc_b
        self.hidden = hidden
        self.dim = dim

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"embedding.table": self.table}
        for prefix, enc in (("enc_private_det", self.enc_private_det),
                            ("enc_private_loc", self.enc_private_loc),
                            ("enc_shared", self.enc_shared)):
            out[f"{prefix}.w_update"] = enc.w_update
            out[f"{prefix}.w_reset"] = enc.w_reset
            out[f"{prefix}.w_candidate"] = enc.w_candidate
        out["attn.weight"] = self.attn
        out["det_head.weight"] = self.det_w
        out["det_head.bias"] = self.det_b
        out["loc_head.weight"] = self.loc_w
        out["loc_head.bias"] = self.loc_b
        return out


def init_params(vocab: EventVocabulary, table: Tensor, hidden: int = 64,
                seed: int = 0) -> ModelParams:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    if hidden < 1:
        raise ValueError("hidden width must be >= 1")
    dim = vocab.dim
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def gru():
        return GruParams(w_update=uniform((hidden, hidden + dim), hidden + dim),
                         w_reset=uniform((hidden, hidden + dim), hidden + dim),
                         w_candidate=uniform((hidden, hidden + dim), hidden + dim))

    return ModelParams(
        vocab=vocab, table=table,
        enc_private_det=gru(), enc_private_loc=gru(), enc_shared=gru(),
        attn=uniform((1, hidden), hidden),
        det_w=uniform((hidden,), hidden), det_b=uniform((1,), hidden),
        loc_w=uniform((hidden,), hidden), loc_b=uniform((1,), hidden),
        hidden=hidden, dim=dim,
    )


def _promote(embeds: Tensor) -> tuple[Tensor, bool]:
    if embeds.ndim == 2:
        return ad.reshape(embeds, (1, *embeds.shape)), True
    if embeds.ndim == 3:
        return embeds, False
    raise ValueError(f"expected [n, dim] or [batch, n, dim], got {embeds.shape}")


def gru_encode(params: GruParams, embeds: Tensor) -> Tensor:
    """Run the gated recurrence over a window; returns every hidden state.

    Gates per step: z = sigmoid(Wz . [H, e]), r = sigmoid(Wr . [H, e]),
    candidate = tanh(W . [r*H, e]), H' = (1 - z) * H + z * candidate.
    """
    x, squeeze = _promote(embeds)
    batch, n, _ = x.shape
    hidden = params.w_update.shape[0]

    wz = ad.swapaxes(params.w_update, 0, 1)
    wr = ad.swapaxes(params.w_reset, 0, 1)
    wc = ad.swapaxes(params.w_candidate, 0, 1)

    h = Tensor(np.zeros((batch, hidden)))
    states = []
    for t in range(n):
        e_t = ad.narrow(x, (slice(None), t, slice(None)))
        joint = ad.concat([h, e_t], axis=1)
        z = ad.sigmoid(joint @ wz)
        r = ad.sigmoid(joint @ wr)
        candidate = ad.tanh(ad.concat([r * h, e_t], axis=1) @ wc)
        h = (1.0 - z) * h + z * candidate
        states.append(h)
    out = ad.stack(states, axis=1)
    return ad.reshape(out, (n, hidden)) if squeeze else out


def encode_views(params: ModelParams, embeds: Tensor) -> EncodedViews:
    """Run all three encoders on the same embeddings and fuse additively."""
    private_det = gru_encode(params.enc_private_det, embeds)
    private_loc = gru_encode(params.enc_private_loc, embeds)
    shared = gru_encode(params.enc_shared, embeds)
    return EncodedViews(
        private_det=private_det,
        private_loc=private_loc,
        shared=shared,
        fused_det=private_det + shared,
        fused_loc=private_loc + shared,
    )


def detect(params: ModelParams, views: EncodedViews) -> tuple[Tensor, Tensor, Tensor]:
    """Attention-pool the detection view and classify the window.

    Returns (y_hat [batch], alpha_raw [batch, n], attention_dist [batch, n]);
    attention weights are tanh scores, normalized to a distribution with a
    softmax over the window.
    """
    vd, squeeze = _promote(views.fused_det)
    batch, n, hidden = vd.shape
    alpha = ad.tanh(vd @ ad.swapaxes(params.attn, 0, 1))      # [batch, n, 1]
    pooled = ad.reshape(ad.swapaxes(alpha, 1, 2) @ vd, (batch, hidden))
    y_hat = ad.sigmoid(pooled @ params.det_w + params.det_b)  # [batch]
    alpha_raw = ad.reshape(alpha, (batch, n))
    attention_dist = ad.softmax(alpha_raw, axis=-1)
    if squeeze:
        return (ad.reshape(y_hat, ()), ad.reshape(alpha_raw, (n,)),
                ad.reshape(attention_dist, (n,)))
    return y_hat, alpha_raw, attention_dist


def localize(params: ModelParams, views: EncodedViews) -> tuple[Tensor, Tensor]:
    """Score every position of the localization view.

    Returns (scores p in (0,1) [batch, n], root_cause_dist [batch, n]); both
    are monotone in the same pre-sigmoid score, so their orderings agree.
    """
    vl, squeeze = _promote(views.fused_loc)
    batch, n, _ = vl.shape
    raw = ad.reshape(vl @ params.loc_w, (batch, n)) + params.loc_b
    scores = ad.sigmoid(raw)
    root_cause_dist = ad.softmax(raw, axis=-1)
    if squeeze:
        return ad.reshape(scores, (n,)), ad.reshape(root_cause_dist, (n,))
    return scores, root_cause_dist


def localize_raw(params: ModelParams, views: EncodedViews) -> Tensor:
    """Pre-sigmoid localizer scores, for the margin-on-logits training mode."""
    vl, squeeze = _promote(views.fused_loc)
    batch, n, _ = vl.shape
    raw = ad.reshape(vl @ params.loc_w, (batch, n)) + params.loc_b
    return ad.reshape(raw, (n,)) if squeeze else raw


def diagnose(params: ModelParams, embeds: Tensor) -> tuple[EncodedViews, DiagnosisOutput]:
    views = encode_views(params, embeds)
    y_hat, alpha_raw, attention_dist = detect(params, views)
    scores, root_cause_dist = localize(params, views)
    return views, DiagnosisOutput(
        y_hat=y_hat, scores=scores, alpha_raw=alpha_raw,
        attention_dist=attention_dist, root_cause_dist=root_cause_dist,
    )


# ---------------------------------------------------------------------------
# checkpointing

def save_checkpoint(path: str | Path, params: ModelParams, extra: dict | None = None) -> None:
    """Write a JSON checkpoint; float64 values survive the round trip bit-exactly."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "hidden": params.hidden,
        "dim": params.dim,
        "vocab": {
            "index": {str(k): v for k, v in params.vocab.index.items()},
            "unknown_row": params.vocab.unknown_row,
            "dim": params.vocab.dim,
        },
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.named_parameters().items()
        },
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    payload = json.loads(Path(path).read_text())
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {version}")
    vocab = EventVocabulary(
        index={int(k): int(v) for k, v in payload["vocab"]["index"].items()},
        unknown_row=int(payload["vocab"]["unknown_row"]),
        dim=int(payload["vocab"]["dim"]),
    )

    tensors = {}
    for name, entry in payload["params"].items():
        data = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        tensors[name] = Tensor(data, requires_grad=True)

    def gru(prefix):
        return GruParams(w_update=tensors[f"{prefix}.w_update"],
                         w_reset=tensors[f"{prefix}.w_reset"],
                         w_candidate=tensors[f"{prefix}.w_candidate"])

    params = ModelParams(
        vocab=vocab, table=tensors["embedding.table"],
        enc_private_det=gru("enc_private_det"),
        enc_private_loc=gru("enc_private_loc"),
        enc_shared=gru("enc_shared"),
        attn=tensors["attn.weight"],
        det_w=tensors["det_head.weight"], det_b=tensors["det_head.bias"],
        loc_w=tensors["loc_head.weight"], loc_b=tensors["loc_head.bias"],
        hidden=int(payload["hidden"]), dim=int(payload["dim"]),
    )
    return params, payload.get("extra", {})
