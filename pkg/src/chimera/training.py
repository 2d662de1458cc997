"""Joint end-to-end training of all parameters against the combined loss."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .embedding import build_vocab, embed_batch, load_pretrained_vectors
from .evaluation import detection_metrics, predict_probs
from .losses import (
    LossBreakdown,
    alignment_loss,
    combined_loss,
    detection_loss,
    disentanglement_loss,
    ranking_loss,
)
from .model import ModelParams, diagnose, init_params, localize_raw, save_checkpoint
from .parsing import EventSequence


@dataclass
class TrainConfig:
    window: int = 20
    split_train: float = 0.6
    split_test: float = 0.3
    split_val: float = 0.1
    learning_rate: float = 1e-3
    lambda_detector: float = 1.0
    lambda_localizer: float = 2.0
    lambda_disentangle: float = 0.001
    lambda_align: float = 0.5
    batch_size: int = 32
    epochs: int = 50
    # Detection F1 saturates epochs before the ranking head converges, so
    # patience-based stopping only arms after this floor.
    min_epochs: int = 10
    seed: int = 0
    disable_ilrl: bool = False
    disable_cda: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    patience: int = 5
    embedding_dim: int = 32
    hidden: int = 64
    # Rank margin on pre-sigmoid scores: a margin of 1 is satisfiable there,
    # so the hinge stops pushing once windows separate. With the margin on
    # sigmoid scores (set False) the objective can never reach zero and keeps
    # saturating every anomaly-exclusive position, which scrambles the
    # within-window ranking.
    margin_on_logits: bool = True
    align_all_windows: bool = False

    def validate(self) -> None:
        checks = [
            ("window", self.window >= 1),
            ("split_train", self.split_train > 0),
            ("split_test", self.split_test > 0),
            ("split_val", self.split_val > 0),
            ("learning_rate", self.learning_rate > 0),
            ("lambda_detector", self.lambda_detector >= 0),
            ("lambda_localizer", self.lambda_localizer >= 0),
            ("lambda_disentangle", self.lambda_disentangle >= 0),
            ("lambda_align", self.lambda_align >= 0),
            ("batch_size", self.batch_size >= 1),
            ("epochs", self.epochs >= 1),
            ("min_epochs", self.min_epochs >= 1),
            ("beta1", 0 <= self.beta1 < 1),
            ("beta2", 0 <= self.beta2 < 1),
            ("adam_eps", self.adam_eps > 0),
            ("weight_decay", self.weight_decay >= 0),
            ("clip_norm", self.clip_norm > 0),
            ("patience", self.patience >= 1),
            ("embedding_dim", self.embedding_dim >= 1),
            ("hidden", self.hidden >= 1),
        ]
        bad = [name for name, ok in checks if not ok]
        if bad:
            raise ValueError(f"invalid config field(s): {', '.join(bad)}")

    def split_ratios(self) -> tuple[float, float, float]:
        total = self.split_train + self.split_test + self.split_val
        return (self.split_train / total, self.split_test / total, self.split_val / total)

    def effective_lambdas(self) -> tuple[float, float, float, float]:
        return (self.lambda_detector,
                self.lambda_localizer,
                0.0 if self.disable_ilrl else self.lambda_disentangle,
                0.0 if self.disable_cda else self.lambda_align)


def split_dataset(sequences: Sequence[EventSequence],
                  ratios: tuple[float, float, float],
                  seed: int) -> tuple[list, list, list]:
    """Seeded shuffle, then contiguous train/test/val cut. Exact and disjoint."""
    if not sequences:
        raise ValueError("cannot split an empty dataset")
    total = sum(ratios)
    if total <= 0:
        raise ValueError("split ratios must be positive")
    r_train, r_test, _ = (r / total for r in ratios)
    order = np.random.default_rng(seed).permutation(len(sequences))
    shuffled = [sequences[i] for i in order]
    n = len(shuffled)
    n_train = int(n * r_train)
    n_test = int(n * r_test)
    train = shuffled[:n_train]
    test = shuffled[n_train:n_train + n_test]
    val = shuffled[n_train + n_test:]
    return train, test, val


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    Decay multiplies parameters directly (p *= 1 - lr * wd) rather than being
    folded into the gradient; moments are bias-corrected by step count.
    """

    def __init__(self, named_params: dict[str, Tensor], config: TrainConfig):
        self.named_params = dict(named_params)
        self.lr = config.learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.adam_eps
        self.weight_decay = config.weight_decay
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.named_params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.named_params.items()}

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        for name, p in self.named_params.items():
            g = grads.get(p)
            if g is not None and not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.named_params.items():
            if not p.requires_grad:  # frozen (e.g. imported embedding table)
                continue
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_gradients(grads: dict[Tensor, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place if their global L2 norm exceeds max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def choose_threshold(probs: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Best-F1 decision threshold over a validation split; falls back to 0.5.

    Candidates are 0.5 plus midpoints between consecutive sorted
    probabilities; ties keep the earliest candidate, so the choice is
    deterministic.
    """
    labels = np.asarray(labels, dtype=bool)
    if probs.size == 0 or not labels.any():
        return 0.5, 0.0
    uniq = np.unique(probs)
    candidates = [0.5] + [(a + b) / 2.0 for a, b in zip(uniq[:-1], uniq[1:])]
    candidates += [uniq[0] / 2.0, (uniq[-1] + 1.0) / 2.0]
    best_t, best_f1 = 0.5, -1.0
    for t in candidates:
        _, _, f1 = detection_metrics(probs >= t, labels)
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    return best_t, best_f1


@dataclass
class EpochStats:
    losses: LossBreakdown
    skipped_single_class_batches: int


def train_epoch(params: ModelParams, train_split: Sequence[EventSequence],
                config: TrainConfig, optimizer: AdamW,
                rng: np.random.Generator) -> EpochStats:
    """One pass over the training split: forward, all four losses, backward,
    clipped optimizer step per mini-batch.

    Batches that lack an anomalous (or normal) window contribute neither the
    ranking term nor the alignment term; such batches are counted.
    """
    l1, l2, l3, l4 = config.effective_lambdas()
    order = rng.permutation(len(train_split))
    sums = np.zeros(5)
    skipped = 0
    batches = 0

    for start in range(0, len(order), config.batch_size):
        batch = [train_split[i] for i in order[start:start + config.batch_size]]
        labels = np.array([s.seq_label for s in batch], dtype=np.float64)
        embeds = embed_batch(params.vocab, params.table, [s.event_ids for s in batch])
        views, output = diagnose(params, embeds)

        det = detection_loss(output.y_hat, labels) if l1 > 0 else Tensor(0.0)

        anom_idx = np.flatnonzero(labels > 0.5)
        norm_idx = np.flatnonzero(labels < 0.5)
        mixed = anom_idx.size > 0 and norm_idx.size > 0
        if not mixed:
            skipped += 1

        if l2 > 0 and mixed:
            pair = norm_idx[rng.integers(0, norm_idx.size, size=anom_idx.size)]
            score_matrix = localize_raw(params, views) if config.margin_on_logits \
                else output.scores
            loc = ranking_loss(ad.index_rows(score_matrix, pair),
                               ad.index_rows(score_matrix, anom_idx))
        else:
            loc = Tensor(0.0)

        dis = disentanglement_loss(views.private_det, views.private_loc,
                                   views.shared) if l3 > 0 else Tensor(0.0)

        if l4 > 0:
            if config.align_all_windows:
                align = alignment_loss(output.attention_dist, output.root_cause_dist)
            elif anom_idx.size:
                align = alignment_loss(ad.index_rows(output.attention_dist, anom_idx),
                                       ad.index_rows(output.root_cause_dist, anom_idx))
            else:
                align = Tensor(0.0)
        else:
            align = Tensor(0.0)

        total, breakdown = combined_loss(det, loc, dis, align, (l1, l2, l3, l4))
        if total.requires_grad:
            grads = backward(total)
            clip_gradients(grads, config.clip_norm)
            optimizer.step(grads)
        sums += (breakdown.detector, breakdown.localizer, breakdown.disentangle,
                 breakdown.align, breakdown.total)
        batches += 1

    avg = sums / max(batches, 1)
    return EpochStats(losses=LossBreakdown(*avg), skipped_single_class_batches=skipped)


@dataclass
class TrainResult:
    params: ModelParams
    config: TrainConfig
    threshold: float
    best_epoch: int
    best_val_f1: float
    history: list[dict] = field(default_factory=list)
    train_split: list = field(default_factory=list)
    test_split: list = field(default_factory=list)
    val_split: list = field(default_factory=list)
    checkpoint_path: Path | None = None


def _validate(params: ModelParams, val_split: Sequence[EventSequence],
              config: TrainConfig) -> tuple[float, float, float]:
    """Validation threshold, detection F1, and mean ranking hinge.

    The hinge (margin over all anomalous x normal window pairs) uses only
    sequence labels, so model selection never touches per-line ground truth.
    """
    probs, scores = predict_probs(params, val_split)
    labels = np.array([s.seq_label for s in val_split], dtype=bool)
    threshold, f1 = choose_threshold(probs, labels)
    rank = 0.0
    if labels.any() and not labels.all():
        if config.margin_on_logits:
            clipped = np.clip(scores, 1e-12, 1.0 - 1e-12)
            scores = np.log(clipped) - np.log1p(-clipped)
        top = scores.max(axis=1)
        gaps = 1.0 + top[~labels][None, :] - top[labels][:, None]
        rank = float(np.maximum(gaps, 0.0).mean())
    return threshold, f1, rank


def train(sequences: Sequence[EventSequence], config: TrainConfig,
          out_dir: str | Path | None = None,
          checkpoint_extra: dict | None = None,
          pretrained_vectors: str | Path | None = None) -> TrainResult:
    """Full training run: split, init, epoch loop with early stopping on
    validation F1, per-epoch checkpoints and a JSONL training log.

    Every source of randomness (split, init, batch order, ranking-pair
    choice) derives from ``config.seed``, so equal seeds give bit-identical
    checkpoints. ``checkpoint_extra`` fields (e.g. the template catalog) are
    merged into every checkpoint. ``pretrained_vectors`` swaps the seeded
    trainable embedding table for a frozen imported one (parity experiments).
    """
    config.validate()
    train_split, test_split, val_split = split_dataset(
        sequences, config.split_ratios(), config.seed)
    if not train_split:
        raise ValueError("training split is empty")

    if pretrained_vectors is not None:
        vocab, table = load_pretrained_vectors(pretrained_vectors)
    else:
        train_template_ids = sorted({t for s in train_split for t in s.event_ids})
        vocab, table = build_vocab(train_template_ids, dim=config.embedding_dim,
                                   seed=config.seed)
    params = init_params(vocab, table, hidden=config.hidden, seed=config.seed + 1)
    optimizer = AdamW(params.named_parameters(), config)
    epoch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))

    out_path = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_path / "training_log.jsonl", "w")

    history: list[dict] = []
    best_f1 = -1.0
    best_rank = float("inf")
    best_epoch = 0
    best_threshold = 0.5
    best_weights: dict[str, np.ndarray] = {}
    epochs_since_best = 0
    best_ckpt = out_path / "best.ckpt" if out_path is not None else None

    try:
        for epoch in range(1, config.epochs + 1):
            stats = train_epoch(params, train_split, config, optimizer, epoch_rng)
            threshold, val_f1, val_rank = _validate(params, val_split, config)
            entry = {
                "epoch": epoch,
                "detector": stats.losses.detector,
                "localizer": stats.losses.localizer,
                "disentangle": stats.losses.disentangle,
                "align": stats.losses.align,
                "total": stats.losses.total,
                "val_f1": val_f1,
                "val_rank": val_rank,
                "threshold": threshold,
                "skipped_single_class_batches": stats.skipped_single_class_batches,
            }
            history.append(entry)
            if log_fh is not None:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            if out_path is not None:
                save_checkpoint(out_path / f"epoch_{epoch}.ckpt", params,
                                extra={**(checkpoint_extra or {}),
                                       "config": asdict(config), "threshold": threshold,
                                       "epoch": epoch})

            # Validation F1 is the primary selection signal; the window-level
            # ranking hinge breaks ties once detection saturates, so the kept
            # snapshot has the best separation rather than an arbitrary one.
            improved = val_f1 > best_f1 or (val_f1 == best_f1 and val_rank < best_rank)
            if improved:
                best_f1 = val_f1
                best_rank = val_rank
                best_epoch = epoch
                best_threshold = threshold
                best_weights = {name: t.data.copy()
                                for name, t in params.named_parameters().items()}
                epochs_since_best = 0
                if best_ckpt is not None:
                    save_checkpoint(best_ckpt, params,
                                    extra={**(checkpoint_extra or {}),
                                           "config": asdict(config),
                                           "threshold": threshold, "epoch": epoch})
            else:
                epochs_since_best += 1
                if epochs_since_best >= config.patience and epoch >= config.min_epochs:
                    break
    finally:
        if log_fh is not None:
            log_fh.close()

    # Hand back the best-validation weights, matching best.ckpt.
    for name, t in params.named_parameters().items():
        t.data[:] = best_weights[name]

    return TrainResult(params=params, config=config, threshold=best_threshold,
                       best_epoch=best_epoch, best_val_f1=best_f1, history=history,
                       train_split=list(train_split), test_split=list(test_split),
                       val_split=list(val_split), checkpoint_path=best_ckpt)
