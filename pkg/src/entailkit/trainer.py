"""Losses, closed-form adapter gradients, and the fine-tuning loop.

Both losses act on cosine scores between the query-side encoding of the
hypothesis and the premise-side encodings of a positive and a negative.
Three quadratic terms anchor the trained encodings to the frozen base so
fine-tuning moderates similarity instead of erasing it. Gradients are
exact analytic derivatives with respect to each trainable adapter matrix;
optimization is plain mini-batch gradient descent.
"""

from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Corpus, Fact, TripletStore
from .encoder import MODES, EncoderStack

logger = logging.getLogger(__name__)

LOSSES = ("tml", "scl")


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "tml"
    margin: float = 0.1
    alpha: float = 0.1
    temperature: float = 0.05
    batch_size: int = 32
    learning_rate: float = 1e-5
    epochs: int = 5
    mode: str = "single"
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunReport:
    config: dict
    epoch_losses: list[float] = field(default_factory=list)
    skipped_triplets: int = 0
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "epoch_losses": self.epoch_losses,
            "skipped_triplets": self.skipped_triplets,
            "wall_seconds": self.wall_seconds,
        }


def save_report(report: RunReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


def load_report(path: str) -> RunReport:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return RunReport(
        config=payload["config"],
        epoch_losses=payload["epoch_losses"],
        skipped_triplets=payload["skipped_triplets"],
        wall_seconds=payload["wall_seconds"],
    )


class TrainingDivergedError(RuntimeError):
    """Raised when a batch produces a non-finite loss."""

    def __init__(self, epoch: int, batch_index: int, triplet_ids: list[tuple]):
        self.epoch = epoch
        self.batch_index = batch_index
        self.triplet_ids = triplet_ids
        super().__init__(
            f"non-finite loss in epoch {epoch}, batch {batch_index}; "
            f"triplets: {triplet_ids[:5]}"
        )


def triplet_margin_loss(s_pos: float, s_neg: float, m: float) -> float:
    """Hinge on the score gap: zero once the positive clears the negative
    by at least the margin."""
    return max(s_neg - s_pos + m, 0.0)


def supervised_contrastive_loss(s_pos: float, s_negs: Sequence[float], tau: float) -> float:
    """Softmax cross-entropy of the positive against the negatives, with
    scores sharpened by 1/tau. Computed in shifted form so large gaps
    cannot overflow."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    if not s_negs:
        logger.warning("supervised_contrastive_loss with no negatives; returning 0")
        return 0.0
    diffs = [(s - s_pos) / tau for s in s_negs]
    shift = max(max(diffs), 0.0)
    total = math.exp(-shift) + sum(math.exp(d - shift) for d in diffs)
    return shift + math.log(total)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _cosine_with_grads(
    u: np.ndarray, v: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    s = float(u @ v) / (nu * nv)
    ds_du = v / (nu * nv) - (s / (nu * nu)) * u
    ds_dv = u / (nu * nv) - (s / (nv * nv)) * v
    return s, ds_du, ds_dv


def encodable(stack: EncoderStack, facts: Sequence[Fact]) -> bool:
    """True when every fact has a nonzero encoding on both sides it uses."""
    h, pos, neg = facts
    return bool(
        stack.encode(h, "query").any()
        and stack.encode(pos, "premise").any()
        and stack.encode(neg, "premise").any()
    )


def regularized_loss(
    triplet: tuple[Fact, Fact, Fact], stack: EncoderStack, cfg: TrainConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact adapter gradients for one (h, p+, p-) triplet.

    The loss is the configured base loss on the two cosine scores plus
    alpha times the squared distance between each sentence's frozen base
    encoding and its trained encoding (query side for h, premise side for
    the premises). Returned gradients are keyed like
    stack.trainable_parameters(); a triplet with a zero encoding anywhere
    contributes zero loss and zero gradient.
    """
    h, pos, neg = triplet
    dim = stack.dim
    grads = {name: np.zeros((dim, dim)) for name in stack.trainable_parameters()}

    e_h = stack.base_vector(h)
    e_p = stack.base_vector(pos)
    e_n = stack.base_vector(neg)
    u = stack.encode(h, "query")
    vp = stack.encode(pos, "premise")
    vn = stack.encode(neg, "premise")
    if not (u.any() and vp.any() and vn.any()):
        return 0.0, grads

    s_p, dsp_du, dsp_dvp = _cosine_with_grads(u, vp)
    s_n, dsn_du, dsn_dvn = _cosine_with_grads(u, vn)

    if cfg.loss == "tml":
        base = triplet_margin_loss(s_p, s_n, cfg.margin)
        # subgradient 0 exactly at the hinge
        active = (s_n - s_p + cfg.margin) > 0.0
        dl_dsp = -1.0 if active else 0.0
        dl_dsn = 1.0 if active else 0.0
    else:
        base = supervised_contrastive_loss(s_p, [s_n], cfg.temperature)
        w = _sigmoid((s_n - s_p) / cfg.temperature)
        dl_dsp = -w / cfg.temperature
        dl_dsn = w / cfg.temperature

    dl_du = dl_dsp * dsp_du + dl_dsn * dsn_du
    q_grad = np.outer(dl_du, e_h)
    p_grad = np.outer(dl_dsp * dsp_dvp, e_p) + np.outer(dl_dsn * dsn_dvn, e_n)

    alpha = cfg.alpha
    dh, dp, dn = e_h - u, e_p - vp, e_n - vn
    reg = alpha * (float(dh @ dh) + float(dp @ dp) + float(dn @ dn))
    q_reg = 2.0 * alpha * np.outer(u - e_h, e_h)
    p_reg = 2.0 * alpha * (np.outer(vp - e_p, e_p) + np.outer(vn - e_n, e_n))

    if "query" in grads:
        grads["query"] = q_grad + q_reg
    if "premise" in grads:
        grads["premise"] = p_grad + p_reg
    if "shared" in grads:
        grads["shared"] = q_grad + q_reg + p_grad + p_reg
    return base + reg, grads


def fine_tune(
    triplets: TripletStore,
    stack: EncoderStack,
    cfg: TrainConfig,
    corpus: Corpus,
) -> tuple[EncoderStack, RunReport]:
    """Mini-batch gradient descent over the triplet store.

    Adapters are updated in place; callers wanting to keep the original
    weights should pass stack.copy(). Shuffling is driven solely by
    cfg.seed, so identical inputs yield identical reports. Triplets with a
    zero encoding are skipped and counted (once per epoch they are met).
    A non-finite batch loss aborts with the offending batch recorded.
    """
    if not triplets.records:
        raise ValueError("fine_tune needs a non-empty triplet store")
    if cfg.mode != stack.mode:
        raise ValueError(f"config mode {cfg.mode!r} != stack mode {stack.mode!r}")
    rng = random.Random(cfg.seed)
    params = stack.trainable_parameters()
    order = list(triplets.records)
    dim = stack.dim
    start = time.perf_counter()
    epoch_losses: list[float] = []
    skipped = 0

    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        epoch_loss_sum = 0.0
        epoch_count = 0
        for batch_index, lo in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[lo : lo + cfg.batch_size]
            grad_sum = {name: np.zeros((dim, dim)) for name in params}
            batch_loss_sum = 0.0
            batch_count = 0
            for rec in batch:
                facts = (
                    corpus.get(rec.h_id),
                    corpus.get(rec.pos_id),
                    corpus.get(rec.neg_id),
                )
                if not encodable(stack, facts):
                    skipped += 1
                    continue
                loss, grads = regularized_loss(facts, stack, cfg)
                batch_loss_sum += loss
                batch_count += 1
                for name, grad in grads.items():
                    grad_sum[name] += grad
            if batch_count == 0:
                continue
            if not math.isfinite(batch_loss_sum):
                raise TrainingDivergedError(
                    epoch,
                    batch_index,
                    [(r.h_id, r.pos_id, r.neg_id) for r in batch],
                )
            scale = -cfg.learning_rate / batch_count
            for name, adapter in params.items():
                adapter.add_scaled(grad_sum[name], scale)
            epoch_loss_sum += batch_loss_sum
            epoch_count += batch_count
        epoch_losses.append(epoch_loss_sum / epoch_count if epoch_count else 0.0)
        if len(epoch_losses) >= 2 and epoch_losses[-1] > epoch_losses[-2] + 1e-12:
            logger.warning(
                "training loss rose from %.6g to %.6g at epoch %d; "
                "consider a smaller learning rate",
                epoch_losses[-2],
                epoch_losses[-1],
                epoch,
            )

    report = RunReport(
        config=cfg.to_dict(),
        epoch_losses=epoch_losses,
        skipped_triplets=skipped,
        wall_seconds=time.perf_counter() - start,
    )
    return stack, report
