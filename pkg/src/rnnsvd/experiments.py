"""Training and evaluation recipes for the three experiments: next-word
language modeling, scan-line image classification, and noiseless bit
memorization. All loops are plain-numpy and deterministic given the
config seed; randomness is split per purpose (init / tasks / dropout) so
reruns are bit-identical.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .network import (
    Batch,
    MEAN_POOL,
    PER_STEP,
    PER_STEP_BCE,
    PER_STEP_MSE,
    SequenceModel,
    forward,
    init_model,
    loss_and_gradients,
    perplexity,
)
from .perturbation import measure_error
from .tasks import gen_memorization_batch, lm_batches, scanline_batches
from .training import TrainingConfig, adam_update, clip_gradients, dropout_mask, init_adam, split_seeds


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; the caller keeps the last finished epoch."""


EpochCallback = Optional[Callable[[SequenceModel, dict], None]]


def memorization_task(n_bits: int):
    """Task generator closure for the bit-recall experiment."""
    def gen(t: int, batch_size: int, rng: np.random.Generator) -> Batch:
        return gen_memorization_batch(n_bits, t, batch_size, rng)
    return gen


def _step(model, batch, state, cfg, drop_rng, h0=None):
    drop = None
    if cfg.keep_prob < 1.0:
        t_len, b = batch.inputs.shape[0], batch.inputs.shape[1]
        drop = dropout_mask((t_len, b, model.hidden), cfg.keep_prob, drop_rng)
    loss, grads, cache = loss_and_gradients(model, batch, h0=h0, drop=drop)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"loss became {loss!r} at adam step {state.step}")
    clip_gradients(grads, cfg.clip_norm)
    adam_update(model.params(), grads, state)
    return loss, cache


# ---------------------------------------------------------------------------
# noiseless memorization

def eval_memorization_rms(model: SequenceModel, n_bits: int, t_values: Sequence[int],
                          trials: int, seed: int) -> tuple[float, dict[int, float]]:
    """Pooled and per-delay recall RMS of the uncompressed model."""
    gen = memorization_task(n_bits)
    per_t = {int(t): measure_error(model, gen, rank=None, t=int(t), trials=trials, seed=seed)
             for t in t_values}
    pooled = float(np.sqrt(np.mean([v * v for v in per_t.values()])))
    return pooled, per_t


def train_memorization(cell_kind: str, cfg: TrainingConfig, hidden: int = 100,
                       n_bits: int = 8, t_max: int = 30, rms_threshold: float = 0.05,
                       batches_per_epoch: int = 200, eval_trials: int = 200,
                       eval_t_values: Optional[Sequence[int]] = None,
                       loss: str = "bce", recurrent_init: str = "orthogonal",
                       on_epoch: EpochCallback = None):
    """Train until pooled recall RMS drops under the threshold or the epoch
    cap runs out. The delay T is drawn uniformly from [0, t_max] once per
    mini-batch; convergence is always judged by recall RMS, whichever
    training loss is used (cross-entropy trains the plain recurrent cell
    far faster than squared error). Returns (model, log_rows)."""
    init_rng, task_rng, drop_rng, eval_root = split_seeds(cfg.seed, 4)
    eval_seed = int(eval_root.integers(2 ** 31))
    if eval_t_values is None:
        eval_t_values = list(range(0, t_max + 1, 5))
    head = {"bce": PER_STEP_BCE, "mse": PER_STEP_MSE}[loss]
    model = init_model(cell_kind, 2, hidden, 1, head, init_rng,
                       recurrent_init=recurrent_init)
    state = init_adam(model.params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    log: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        losses = np.empty(batches_per_epoch)
        for k in range(batches_per_epoch):
            t = int(task_rng.integers(0, t_max + 1))
            batch = gen_memorization_batch(n_bits, t, cfg.batch_size, task_rng)
            losses[k], _ = _step(model, batch, state, cfg, drop_rng)
        rms, per_t = eval_memorization_rms(model, n_bits, eval_t_values, eval_trials, eval_seed)
        row = {"epoch": epoch, "train_loss": float(losses.mean()), "rms": rms,
               "rms_worst_t": float(max(per_t.values()))}
        log.append(row)
        if on_epoch:
            on_epoch(model, row)
        if rms < rms_threshold:
            break
    return model, log


# ---------------------------------------------------------------------------
# language model

def eval_perplexity(model: SequenceModel, ids, batch_size: int, window: int,
                    token_budget: Optional[int] = None) -> tuple[float, int]:
    """Mean perplexity of next-token prediction over a held-out stream.

    Hidden state carries across consecutive windows. Returns (perplexity,
    tokens scored); token_budget stops early for fast sweep cells.
    """
    stream = lm_batches(ids, batch_size, window)
    h0 = np.zeros((stream.batch, model.hidden))
    total_ce = 0.0
    total_n = 0
    for inputs, targets in stream:
        cache = forward(model, inputs)
        t_len, b = inputs.shape
        idx = np.indices(targets.shape)
        p_true = cache.outputs[(*idx, targets)]
        total_ce += float(-np.log(np.maximum(p_true, 1e-300)).sum())
        total_n += t_len * b
        h0 = cache.final_state
        if token_budget is not None and total_n >= token_budget:
            break
    if total_n == 0:
        raise ValueError("no tokens to evaluate")
    return perplexity(total_ce / total_n), total_n


def train_language_model(train_ids, vocab_size: int, cell_kind: str, hidden: int,
                         embed_dim: int, cfg: TrainingConfig, eval_ids=None,
                         on_epoch: EpochCallback = None):
    """Continuous ordered passes over the corpus with state carried across
    windows; dropout only on the hidden outputs feeding the softmax."""
    init_rng, drop_rng = split_seeds(cfg.seed, 2)
    model = init_model(cell_kind, embed_dim, hidden, vocab_size, PER_STEP, init_rng,
                       vocab_size=vocab_size)
    state = init_adam(model.params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    stream = lm_batches(train_ids, cfg.batch_size, cfg.window)
    log: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        h0 = np.zeros((stream.batch, model.hidden))
        ce_sum, n_tok = 0.0, 0
        for inputs, targets in stream:
            loss, cache = _step(model, Batch(inputs=inputs, targets=targets), state,
                                cfg, drop_rng, h0=h0)
            h0 = cache.final_state
            ce_sum += loss * inputs.size
            n_tok += inputs.size
        row = {"epoch": epoch, "train_perplexity": perplexity(ce_sum / n_tok)}
        if eval_ids is not None:
            ppl, n = eval_perplexity(model, eval_ids, cfg.batch_size, cfg.window)
            row["eval_perplexity"] = ppl
            row["eval_tokens"] = n
        log.append(row)
        if on_epoch:
            on_epoch(model, row)
    return model, log


def perplexity_evaluator(ids, batch_size: int, window: int,
                         token_budget: Optional[int] = None):
    """Evaluator closure for rank sweeps over language models."""
    def evaluate(model: SequenceModel):
        return eval_perplexity(model, ids, batch_size, window, token_budget)
    return evaluate


# ---------------------------------------------------------------------------
# scan-line classifier

def eval_accuracy(model: SequenceModel, images, labels, batch_size: int = 512) -> tuple[float, int]:
    correct = 0
    total = 0
    for batch in scanline_batches(images, labels, batch_size):
        cache = forward(model, batch.inputs)
        pred = cache.outputs.argmax(axis=-1)
        correct += int((pred == batch.targets).sum())
        total += batch.targets.size
    return correct / total, total


def accuracy_evaluator(images, labels, batch_size: int = 512):
    def evaluate(model: SequenceModel):
        return eval_accuracy(model, images, labels, batch_size)
    return evaluate


def train_scanline_classifier(images, labels, cell_kind: str, cfg: TrainingConfig,
                              hidden: int = 128, n_classes: int = 10,
                              eval_images=None, eval_labels=None,
                              on_epoch: EpochCallback = None):
    """Mean-pooled softmax classifier over row-scan sequences."""
    images = np.asarray(images, dtype=np.float64)
    line = images.shape[-1]
    init_rng, shuffle_rng, drop_rng = split_seeds(cfg.seed, 3)
    model = init_model(cell_kind, line, hidden, n_classes, MEAN_POOL, init_rng)
    state = init_adam(model.params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    log: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for batch in scanline_batches(images, labels, cfg.batch_size, rng=shuffle_rng):
            loss, _ = _step(model, batch, state, cfg, drop_rng)
            losses.append(loss)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if eval_images is not None:
            acc, n = eval_accuracy(model, eval_images, eval_labels)
            row["accuracy"] = acc
            row["eval_n"] = n
        log.append(row)
        if on_epoch:
            on_epoch(model, row)
    return model, log
