"""Sequence models: a single recurrent layer with one of three heads, plus
exact backpropagation through time.

Heads:
  per_step   - softmax cross-entropy at every time step (next-token models)
  mean_pool  - states averaged over time, then softmax (sequence classifiers)
  per_step_mse - per-step regression with an output activation, masked
                 squared error (the bit-recall task)
  per_step_bce - per-step sigmoid outputs with a masked binary
                 cross-entropy loss; same outputs as per_step_mse but a
                 gradient that does not vanish on saturated-wrong answers

Gradients are exact reverse-mode derivatives of the mean masked loss and
match central finite differences to ~1e-6 relative on small nets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cells import (
    DenseLayer,
    Embedding,
    IDENTITY,
    MgruLayer,
    RnnLayer,
    SIGMOID,
    TANH,
    activate,
    activate_grad,
    sigmoid,
)
from .linalg import singular_value_max

PER_STEP = "per_step"
MEAN_POOL = "mean_pool"
PER_STEP_MSE = "per_step_mse"
PER_STEP_BCE = "per_step_bce"
HEADS = (PER_STEP, MEAN_POOL, PER_STEP_MSE, PER_STEP_BCE)


@dataclass
class SequenceModel:
    cell: RnnLayer | MgruLayer
    output: DenseLayer
    head: str
    embedding: Optional[Embedding] = None

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.output.w.shape[1] != self.cell.hidden:
            raise ValueError("output layer width must match hidden size")

    @property
    def cell_kind(self) -> str:
        return "mgru" if isinstance(self.cell, MgruLayer) else "rnn"

    @property
    def hidden(self) -> int:
        return self.cell.hidden

    def params(self) -> dict[str, np.ndarray]:
        """Named views of the parameter arrays (shared, not copies)."""
        p = {}
        if self.embedding is not None:
            p["emb"] = self.embedding.table
        if isinstance(self.cell, MgruLayer):
            p["wf"] = self.cell.wf
        else:
            p["w"] = self.cell.w
        p["wr"] = self.cell.wr
        p["b"] = self.cell.bias
        p["wo"] = self.output.w
        p["bo"] = self.output.bias
        return p


def init_model(
    cell_kind: str,
    input_dim: int,
    hidden: int,
    output_dim: int,
    head: str,
    rng: np.random.Generator,
    vocab_size: int | None = None,
    activation: str = TANH,
    output_activation: str | None = None,
    recurrent_sigma: float = 0.9,
    recurrent_init: str = "uniform",
) -> SequenceModel:
    """Fresh model; forward weights uniform in +-1/sqrt(fan_in), recurrent
    weights rescaled so their largest singular value is recurrent_sigma.

    recurrent_init "orthogonal" replaces the uniform recurrent draw by its
    orthogonal polar factor before the rescale, making every singular
    value equal; memorization needs the isotropic spectrum to carry bits
    across long delays.
    """

    def uniform(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    def recurrent(rows, cols):
        w = uniform(rows, cols)
        if recurrent_init == "orthogonal":
            from .linalg import svd as _svd  # polar factor, self-contained
            f = _svd(w)
            w = f.u @ f.v.T
        elif recurrent_init != "uniform":
            raise ValueError(f"unknown recurrent init {recurrent_init!r}")
        return w * (recurrent_sigma / singular_value_max(w))

    embedding = None
    if vocab_size is not None:
        embedding = Embedding(table=uniform(vocab_size, input_dim))

    if cell_kind == "mgru":
        cell: RnnLayer | MgruLayer = MgruLayer(
            wf=uniform(2 * hidden, input_dim),
            wr=recurrent(2 * hidden, hidden),
            bias=np.zeros(2 * hidden),
            input_activation=activation,
        )
    elif cell_kind == "rnn":
        cell = RnnLayer(
            w=uniform(hidden, input_dim),
            wr=recurrent(hidden, hidden),
            bias=np.zeros(hidden),
            activation=activation,
        )
    else:
        raise ValueError(f"unknown cell kind {cell_kind!r}")

    if output_activation is None:
        output_activation = SIGMOID if head in (PER_STEP_MSE, PER_STEP_BCE) else IDENTITY
    output = DenseLayer(w=uniform(output_dim, hidden), bias=np.zeros(output_dim),
                        activation=output_activation)
    return SequenceModel(cell=cell, output=output, head=head, embedding=embedding)


@dataclass
class Batch:
    """One training batch.

    inputs: token ids (T, B) when the model embeds, else vectors (T, B, D).
    targets: (T, B) int for per_step; (B,) int for mean_pool;
             (T, B, O) float for per_step_mse.
    mask: (T, B) loss weights, or None for an unmasked loss.
    """

    inputs: np.ndarray
    targets: np.ndarray
    mask: Optional[np.ndarray] = None


@dataclass
class ForwardCache:
    ids: Optional[np.ndarray]      # (T, B) token ids when the model embeds
    xs: np.ndarray                 # (T, B, D) cell inputs
    states: np.ndarray             # (T+1, B, H), states[0] = initial
    preacts: np.ndarray            # (T, B, H) rnn / (T, B, 2H) mgru
    gates: Optional[np.ndarray]    # (T, B, H) a_c for mgru
    candidates: Optional[np.ndarray]  # (T, B, H) a_i for mgru
    feed: np.ndarray               # states after dropout, as seen by the head
    drop: Optional[np.ndarray]
    logits: np.ndarray
    outputs: np.ndarray            # probs or activated regression outputs
    pooled: Optional[np.ndarray]
    final_state: np.ndarray


def _as_batched(inputs: np.ndarray, embedded: bool) -> np.ndarray:
    want = 2 if embedded else 3
    a = np.asarray(inputs)
    if a.ndim != want:
        raise ValueError(f"inputs must be {want}-D (time, batch, ...), got shape {a.shape}")
    return a


def forward(
    model: SequenceModel,
    inputs: np.ndarray,
    h0: Optional[np.ndarray] = None,
    drop: Optional[np.ndarray] = None,
) -> ForwardCache:
    """Run the unrolled network, keeping everything BPTT needs.

    drop: optional (T, B, H) inverted-dropout masks applied to the hidden
    states feeding the head only; the recurrent path is never dropped.
    """
    embeds = model.embedding is not None
    inputs = _as_batched(inputs, embeds)
    xs = model.embedding.lookup(inputs) if embeds else np.asarray(inputs, dtype=np.float64)
    t_len, b = xs.shape[0], xs.shape[1]
    h = model.hidden
    cell = model.cell
    mgru = isinstance(cell, MgruLayer)

    state = np.zeros((b, h)) if h0 is None else np.array(h0, dtype=np.float64)
    states = np.empty((t_len + 1, b, h))
    states[0] = state
    preacts = np.empty((t_len, b, 2 * h if mgru else h))
    gates = np.empty((t_len, b, h)) if mgru else None
    candidates = np.empty((t_len, b, h)) if mgru else None

    if mgru:
        for t in range(t_len):
            z = xs[t] @ cell.wf.T + state @ cell.wr.T + cell.bias
            preacts[t] = z
            a_i = activate(cell.input_activation, z[:, :h])
            a_c = sigmoid(z[:, h:])
            candidates[t] = a_i
            gates[t] = a_c
            state = a_c * a_i + (1.0 - a_c) * state
            states[t + 1] = state
    else:
        for t in range(t_len):
            z = xs[t] @ cell.w.T + state @ cell.wr.T + cell.bias
            preacts[t] = z
            state = activate(cell.activation, z)
            states[t + 1] = state

    feed = states[1:] if drop is None else states[1:] * drop

    pooled = None
    if model.head == MEAN_POOL:
        pooled = feed.mean(axis=0)
        logits = pooled @ model.output.w.T + model.output.bias
        outputs = softmax(logits)
    else:
        # one flat GEMM instead of a stack of per-step products
        out_dim = model.output.w.shape[0]
        flat = feed.reshape(t_len * b, h) @ model.output.w.T
        logits = flat.reshape(t_len, b, out_dim) + model.output.bias
        if model.head == PER_STEP:
            outputs = softmax(logits)
        else:  # PER_STEP_MSE / PER_STEP_BCE
            outputs = activate(model.output.activation, logits)

    return ForwardCache(
        ids=inputs if embeds else None,
        xs=xs, states=states, preacts=preacts, gates=gates, candidates=candidates,
        feed=feed, drop=drop, logits=logits, outputs=outputs, pooled=pooled,
        final_state=states[-1],
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, target: int):
    """Stable loss and d(loss)/d(logits) for one logit vector and class index."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    if not 0 <= int(target) < logits.shape[-1]:
        raise ValueError(f"target {target} out of range for {logits.shape[-1]} classes")
    z = logits - logits.max()
    lse = float(np.log(np.sum(np.exp(z))))
    loss = lse - float(z[int(target)])
    grad = np.exp(z) / np.sum(np.exp(z))
    grad[int(target)] -= 1.0
    return loss, grad


def perplexity(mean_cross_entropy: float) -> float:
    """exp of the mean per-token cross-entropy (nats)."""
    if mean_cross_entropy < 0:
        raise ValueError("mean cross-entropy must be non-negative")
    return float(np.exp(mean_cross_entropy))


def mean_pool(states) -> np.ndarray:
    """Element-wise mean over the time axis of a (T, ...) stack."""
    s = np.asarray(states, dtype=np.float64)
    if s.ndim < 1 or s.shape[0] == 0:
        raise ValueError("mean_pool needs a non-empty sequence")
    return s.mean(axis=0)


def _ce_loss_grad_batch(probs: np.ndarray, targets: np.ndarray, weights: np.ndarray):
    # probs (..., C), targets (...) int, weights (...) already normalized to sum 1
    tgt = targets.astype(np.intp)
    idx = np.indices(tgt.shape)
    p_true = probs[(*idx, tgt)]
    losses = -np.log(np.maximum(p_true, 1e-300))
    loss = float(np.sum(losses * weights))
    dlogits = probs * weights[..., None]
    dlogits[(*idx, tgt)] -= weights
    return loss, dlogits


def loss_and_gradients(
    model: SequenceModel,
    batch: Batch,
    h0: Optional[np.ndarray] = None,
    drop: Optional[np.ndarray] = None,
):
    """Mean masked loss, exact gradients for every parameter, and the cache.

    Returns (loss, grads, cache); grads keys mirror model.params(). A mask
    that is zero everywhere yields zero loss and zero gradients.
    """
    cache = forward(model, batch.inputs, h0=h0, drop=drop)
    t_len, b = cache.xs.shape[0], cache.xs.shape[1]
    h = model.hidden
    out = model.output

    if model.head == PER_STEP:
        mask = np.ones((t_len, b)) if batch.mask is None else np.asarray(batch.mask, dtype=np.float64)
        total = float(mask.sum())
        if total == 0.0:
            weights = np.zeros((t_len, b))
        else:
            weights = mask / total
        loss, dlogits = _ce_loss_grad_batch(cache.outputs, np.asarray(batch.targets), weights)
        dl_flat = dlogits.reshape(-1, dlogits.shape[-1])
        feed_flat = cache.feed.reshape(-1, h)
        dfeed = (dl_flat @ out.w).reshape(t_len, b, h)
        dwo = dl_flat.T @ feed_flat
        dbo = dl_flat.sum(axis=0)
        dstates = dfeed if cache.drop is None else dfeed * cache.drop
    elif model.head == MEAN_POOL:
        targets = np.asarray(batch.targets)
        weights = np.full((b,), 1.0 / b)
        loss, dlogits = _ce_loss_grad_batch(cache.outputs, targets, weights)
        dpooled = dlogits @ out.w
        dwo = dlogits.T @ cache.pooled
        dbo = dlogits.sum(axis=0)
        dfeed = np.broadcast_to(dpooled / t_len, (t_len, b, h))
        dstates = dfeed if cache.drop is None else dfeed * cache.drop
    else:  # PER_STEP_MSE / PER_STEP_BCE
        targets = np.asarray(batch.targets, dtype=np.float64)
        mask = np.ones((t_len, b)) if batch.mask is None else np.asarray(batch.mask, dtype=np.float64)
        total = float(mask.sum())
        diff = cache.outputs - targets
        if total == 0.0:
            loss = 0.0
            dlogits = np.zeros_like(diff)
        elif model.head == PER_STEP_MSE:
            loss = float(np.sum((diff * diff).sum(axis=-1) * mask) / total)
            dy = 2.0 * diff * (mask / total)[..., None]
            dlogits = dy * activate_grad(out.activation, cache.logits, cache.outputs)
        else:
            if out.activation != SIGMOID:
                raise ValueError("per_step_bce needs a sigmoid output layer")
            y = np.clip(cache.outputs, 1e-12, 1.0 - 1e-12)
            ce = -(targets * np.log(y) + (1.0 - targets) * np.log(1.0 - y))
            loss = float(np.sum(ce.sum(axis=-1) * mask) / total)
            # sigmoid + cross-entropy: d(loss)/d(logit) = y - target
            dlogits = diff * (mask / total)[..., None]
        dl_flat = dlogits.reshape(-1, dlogits.shape[-1])
        dfeed = (dl_flat @ out.w).reshape(t_len, b, h)
        dwo = dl_flat.T @ cache.feed.reshape(-1, h)
        dbo = dl_flat.sum(axis=0)
        dstates = dfeed if cache.drop is None else dfeed * cache.drop

    grads = _bptt(model, cache, dstates)
    grads["wo"] = dwo
    grads["bo"] = dbo
    return loss, grads, cache


def _bptt(model: SequenceModel, cache: ForwardCache, dstates: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse sweep through the unrolled cell given d(loss)/d(state_t)."""
    cell = model.cell
    t_len = cache.xs.shape[0]
    h = model.hidden
    grads: dict[str, np.ndarray] = {}
    dxs = np.empty_like(cache.xs)

    if isinstance(cell, MgruLayer):
        dwf = np.zeros_like(cell.wf)
        dwr = np.zeros_like(cell.wr)
        db = np.zeros_like(cell.bias)
        carry = np.zeros_like(cache.states[0])
        for t in range(t_len - 1, -1, -1):
            ds = dstates[t] + carry
            a_c = cache.gates[t]
            a_i = cache.candidates[t]
            s_prev = cache.states[t]
            da_c = ds * (a_i - s_prev)
            da_i = ds * a_c
            dz_i = da_i * activate_grad(cell.input_activation, cache.preacts[t][:, :h], a_i)
            dz_c = da_c * (a_c * (1.0 - a_c))
            dz = np.concatenate([dz_i, dz_c], axis=1)
            dwf += dz.T @ cache.xs[t]
            dwr += dz.T @ s_prev
            db += dz.sum(axis=0)
            dxs[t] = dz @ cell.wf
            carry = ds * (1.0 - a_c) + dz @ cell.wr
        grads["wf"] = dwf
        grads["wr"] = dwr
        grads["b"] = db
    else:
        dw = np.zeros_like(cell.w)
        dwr = np.zeros_like(cell.wr)
        db = np.zeros_like(cell.bias)
        carry = np.zeros_like(cache.states[0])
        for t in range(t_len - 1, -1, -1):
            dh = dstates[t] + carry
            dz = dh * activate_grad(cell.activation, cache.preacts[t], cache.states[t + 1])
            dw += dz.T @ cache.xs[t]
            dwr += dz.T @ cache.states[t]
            db += dz.sum(axis=0)
            dxs[t] = dz @ cell.w
            carry = dz @ cell.wr
        grads["w"] = dw
        grads["wr"] = dwr
        grads["b"] = db

    if model.embedding is not None:
        demb = np.zeros_like(model.embedding.table)
        # accumulate every touched row; rows outside the batch stay zero
        ids = np.asarray(cache.ids).reshape(-1)
        np.add.at(demb, ids, dxs.reshape(-1, dxs.shape[-1]))
        grads["emb"] = demb
    return grads
