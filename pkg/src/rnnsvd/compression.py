"""SVD rank reduction of trained models.

A weight matrix W (M x N) is replaced by q @ vt with q = U_r Sigma_r
(M x R) and vt = V_r^T (R x N): R(M+N) parameters instead of MN, applied
as two consecutive linear maps. Biases stay outside the factorization.
For the gated cell, the stacked forward matrix and the stacked recurrent
matrix are each decomposed as one matrix, gate blocks included. No
fine-tuning happens anywhere after rank reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .cells import DenseLayer, MgruLayer, RnnLayer, activate, sigmoid
from .linalg import SvdFactors, as_matrix, rms_diff, svd, truncate
from .network import MEAN_POOL, PER_STEP, SequenceModel, softmax


@dataclass(frozen=True)
class FactoredLinear:
    """Rank-R factors of an M x N map plus its (uncompressed) bias."""

    q: np.ndarray      # (M, R)
    vt: np.ndarray     # (R, N)
    bias: np.ndarray   # (M,)

    def __post_init__(self):
        if self.q.shape[1] != self.vt.shape[0]:
            raise ValueError("q and vt disagree on the rank")
        if self.bias.shape != (self.q.shape[0],):
            raise ValueError("bias length must match output rows")

    @property
    def rank(self) -> int:
        return self.q.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.q.shape[0], self.vt.shape[1])

    @property
    def parameter_count(self) -> int:
        """R(M+N), bias excluded."""
        m, n = self.shape
        return self.rank * (m + n)

    @property
    def multiply_adds(self) -> int:
        """Per matvec: R(M+N) for the two stages plus M bias adds."""
        m, n = self.shape
        return self.rank * (m + n) + m

    def reconstruct(self) -> np.ndarray:
        return self.q @ self.vt


def compress_matrix(w, r: int, bias: Optional[np.ndarray] = None,
                    factors: Optional[SvdFactors] = None) -> FactoredLinear:
    """Best rank-r factorization of w; bias is carried through untouched."""
    w = as_matrix(w)
    m, n = w.shape
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank must be in [1, {min(m, n)}] for a {m}x{n} matrix, got {r}")
    f = factors if factors is not None else svd(w)
    q, vt = truncate(f, r)
    b = np.zeros(m) if bias is None else np.asarray(bias, dtype=np.float64).copy()
    return FactoredLinear(q=q, vt=vt, bias=b)


def factored_apply(fl: FactoredLinear, x, activation: str = "identity") -> np.ndarray:
    """activation(q @ (vt @ x) + bias), evaluated inner stage first.

    Accepts a vector (N,) or a batch (..., N). Equals the dense
    activation((q @ vt) @ x + bias) to ~1e-12.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != fl.vt.shape[1]:
        raise ValueError(f"input dim {x.shape[-1]} does not match {fl.vt.shape[1]}")
    inner = x @ fl.vt.T
    return activate(activation, inner @ fl.q.T + fl.bias)


def factored_matvec(fl: FactoredLinear, x: np.ndarray) -> np.ndarray:
    """Two-stage linear map only (no bias, no activation)."""
    return (x @ fl.vt.T) @ fl.q.T


def compression_delta(w, r: int, factors: Optional[SvdFactors] = None) -> float:
    """RMS entrywise error of the rank-r approximation of w; exactly zero
    at full rank (no singular values are discarded)."""
    w = as_matrix(w)
    if not 1 <= r <= min(w.shape):
        raise ValueError(f"rank must be in [1, {min(w.shape)}], got {r}")
    if r == min(w.shape):
        return 0.0
    fl = compress_matrix(w, r, factors=factors)
    return rms_diff(w, fl.reconstruct())


@dataclass(frozen=True)
class CompressionPlan:
    """Target ranks for the recurrent layer's matrices; None means full rank."""

    forward_rank: Optional[int] = None
    recurrent_rank: Optional[int] = None


@dataclass
class ModelFactors:
    """SVDs of a model's forward and recurrent matrices, reusable across ranks."""

    forward: SvdFactors
    recurrent: SvdFactors


def model_factors(model: SequenceModel) -> ModelFactors:
    cell = model.cell
    fwd = cell.wf if isinstance(cell, MgruLayer) else cell.w
    return ModelFactors(forward=svd(fwd), recurrent=svd(cell.wr))


@dataclass
class CompressedModel:
    """A model with its recurrent-layer matrices rank reduced.

    Exposes both evaluation routes: `model` is the reconstructed-dense
    view (embedding and output layer shared byte-for-byte with the
    source), while `forward_factors`/`recurrent_factors` drive the
    two-stage factored route. None means that matrix was left at full
    rank.
    """

    model: SequenceModel
    plan: CompressionPlan
    forward_factors: Optional[FactoredLinear]
    recurrent_factors: Optional[FactoredLinear]

    @property
    def head(self) -> str:
        return self.model.head


def _max_ranks(model: SequenceModel) -> tuple[int, int]:
    cell = model.cell
    fwd = cell.wf if isinstance(cell, MgruLayer) else cell.w
    return min(fwd.shape), min(cell.wr.shape)


def compress_model(model: SequenceModel, plan: CompressionPlan,
                   factors: Optional[ModelFactors] = None) -> CompressedModel:
    """Rank-reduce the recurrent layer per the plan; everything else shared.

    The source model is never modified. Ranks equal to the full rank are
    treated like None (no compression of that matrix).
    """
    cell = model.cell
    max_f, max_r = _max_ranks(model)
    r_f, r_r = plan.forward_rank, plan.recurrent_rank
    for name, r, cap in (("forward", r_f, max_f), ("recurrent", r_r, max_r)):
        if r is not None and not 1 <= r <= cap:
            raise ValueError(f"{name} rank {r} out of range [1, {cap}]")

    mgru = isinstance(cell, MgruLayer)
    fwd_matrix = cell.wf if mgru else cell.w
    fl_fwd = None
    if r_f is not None and r_f < max_f:
        fl_fwd = compress_matrix(fwd_matrix, r_f,
                                 factors=None if factors is None else factors.forward)
    fl_rec = None
    if r_r is not None and r_r < max_r:
        fl_rec = compress_matrix(cell.wr, r_r,
                                 factors=None if factors is None else factors.recurrent)

    new_fwd = fwd_matrix if fl_fwd is None else fl_fwd.reconstruct()
    new_rec = cell.wr if fl_rec is None else fl_rec.reconstruct()
    if mgru:
        new_cell: RnnLayer | MgruLayer = MgruLayer(
            wf=new_fwd, wr=new_rec, bias=cell.bias,
            input_activation=cell.input_activation)
    else:
        new_cell = RnnLayer(w=new_fwd, wr=new_rec, bias=cell.bias,
                            activation=cell.activation)
    dense_view = SequenceModel(cell=new_cell, output=model.output, head=model.head,
                               embedding=model.embedding)
    return CompressedModel(model=dense_view, plan=plan,
                           forward_factors=fl_fwd, recurrent_factors=fl_rec)


def forward_factored(cm: CompressedModel, inputs, h0: Optional[np.ndarray] = None):
    """Inference through the factored route: every compressed matmul is
    evaluated as two consecutive linear stages. Returns (outputs, states)
    with states including the initial state at index 0."""
    model = cm.model
    cell = model.cell
    embeds = model.embedding is not None
    inputs = np.asarray(inputs)
    xs = model.embedding.lookup(inputs) if embeds else np.asarray(inputs, dtype=np.float64)
    t_len, b = xs.shape[0], xs.shape[1]
    h = model.hidden
    mgru = isinstance(cell, MgruLayer)

    def fwd_map(x):
        if cm.forward_factors is not None:
            return factored_matvec(cm.forward_factors, x)
        return x @ (cell.wf.T if mgru else cell.w.T)

    def rec_map(s):
        if cm.recurrent_factors is not None:
            return factored_matvec(cm.recurrent_factors, s)
        return s @ cell.wr.T

    state = np.zeros((b, h)) if h0 is None else np.array(h0, dtype=np.float64)
    states = np.empty((t_len + 1, b, h))
    states[0] = state
    for t in range(t_len):
        z = fwd_map(xs[t]) + rec_map(state) + cell.bias
        if mgru:
            a_i = activate(cell.input_activation, z[:, :h])
            a_c = sigmoid(z[:, h:])
            state = a_c * a_i + (1.0 - a_c) * state
        else:
            state = activate(cell.activation, z)
        states[t + 1] = state

    out = model.output
    if model.head == MEAN_POOL:
        logits = states[1:].mean(axis=0) @ out.w.T + out.bias
        outputs = softmax(logits)
    elif model.head == PER_STEP:
        logits = states[1:] @ out.w.T + out.bias
        outputs = softmax(logits)
    else:
        outputs = activate(out.activation, states[1:] @ out.w.T + out.bias)
    return outputs, states


def compression_report(model: SequenceModel, cm: CompressedModel) -> dict:
    """Per-matrix ranks, deltas, parameter counts and multiply-add counts."""
    cell = model.cell
    mgru = isinstance(cell, MgruLayer)
    fwd = cell.wf if mgru else cell.w
    entries = []
    for name, w, fl in (("forward", fwd, cm.forward_factors),
                        ("recurrent", cell.wr, cm.recurrent_factors)):
        m, n = w.shape
        dense_params = m * n
        dense_madds = m * n + m
        if fl is None:
            entries.append(dict(matrix=name, shape=[m, n], rank=min(m, n), delta=0.0,
                                dense_params=dense_params, params=dense_params,
                                dense_multiply_adds=dense_madds, multiply_adds=dense_madds,
                                ratio=1.0))
        else:
            delta = rms_diff(w, fl.reconstruct())
            entries.append(dict(matrix=name, shape=[m, n], rank=fl.rank, delta=delta,
                                dense_params=dense_params, params=fl.parameter_count,
                                dense_multiply_adds=dense_madds,
                                multiply_adds=fl.multiply_adds,
                                ratio=fl.parameter_count / dense_params))
    total_dense = sum(e["dense_params"] for e in entries)
    total = sum(e["params"] for e in entries)
    return dict(matrices=entries, total_dense_params=total_dense, total_params=total,
                ratio=total / total_dense)
