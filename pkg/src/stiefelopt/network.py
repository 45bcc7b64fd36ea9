"""A small vision transformer with hand-written backpropagation.

Each sample is an N x T token matrix.  A layer is multihead attention
(per-head query/key/value projections, no scaling, column-wise softmax)
followed by a residual feedforward x + tanh(A x + b); the classifier reads
the last token column.  Per-head projections are stored transposed, as
N x head_dim matrices, so they can live on St(head_dim, N) when the
orthonormality constraint is on.  The constraint changes only how the
optimizer moves the weights, never how the network evaluates them.

Batches are stacked along a leading axis: (S, N, T) inputs, (S, classes)
prediction rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optimizers import EUCLIDEAN, STIEFEL
from .stiefel import random_stiefel

__all__ = [
    "TransformerConfig",
    "LayerWeights",
    "ModelParams",
    "LayerTape",
    "ForwardTape",
    "softmax_columns",
    "attention_head",
    "multihead_forward",
    "feedforward",
    "classify",
    "sample_losses",
    "loss",
    "batch_loss",
    "uniform_plateau",
    "model_forward",
    "model_backward",
    "glorot_init",
    "init_params",
]


@dataclass(frozen=True)
class TransformerConfig:
    token_dim: int = 49
    seq_len: int = 16
    n_heads: int = 7
    n_layers: int = 2
    n_classes: int = 10
    constrain_projections: bool = True

    def __post_init__(self):
        if min(self.token_dim, self.seq_len, self.n_heads, self.n_classes) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.n_layers < 0:
            raise ValueError("layer count must be >= 0")
        if self.token_dim % self.n_heads != 0:
            raise ValueError(
                f"token dimension {self.token_dim} not divisible by {self.n_heads} heads"
            )

    @property
    def head_dim(self) -> int:
        return self.token_dim // self.n_heads


@dataclass
class LayerWeights:
    """One transformer layer: stacked head projections plus feedforward.

    wq, wk, wv: (n_heads, N, head_dim), each head slice applied as its
    transpose.  a: (N, N) and b: (N,) are the feedforward weights.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    a: np.ndarray
    b: np.ndarray


@dataclass
class ModelParams:
    """All weights of the model, also used as the gradient container."""

    layers: list[LayerWeights]
    classifier: np.ndarray  # (n_classes, N)

    def to_arrays(self) -> list[np.ndarray]:
        """Canonical flat ordering: per layer wq/wk/wv head by head, then
        the feedforward pair; the classifier last."""
        out: list[np.ndarray] = []
        for layer in self.layers:
            for h in range(layer.wq.shape[0]):
                out.extend([layer.wq[h], layer.wk[h], layer.wv[h]])
            out.extend([layer.a, layer.b])
        out.append(self.classifier)
        return out

    def set_arrays(self, arrays: list[np.ndarray]) -> None:
        """Write arrays back in the same ordering as to_arrays()."""
        i = 0
        for layer in self.layers:
            n_heads = layer.wq.shape[0]
            for h in range(n_heads):
                layer.wq[h] = arrays[i]
                layer.wk[h] = arrays[i + 1]
                layer.wv[h] = arrays[i + 2]
                i += 3
            layer.a = arrays[i]
            layer.b = arrays[i + 1]
            i += 2
        self.classifier = arrays[i]

    def names(self) -> list[str]:
        out = []
        for li, layer in enumerate(self.layers):
            for h in range(layer.wq.shape[0]):
                out.extend([f"layer{li}/head{h}/wq", f"layer{li}/head{h}/wk",
                            f"layer{li}/head{h}/wv"])
            out.extend([f"layer{li}/ff_a", f"layer{li}/ff_b"])
        out.append("classifier")
        return out

    def kinds(self, config: TransformerConfig) -> list[str]:
        """Weight kind per to_arrays() entry, honoring the constraint flag."""
        proj = STIEFEL if config.constrain_projections else EUCLIDEAN
        out = []
        for layer in self.layers:
            out.extend([proj] * (3 * layer.wq.shape[0]))
            out.extend([EUCLIDEAN, EUCLIDEAN])
        out.append(EUCLIDEAN)
        return out


@dataclass
class LayerTape:
    x_in: np.ndarray | None = None   # (S, N, T) layer input
    q: np.ndarray | None = None      # (S, H, d, T)
    k: np.ndarray | None = None
    v: np.ndarray | None = None
    corr: np.ndarray | None = None   # (S, H, T, T) raw correlations q^T k
    probs: np.ndarray | None = None  # (S, H, T, T) column-stochastic reweightings
    mh_out: np.ndarray | None = None # (S, N, T) concatenated head outputs
    act: np.ndarray | None = None    # (S, N, T) tanh of the feedforward pre-activation


@dataclass
class ForwardTape:
    layers: list[LayerTape] = field(default_factory=list)
    last_col: np.ndarray | None = None   # (S, N)
    predictions: np.ndarray | None = None  # (S, classes)


def softmax_columns(m: np.ndarray) -> np.ndarray:
    """Column-wise softmax over the trailing matrix axes, stabilized by
    subtracting each column's maximum."""
    shifted = m - m.max(axis=-2, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-2, keepdims=True)


def attention_head(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Single-head attention V softmax(Q^T K) on head_dim x T matrices.

    There is no 1/sqrt(d) scaling of the correlations.
    """
    return v @ softmax_columns(q.T @ k)


def _project_heads(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # (S, N, T) through per-head transposed projections -> (S, H, d, T)
    return np.matmul(w.transpose(0, 2, 1)[None, :, :, :], x[:, None, :, :])


def multihead_forward(x: np.ndarray, weights: LayerWeights,
                      tape: LayerTape | None = None) -> np.ndarray:
    """Run every head and concatenate the head outputs row-block-wise,
    preserving the N x T shape."""
    s, n, t = x.shape
    q = _project_heads(x, weights.wq)
    k = _project_heads(x, weights.wk)
    v = _project_heads(x, weights.wv)
    corr = q.transpose(0, 1, 3, 2) @ k
    probs = softmax_columns(corr)
    out = (v @ probs).reshape(s, n, t)
    if tape is not None:
        tape.x_in, tape.q, tape.k, tape.v = x, q, k, v
        tape.corr, tape.probs, tape.mh_out = corr, probs, out
    return out


def feedforward(x: np.ndarray, weights: LayerWeights,
                tape: LayerTape | None = None) -> np.ndarray:
    """Residual feedforward x + tanh(A x + b), bias broadcast over columns."""
    act = np.tanh(weights.a @ x + weights.b[:, None])
    if tape is not None:
        tape.act = act
    return x + act


def classify(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Softmax of the classifier applied to the last token column.

    Accepts one N x T matrix (returns a class-probability vector) or a
    stacked (S, N, T) batch (returns (S, classes) rows).
    """
    if x.ndim == 2:
        return softmax_columns((w @ x[:, -1])[:, None])[:, 0]
    logits = x[:, :, -1] @ w.T  # (S, classes)
    return softmax_columns(logits.T).T


def sample_losses(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-sample Euclidean distance ||pred - target|| over (S, classes) rows."""
    return np.sqrt(((pred - target) ** 2).sum(axis=-1))


def loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Distance ||pred - target|| between one prediction and its one-hot target."""
    return float(np.sqrt(((pred - target) ** 2).sum()))


def batch_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean of the per-sample distances."""
    return float(sample_losses(pred, target).mean())


def uniform_plateau(n_classes: int) -> float:
    """Loss of a uniform prediction against any one-hot target:
    sqrt((1 - 1/C)^2 + (C-1)/C^2) = sqrt(1 - 1/C)."""
    return float(np.sqrt(1.0 - 1.0 / n_classes))


def model_forward(batch: np.ndarray, params: ModelParams,
                  config: TransformerConfig) -> tuple[np.ndarray, ForwardTape]:
    """Full forward pass over a stacked (S, N, T) batch.

    Returns (S, classes) prediction rows and the tape of intermediates the
    backward pass needs.
    """
    if batch.ndim == 2:
        batch = batch[None, :, :]
    s, n, t = batch.shape
    if n != config.token_dim or t != config.seq_len:
        raise ValueError(f"batch shaped {batch.shape[1:]}, model expects "
                         f"({config.token_dim}, {config.seq_len})")
    if len(params.layers) != config.n_layers:
        raise ValueError("parameter stack does not match the configured depth")

    tape = ForwardTape()
    x = batch
    for layer in params.layers:
        ltape = LayerTape()
        m = multihead_forward(x, layer, ltape)
        x = feedforward(m, layer, ltape)
        tape.layers.append(ltape)
    tape.last_col = x[:, :, -1]
    tape.predictions = classify(x, params.classifier)
    return tape.predictions, tape


def _column_softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    # d/dcorr of p = softmax(column): p * (dp - <p, dp>) per column.
    inner = (probs * dprobs).sum(axis=-2, keepdims=True)
    return probs * (dprobs - inner)


def model_backward(tape: ForwardTape, params: ModelParams, batch: np.ndarray,
                   targets: np.ndarray) -> ModelParams:
    """Exact reverse-mode gradients of the mean batch loss.

    Returns a ModelParams holding the gradient arrays, aligned with
    params.to_arrays().  Projections are differentiated as unconstrained
    arrays; the manifold structure only enters in the optimizer.
    """
    if batch.ndim == 2:
        batch = batch[None, :, :]
    if targets.ndim == 1:
        targets = targets[None, :]
    preds = tape.predictions
    if preds is None or len(tape.layers) != len(params.layers):
        raise ValueError("tape does not match the parameter stack")
    if tape.layers and tape.layers[0].x_in.shape != batch.shape:
        raise ValueError("tape was recorded for a different batch")
    if preds.shape != targets.shape:
        raise ValueError("targets do not match the taped predictions")
    s = preds.shape[0]

    residual = preds - targets
    norms = np.sqrt((residual**2).sum(axis=-1, keepdims=True))
    # Zero-residual samples contribute a zero (sub)gradient.
    safe = np.where(norms > 0, norms, 1.0)
    dpred = np.where(norms > 0, residual / safe, 0.0) / s

    # Softmax rows: dz = p * (dp - <p, dp>).
    inner = (preds * dpred).sum(axis=-1, keepdims=True)
    dlogits = preds * (dpred - inner)  # (S, C)

    grads = _zeros_like_params(params)
    grads.classifier += dlogits.T @ tape.last_col
    dx_last = dlogits @ params.classifier  # (S, N)

    dx = np.zeros_like(batch)
    dx[:, :, -1] = dx_last

    for layer, ltape, glayer in zip(reversed(params.layers), reversed(tape.layers),
                                    reversed(grads.layers)):
        # Feedforward x_out = m + tanh(a m + b).
        dact = dx * (1.0 - ltape.act**2)
        glayer.a += np.einsum("snt,smt->nm", dact, ltape.mh_out)
        glayer.b += dact.sum(axis=(0, 2))
        dm = dx + np.matmul(layer.a.T[None], dact)

        # Multihead: split row blocks back into heads.
        s_, n, t = dm.shape
        h, _, d = layer.wq.shape
        dheads = dm.reshape(s_, h, d, t)

        dv = dheads @ ltape.probs.transpose(0, 1, 3, 2)
        dprobs = ltape.v.transpose(0, 1, 3, 2) @ dheads
        dcorr = _column_softmax_backward(ltape.probs, dprobs)
        dq = ltape.k @ dcorr.transpose(0, 1, 3, 2)
        dk = ltape.q @ dcorr

        x_in = ltape.x_in
        glayer.wq += np.einsum("snt,shdt->hnd", x_in, dq)
        glayer.wk += np.einsum("snt,shdt->hnd", x_in, dk)
        glayer.wv += np.einsum("snt,shdt->hnd", x_in, dv)

        dx = (np.einsum("hnd,shdt->snt", layer.wq, dq)
              + np.einsum("hnd,shdt->snt", layer.wk, dk)
              + np.einsum("hnd,shdt->snt", layer.wv, dv))
    return grads


def _zeros_like_params(params: ModelParams) -> ModelParams:
    layers = [
        LayerWeights(wq=np.zeros_like(l.wq), wk=np.zeros_like(l.wk),
                     wv=np.zeros_like(l.wv), a=np.zeros_like(l.a),
                     b=np.zeros_like(l.b))
        for l in params.layers
    ]
    return ModelParams(layers=layers, classifier=np.zeros_like(params.classifier))


def glorot_init(shape: tuple[int, ...], rng: np.random.Generator,
                dtype=np.float64) -> np.ndarray:
    """Glorot-uniform sample on [-sqrt(6/(fan_in+fan_out)), +...]."""
    if len(shape) == 2:
        fan_sum = shape[0] + shape[1]
    else:
        fan_sum = shape[0] + 1
    limit = np.sqrt(6.0 / fan_sum)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(config: TransformerConfig, rng: np.random.Generator,
                dtype=np.float64) -> ModelParams:
    """Fresh model weights.

    Constrained projections start on the manifold (orthonormalized Gaussian
    draws); unconstrained ones use Glorot uniform, as do the feedforward
    and classifier matrices.  Biases start at zero.
    """
    n, d = config.token_dim, config.head_dim
    layers = []
    for _ in range(config.n_layers):
        def projection_stack():
            if config.constrain_projections:
                mats = [random_stiefel(n, d, rng, dtype=dtype).matrix
                        for _ in range(config.n_heads)]
            else:
                mats = [glorot_init((n, d), rng, dtype=dtype)
                        for _ in range(config.n_heads)]
            return np.stack(mats)

        layers.append(LayerWeights(
            wq=projection_stack(),
            wk=projection_stack(),
            wv=projection_stack(),
            a=glorot_init((n, n), rng, dtype=dtype),
            b=np.zeros(n, dtype=dtype),
        ))
    classifier = glorot_init((config.n_classes, n), rng, dtype=dtype)
    return ModelParams(layers=layers, classifier=classifier)
